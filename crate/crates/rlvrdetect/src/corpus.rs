//! JSONL record types and file IO.
//!
//! All multi-record files are JSON Lines: one object per line, UTF-8, no
//! trailing commas. Writes are atomic (temp file in the destination
//! directory, then rename) and serialized through an exclusive advisory lock
//! on a `.lock` sidecar, so concurrent runs sharing an output or cache
//! directory cannot interleave partial lines. Reads are lenient about blank
//! lines and unknown fields, strict about everything else, and report the
//! offending line number.
//!
//! Derived record files (completions, scores, profiles, reports) carry
//! `"schema": 1`; files with a newer major schema are rejected rather than
//! misread. Prompt files are plain records without a schema field, but one
//! is validated if present.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Schema version stamped into derived record files.
pub const SCHEMA_VERSION: u32 = 1;

/// Ground-truth membership label for evaluation corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Member,
    NonMember,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Member => "member",
            Label::NonMember => "non-member",
        })
    }
}

/// One evaluation prompt. Unknown fields survive a load/save round trip via
/// `meta`, so enriched corpora can flow through untouched.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(flatten)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

/// One method's score for one prompt, as persisted to scores.jsonl.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub schema: u32,
    pub prompt_id: String,
    pub method: crate::detector::Method,
    pub score: f64,
    pub orientation: crate::detector::Orientation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_used: Option<usize>,
    pub m_used: usize,
    /// Fingerprint of the sampling configuration the scored completions
    /// came from; ties scores back to a cache generation.
    pub config_fingerprint: String,
}

impl ScoreRecord {
    pub fn from_score(score: crate::detector::DetectionScore, config_fingerprint: &str) -> Self {
        ScoreRecord {
            schema: SCHEMA_VERSION,
            prompt_id: score.prompt_id,
            method: score.method,
            score: score.score,
            orientation: score.orientation,
            k_used: score.k_used,
            m_used: score.m_used,
            config_fingerprint: config_fingerprint.to_string(),
        }
    }
}

/// One profiles.jsonl record: an analysis profile tagged by kind, so mixed
/// files stay self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileRecord {
    Diversity(crate::diversity::DiversityProfile),
    Rigidity(crate::rigidity::RigidityProfile),
}

impl ProfileRecord {
    pub fn prompt_id(&self) -> &str {
        match self {
            ProfileRecord::Diversity(p) => &p.prompt_id,
            ProfileRecord::Rigidity(p) => &p.prompt_id,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: duplicate prompt id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: schema {found} is newer than the supported {supported}")]
    Schema { path: PathBuf, line: usize, found: u64, supported: u32 },
    #[error("{path}:{line}: {field} must be non-empty")]
    EmptyField { path: PathBuf, line: usize, field: &'static str },
}

fn io_err(path: &Path, source: io::Error) -> CorpusError {
    CorpusError::Io { path: path.to_path_buf(), source }
}

/// Exclusive advisory lock held for the lifetime of the value. Closing the
/// file on drop releases it.
pub(crate) struct FileLock {
    _file: File,
}

impl FileLock {
    pub(crate) fn exclusive(path: &Path) -> io::Result<FileLock> {
        // Lock-file content is irrelevant; only the flock matters.
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(path)?;
        let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX) };
        if rc != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(FileLock { _file: file })
    }
}

fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    path.with_file_name(name)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Serializes `records` as JSONL and atomically replaces `path`.
pub fn save_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let dir = parent_dir(path);
    fs::create_dir_all(&dir).map_err(|e| io_err(path, e))?;
    let _lock = FileLock::exclusive(&lock_path(path)).map_err(|e| io_err(path, e))?;

    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_err(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        for record in records {
            serde_json::to_writer(&mut w, record)
                .map_err(|e| io_err(path, io::Error::other(e)))?;
            w.write_all(b"\n").map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn check_schema(path: &Path, line: usize, value: &serde_json::Value) -> Result<(), CorpusError> {
    if let Some(found) = value.get("schema") {
        let found = found.as_u64().ok_or_else(|| CorpusError::Parse {
            path: path.to_path_buf(),
            line,
            message: "schema field must be an unsigned integer".to_string(),
        })?;
        if found > u64::from(SCHEMA_VERSION) {
            return Err(CorpusError::Schema {
                path: path.to_path_buf(),
                line,
                found,
                supported: SCHEMA_VERSION,
            });
        }
    }
    Ok(())
}

fn load_jsonl_numbered<T: DeserializeOwned>(
    path: &Path,
) -> Result<Vec<(usize, T)>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        check_schema(path, line_no, &value)?;
        let record = serde_json::from_value(value).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

/// Loads a JSONL file of `T` records, reporting parse failures with their
/// line number. Blank lines are skipped; a `schema` field newer than this
/// build understands is an error.
pub fn load_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    Ok(load_jsonl_numbered(path.as_ref())?.into_iter().map(|(_, r)| r).collect())
}

/// Loads a prompt corpus, enforcing non-empty unique ids.
pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>, CorpusError> {
    let path = path.as_ref();
    let numbered: Vec<(usize, PromptRecord)> = load_jsonl_numbered(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(numbered.len());
    for (line, record) in numbered {
        if record.id.is_empty() {
            return Err(CorpusError::EmptyField { path: path.to_path_buf(), line, field: "id" });
        }
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: record.id.clone(),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// SHA-256 hex digest of a prompt's newline-normalized UTF-8 bytes. Stable
/// across platforms that rewrite line endings, so cache keys survive a
/// corpus round trip through CRLF tooling.
pub fn prompt_sha256(text: &str) -> String {
    let normalized = crate::text::normalize_newlines(text);
    let mut hasher = Sha256::new();
    hasher.update(normalized.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// SHA-256 hex digest of a file's raw bytes, for run manifests.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String, CorpusError> {
    let path = path.as_ref();
    use std::io::Read;
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let read = file.read(&mut buf).map_err(|e| io_err(path, e))?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(out, "{byte:02x}");
    }
    Ok(out)
}
