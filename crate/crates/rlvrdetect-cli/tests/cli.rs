//! End-to-end tests driving the compiled binary: exit codes, file outputs,
//! manifests, config precedence, sweeps, and endpoint-backed flows against
//! the stub server.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rlvrdetect_stub::{StubConfig, StubServer};
use serde_json::{json, Value};
use tempfile::TempDir;

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlvrdetect"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stderr_text(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_text(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn read_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(|l| serde_json::from_str(l).expect("valid JSON line"))
        .collect()
}

fn read_manifest(output_path: &Path) -> Value {
    let name = format!("{}.manifest.json", output_path.file_name().unwrap().to_str().unwrap());
    let path = output_path.with_file_name(name);
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| {
        panic!("reading manifest {}: {e}", path.display())
    }))
    .expect("valid manifest JSON")
}

/// Writes a small synthetic corpus with completion sets; returns
/// (prompts.jsonl, completions.jsonl) under `dir`.
fn synth_corpus(dir: &Path, members: usize, nonmembers: usize, n: usize) -> (PathBuf, PathBuf) {
    let out = run_in(
        dir,
        &[
            "synth",
            "--out-dir",
            "corpus",
            "--members",
            &members.to_string(),
            "--nonmembers",
            &nonmembers.to_string(),
            "--n",
            &n.to_string(),
            "--seed",
            "5",
            "--with-completions",
        ],
    );
    assert_eq!(code(&out), 0, "synth failed: {}", stderr_text(&out));
    (dir.join("corpus/prompts.jsonl"), dir.join("corpus/completions.jsonl"))
}

fn write_prompts(path: &Path, texts: &[&str]) {
    let body: String = texts
        .iter()
        .enumerate()
        .map(|(i, t)| json!({ "id": format!("p{i}"), "prompt": t }).to_string() + "\n")
        .collect();
    std::fs::write(path, body).unwrap();
}

#[test]
fn synth_writes_corpus_and_manifest() {
    let dir = TempDir::new().unwrap();
    let (prompts, completions) = synth_corpus(dir.path(), 4, 4, 6);

    let prompt_lines = read_lines(&prompts);
    assert_eq!(prompt_lines.len(), 8);
    assert_eq!(prompt_lines[0]["label"], "member");
    assert_eq!(prompt_lines[7]["label"], "non-member");

    let completion_lines = read_lines(&completions);
    assert_eq!(completion_lines.len(), 8);
    assert_eq!(completion_lines[0]["completions"].as_array().unwrap().len(), 6);
    assert!(completion_lines[0]["greedy"].is_string());

    let manifest = read_manifest(&prompts);
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["effective"]["members"], 4);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2, "prompts and completions are both declared");
}

#[test]
fn offline_flow_scores_and_evaluates() {
    let dir = TempDir::new().unwrap();
    let (prompts, completions) = synth_corpus(dir.path(), 6, 6, 8);

    let score = run_in(
        dir.path(),
        &[
            "score",
            completions.to_str().unwrap(),
            "--out",
            "scores.jsonl",
            "--k",
            "5",
        ],
    );
    assert_eq!(code(&score), 0, "score failed: {}", stderr_text(&score));
    let scores = read_lines(&dir.path().join("scores.jsonl"));
    assert_eq!(scores.len(), 12);
    assert_eq!(scores[0]["method"], "min-knn");
    assert_eq!(scores[0]["orientation"], "lower-means-member");
    assert_eq!(scores[0]["k_used"], 5);

    let eval = run_in(
        dir.path(),
        &["eval", "scores.jsonl", prompts.to_str().unwrap(), "--out", "report.jsonl"],
    );
    assert_eq!(code(&eval), 0, "eval failed: {}", stderr_text(&eval));
    let reports = read_lines(&dir.path().join("report.jsonl"));
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["method"], "min-knn");
    assert_eq!(reports[0]["available"], true);
    let auc = reports[0]["auc"].as_f64().unwrap();
    assert!(auc > 0.9, "collapsed members should be separable, got AUC {auc}");

    let table = stdout_text(&eval);
    assert!(table.contains("min-knn"), "rendered report missing method:\n{table}");
    assert!(table.contains("auc"), "rendered report missing header:\n{table}");
}

#[test]
fn score_rejects_k_exceeding_m() {
    let dir = TempDir::new().unwrap();
    let (_, completions) = synth_corpus(dir.path(), 2, 2, 4);
    let out = run_in(dir.path(), &["score", completions.to_str().unwrap(), "--k", "10"]);
    assert_eq!(code(&out), 2);
    assert!(stderr_text(&out).contains("exceeds m"), "stderr: {}", stderr_text(&out));
}

#[test]
fn score_cdd_requires_greedy_completions() {
    let dir = TempDir::new().unwrap();
    let (_, completions) = synth_corpus(dir.path(), 2, 2, 4);

    // Strip the greedy field, as if sample had run without --greedy.
    let stripped: String = read_lines(&completions)
        .into_iter()
        .map(|mut v| {
            v.as_object_mut().unwrap().remove("greedy");
            v.to_string() + "\n"
        })
        .collect();
    std::fs::write(&completions, stripped).unwrap();

    let out = run_in(
        dir.path(),
        &["score", completions.to_str().unwrap(), "--method", "cdd", "--k", "2"],
    );
    assert_eq!(code(&out), 2);
    assert!(
        stderr_text(&out).contains("re-run sample with --greedy"),
        "stderr: {}",
        stderr_text(&out)
    );
}

#[test]
fn eval_reports_requested_but_unscored_methods_as_unavailable() {
    let dir = TempDir::new().unwrap();
    let (prompts, completions) = synth_corpus(dir.path(), 3, 3, 6);
    let score = run_in(
        dir.path(),
        &["score", completions.to_str().unwrap(), "--out", "scores.jsonl", "--k", "3"],
    );
    assert_eq!(code(&score), 0);

    let eval = run_in(
        dir.path(),
        &[
            "eval",
            "scores.jsonl",
            prompts.to_str().unwrap(),
            "--out",
            "report.jsonl",
            "--method",
            "min-knn,ppl",
        ],
    );
    assert_eq!(code(&eval), 0, "eval failed: {}", stderr_text(&eval));
    let reports = read_lines(&dir.path().join("report.jsonl"));
    assert_eq!(reports.len(), 2);
    let ppl_row = reports.iter().find(|r| r["method"] == "ppl").expect("ppl row");
    assert_eq!(ppl_row["available"], false);
    assert_eq!(ppl_row["note"], "unavailable: no scores");
}

#[test]
fn endpoint_urls_must_have_a_scheme() {
    let dir = TempDir::new().unwrap();
    let (_, completions) = synth_corpus(dir.path(), 2, 2, 4);
    let out = run_in(
        dir.path(),
        &["score", completions.to_str().unwrap(), "--k", "2", "--endpoint", "localhost:9"],
    );
    assert_eq!(code(&out), 2);
    assert!(
        stderr_text(&out).contains("must start with http"),
        "stderr: {}",
        stderr_text(&out)
    );
}

#[test]
fn unknown_config_file_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let (_, completions) = synth_corpus(dir.path(), 2, 2, 4);
    std::fs::write(dir.path().join("run.conf"), "k = 2\nbogus_knob = 7\n").unwrap();
    let out = run_in(
        dir.path(),
        &["score", completions.to_str().unwrap(), "--config", "run.conf"],
    );
    assert_eq!(code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("unknown config key"), "stderr: {err}");
    assert!(err.contains("run.conf:2"), "error should cite file and line: {err}");
}

#[test]
fn score_sweep_writes_one_file_per_k() {
    let dir = TempDir::new().unwrap();
    let (_, completions) = synth_corpus(dir.path(), 3, 3, 8);
    let out = run_in(
        dir.path(),
        &[
            "score",
            completions.to_str().unwrap(),
            "--out",
            "scores.jsonl",
            "--sweep",
            "k=2,4",
        ],
    );
    assert_eq!(code(&out), 0, "score failed: {}", stderr_text(&out));

    assert!(!dir.path().join("scores.jsonl").exists(), "sweep should only write suffixed files");
    let k2 = read_lines(&dir.path().join("scores-k2.jsonl"));
    let k4 = read_lines(&dir.path().join("scores-k4.jsonl"));
    assert_eq!((k2.len(), k4.len()), (6, 6));
    assert_eq!(k2[0]["k_used"], 2);
    assert_eq!(k4[0]["k_used"], 4);

    let manifest = read_manifest(&dir.path().join("scores.jsonl"));
    let outputs: Vec<&str> =
        manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.iter().any(|o| o.ends_with("scores-k2.jsonl")));
    assert!(outputs.iter().any(|o| o.ends_with("scores-k4.jsonl")));
}

#[test]
fn sample_from_stub_sweeps_and_caches() {
    let server = StubServer::spawn(StubConfig::default());
    let dir = TempDir::new().unwrap();
    write_prompts(&dir.path().join("prompts.jsonl"), &["first prompt", "second prompt"]);

    let out = run_in(
        dir.path(),
        &[
            "sample",
            "prompts.jsonl",
            "--out",
            "completions.jsonl",
            "--endpoint",
            &server.url(),
            "--cache-dir",
            "cache",
            "--sweep",
            "n=2,3",
        ],
    );
    assert_eq!(code(&out), 0, "sample failed: {}", stderr_text(&out));

    let n2 = read_lines(&dir.path().join("completions-n2.jsonl"));
    let n3 = read_lines(&dir.path().join("completions-n3.jsonl"));
    assert_eq!((n2.len(), n3.len()), (2, 2));
    assert_eq!(n2[0]["completions"].as_array().unwrap().len(), 2);
    assert_eq!(n3[0]["completions"].as_array().unwrap().len(), 3);
    assert_eq!(n2[0]["prompt_id"], "p0");
    assert_eq!(n2[1]["prompt_id"], "p1");
    assert!(dir.path().join("cache/model").is_dir(), "cache records land under the model name");
}

#[test]
fn sample_keeps_going_past_failing_prompts_and_exits_one() {
    let server = StubServer::spawn(StubConfig {
        fail_substring: Some("[bad]".to_string()),
        ..StubConfig::default()
    });
    let dir = TempDir::new().unwrap();
    write_prompts(&dir.path().join("prompts.jsonl"), &["good prompt", "a [bad] prompt"]);

    let out = run_in(
        dir.path(),
        &[
            "sample",
            "prompts.jsonl",
            "--endpoint",
            &server.url(),
            "--cache-dir",
            "cache",
            "--n",
            "2",
            "--max-retries",
            "0",
        ],
    );
    assert_eq!(code(&out), 1, "stderr: {}", stderr_text(&out));
    let sets = read_lines(&dir.path().join("completions.jsonl"));
    assert_eq!(sets.len(), 1, "only the good prompt produced a set");
    assert_eq!(sets[0]["prompt_id"], "p0");
    assert!(stderr_text(&out).contains("p1"), "failure should name the prompt");
}

#[test]
fn analyze_rigidity_offline_writes_profiles_and_heatmaps() {
    let dir = TempDir::new().unwrap();
    let (_, completions) = synth_corpus(dir.path(), 2, 1, 8);
    let out = run_in(
        dir.path(),
        &[
            "analyze",
            completions.to_str().unwrap(),
            "rigidity",
            "--out",
            "profiles.jsonl",
            "--heatmap",
            "--min-count",
            "2",
        ],
    );
    assert_eq!(code(&out), 0, "analyze failed: {}", stderr_text(&out));
    assert!(
        stdout_text(&out).contains("no labeler endpoint configured"),
        "expected offline notice, got:\n{}",
        stdout_text(&out)
    );

    let profiles = read_lines(&dir.path().join("profiles.jsonl"));
    assert_eq!(profiles.len(), 3);
    for profile in &profiles {
        assert_eq!(profile["kind"], "rigidity");
        assert_eq!(profile["labeler_used"], false);
        assert_eq!(profile["feature_scope"], "all-rigid");
        let id = profile["prompt_id"].as_str().unwrap();
        let csv_path = dir.path().join(format!("profiles-{id}.csv"));
        assert!(csv_path.exists(), "missing heatmap CSV {}", csv_path.display());
        assert!(std::fs::read_to_string(&csv_path).unwrap().starts_with("ngram"));
    }
    // Members collapse onto templates, so their sets carry rigid n-grams and
    // their heatmaps have completion columns.
    let member = profiles.iter().find(|p| p["prompt_id"] == "member-000").unwrap();
    assert!(!member["rigid_ngrams"].as_object().unwrap().is_empty());
    let member_csv =
        std::fs::read_to_string(dir.path().join("profiles-member-000.csv")).unwrap();
    assert!(member_csv.starts_with("ngram,completion_0"), "csv header: {member_csv}");
}

#[test]
fn analyze_diversity_offline_notes_absent_providers() {
    let dir = TempDir::new().unwrap();
    let (_, completions) = synth_corpus(dir.path(), 2, 2, 6);
    let out = run_in(
        dir.path(),
        &["analyze", completions.to_str().unwrap(), "diversity", "--out", "profiles.jsonl"],
    );
    assert_eq!(code(&out), 0, "analyze failed: {}", stderr_text(&out));
    let notices = stdout_text(&out);
    assert!(notices.contains("no embedding endpoint configured"));
    assert!(notices.contains("no NLI endpoint configured"));

    let profiles = read_lines(&dir.path().join("profiles.jsonl"));
    assert_eq!(profiles.len(), 4);
    for profile in &profiles {
        assert_eq!(profile["kind"], "diversity");
        assert!(profile["ead"].as_f64().unwrap() > 0.0);
        assert!(profile.get("embedding_diversity").is_none());
        assert!(profile.get("nli_diversity").is_none());
        assert_eq!(profile["pair_count"], 0);
    }
}

#[test]
fn analyze_uses_stub_providers_when_configured() {
    let server = StubServer::spawn(StubConfig::default());
    let dir = TempDir::new().unwrap();
    let (_, completions) = synth_corpus(dir.path(), 2, 1, 6);

    let diversity = run_in(
        dir.path(),
        &[
            "analyze",
            completions.to_str().unwrap(),
            "diversity",
            "--out",
            "diversity.jsonl",
            "--embedding-endpoint",
            &server.url(),
            "--nli-endpoint",
            &server.url(),
            "--max-pairs",
            "6",
        ],
    );
    assert_eq!(code(&diversity), 0, "diversity failed: {}", stderr_text(&diversity));
    let profiles = read_lines(&dir.path().join("diversity.jsonl"));
    for profile in &profiles {
        assert!(profile["embedding_diversity"].is_number());
        assert!(profile["nli_diversity"].is_number());
        assert!(profile["pair_count"].as_u64().unwrap() > 0);
        let providers: Vec<&str> = profile["provider_ids"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        assert!(providers.iter().any(|p| p.starts_with("nli:")));
        assert!(providers.iter().any(|p| p.starts_with("embeddings:")));
    }
    let stats = server.stats();
    assert!(stats.embeddings >= 3 && stats.nli > 0, "stats: {stats:?}");

    let rigidity = run_in(
        dir.path(),
        &[
            "analyze",
            completions.to_str().unwrap(),
            "rigidity",
            "--out",
            "rigidity.jsonl",
            "--labeler-endpoint",
            &server.url(),
            "--min-count",
            "2",
        ],
    );
    assert_eq!(code(&rigidity), 0, "rigidity failed: {}", stderr_text(&rigidity));
    let profiles = read_lines(&dir.path().join("rigidity.jsonl"));
    let member = profiles.iter().find(|p| p["prompt_id"] == "member-000").unwrap();
    assert_eq!(member["labeler_used"], true);
    assert_eq!(member["feature_scope"], "logic-only");
    assert!(!member["categories"].as_object().unwrap().is_empty());
}

#[test]
fn config_file_applies_and_flags_override_it() {
    let dir = TempDir::new().unwrap();
    let (_, completions) = synth_corpus(dir.path(), 2, 2, 6);
    std::fs::write(
        dir.path().join("run.conf"),
        "temperature = 0.25\nk = 3\nmodel = conf-model\n# comment line\n",
    )
    .unwrap();

    let out = run_in(
        dir.path(),
        &[
            "score",
            completions.to_str().unwrap(),
            "--config",
            "run.conf",
            "--k",
            "4",
            "--out",
            "scores.jsonl",
        ],
    );
    assert_eq!(code(&out), 0, "score failed: {}", stderr_text(&out));

    let manifest = read_manifest(&dir.path().join("scores.jsonl"));
    let run = &manifest["effective"]["run"];
    assert_eq!(run["sampling"]["temperature"], 0.25);
    assert_eq!(run["sampling"]["model_name"], "conf-model");
    assert_eq!(run["detector"]["k"], 4, "flag overrides file");
    // The config carries the key variable's name, never a key value.
    assert_eq!(run["sampling"]["api_key_env"], "RLVRDETECT_API_KEY");

    let scores = read_lines(&dir.path().join("scores.jsonl"));
    assert_eq!(scores[0]["k_used"], 4);
}

#[test]
fn eval_dual_stage_adds_subset_and_control_rows() {
    let dir = TempDir::new().unwrap();

    let labels = ["member", "non-member"];
    let prompts: String = (0..10)
        .map(|i| {
            json!({
                "id": format!("p{i}"),
                "prompt": format!("prompt {i}"),
                "label": labels[i % 2],
            })
            .to_string()
                + "\n"
        })
        .collect();
    std::fs::write(dir.path().join("prompts.jsonl"), prompts).unwrap();

    let mut scores = String::new();
    for i in 0..10 {
        let member = i % 2 == 0;
        let knn = if member { 0.1 + i as f64 / 100.0 } else { 0.8 + i as f64 / 100.0 };
        scores.push_str(
            &json!({
                "schema": 1, "prompt_id": format!("p{i}"), "method": "min-knn",
                "score": knn, "orientation": "lower-means-member",
                "k_used": 5, "m_used": 8, "config_fingerprint": "test",
            })
            .to_string(),
        );
        scores.push('\n');
        scores.push_str(
            &json!({
                "schema": 1, "prompt_id": format!("p{i}"), "method": "ppl",
                "score": 10.0 + i as f64, "orientation": "lower-means-member",
                "m_used": 8, "config_fingerprint": "test",
            })
            .to_string(),
        );
        scores.push('\n');
    }
    std::fs::write(dir.path().join("scores.jsonl"), scores).unwrap();

    let out = run_in(
        dir.path(),
        &[
            "eval",
            "scores.jsonl",
            "prompts.jsonl",
            "--out",
            "report.jsonl",
            "--dual-stage",
            "0.5",
            "--seed",
            "3",
        ],
    );
    assert_eq!(code(&out), 0, "eval failed: {}", stderr_text(&out));

    let reports = read_lines(&dir.path().join("report.jsonl"));
    let subsets: Vec<&str> =
        reports.iter().map(|r| r["subset"].as_str().unwrap()).collect();
    assert!(subsets.contains(&"full"));
    assert!(subsets.contains(&"low-pretrain-contamination"));
    assert!(subsets.contains(&"random-control"));
    // Two methods in the scores, three pools.
    assert_eq!(reports.len(), 6);
    for report in &reports {
        if report["subset"] != "full" {
            let pool = report["n_member"].as_u64().unwrap() + report["n_nonmember"].as_u64().unwrap();
            assert_eq!(pool, 5, "q=0.5 of 10 prompts");
        }
    }
}
