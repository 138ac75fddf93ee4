//! Standalone stub server binary for manual pipeline runs.


use clap::Parser;
use rlvrdetect_stub::{LabelerMode, NliMode, StubConfig, StubMode};

#[derive(Parser)]
#[command(name = "rlvrdetect-stub", about = "Deterministic OpenAI-compatible stub server")]
struct Args {
    /// Port to bind on 127.0.0.1 (0 picks an ephemeral port).
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Completion mode: echo | synthetic.
    #[arg(long, default_value = "synthetic")]
    mode: StubMode,
    /// Serve at most this many choices per request.
    #[arg(long)]
    n_cap: Option<usize>,
    /// Artificial response delay in milliseconds.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// N-gram labeler mode: rule | garbage | <fixed category>.
    #[arg(long, default_value = "rule")]
    labeler: LabelerMode,
    /// Require this bearer token on every request.
    #[arg(long)]
    api_key: Option<String>,
}

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let args = Args::parse();
    let config = StubConfig {
        mode: args.mode,
        n_cap: args.n_cap,
        latency_ms: args.latency_ms,
        labeler_mode: args.labeler,
        nli_mode: NliMode::FirstTokenMatch,
        require_auth: args.api_key,
        ..Default::default()
    };
    let state = rlvrdetect_stub::shared_state(config);
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", args.port))
        .await
        .expect("bind listener");
    println!("listening on http://{}", listener.local_addr().expect("local addr"));
    axum::serve(listener, rlvrdetect_stub::router(state)).await.expect("serve");
}
