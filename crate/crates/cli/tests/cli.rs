//! End-to-end tests driving the compiled binary with fixture backends.

use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Arc;

use rapo::embed::LocalHashEmbedder;
use rapo::gateway::extract::LlmExtractor;
use rapo::gateway::Gateway;
use rapo::graph::build_graph;
use rapo::pipeline::PipelineOptions;
use rapo::testkit::{FixtureAuthor, OptimizePlan};

const CORPUS: [&str; 3] = [
    "a dog runs in a park",
    "a child plays in a park",
    "a boat sails on a lake",
];

const BATCH: [&str; 3] = ["a dog in a park", "a child near a lake", "a quiet boat"];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rapo"))
}

fn run_ok(cmd: &mut Command) -> (String, String) {
    let output = cmd.output().expect("spawn rapo");
    let stdout = String::from_utf8_lossy(&output.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
    assert!(
        output.status.success(),
        "command failed\nstdout: {stdout}\nstderr: {stderr}"
    );
    (stdout, stderr)
}

struct World {
    _dir: tempfile::TempDir,
    fixtures: PathBuf,
    corpus: PathBuf,
    batch: PathBuf,
    graph: PathBuf,
    plans: Vec<OptimizePlan>,
}

/// Authors every fixture the CLI flows below will request: extractions for
/// the corpus, then a full optimize plan (merges, refactor, rewrite,
/// selection answering "R") per batch prompt against the graph those
/// extractions produce.
async fn author_world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let mut author = FixtureAuthor::new(PipelineOptions::default());
    author.extraction(
        CORPUS[0],
        "a park",
        &["a dog"],
        &["running"],
        &["sunny afternoon"],
    );
    author.extraction(CORPUS[1], "a park", &["a child"], &["playing"], &[]);
    author.extraction(CORPUS[2], "a lake", &["a boat"], &["sailing"], &["calm water"]);

    let gateway = Gateway::new(Arc::new(author.backend()));
    let extractor = LlmExtractor::new(Arc::new(gateway));
    let corpus: Vec<String> = CORPUS.iter().map(|s| s.to_string()).collect();
    let (graph, _) = build_graph(corpus, &extractor, &LocalHashEmbedder, 2)
        .await
        .unwrap();

    let mut plans = Vec::new();
    for prompt in BATCH {
        let plan = author
            .plan_optimize(
                &graph,
                &LocalHashEmbedder,
                prompt,
                |current, modifier| format!("{current}, featuring {modifier}"),
                |merged| format!("{merged}, rendered cinematically"),
                |x_i| format!("{x_i} in a highly detailed scene"),
                Some("R"),
            )
            .await
            .unwrap();
        plans.push(plan);
    }

    let fixtures = dir.path().join("fixtures.jsonl");
    author.save(&fixtures).unwrap();
    let corpus_path = dir.path().join("corpus.txt");
    std::fs::write(&corpus_path, CORPUS.join("\n")).unwrap();
    let batch_path = dir.path().join("batch.txt");
    std::fs::write(&batch_path, BATCH.join("\n")).unwrap();
    World {
        graph: dir.path().join("graph.jsonl"),
        _dir: dir,
        fixtures,
        corpus: corpus_path,
        batch: batch_path,
        plans,
    }
}

fn build_graph_cli(world: &World) -> serde_json::Value {
    let (stdout, _) = run_ok(bin().args([
        "build-graph",
        "--corpus",
        world.corpus.to_str().unwrap(),
        "--out",
        world.graph.to_str().unwrap(),
        "--fixtures",
        world.fixtures.to_str().unwrap(),
    ]));
    serde_json::from_str(stdout.trim()).expect("summary json")
}

#[test]
fn help_succeeds_and_unknown_flag_fails() {
    let (stdout, _) = run_ok(bin().arg("--help"));
    for name in ["build-graph", "optimize", "serve", "analyze-lengths"] {
        assert!(stdout.contains(name), "help missing {name}");
    }
    let status = bin().arg("--definitely-not-a-flag").output().unwrap();
    assert!(!status.status.success());
}

#[tokio::test]
async fn build_graph_writes_header_first_and_reports_counts() {
    let world = author_world().await;
    let summary = build_graph_cli(&world);
    assert_eq!(summary["kept"], 3);
    assert_eq!(summary["extracted"], 3);
    assert_eq!(summary["extraction_failures"], 0);
    assert_eq!(summary["scenes"], 2); // "a park" is shared
    assert_eq!(summary["modifiers"], 8);

    let body = std::fs::read_to_string(&world.graph).unwrap();
    let first = body.lines().next().unwrap();
    assert!(first.contains("\"type\":\"header\""));
    assert!(first.contains("\"version\":\"rapo-graph/1\""));
    assert!(first.contains("\"embedding_backend\":\"local-hash-v1\""));
}

#[tokio::test]
async fn build_graph_with_limit_zero_writes_an_empty_graph() {
    let world = author_world().await;
    let (stdout, _) = run_ok(bin().args([
        "build-graph",
        "--corpus",
        world.corpus.to_str().unwrap(),
        "--out",
        world.graph.to_str().unwrap(),
        "--fixtures",
        world.fixtures.to_str().unwrap(),
        "--limit",
        "0",
    ]));
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["prompts_in"], 0);
    assert_eq!(summary["scenes"], 0);
    let body = std::fs::read_to_string(&world.graph).unwrap();
    assert_eq!(body.lines().count(), 1); // header only
}

#[tokio::test]
async fn corrupt_jsonl_corpus_lines_are_skipped_and_counted() {
    let world = author_world().await;
    let corpus = world._dir.path().join("corpus.jsonl");
    std::fs::write(
        &corpus,
        format!(
            "{{\"text\":\"{}\"}}\nthis line is not json\n{{\"text\":\"{}\"}}\n",
            CORPUS[0], CORPUS[2]
        ),
    )
    .unwrap();
    let (stdout, _) = run_ok(bin().args([
        "build-graph",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        world.graph.to_str().unwrap(),
        "--fixtures",
        world.fixtures.to_str().unwrap(),
    ]));
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["corrupt"], 1);
    assert_eq!(summary["kept"], 2);
    assert_eq!(summary["extracted"], 2);
}

#[tokio::test]
async fn optimize_single_prompt_matches_the_authored_plan() {
    let world = author_world().await;
    build_graph_cli(&world);
    let (stdout, _) = run_ok(bin().args([
        "optimize",
        "--graph",
        world.graph.to_str().unwrap(),
        "--fixtures",
        world.fixtures.to_str().unwrap(),
        "--prompt",
        BATCH[0],
    ]));
    let result: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let plan = &world.plans[0];
    assert_eq!(result["input"], BATCH[0]);
    assert_eq!(result["x_r"], plan.x_r.as_str());
    assert_eq!(result["x_n"], plan.x_n.as_str());
    assert_eq!(result["chosen"]["label"], "r");
    assert_eq!(result["chosen"]["text"], plan.x_r.as_str());
    assert_eq!(
        result["merge_trace"].as_array().unwrap().len(),
        plan.modifiers.len()
    );
    // Deterministic run: timings are zeroed.
    assert_eq!(result["timings_ms"]["total_ms"], 0);
}

#[tokio::test]
async fn optimize_batch_preserves_order_and_replays_byte_identically() {
    let world = author_world().await;
    build_graph_cli(&world);
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "4", "8", "4"].iter().enumerate() {
        let out = world._dir.path().join(format!("batch_out_{i}.jsonl"));
        run_ok(bin().args([
            "optimize",
            "--graph",
            world.graph.to_str().unwrap(),
            "--fixtures",
            world.fixtures.to_str().unwrap(),
            "--batch",
            world.batch.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--workers",
            workers,
        ]));
        outputs.push(std::fs::read(&out).unwrap());
    }
    for other in &outputs[1..] {
        assert_eq!(&outputs[0], other, "batch output varied across runs");
    }
    let body = String::from_utf8(outputs[0].clone()).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines.len(), BATCH.len());
    for (line, prompt) in lines.iter().zip(BATCH) {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(value["input"], prompt);
    }
}

#[tokio::test]
async fn optimize_no_select_emits_null_chosen() {
    let world = author_world().await;
    build_graph_cli(&world);
    let (stdout, _) = run_ok(bin().args([
        "optimize",
        "--graph",
        world.graph.to_str().unwrap(),
        "--fixtures",
        world.fixtures.to_str().unwrap(),
        "--prompt",
        BATCH[1],
        "--no-select",
    ]));
    let result: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert!(result["chosen"].is_null());
    assert_eq!(result["x_r"], world.plans[1].x_r.as_str());
    assert!(stdout.contains("\"chosen\":null"));
}

#[tokio::test]
async fn batch_jsonl_ids_appear_in_output_lines() {
    let world = author_world().await;
    build_graph_cli(&world);
    let batch = world._dir.path().join("batch_ids.jsonl");
    std::fs::write(
        &batch,
        format!(
            "{{\"id\":\"q1\",\"text\":\"{}\"}}\n{{\"text\":\"{}\"}}\n",
            BATCH[0], BATCH[1]
        ),
    )
    .unwrap();
    let (stdout, _) = run_ok(bin().args([
        "optimize",
        "--graph",
        world.graph.to_str().unwrap(),
        "--fixtures",
        world.fixtures.to_str().unwrap(),
        "--batch",
        batch.to_str().unwrap(),
    ]));
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["id"], "q1");
    let second: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert!(second.get("id").is_none());
}

#[tokio::test]
async fn transcripts_from_fixture_runs_have_pinned_timestamps() {
    let world = author_world().await;
    build_graph_cli(&world);
    let transcript = world._dir.path().join("transcript.jsonl");
    run_ok(bin().args([
        "optimize",
        "--graph",
        world.graph.to_str().unwrap(),
        "--fixtures",
        world.fixtures.to_str().unwrap(),
        "--prompt",
        BATCH[0],
        "--transcript",
        transcript.to_str().unwrap(),
    ]));
    let body = std::fs::read_to_string(&transcript).unwrap();
    assert!(!body.is_empty());
    for line in body.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(entry["ts"], "1970-01-01T00:00:00Z");
        assert_eq!(entry["latency_ms"], 0);
    }
}

#[test]
fn analyze_lengths_reports_stats_and_distances() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("train.txt");
    std::fs::write(&a, "a b c\na b c\n").unwrap();
    let b = dir.path().join("user.txt");
    std::fs::write(&b, "a b c d e\na b c d e\na b c d e\n").unwrap();
    let stats = dir.path().join("corpus_stats.json");
    let csv_dir = dir.path().join("csv");
    let (stdout, _) = run_ok(bin().args([
        "analyze-lengths",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--stats-out",
        stats.to_str().unwrap(),
        "--csv-dir",
        csv_dir.to_str().unwrap(),
    ]));
    assert!(stdout.contains("corpus train: n=2 mean=3 median=3 p10=3 p90=3"));
    assert!(stdout.contains("corpus user: n=3 mean=5 median=5 p10=5 p90=5"));
    // Point masses at 3 and 5 words sit exactly 2 apart.
    assert!(stdout.contains("distance train <-> user: 2"));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(stats["median"], 3.0);
    assert_eq!(stats["label"], "train");
    assert_eq!(
        std::fs::read_to_string(csv_dir.join("train.csv")).unwrap(),
        "length,count\n3,2\n"
    );
}

#[test]
fn analyze_lengths_requires_at_least_one_corpus() {
    let output = bin().arg("analyze-lengths").output().unwrap();
    assert!(!output.status.success());
}

struct ChildGuard(std::process::Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_server(world: &World) -> (ChildGuard, String) {
    let child = bin()
        .args([
            "serve",
            "--graph",
            world.graph.to_str().unwrap(),
            "--fixtures",
            world.fixtures.to_str().unwrap(),
            "--addr",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn server");
    let mut guard = ChildGuard(child);
    let stdout = guard.0.stdout.take().expect("stdout piped");
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("bind announcement")
        .to_string();
    (guard, addr)
}

#[tokio::test]
async fn serve_answers_healthz_optimize_and_rejects_empty_text() {
    let world = author_world().await;
    build_graph_cli(&world);
    let (_guard, addr) = spawn_server(&world);
    let client = reqwest::Client::new();
    let base = format!("http://{addr}");

    let health = client.get(format!("{base}/healthz")).send().await.unwrap();
    assert_eq!(health.status(), 200);
    let body: serde_json::Value = health.json().await.unwrap();
    assert_eq!(body["status"], "ok");

    let empty = client
        .post(format!("{base}/optimize"))
        .json(&serde_json::json!({"text": "   "}))
        .send()
        .await
        .unwrap();
    assert_eq!(empty.status(), 400);

    let ok = client
        .post(format!("{base}/optimize"))
        .json(&serde_json::json!({"text": BATCH[0]}))
        .send()
        .await
        .unwrap();
    assert_eq!(ok.status(), 200);
    let result: serde_json::Value = ok.json().await.unwrap();
    assert_eq!(result["chosen"]["text"], world.plans[0].x_r.as_str());
    assert_eq!(result["chosen"]["label"], "r");
}

/// Loading a graph with a different embedding backend must fail cleanly.
#[tokio::test]
async fn optimize_rejects_graph_from_a_different_embedder(){
    let world = author_world().await;
    build_graph_cli(&world);
    let mut body = std::fs::read_to_string(&world.graph).unwrap();
    body = body.replace("local-hash-v1", "some-other-backend");
    let tampered = world._dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, body).unwrap();
    let output = bin()
        .args([
            "optimize",
            "--graph",
            tampered.to_str().unwrap(),
            "--fixtures",
            world.fixtures.to_str().unwrap(),
            "--prompt",
            BATCH[0],
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("some-other-backend"),
        "stderr should name the mismatched backend: {stderr}"
    );
}

fn write_world_file(world: &World, name: &str, content: &str) -> PathBuf {
    let path = world._dir.path().join(name);
    std::fs::write(&path, content).unwrap();
    path
}

#[tokio::test]
async fn prepare_refactor_data_cli_round_trips() {
    let world = author_world().await;
    // Extra fixtures: degradations for two captions.
    let mut author = FixtureAuthor::new(PipelineOptions::default());
    author.degrade(CORPUS[0], "dog park running a in");
    author.degrade(CORPUS[1], "plays child park");
    let fixtures = world._dir.path().join("degrade_fixtures.jsonl");
    author.save(&fixtures).unwrap();
    let corpus = write_world_file(&world, "captions.txt", &format!("{}\n{}\n", CORPUS[0], CORPUS[1]));
    let out = world._dir.path().join("d_r.jsonl");
    let (stdout, _) = run_ok(bin().args([
        "prepare-refactor-data",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--fixtures",
        fixtures.to_str().unwrap(),
    ]));
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["written"], 2);
    let pairs = rapo::dataset::parse_refactor_dataset(&out).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].caption, CORPUS[0]);
    assert_eq!(pairs[0].degraded, "dog park running a in");
}

#[tokio::test]
async fn simulate_users_cli_writes_prompts_and_summary() {
    let world = author_world().await;
    let mut author = FixtureAuthor::new(PipelineOptions::default());
    let dims = rapo::dataset::DimensionSet::builtin();
    for i in 0..3usize {
        let dimension = &dims.names()[i % dims.names().len()];
        author.simulate(dimension, "none", i, &format!("simulated prompt {i}"));
    }
    let fixtures = world._dir.path().join("sim_fixtures.jsonl");
    author.save(&fixtures).unwrap();
    let out = world._dir.path().join("prompts.jsonl");
    let (_, stderr) = run_ok(bin().args([
        "simulate-users",
        "--n",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--fixtures",
        fixtures.to_str().unwrap(),
    ]));
    let body = std::fs::read_to_string(&out).unwrap();
    assert_eq!(body.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(body.lines().next().unwrap()).unwrap();
    assert_eq!(first["text"], "simulated prompt 0");
    assert_eq!(first["dimension"], "temporal_flickering");
    assert!(stderr.contains("\"produced\":3"));
}
