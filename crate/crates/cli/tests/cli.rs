use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tempfile::TempDir;

fn advisor() -> Command {
    Command::new(env!("CARGO_BIN_EXE_advisor"))
}

fn run(args: &[&str]) -> Output {
    advisor().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn market(n_assets: usize, n_steps: usize, vol: f64, seed: u64) -> Value {
    json!({"synthetic": {
        "n_assets": n_assets, "n_steps": n_steps, "correlation": 0.1, "seed": seed,
        "regimes": [{"drift": 0.0003, "volatility": vol, "mean_duration": 40},
                    {"drift": -0.0002, "volatility": vol * 2.0, "mean_duration": 20}]
    }})
}

fn tiny(dir: &Path) -> Value {
    json!({
        "output_dir": dir.join("out"),
        "market": market(3, 300, 0.01, 3),
        "env": {"window": 10, "episode_len": 32},
        "ppo": {"max_updates": 3, "episodes_per_update": 2, "hidden": [8], "minibatch_size": 32,
                "optimizer": "adam", "learning_rate": 0.003},
        "risk": {"cohort": [0.2, 0.8]},
        "backtest": {"estimation_window": 30},
        "train_fraction": 0.7
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn setup() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &tiny(dir.path()));
    (dir, cfg)
}

#[test]
fn gen_data_is_byte_identical_per_seed() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    let cfg = cfg.to_str().unwrap();
    for (path, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let out = run(&["gen-data", "--config", cfg, "--seed", seed, "--output", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn gen_data_writes_every_asset_date_pair() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg["market"] = market(5, 1000, 0.01, 1);
    let cfg = write_config(dir.path(), "run.json", &cfg);
    let out = run(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let path = dir.path().join("out/run/market.csv");
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("date,asset_id,close"));
    assert_eq!(lines.count(), 5000);
}

#[test]
fn zero_volatility_gives_constant_returns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg["market"] = json!({"synthetic": {
        "n_assets": 2, "n_steps": 50, "correlation": 0.0, "seed": 1,
        "regimes": [{"drift": 0.001, "volatility": 0.0, "mean_duration": 10}]
    }});
    let cfg = write_config(dir.path(), "run.json", &cfg);
    let csv = dir.path().join("m.csv");
    let out = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--output", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let u = advisor_core::market::ingest_csv(std::fs::File::open(csv).unwrap()).unwrap();
    for s in &u.assets {
        let r: Vec<f64> = s.closes.windows(2).map(|w| w[1] / w[0]).collect();
        for x in &r {
            assert!((x - r[0]).abs() < 1e-12, "{x} vs {}", r[0]);
        }
    }
}

#[test]
fn config_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.json"), "{}", stderr(&out));

    let mut cfg = tiny(dir.path());
    cfg["risk"]["lexicon"] = json!("missing_lexicon.json");
    let cfg = write_config(dir.path(), "bad.json", &cfg);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing_lexicon.json"));

    assert_eq!(code(&run(&["no-such-command"])), 2);
}

#[test]
fn train_is_deterministic_and_writes_artifacts() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let mut curves = Vec::new();
    for out_dir in ["x", "y"] {
        let target = dir.path().join(out_dir);
        let out = run(&["train", "--config", cfg, "--out", target.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let run_dir = target.join("run/ppo_personalized");
        assert!(run_dir.join("checkpoint.json").exists());
        curves.push((
            std::fs::read(run_dir.join("loss_curve.csv")).unwrap(),
            std::fs::read(run_dir.join("checkpoint.json")).unwrap(),
        ));
    }
    assert_eq!(curves[0], curves[1]);
    let text = String::from_utf8(curves[0].0.clone()).unwrap();
    assert_eq!(text.lines().count(), 4);

    let out = run(&["train", "--config", cfg, "--blind"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("out/run/ppo/checkpoint.json").exists());
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg["ppo"] = json!({"max_updates": 20, "episodes_per_update": 2, "hidden": [8], "minibatch_size": 32,
                        "optimizer": "sgd", "learning_rate": 1e300, "target_kl": 1e300,
                        "normalize_advantages": false});
    let cfg = write_config(dir.path(), "nan.json", &cfg);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}

#[test]
fn backtest_and_compare() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let out = run(&["backtest", "--config", cfg, "--strategy", "equal_weight"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let equity = std::fs::read_to_string(dir.path().join("out/run/backtest_equal_weight.csv")).unwrap();
    assert_eq!(equity.lines().next(), Some("step,return,equity,exposure"));

    let out = run(&["compare", "--config", cfg, "--strategies", "equal_weight,mvo"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("out/run/comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "strategy,AR,SR,MDD,IR,CR,UAS,cohort_mean_UAS");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("equal_weight,"));
    assert!(lines[2].starts_with("mvo,"));

    let out = run(&["compare", "--config", cfg, "--strategies", "equal_weight,bert_fa"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bert_fa"));
    let out = run(&["backtest", "--config", cfg, "--strategy", "oracle"]);
    assert_eq!(code(&out), 2);
}

fn dialogue(dir: &Path, script: &str) -> (Output, PathBuf) {
    let script_path = dir.join("script.jsonl");
    std::fs::write(&script_path, script).unwrap();
    let output = dir.join("dialogue.jsonl");
    let out = run(&[
        "simulate-dialogue",
        "--script",
        script_path.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    (out, output)
}

#[test]
fn dialogue_script_passes() {
    let dir = tempfile::tempdir().unwrap();
    let script = r#"{"session": "a", "text": "I prefer safer assets this month", "expect": {"risk_appetite": "decrease"}}
{"session": "a", "text": "hello", "expect": {"risk_appetite": "unchanged"}}

{"session": "b", "text": "I want aggressive growth", "expect": {"risk_appetite": "increase"}}
{"text": "nothing relevant here", "expect": {"risk_appetite": "non_increasing", "horizon": "non_decreasing"}}
"#;
    let (out, output) = dialogue(dir.path(), script);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows: Vec<Value> = std::fs::read_to_string(output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["passed"] == true));
    assert_eq!(rows[1]["session"], "a");
    assert_eq!(rows[1]["before"], rows[0]["risk_vector"]);
    assert_eq!(rows[3]["line"], 5);
}

#[test]
fn empty_script_succeeds_with_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let (out, output) = dialogue(dir.path(), "");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(output).unwrap(), "");
}

#[test]
fn failed_expectation_exits_1_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let script = r#"{"text": "hello", "expect": {"risk_appetite": "unchanged"}}
{"text": "I prefer safer assets", "expect": {"risk_appetite": "increase"}}
"#;
    let (out, _) = dialogue(dir.path(), script);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn malformed_script_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    for script in [
        "{\"text\": \"hi\", \"expect\": {}}\nnot json\n",
        "{\"text\": \"hi\", \"expect\": {\"courage\": \"increase\"}}\n",
        "{\"text\": \"hi\", \"expect\": {\"risk_appetite\": \"sideways\"}}\n",
    ] {
        let (out, _) = dialogue(dir.path(), script);
        assert_eq!(code(&out), 2, "{script}: {}", stderr(&out));
        assert!(stderr(&out).contains("line"), "{}", stderr(&out));
    }
}

struct Served {
    child: std::process::Child,
    base: String,
}

impl Served {
    fn start(cfg: &Path, bind: &str) -> Self {
        let mut child = advisor()
            .args(["serve", "--config", cfg.to_str().unwrap(), "--bind", bind])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("listening on ").expect("listening line").to_string();
        Self { child, base }
    }

    fn terminate(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        Command::new("kill").args(["-TERM", &pid]).status().unwrap();
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                return status;
            }
            assert!(Instant::now() < deadline, "server ignored SIGTERM");
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

fn get(url: &str) -> (u16, Value) {
    let resp = reqwest::blocking::get(url).unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap_or(Value::Null))
}

#[test]
fn serve_answers_and_shuts_down_cleanly() {
    let (dir, cfg) = setup();
    let server = Served::start(&cfg, "127.0.0.1:0");
    let client = reqwest::blocking::Client::new();
    let (status, body) = get(&format!("{}/sessions/missing", server.base));
    assert_eq!(status, 404);
    assert_eq!(body["code"], "session_not_found");

    let created: Value = client
        .post(format!("{}/sessions", server.base))
        .json(&json!({"utterances": ["I prefer safer assets"]}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let session = created["session_id"].as_str().unwrap().to_string();

    // A long job is still running when the signal arrives.
    let mut job_cfg = tiny(dir.path());
    job_cfg["ppo"]["max_updates"] = json!(100_000);
    let job: Value = client
        .post(format!("{}/jobs", server.base))
        .json(&json!({"kind": "train", "config": job_cfg}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let job_id = job["job_id"].as_str().unwrap().to_string();
    std::thread::sleep(Duration::from_millis(300));

    let addr = server.base.trim_start_matches("http://").to_string();
    // Same port while it is held: a usage error.
    let out = run(&["serve", "--config", cfg.to_str().unwrap(), "--bind", &addr]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let status = server.terminate();
    assert!(status.success(), "{status:?}");
    let journal = dir.path().join("out/run/journal.jsonl");
    assert!(journal.exists());

    let server = Served::start(&cfg, "127.0.0.1:0");
    let (status, body) = get(&format!("{}/sessions/{session}", server.base));
    assert_eq!(status, 200);
    assert_eq!(body["session_id"], session.as_str());
    let (status, body) = get(&format!("{}/jobs/{job_id}", server.base));
    assert_eq!(status, 200);
    assert!(matches!(body["state"].as_str(), Some("failed" | "done")), "{body}");
    if body["state"] == "failed" {
        assert_eq!(body["diagnostic"], "interrupted by shutdown");
    }
    server.terminate();
}
