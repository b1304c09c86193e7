use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lexhold::corpus::parse_corpus;
use lexhold::metrics::{read_predictions, write_predictions, PredictionRecord};
use lexhold::probes::read_embeddings;
use lexhold::runner::{config_hash, RunSummary, RunnerRequest, Stage};

const LEXHOLD: &str = env!("CARGO_BIN_EXE_lexhold");
const MOCK: &str = env!("CARGO_BIN_EXE_lexhold-mock-runner");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// A temp dir holding the fixture corpus and a config with `runner` lines.
fn project(runner: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["train.jsonl", "test.jsonl", "freq.tsv"] {
        std::fs::copy(fixtures().join(f), dir.path().join(f)).unwrap();
    }
    let cfg = format!(
        "[paths]\ntrain = \"train.jsonl\"\ntest = \"test.jsonl\"\nfreq = \"freq.tsv\"\n\n\
         [split]\npos_filter = \"VERB\"\n\n[runner]\n{runner}\nsweep_seeds = [42, 7, 314, 777, 1234]\n"
    );
    std::fs::write(dir.path().join("lexhold.toml"), cfg).unwrap();
    dir
}

fn mock_runner() -> String {
    format!("command = [{MOCK:?}]\nparallelism = 2")
}

fn lexhold(dir: &Path, args: &[&str]) -> Output {
    Command::new(LEXHOLD)
        .current_dir(dir)
        .env_remove("LEXHOLD_WORK_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn report_files(work: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(work.join("report"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn run_all_with_mock_runner_fills_every_table_and_skips_on_rerun() {
    let dir = project(&mock_runner());
    let first = lexhold(dir.path(), &["run-all"]);
    assert!(first.status.success(), "{}", text(&first.stderr));
    let work = dir.path().join("work");
    let report = report_files(&work);
    let names: Vec<&str> = report.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["table1.tsv", "table2.tsv", "table3.tsv", "table4.tsv", "table5.tsv", "tables.txt"]);
    let stdout = text(&first.stdout);
    for t in 1..=5 {
        assert!(stdout.contains(&format!("Table {t}.")), "table {t} missing from output");
    }
    assert!(!stdout.contains("n/a"), "{stdout}");
    assert!(work.join("results/correlation.tsv").is_file());

    let second = lexhold(dir.path(), &["run-all"]);
    assert!(second.status.success());
    let stderr = text(&second.stderr);
    for stage in ["split", "sweep", "finetune", "predict", "embed", "score"] {
        let line = stderr.lines().find(|l| l.starts_with(stage)).unwrap();
        assert!(line.ends_with("up to date"), "{line}");
    }
    assert_eq!(report_files(&work), report);
}

#[test]
fn run_all_is_deterministic_across_work_dirs() {
    let a = project(&mock_runner());
    let b = project(&mock_runner());
    for d in [&a, &b] {
        let out = lexhold(d.path(), &["run-all"]);
        assert!(out.status.success(), "{}", text(&out.stderr));
    }
    assert_eq!(report_files(&a.path().join("work")), report_files(&b.path().join("work")));
    for f in ["split/manifest.json", "results/scores.tsv", "results/sweep.tsv", "results/geometry.tsv"] {
        let x = std::fs::read(a.path().join("work").join(f)).unwrap();
        let y = std::fs::read(b.path().join("work").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn no_model_never_invokes_the_runner() {
    let dir = project("command = [\"sh\", \"-c\", \"touch invoked; exit 1\", \"runner\"]");
    let out = lexhold(dir.path(), &["run-all", "--no-model"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(!dir.path().join("invoked").exists());
    let work = dir.path().join("work");
    assert!(work.join("split/manifest.json").is_file());
    assert!(!work.join("logs").exists());
    let missing = std::fs::read_to_string(work.join("report/missing.txt")).unwrap();
    assert!(missing.contains("sweep.tsv"), "{missing}");
}

#[test]
fn failing_runner_exits_with_3_and_keeps_its_log() {
    let dir = project("command = [\"sh\", \"-c\", \"echo boom >&2; exit 7\", \"runner\"]");
    let out = lexhold(dir.path(), &["run-all"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    let logs: Vec<_> = std::fs::read_dir(dir.path().join("work/logs")).unwrap().map(|e| e.unwrap().path()).collect();
    let log = logs.iter().find(|p| p.extension().is_some_and(|e| e == "log")).unwrap();
    assert_eq!(std::fs::read_to_string(log).unwrap(), "boom\n");
}

#[test]
fn runner_timeout_exits_with_3() {
    let dir = project("command = [\"sh\", \"-c\", \"sleep 30\", \"runner\"]\ntimeout_secs = 1");
    let started = std::time::Instant::now();
    let out = lexhold(dir.path(), &["sweep"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("timed out"), "{}", text(&out.stderr));
    assert!(started.elapsed().as_secs() < 20);
}

#[test]
fn unconfigured_runner_is_a_validation_error() {
    let dir = project("command = []");
    let out = lexhold(dir.path(), &["run-all"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_inputs_exit_with_2_before_writing() {
    let dir = project("command = []");
    std::fs::remove_file(dir.path().join("test.jsonl")).unwrap();
    let out = lexhold(dir.path(), &["split"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("test.jsonl"));
    assert!(!dir.path().join("work").exists());

    std::fs::write(dir.path().join("broken.toml"), "[paths]\ntrain = 3\n").unwrap();
    let out = lexhold(dir.path(), &["--config", "broken.toml", "stats"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = project("command = []");
    std::fs::write(dir.path().join("train.jsonl"), "{\"id\": \"x\"}\n").unwrap();
    let out = lexhold(dir.path(), &["split"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("line 1"), "{}", text(&out.stderr));
}

#[test]
fn score_prints_three_decimal_rows() {
    let dir = project("command = []");
    assert!(lexhold(dir.path(), &["split"]).status.success());
    let gold_path = dir.path().join("work/split/held_out_eval.jsonl");
    let gold = parse_corpus(BufReader::new(File::open(&gold_path).unwrap()), "g").unwrap();
    let preds: Vec<_> = gold.instances.iter().map(|i| PredictionRecord::hard(&i.id, i.label)).collect();
    let pred_path = dir.path().join("perfect.jsonl");
    write_predictions(File::create(&pred_path).unwrap(), &preds).unwrap();

    let out = lexhold(dir.path(), &["score", "--condition", "full", "--set", "held_out", "--predictions", "perfect.jsonl"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("full\theld_out\t1.000\t1.000\t1.000\n"), "{stdout}");
    assert!(stdout.contains("random_baseline\theld_out\t"), "{stdout}");

    // Discovery finds nothing under predictions/.
    assert_eq!(lexhold(dir.path(), &["score"]).status.code(), Some(2));
}

#[test]
fn report_needs_only_a_work_dir() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("w");
    let out = lexhold(dir.path(), &["--work-dir", work.to_str().unwrap(), "report"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(work.join("report/table3.tsv").is_file());
    assert!(work.join("report/missing.txt").is_file());
    assert!(text(&out.stdout).contains("Missing inputs:"));
}

#[test]
fn stats_and_work_dir_env_override() {
    let dir = project("command = []");
    let out = Command::new(LEXHOLD)
        .current_dir(dir.path())
        .env("LEXHOLD_WORK_DIR", dir.path().join("elsewhere"))
        .arg("split")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(dir.path().join("elsewhere/split/manifest.json").is_file());
    assert!(!dir.path().join("work").exists());

    let out = lexhold(dir.path(), &["stats"]);
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("dataset\tsamples\tmetaphorical\tmet_pct\tlemmas\ntrain\t"), "{stdout}");
}

// The runner protocol, exercised against the bundled mock runner.

fn request(stage: Stage, checkpoint: Option<&Path>) -> RunnerRequest {
    let cfg = lexhold::config::RunnerSection::default();
    RunnerRequest {
        stage,
        seed: 7,
        hyper: cfg.hyper,
        mask_placeholder: lexhold::split::DEFAULT_MASK_TOKEN.into(),
        checkpoint: checkpoint.map(Path::to_path_buf),
        kind: None,
    }
}

fn invoke(dir: &Path, req: &RunnerRequest, input: &Path, out: &Path) -> Vec<u8> {
    let cfg = dir.join(format!("{}.json", req.stage));
    std::fs::write(&cfg, req.to_json()).unwrap();
    let out = Command::new(MOCK)
        .arg(req.stage.as_str())
        .args(["--config".as_ref(), cfg.as_os_str(), "--in".as_ref(), input.as_os_str(), "--out".as_ref(), out.as_os_str()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    std::fs::read(cfg).unwrap()
}

#[test]
fn runner_protocol_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = fixtures().join("train.jsonl");
    let test = fixtures().join("test.jsonl");
    let model = dir.path().join("model");

    let cfg_bytes = invoke(dir.path(), &request(Stage::Finetune, None), &train, &model);
    let summary = RunSummary::read(&model).unwrap();
    assert_eq!(summary.seed, 7);
    assert_eq!(summary.config_hash, config_hash(&cfg_bytes));

    let preds_path = dir.path().join("preds.jsonl");
    invoke(dir.path(), &request(Stage::Predict, Some(&model)), &test, &preds_path);
    let preds = read_predictions(BufReader::new(File::open(&preds_path).unwrap())).unwrap();
    let gold = parse_corpus(BufReader::new(File::open(&test).unwrap()), "test").unwrap();
    assert_eq!(preds.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), gold.ids().collect::<Vec<_>>());
    assert!(preds.iter().all(|p| p.score.is_some()));

    let mut req = request(Stage::Embed, Some(&model));
    req.kind = Some(lexhold::probes::EmbeddingKind::Static);
    let emb_path = dir.path().join("emb.jsonl");
    invoke(dir.path(), &req, &test, &emb_path);
    let emb = read_embeddings(BufReader::new(File::open(&emb_path).unwrap())).unwrap();
    assert_eq!(emb.len(), gold.len());
    assert!(emb.records().iter().all(|r| r.label.is_some() && r.lemma.is_some()));
}
