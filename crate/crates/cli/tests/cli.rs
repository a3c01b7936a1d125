//! End-to-end checks of the `jobmatch` binary: the synthetic demo flow,
//! stage chaining, and the documented exit codes (0 ok, 2 validation,
//! 3 runtime failure).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn jobmatch(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jobmatch"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, method: &str, out: &str, extra: &str) -> String {
    let body = format!(
        "task = A\n\
         method = {method}\n\
         languages = en\n\
         seed = 5\n\
         paths.entities = data/entities.tsv\n\
         paths.pairs = data/pairs.tsv\n\
         paths.output_dir = {out}\n\
         paths.kb.en = data/kb.en.tsv\n\
         paths.queries.en = data/queries.en.tsv\n\
         paths.qrels.en = data/qrels.en.txt\n\
         encoder.hash_dim = 512\n\
         encoder.embed_dim = 16\n\
         {extra}"
    );
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    name.to_string()
}

#[test]
fn synth_then_full_prompt_pipeline_exits_zero() {
    let dir = TempDir::new().unwrap();
    let out = jobmatch(
        &["synth", "--out", "data", "--clusters", "6", "--seed", "3"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let config = write_config(dir.path(), "prompt.conf", "prompt", "out", "");
    let out = jobmatch(&["run-all", "--config", &config], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    for stage in ["ingest", "embed", "rank", "eval", "analyze"] {
        assert!(stdout.contains(&format!("{stage}: ok")), "{stdout}");
    }
    assert!(dir.path().join("out/reports/report.json").exists());
    assert!(dir.path().join("out/reports/analysis.txt").exists());
}

#[test]
fn eval_prints_the_report_table() {
    let dir = TempDir::new().unwrap();
    jobmatch(&["synth", "--out", "data", "--clusters", "5"], dir.path());
    let config = write_config(dir.path(), "p.conf", "prompt", "out", "");
    assert!(jobmatch(&["run-all", "--config", &config], dir.path())
        .status
        .success());
    let out = jobmatch(&["eval", "--config", &config], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("MAP (overall)"), "{stdout}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = TempDir::new().unwrap();
    jobmatch(&["synth", "--out", "data", "--clusters", "4"], dir.path());
    let config = write_config(dir.path(), "bad.conf", "prompt", "out", "mystery.key = 1\n");
    let out = jobmatch(&["ingest", "--config", &config], dir.path());
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn missing_upstream_stage_exits_2_and_names_producer() {
    let dir = TempDir::new().unwrap();
    jobmatch(&["synth", "--out", "data", "--clusters", "4"], dir.path());
    let config = write_config(dir.path(), "p.conf", "prompt", "out", "");
    assert!(jobmatch(&["ingest", "--config", &config], dir.path())
        .status
        .success());
    let out = jobmatch(&["eval", "--config", &config], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("produce with `rank`"));
}

#[test]
fn malformed_data_file_exits_2_with_line_number() {
    let dir = TempDir::new().unwrap();
    jobmatch(&["synth", "--out", "data", "--clusters", "4"], dir.path());
    let kb = dir.path().join("data/kb.en.tsv");
    let mut content = fs::read_to_string(&kb).unwrap();
    content.push_str("only-one-column\n");
    fs::write(&kb, content).unwrap();
    let config = write_config(dir.path(), "p.conf", "prompt", "out", "");
    let out = jobmatch(&["ingest", "--config", &config], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("kb.en.tsv:17:"), "{stderr}");
}

#[test]
fn training_divergence_exits_3() {
    let dir = TempDir::new().unwrap();
    jobmatch(&["synth", "--out", "data", "--clusters", "6"], dir.path());
    let config = write_config(
        dir.path(),
        "diverge.conf",
        "contrastive",
        "out",
        "trainer.k_negatives = 7\ntrainer.batch_size = 8\ntrainer.learning_rate = 1e308\ntrainer.epochs = 3\n",
    );
    assert!(jobmatch(&["ingest", "--config", &config], dir.path())
        .status
        .success());
    assert!(jobmatch(&["pairs", "--config", &config], dir.path())
        .status
        .success());
    let out = jobmatch(&["train", "--config", &config], dir.path());
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn rank_lang_flag_restricts_languages() {
    let dir = TempDir::new().unwrap();
    jobmatch(&["synth", "--out", "data", "--clusters", "4"], dir.path());
    let config = write_config(dir.path(), "p.conf", "prompt", "out", "");
    assert!(jobmatch(&["ingest", "--config", &config], dir.path())
        .status
        .success());
    assert!(jobmatch(&["embed", "--config", &config], dir.path())
        .status
        .success());
    let out = jobmatch(
        &[
            "rank", "--config", &config, "--lang", "en", "--tag", "custom",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = fs::read_to_string(dir.path().join("out/rank/run.en.txt")).unwrap();
    assert!(run.lines().next().unwrap().ends_with("custom"));
}

#[test]
fn rank_top_k_truncates_and_warns() {
    let dir = TempDir::new().unwrap();
    jobmatch(&["synth", "--out", "data", "--clusters", "4"], dir.path());
    let config = write_config(dir.path(), "p.conf", "prompt", "out", "");
    assert!(jobmatch(&["ingest", "--config", &config], dir.path())
        .status
        .success());
    assert!(jobmatch(&["embed", "--config", &config], dir.path())
        .status
        .success());
    let out = jobmatch(&["rank", "--config", &config, "--top-k", "3"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("MAP may drop gold"));
    let run = fs::read_to_string(dir.path().join("out/rank/run.en.txt")).unwrap();
    // 4 queries x top 3 entries.
    assert_eq!(run.lines().count(), 12);
}

#[test]
fn seed_flag_changes_sampled_pairs() {
    let dir = TempDir::new().unwrap();
    jobmatch(&["synth", "--out", "data", "--clusters", "6"], dir.path());
    let extra = "sampler.neg_ratio = 2\n";
    let config = write_config(dir.path(), "c.conf", "classify", "out", extra);
    assert!(jobmatch(&["ingest", "--config", &config], dir.path())
        .status
        .success());
    assert!(jobmatch(&["pairs", "--config", &config], dir.path())
        .status
        .success());
    let first = fs::read(dir.path().join("out/pairs/labeled_pairs.tsv")).unwrap();
    assert!(
        jobmatch(&["pairs", "--config", &config, "--seed", "77"], dir.path())
            .status
            .success()
    );
    let second = fs::read(dir.path().join("out/pairs/labeled_pairs.tsv")).unwrap();
    assert_ne!(first, second);
}

#[test]
fn gridsearch_writes_a_leaderboard() {
    let dir = TempDir::new().unwrap();
    jobmatch(&["synth", "--out", "data", "--clusters", "6"], dir.path());
    let extra = "trainer.k_negatives = 7\ntrainer.batch_size = 8\ntrainer.learning_rate = 0.1\n\
                 grid.trainer.epochs = 0,6\n";
    let config = write_config(dir.path(), "g.conf", "contrastive", "out", extra);
    let out = jobmatch(
        &["gridsearch", "--config", &config, "--jobs", "2"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("2 cells evaluated"), "{stdout}");
    assert!(stdout.contains("best: dev MAP"), "{stdout}");
    assert!(dir.path().join("out/grid/leaderboard.json").exists());
}
