use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use arlnet_cli::{RunConfig, SCHEMA_VERSION};

const SMOKE: &str = r#"
schema_version = 1

[paths]
train_csv = "data/train.csv"
test_csv = "data/test.csv"
out_dir = "out"

[model]
feat_dim = 10
trunk_units = [32, 8]
recon_units = [8, 32]

[train]
lr = 1e-3
batch_size = 32
iters_stage1 = 20
iters_stage2 = 20
label_smoothing = 0.1
eval_every = 5

[synth]
n_tr = 200
n_te = 100
d = 10
k = 4
"#;

fn arlnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arlnet")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn smoke_dir(text: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, text).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn smoke_pipeline_runs_quickly() {
    let (dir, cfg) = smoke_dir(SMOKE);
    let start = Instant::now();
    let gen = arlnet(&["generate", s(&cfg)]);
    assert_eq!(code(&gen), 0, "{}", stderr(&gen));
    assert!(stdout(&gen).contains("mean_embed_dist"));
    let train = arlnet(&["train", s(&cfg)]);
    assert_eq!(code(&train), 0, "{}", stderr(&train));
    let out = dir.path().join("out");
    let metrics = fs::read_to_string(out.join("metrics")).unwrap();
    assert_eq!(metrics.lines().count(), 40);
    let eval = arlnet(&["eval", s(&out.join("checkpoint")), s(&dir.path().join("data/test.csv"))]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let line = stdout(&eval);
    let mae = line.trim().strip_prefix("MAE ").unwrap();
    assert_eq!(mae.split('.').nth(1).unwrap().len(), 4);
    let preds = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().next(), Some("index,age_true,age_pred"));
    assert_eq!(preds.lines().count(), 101);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, cfg_a) = smoke_dir(SMOKE);
    let (b, cfg_b) = smoke_dir(SMOKE);
    for cfg in [&cfg_a, &cfg_b] {
        assert_eq!(code(&arlnet(&["generate", s(cfg)])), 0);
        assert_eq!(code(&arlnet(&["train", s(cfg)])), 0);
    }
    for name in ["data/train.csv", "data/test.csv", "out/metrics", "out/checkpoint"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn seed_override_changes_the_run() {
    let (dir, cfg) = smoke_dir(SMOKE);
    assert_eq!(code(&arlnet(&["generate", s(&cfg)])), 0);
    assert_eq!(code(&arlnet(&["train", s(&cfg)])), 0);
    let first = fs::read(dir.path().join("out/checkpoint")).unwrap();
    assert_eq!(code(&arlnet(&["train", s(&cfg), "--seed", "7"])), 0);
    assert_ne!(fs::read(dir.path().join("out/checkpoint")).unwrap(), first);
}

#[test]
fn ablate_writes_every_variant() {
    let text = SMOKE.replace("iters_stage1 = 20", "iters_stage1 = 5").replace("iters_stage2 = 20", "iters_stage2 = 5");
    let (dir, cfg) = smoke_dir(&text);
    assert_eq!(code(&arlnet(&["generate", s(&cfg)])), 0);
    let out = arlnet(&["ablate", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = fs::read_to_string(dir.path().join("out/ablation")).unwrap();
    for name in ["\"full\"", "\"-L_D-L_AR-L_Recon\""] {
        assert!(doc.contains(name), "{name} missing");
    }
    assert_eq!(stdout(&out).lines().count(), 9);
}

#[test]
fn config_errors_exit_two() {
    let (_d, cfg) = smoke_dir(&SMOKE.replace("lr = 1e-3", "lr = 1e-3\nlearning_rate = 2"));
    let out = arlnet(&["train", s(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"));

    let (_d, cfg) = smoke_dir(&SMOKE.replace("schema_version = 1", "schema_version = 9"));
    assert_eq!(code(&arlnet(&["generate", s(&cfg)])), 2);

    let (_d, cfg) = smoke_dir(&SMOKE.replace("batch_size = 32", "batch_size = 0"));
    assert_eq!(code(&arlnet(&["train", s(&cfg)])), 2);

    assert_eq!(code(&arlnet(&["frobnicate"])), 2);
}

#[test]
fn missing_files_exit_one() {
    let (dir, cfg) = smoke_dir(SMOKE);
    assert_eq!(code(&arlnet(&["train", s(&cfg)])), 1);
    assert_eq!(code(&arlnet(&["train", s(&dir.path().join("absent.toml"))])), 1);
}

#[test]
fn divergence_exits_three_with_last_good_iteration() {
    let (dir, cfg) = smoke_dir(&SMOKE.replace("lr = 1e-3", "lr = 1e200"));
    assert_eq!(code(&arlnet(&["generate", s(&cfg)])), 0);
    let out = arlnet(&["train", s(&cfg)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("last good"), "{}", stderr(&out));
    assert!(!dir.path().join("out/checkpoint").exists());
}

#[test]
fn eval_width_mismatch_names_both_widths() {
    let (dir, cfg) = smoke_dir(SMOKE);
    assert_eq!(code(&arlnet(&["generate", s(&cfg)])), 0);
    assert_eq!(code(&arlnet(&["train", s(&cfg)])), 0);
    let (other, cfg2) = smoke_dir(&SMOKE.replace("d = 10", "d = 12"));
    assert_eq!(code(&arlnet(&["generate", s(&cfg2)])), 0);
    let out = arlnet(&[
        "eval",
        s(&dir.path().join("out/checkpoint")),
        s(&other.path().join("data/test.csv")),
    ]);
    assert_eq!(code(&out), 2);
    let msg = stderr(&out);
    assert!(msg.contains("10") && msg.contains("12"), "{msg}");
}

#[test]
fn gradcheck_passes_and_corruption_exits_four() {
    let ok = arlnet(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let bad = arlnet(&["gradcheck", "--corrupt", "bidirectional_ar"]);
    assert_eq!(code(&bad), 4);
    assert!(stderr(&bad).contains("bidirectional_ar"));
}

#[test]
fn defaults_serialize_to_reference_values() {
    let text = RunConfig::default().to_toml();
    let back = RunConfig::from_toml(&text).unwrap();
    assert_eq!(back, RunConfig::default());
    assert_eq!(back.schema_version, SCHEMA_VERSION);
    assert_eq!(back.train.lr, 1e-4);
    assert_eq!(back.train.batch_size, 128);
    assert_eq!(back.train.iters_stage1, 300);
    assert_eq!(back.train.iters_stage2, 300);
    assert_eq!((back.train.weights.alpha, back.train.weights.beta, back.train.weights.gamma), (10.0, 0.5, 0.5));
    assert_eq!(back.train.weights.eps_div, 1e-9);
    assert_eq!(back.model.trunk_units, vec![512, 8]);
    assert_eq!(back.model.recon_units, vec![8, 512]);
    assert_eq!(back.model.dropout_rate, 0.5);
    assert_eq!(back.model.feat_dim, 1000);
    assert_eq!(RunConfig::from_toml("schema_version = 1").unwrap(), RunConfig::default());
}

#[test]
fn relative_paths_resolve_against_the_config_directory() {
    let (dir, cfg) = smoke_dir(SMOKE);
    let loaded = RunConfig::load(&cfg).unwrap();
    assert_eq!(loaded.paths.out_dir, dir.path().join("out"));
    assert_eq!(loaded.paths.train_csv, dir.path().join("data/train.csv"));
}
