use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use beamsim_core::eval::{read_sweep_csv, Method};

const SMALL: &str = r#"
seed = 11

[dataset]
n_samples = 60

[train]
epochs = 2
n_hidden = 2
width = 16

[sweep]
folds = 2
inits = 1
n_b_list = [1, 5, 20]
"#;

fn beamsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamsim")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = beamsim(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(cfg: &Path, out: &Path) {
    ok(&["gen", "--config", s(cfg), "--out", s(out)]);
}

#[test]
fn gen_is_deterministic() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    gen(&cfg, &a);
    gen(&cfg, &b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.bin");
    ok(&["gen", "--config", s(&cfg), "--seed", "12", "--out", s(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn invalid_configuration_exits_with_usage_code() {
    let (dir, cfg) = setup();
    let out = dir.path().join("x.bin");
    let r = beamsim(&["gen", "--config", s(&cfg), "--override", "dataset.n_samples=0", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());

    let r = beamsim(&["gen", "--config", s(&cfg), "--override", "nosuch.key=1"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn unknown_head_is_rejected() {
    let (dir, cfg) = setup();
    let ds = dir.path().join("ds.bin");
    let r = beamsim(&["train", "--config", s(&cfg), "--dataset", s(&ds), "--head", "cnn"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let (dir, cfg) = setup();
    let r = beamsim(&["gifp-build", "--config", s(&cfg), "--dataset", s(&dir.path().join("none.bin"))]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn config_prints_effective_values() {
    let (_dir, cfg) = setup();
    let out = ok(&["config", "--config", s(&cfg), "--override", "train.epochs=7"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let v: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(v["train"]["epochs"].as_integer(), Some(7));
    assert_eq!(v["dataset"]["n_samples"].as_integer(), Some(60));
    assert_eq!(v["seed"].as_integer(), Some(11));
}

#[test]
fn baselines_without_artifacts() {
    let (dir, cfg) = setup();
    let ds = dir.path().join("ds.bin");
    gen(&cfg, &ds);
    let art = dir.path().join("empty");
    std::fs::create_dir(&art).unwrap();
    let csv = dir.path().join("eval.csv");
    ok(&["eval", "--config", s(&cfg), "--dataset", s(&ds), "--artifacts", s(&art), "--methods", "HBS,PERFECT", "--out", s(&csv)]);

    let rows = read_sweep_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    let hbs: Vec<_> = rows.iter().filter(|r| r.method == Method::Hbs).collect();
    let perfect: Vec<_> = rows.iter().filter(|r| r.method == Method::Perfect).collect();
    assert_eq!(hbs.len(), 2);
    assert_eq!(perfect.len(), 2);
    assert!(hbs.iter().all(|r| r.n_b == 20));
    assert!(perfect.iter().all(|r| r.misalignment_prob == 0.0));
    assert_eq!(rows.iter().map(|r| r.n_samples).sum::<usize>(), 4 * 30);

    let missing = beamsim(&["eval", "--config", s(&cfg), "--dataset", s(&ds), "--artifacts", s(&art), "--methods", "GIFP"]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn staged_pipeline_matches_sweep() {
    let (dir, cfg) = setup();
    let ds = dir.path().join("ds.bin");
    let art = dir.path().join("art");
    gen(&cfg, &ds);
    for head in ["st", "mt", "emt"] {
        ok(&["train", "--config", s(&cfg), "--dataset", s(&ds), "--head", head, "--out", s(&art)]);
    }
    ok(&["gifp-build", "--config", s(&cfg), "--dataset", s(&ds), "--out", s(&art)]);
    for f in 0..2 {
        assert!(art.join(format!("model_emt_fold{f}_init0.bin")).exists());
        assert!(art.join(format!("gifp_fold{f}.bin")).exists());
    }
    let loss = std::fs::read_to_string(art.join("loss_mt.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("fold,init,init_seed,epoch,loss"));
    assert_eq!(loss.lines().count(), 1 + 2 * 2);

    let e1 = dir.path().join("e1.csv");
    let e2 = dir.path().join("e2.csv");
    for e in [&e1, &e2] {
        ok(&["eval", "--config", s(&cfg), "--dataset", s(&ds), "--artifacts", s(&art), "--out", s(e)]);
    }
    let staged = std::fs::read(&e1).unwrap();
    assert_eq!(staged, std::fs::read(&e2).unwrap());

    let sweep = dir.path().join("sweep");
    ok(&["sweep", "--config", s(&cfg), "--out", s(&sweep)]);
    assert_eq!(std::fs::read(sweep.join("dataset.bin")).unwrap(), std::fs::read(&ds).unwrap());
    assert_eq!(std::fs::read(sweep.join("sweep.csv")).unwrap(), staged);
}

#[test]
fn sweep_with_ci_writes_robustness_table() {
    let (dir, cfg) = setup();
    let out = dir.path().join("run");
    ok(&[
        "sweep", "--config", s(&cfg), "--out", s(&out), "--ci",
        "--override", "sweep.methods=[\"DNN-MT\", \"GIFP\"]",
        "--override", "ci.settings=[[0.0, 0.0], [0.5, 0.0]]",
    ]);
    let text = std::fs::read_to_string(out.join("ci.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sigma_p,sigma_psi,method,fold,init_seed,n_b,misalignment_prob,mean_ese,n_samples"));
    // 2 settings x 2 folds x (1 model + 1 table) x 3 n_b values
    assert_eq!(lines.count(), 2 * 2 * 2 * 3);
}
