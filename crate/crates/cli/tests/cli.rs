use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const SMALL: &str = r#"{
  "experiment": {
    "train": {
      "stage1": { "iters": 20, "lr_drop_iter": 10, "val_every": 10, "val_scenes": 2 },
      "stage2": { "iters": 40, "lr_drop_iter": 20 },
      "eval": { "scenes": 6 },
      "source_scenes": 16
    }
  }
}"#;

fn zsda(args: &[&str], paths: &[&Path]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_zsda"));
    c.args(args);
    for p in paths {
        c.arg(p);
    }
    c.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("small.json"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn train_in(run: &Run) -> PathBuf {
    let o = Command::new(env!("CARGO_BIN_EXE_zsda"))
        .current_dir(run.dir.path())
        .args(["train-prompt", "--config", "small.json", "--out", "out"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    run.path("out/stage1.ckpt")
}

#[test]
fn train_finetune_eval_round_trip() {
    let run = Run::new();
    let ck = train_in(&run);
    for f in ["stage1.ckpt", "stage1_report.json", "stage1_loss.csv"] {
        assert!(run.path("out").join(f).exists(), "{f}");
    }
    let o = zsda(&["finetune", "--checkpoint"], &[&ck, Path::new("--out"), &run.path("out")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = run.path("out/model.ckpt");
    assert!(model.exists());

    let o = zsda(
        &["eval", "--domain", "night rainy", "--domain", "daytime clear", "--checkpoint"],
        &[&model, Path::new("--out"), &run.path("eval")],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(run.path("eval/eval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert!(lines[1].starts_with("# seed="));
    assert!(lines[2].starts_with("domain,ap_"));
    assert!(lines[2].ends_with(",map,enhance_invocations"));
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("night rainy,") && lines[3].ends_with(",0"));
}

#[test]
fn export_embeddings_rows_are_unit_vectors() {
    let run = Run::new();
    let ck = train_in(&run);
    let o = zsda(
        &[
            "export-embeddings",
            "--domain",
            "daytime clear",
            "--domain",
            "daytime foggy",
            "--domain",
            "night clear",
            "--domain",
            "night rainy",
            "--domain",
            "dusk rainy",
            "--checkpoint",
        ],
        &[&ck, Path::new("--out"), &run.path("emb")],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(run.path("emb/embeddings.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(3).collect();
    assert_eq!(rows.len(), 5 * 20);
    for r in rows {
        let v: Vec<f64> = r.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6, "{r}");
    }
}

#[test]
fn unknown_config_key_exits_2() {
    let run = Run::new();
    let bad = run.path("bad.json");
    std::fs::write(&bad, r#"{"experiment": {"train": {"stage1": {"itres": 3}}}}"#).unwrap();
    let o = zsda(&["train-prompt", "--config"], &[&bad]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("itres") && msg.contains("line 1"), "{msg}");
}

#[test]
fn missing_config_exits_3() {
    let o = zsda(&["train-prompt", "--config", "/nonexistent/zsda.json"], &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn corrupt_and_foreign_checkpoints_exit_4() {
    let run = Run::new();
    let ck = train_in(&run);
    let bytes = std::fs::read(&ck).unwrap();

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0xff;
    let corrupt = run.path("corrupt.ckpt");
    std::fs::write(&corrupt, &flipped).unwrap();
    let o = zsda(&["eval", "--checkpoint"], &[&corrupt, Path::new("--out"), &run.path("e")]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    // A well-formed blob from a future format version.
    let mut body = bytes[..bytes.len() - 32].to_vec();
    body[8..12].copy_from_slice(&999u32.to_le_bytes());
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    let future = run.path("future.ckpt");
    std::fs::write(&future, &body).unwrap();
    let o = zsda(&["eval", "--checkpoint"], &[&future, Path::new("--out"), &run.path("e")]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("version 999"), "{}", stderr(&o));
}

#[test]
fn unknown_domain_exits_2() {
    let run = Run::new();
    let ck = train_in(&run);
    let o = zsda(&["eval", "--domain", "underwater", "--checkpoint"], &[&ck, Path::new("--out"), &run.path("e")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("underwater"));
}

#[test]
fn finetune_rejects_a_model_checkpoint() {
    let run = Run::new();
    let ck = train_in(&run);
    let out = run.path("out");
    assert_eq!(code(&zsda(&["finetune", "--checkpoint"], &[&ck, Path::new("--out"), &out])), 0);
    let o = zsda(&["finetune", "--checkpoint"], &[&out.join("model.ckpt"), Path::new("--out"), &out]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_detects_a_fault() {
    let o = zsda(&["gradcheck", "--seeds", "10"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains(" 0 failed"));
    let o = zsda(&["gradcheck", "--seeds", "2", "--inject-fault", "1e-2"], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("gradient check failed"));
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(code(&zsda(&["train-prompt", "--preset", "huge"], &[])), 2);
    assert_eq!(code(&zsda(&["frobnicate"], &[])), 2);
}

#[test]
fn identical_runs_write_identical_reports() {
    let (a, b) = (Run::new(), Run::new());
    train_in(&a);
    train_in(&b);
    for f in ["stage1_report.json", "stage1_loss.csv"] {
        let (x, y) = (std::fs::read(a.path("out").join(f)).unwrap(), std::fs::read(b.path("out").join(f)).unwrap());
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn ablation_writes_a_table() {
    let run = Run::new();
    let spec = run.path("spec.json");
    std::fs::write(
        &spec,
        r#"{
  "base": { "train": {
      "stage1": { "iters": 10, "lr_drop_iter": 5, "val_every": 5, "val_scenes": 2 },
      "stage2": { "iters": 20, "lr_drop_iter": 10 },
      "eval": { "scenes": 4 },
      "source_scenes": 8 } },
  "preset": "rdd",
  "seeds": [0, 1]
}"#,
    )
    .unwrap();
    let o = zsda(&["ablate", "--config"], &[&spec, Path::new("--out"), &run.path("abl")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(run.path("abl/ablation.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().starts_with("config_id,seed,map_night_rainy,mad"));
    // 4 rows x 2 seeds, then mean and mad per row.
    assert_eq!(csv.lines().count(), 3 + 8 + 8);
    assert!(run.path("abl/ablation_report.json").exists());
}
