#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small enough that every command finishes in well under a second.
pub const TINY_CONFIG: &str = r#"
seed = 5
hidden = [16, 16, 16]
lr_grid = [0.01, 0.05]
alpha_grid = [0.1]
beta_grid = [0.0001]

[source]
n_classes = 6
latent_dim = 3
input_dim = 8
samples_per_class = 40
noise_sigma = 0.3
mixing_depth = 2
train_per_class = 20
val_per_class = 10

[target]
n_classes = 4
latent_dim = 3
input_dim = 8
samples_per_class = 30
noise_sigma = 0.3
mixing_depth = 2
train_per_class = 10
val_per_class = 10

[pretrain]
epochs = 5
batch_size = 16

[finetune]
epochs = 3
batch_size = 8
"#;

pub fn nbtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbtl"))
        .args(args)
        .env_remove("NBTL_SEED")
        .output()
        .expect("binary runs")
}

pub fn nbtl_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbtl"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A workspace with the tiny config, generated data, and a checkpoint.
pub struct Pipeline {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
    pub data: PathBuf,
    pub ckpt: PathBuf,
}

impl Pipeline {
    pub fn new(theta: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("tiny.toml");
        std::fs::write(&config, TINY_CONFIG).unwrap();
        let data = dir.path().join("data");
        let ckpt = dir.path().join("model.nbtl");
        let gen = nbtl(&["gen-data", "--spec", s(&config), "--theta", theta, "--out", s(&data)]);
        assert_eq!(code(&gen), 0, "{}", stderr(&gen));
        let pre = nbtl(&["pretrain", "--data", s(&data), "--config", s(&config), "--out", s(&ckpt)]);
        assert_eq!(code(&pre), 0, "{}", stderr(&pre));
        Self { dir, config, data, ckpt }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}
