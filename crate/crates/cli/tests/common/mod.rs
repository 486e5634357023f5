#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use physio_forge::mapfile::{self, MapArray};
use physio_forge::models::{save_checkpoint, ArchitectureConfig, Fusion, JointModel, Modality, ModelConfig};
use physio_forge::synthbench::split_manifest;
use physio_forge::task::Task;

pub const PATCH: usize = 8;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_physio-forge"));
    c.env_remove("PHYSIO_FORGE_SEED");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn physio-forge")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Intra and cross test manifests for both tasks, two domains each, `n`
/// samples per class. Appearance patches are flat: 1.0 bonafide, 0.0 attack.
pub fn write_fixture(root: &Path, n: usize) {
    fs::create_dir_all(root.join("maps")).unwrap();
    let small = MapArray::new(vec![2, 2], vec![0.0; 4]).unwrap();
    mapfile::write(&root.join("maps/flat.pfm"), &small).unwrap();
    for task in Task::ALL {
        for part in ["intra_test", "cross_test"] {
            let mut text = String::from("# id\ttask\tlabel\tdomain\tmst_path\twav_path\tapp_path\n");
            for d in 0..2 {
                let domain = format!("{task}_{part}{d}");
                for (label, value) in [("bonafide", 1.0f32), ("attack", 0.0)] {
                    for i in 0..n {
                        let id = format!("{domain}-{label}-{i}");
                        let app = MapArray::new(vec![PATCH, PATCH, 3], vec![value; PATCH * PATCH * 3]).unwrap();
                        mapfile::write(&root.join(format!("maps/{id}.app.pfm")), &app).unwrap();
                        writeln!(
                            text,
                            "{id}\t{task}\t{label}\t{domain}\tmaps/flat.pfm\tmaps/flat.pfm\tmaps/{id}.app.pfm"
                        )
                        .unwrap();
                    }
                }
            }
            fs::write(root.join(split_manifest(task, part)), text).unwrap();
        }
    }
}

/// One-block appearance model whose logit is `gain·(mean pixel) + bias`.
pub fn flat_scorer(gain: f64, bias: f64) -> JointModel {
    let cfg = ModelConfig {
        arch: ArchitectureConfig {
            n_layers: 1,
            n_shared: 1,
            fusion: Fusion::None,
            modality: Modality::Appearance,
            ..ArchitectureConfig::default()
        },
        block_channels: vec![1],
        feature_dim: 2,
        app_dims: vec![PATCH, PATCH, 3],
        app_pool: [1, 1],
        ..ModelConfig::default()
    };
    let mut m = JointModel::new(cfg).unwrap();
    let mut conv = vec![0.0; 27];
    for c in 0..3 {
        conv[c * 9 + 4] = 1.0 / 3.0;
    }
    let values: [(&str, &[f64]); 8] = [
        ("app.block0.conv.w", &conv),
        ("app.block0.conv.b", &[0.0]),
        ("app.block0.bn.gamma", &[1.0]),
        ("app.block0.bn.beta", &[0.0]),
        ("app.proj.w", &[1.0, 0.0]),
        ("app.proj.b", &[0.0, 0.0]),
        ("head.app.w", &[gain, 0.0]),
        ("head.app.b", &[bias]),
    ];
    for (name, v) in values {
        m.param_mut(name).unwrap().data_mut().copy_from_slice(v);
    }
    m
}

/// Fixture plus a saved perfect-scorer checkpoint.
pub fn oracle_setup(root: &Path) -> PathBuf {
    write_fixture(root, 5);
    let ckpt = root.join("oracle.ckpt");
    save_checkpoint(&ckpt, &flat_scorer(1000.0, -500.0)).unwrap();
    ckpt
}

/// Every file under `root` with its bytes, sorted by relative path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
