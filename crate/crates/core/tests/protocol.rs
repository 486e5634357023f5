use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use physio_forge::mapfile::{self, MapArray};
use physio_forge::metrics::{Split, MERGED};
use physio_forge::models::{ArchitectureConfig, Fusion, JointModel, Modality, ModelConfig};
use physio_forge::protocol::{run_protocol, EvalSet, ProtocolModels};
use physio_forge::synthbench::split_manifest;
use physio_forge::task::Task;
use physio_forge::Error;
use tempfile::TempDir;

const PATCH: usize = 8;

/// Per task: an intra and a cross split, each with two domains of `n`
/// bonafide and `n` attack samples. Appearance patches are flat: 1.0 for
/// bonafide, 0.0 for attacks.
fn write_fixture(root: &Path, n: usize) {
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

fn sets(root: &Path, tasks: &[Task]) -> Vec<EvalSet> {
    tasks
        .iter()
        .flat_map(|&t| {
            [(Split::Intra, "intra_test"), (Split::Cross, "cross_test")].map(|(split, part)| EvalSet {
                split,
                manifest: root.join(split_manifest(t, part)),
            })
        })
        .collect()
}

/// One-block appearance model whose logit is `gain·(mean pixel) + bias`.
fn flat_scorer(gain: f64, bias: f64) -> JointModel {
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
    let set = |m: &mut JointModel, name: &str, values: &[f64]| {
        let p = m.param_mut(name).unwrap_or_else(|| panic!("no parameter {name}"));
        assert_eq!(p.numel(), values.len(), "{name}");
        p.data_mut().copy_from_slice(values);
    };
    let mut conv = vec![0.0; 27];
    for c in 0..3 {
        conv[c * 9 + 4] = 1.0 / 3.0;
    }
    set(&mut m, "app.block0.conv.w", &conv);
    set(&mut m, "app.block0.conv.b", &[0.0]);
    set(&mut m, "app.block0.bn.gamma", &[1.0]);
    set(&mut m, "app.block0.bn.beta", &[0.0]);
    set(&mut m, "app.proj.w", &[1.0, 0.0]);
    set(&mut m, "app.proj.b", &[0.0, 0.0]);
    set(&mut m, "head.app.w", &[gain, 0.0]);
    set(&mut m, "head.app.b", &[bias]);
    m
}

#[test]
fn perfect_scorer_gets_perfect_metrics() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path(), 5);
    let models = ProtocolModels::Joint(flat_scorer(1000.0, -500.0));
    let result = run_protocol(&models, &sets(dir.path(), &Task::ALL)).unwrap();
    // 2 tasks × 2 splits × (2 domains + merged)
    assert_eq!(result.rows.len(), 12);
    for row in &result.rows {
        assert_eq!(
            (row.n_bonafide, row.n_attack),
            if row.dataset == MERGED { (10, 10) } else { (5, 5) }
        );
        assert_eq!(row.auc, 1.0, "{row:?}");
        assert_eq!(row.eer, 0.0, "{row:?}");
        assert_eq!((row.tpr_at_fpr_10, row.tpr_at_fpr_1), (1.0, 1.0), "{row:?}");
    }
}

#[test]
fn constant_scorer_is_at_chance() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path(), 4);
    let models = ProtocolModels::Joint(flat_scorer(0.0, 0.3));
    let result = run_protocol(&models, &sets(dir.path(), &Task::ALL)).unwrap();
    for row in &result.rows {
        assert_eq!(row.auc, 0.5);
        // all scores tie, so the only feasible point below FPR 1 is (0, 0)
        assert_eq!((row.tpr_at_fpr_10, row.tpr_at_fpr_1), (0.0, 0.0));
    }
}

#[test]
fn separate_models_evaluate_only_their_task() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path(), 3);
    let models = ProtocolModels::Separate([None, Some(flat_scorer(1000.0, -500.0))]);
    assert_eq!(models.tasks(), vec![Task::Forgery]);
    let result = run_protocol(&models, &sets(dir.path(), &[Task::Forgery])).unwrap();
    assert!(result.rows.iter().all(|r| r.task == Task::Forgery));
    assert_eq!(result.rows.len(), 6);
    assert!(ProtocolModels::load_separate(None, None).is_err());
}

#[test]
fn missing_manifest_is_reported_with_its_path() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path(), 2);
    fs::remove_file(dir.path().join(split_manifest(Task::Spoof, "cross_test"))).unwrap();
    let models = ProtocolModels::Joint(flat_scorer(1.0, 0.0));
    match run_protocol(&models, &sets(dir.path(), &Task::ALL)) {
        Err(Error::Io { path, .. }) => assert!(path.ends_with("spoof_cross_test.tsv")),
        other => panic!("expected an I/O error, got {:?}", other.map(|r| r.rows.len())),
    }
}
