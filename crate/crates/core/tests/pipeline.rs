use std::path::PathBuf;

use symbolnet::data::{load_csv, load_idx, split, CsvOptions, Task, DEFAULT_SPLIT};
use symbolnet::diff::Registry;
use symbolnet::expr::{simplify, unroll, unroll_standardized};
use symbolnet::net::{Checkpoint, Network, NetworkSpec, OperatorSet, SparsityTargets};
use symbolnet::train::{evaluate, train, TrainConfig};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn jet_sample_layout() {
    let ds = load_csv::<f64>(data_dir().join("lhc/sample_synthetic.csv"), &CsvOptions::new(&["class"], Task::Classification)).unwrap();
    assert_eq!(ds.len(), 100);
    assert_eq!(ds.n_input(), 16);
    assert_eq!(ds.n_output(), 5);
    let names = ds.feature_names.as_ref().unwrap();
    assert_eq!(names.first().map(String::as_str), Some("zlogz"));
    assert_eq!(names.last().map(String::as_str), Some("multiplicity"));
    // 20 rows per class, one-hot
    for k in 0..5 {
        assert_eq!(ds.labels.column(k).iter().sum::<f64>(), 20.0);
    }
}

#[test]
fn binary_digits_load() {
    let dir = data_dir().join("mnist01");
    let ds = load_idx::<f64>(dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"), None).unwrap();
    assert_eq!(ds.n_input(), 784);
    assert_eq!(ds.n_output(), 2);
    assert!(ds.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let only_ones = load_idx::<f64>(dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"), Some(&[1, 0])).unwrap();
    assert_eq!(only_ones.len(), ds.len());
    assert_eq!(only_ones.labels.column(0), ds.labels.column(1));
}

#[test]
fn train_checkpoint_unroll_agree_on_raw_features() {
    let ds = load_csv::<f64>(data_dir().join("lhc/sample_synthetic.csv"), &CsvOptions::new(&["class"], Task::Classification)).unwrap();
    let splits = split(&ds, DEFAULT_SPLIT, 3).unwrap().standardize().unwrap();
    let spec = NetworkSpec {
        input_dim: 16,
        output_dim: 5,
        layers: vec![OperatorSet::new(&["tanh", "sin", "id"], &["mul"])],
        targets: SparsityTargets { weight: 0.8, input: 0.5, unary: 0.3, binary: 0.3 },
        decay_rate: 0.01,
        seed: 9,
    };
    let cfg = TrainConfig { epochs: 25, batch_size: 16, learning_rate: 0.02, seed: 9, ..Default::default() };
    let out = train(Network::build(&spec).unwrap(), &splits.train, Some(&splits.val), &cfg).unwrap();
    assert_eq!(out.history.rows.len(), 26);

    let mut ck = Checkpoint::new(out.network.clone(), 25);
    ck.standardization = splits.train.standardization.clone();
    let back = Checkpoint::<f64>::from_json(&ck.to_json().unwrap()).unwrap();
    assert_eq!(back.network, out.network);
    assert_eq!(evaluate(&back.network, &splits.test).unwrap(), evaluate(&out.network, &splits.test).unwrap());

    let reg = Registry::standard();
    let st = back.standardization.as_ref().unwrap();
    let raw_test = ds.subset(&symbolnet::data::split_indices(ds.len(), DEFAULT_SPLIT, 3).unwrap()[2]);
    let y = back.network.forward_masked(&splits.test.features).unwrap();
    let raw_exprs: Vec<_> = unroll_standardized(&back.network, st).unwrap().iter().map(simplify).collect();
    let std_exprs: Vec<_> = unroll(&back.network).iter().map(simplify).collect();
    for k in 0..5 {
        let a = raw_exprs[k].eval_batch(&reg, &raw_test.features).unwrap();
        let b = std_exprs[k].eval_batch(&reg, &splits.test.features).unwrap();
        for r in 0..raw_test.len() {
            assert!((a[r] - y.at(r, k)).abs() < 1e-9);
            assert!((b[r] - y.at(r, k)).abs() < 1e-9);
        }
    }
}
