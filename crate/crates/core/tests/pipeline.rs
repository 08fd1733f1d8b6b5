use alter_core::alga::KernelOptions;
use alter_core::checkpoint::{load_checkpoint, save_checkpoint};
use alter_core::dataset::load_dataset;
use alter_core::graph::split_dataset;
use alter_core::model::ModelConfig;
use alter_core::synth::{generate_dataset, SynthConfig};
use alter_core::train::{evaluate, train_loop, EncodedDataset, TrainConfig};

#[test]
fn synth_to_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        subjects_per_class: 15,
        timepoints: 80,
        ..SynthConfig::default()
    };
    generate_dataset(&synth, dir.path()).unwrap();
    let ds = load_dataset(dir.path(), 0.3).unwrap();
    assert_eq!(ds.len(), 30);
    assert!(ds.has_both_classes());

    let data = EncodedDataset::from_dataset(&ds, 6, KernelOptions { renormalize: true }).unwrap();
    let split = split_dataset(data.len(), (0.7, 0.1, 0.2), 0).unwrap();
    let model_cfg = ModelConfig {
        k_hops: 6,
        k_prime: 4,
        d_model: 8,
        layers: 1,
        heads: 2,
        clusters: 2,
        mlp_hidden: 8,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 7,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let out = train_loop(&data, &split, &model_cfg, &cfg).unwrap();
    assert_eq!(out.record.epochs.len(), 3);

    let path = dir.path().join("best.ckpt");
    save_checkpoint(&path, &out.best, cfg.seed).unwrap();
    let (header, loaded) = load_checkpoint(&path).unwrap();
    assert_eq!(header.model, model_cfg);
    assert!(loaded.store().values_equal(out.best.store()));
    let again = evaluate(&loaded, &data, &split.test, cfg.threshold).unwrap();
    assert_eq!(again, out.record.test);
}
