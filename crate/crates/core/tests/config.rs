use tsad::cli::RunConfig;
use tsad::model::{Ablation, Hyperparams};

#[test]
fn default_hyperparameters_snapshot() {
    let got = serde_json::to_value(Hyperparams::default()).unwrap();
    let want = serde_json::json!({
        "width": 100,
        "hidden": 64,
        "top_k": 20,
        "theta": 0.06,
        "beta": 1.0,
        "learning_rate": 0.001,
        "batch_size": 32,
        "patience": 10,
        "max_epochs": 50,
        "q": 0.01,
        "init_quantile": 0.98,
        "seed": 0,
        "val_fraction": 0.1,
        "normalization": got["normalization"].clone(),
        "encoder_uses_current_hidden": false,
        "necr_aggregate_self": false,
        "reset_per_batch": true,
        "ablation": serde_json::to_value(Ablation::default()).unwrap(),
    });
    assert_eq!(got, want);
    assert_eq!(got["normalization"], "minmax");
    assert!(got["ablation"].as_object().unwrap().values().all(|v| v == false));
}

#[test]
fn every_ablation_preset_is_reachable_from_config() {
    for name in Ablation::PRESETS {
        let hp = RunConfig::parse(&format!("ablation = {name}")).unwrap().hyperparams().unwrap();
        assert_eq!(hp.ablation, Ablation::preset(name).unwrap(), "{name}");
        assert_ne!(hp.ablation, Ablation::default(), "{name} disables nothing");
    }
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "width = 16\nlearning_rate = 0.01\n").unwrap();
    let hp = RunConfig::load(&path)
        .unwrap()
        .with_overrides(&["width=24".to_string()])
        .unwrap()
        .hyperparams()
        .unwrap();
    assert_eq!((hp.width, hp.learning_rate), (24, 0.01));
}
