use piml_aero::checkpoint::Checkpoint;
use piml_aero::data::{sidecar_path, Bounds, Dataset, Oracle, OracleConfig, Provenance};
use piml_aero::geometry::AircraftConfig;
use piml_aero::piml::{train, ModelKind, TrainConfig};
use sha2::{Digest, Sha256};

fn dataset() -> (Dataset, OracleConfig) {
    let cfg = OracleConfig::default();
    let oracle = Oracle::new(AircraftConfig::default(), cfg.clone()).unwrap();
    (
        Dataset::generate(&oracle, &Bounds::default(), 16, 5, 8).unwrap(),
        cfg,
    )
}

#[test]
fn dataset_files_round_trip_with_checksummed_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.csv");
    let (ds, cfg) = dataset();
    let side = ds.save(&path, Some(&cfg)).unwrap();
    assert_eq!(side, sidecar_path(&path));

    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, ds);

    let bytes = std::fs::read(&path).unwrap();
    let prov: Provenance = serde_json::from_str(&std::fs::read_to_string(&side).unwrap()).unwrap();
    let digest: String = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    assert_eq!(prov.csv_sha256, digest);
    assert_eq!(prov.oracle_hash.as_deref(), Some(cfg.hash().as_str()));
    assert_eq!((prov.records, prov.train), (16, 8));
}

#[test]
fn corrupted_dataset_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.csv");
    let (ds, _) = dataset();
    ds.save(&path, None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[3].replacen(',', ",abc", 1);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = Dataset::load(&path).unwrap_err().to_string();
    assert!(err.contains(":4:"), "{err}");
}

#[test]
fn trained_checkpoint_reloads_to_identical_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = dataset();
    let cfg = TrainConfig {
        max_epochs: 4,
        hidden_width: Some(6),
        hidden_depth: Some(1),
        ..TrainConfig::default()
    };
    for kind in [ModelKind::PureAnn, ModelKind::PimlA, ModelKind::PimlB] {
        let out = train(
            kind,
            &AircraftConfig::default(),
            &ds.train(),
            &ds.val(),
            &cfg,
        )
        .unwrap();
        let path = dir.path().join(format!("{kind}.json"));
        out.model.checkpoint().save(&path).unwrap();
        let back =
            piml_aero::piml::Model::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
        for s in ds.val() {
            assert_eq!(
                back.predict(&s.flight).unwrap().coefficients,
                out.model.predict(&s.flight).unwrap().coefficients,
                "{kind}"
            );
        }
    }
}

#[test]
fn shipped_configs_match_the_defaults() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    assert_eq!(
        AircraftConfig::load(&root.join("aircraft.toml")).unwrap(),
        AircraftConfig::default()
    );
    assert_eq!(
        OracleConfig::load(root.join("oracle.toml")).unwrap(),
        OracleConfig::default()
    );
    let train: TrainConfig =
        toml::from_str(&std::fs::read_to_string(root.join("train.toml")).unwrap()).unwrap();
    assert_eq!(train, TrainConfig::default());
}
