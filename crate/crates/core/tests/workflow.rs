//! End-to-end library workflow: simulate, store, reload, enrich, train, score.

use moldsynth::experiment::{default_real_dataset, default_synthetic_pool};
use moldsynth::lstm::{self, Model, ModelConfig};
use moldsynth::metrics::evaluate;
use moldsynth::pipeline::{augment_dataset, mix, split_real, MixAmount, MixMode, MixSpec, SplitSpec};
use moldsynth::simulator::{generate_dataset, SimulatorConfig};
use moldsynth::storage::{read_dataset, write_dataset};
use moldsynth::{FeatureSchema, Source};

#[test]
fn stored_dataset_reloads_bitwise() {
    let d = generate_dataset(&SimulatorConfig::default(), 20, (0.4, 0.6), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&d, dir.path(), None).unwrap();
    let back = read_dataset(dir.path(), &FeatureSchema::canonical()).unwrap();
    assert_eq!(back.len(), d.len());
    for (a, b) in d.records.iter().zip(&back.records) {
        assert_eq!(a.cycle_id, b.cycle_id);
        assert_eq!(a.label, b.label);
        assert_eq!(a.sample_period_ms, b.sample_period_ms);
        assert_eq!(a.setpoints, b.setpoints);
        assert!(a.samples.iter().zip(b.samples.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn default_data_has_reference_sizes() {
    let real = default_real_dataset(0).unwrap();
    let pool = default_synthetic_pool(0).unwrap();
    assert_eq!(real.len(), 1100);
    assert_eq!(real.count_source(Source::Real), 1100);
    assert_eq!(pool.len(), 400);
    assert_eq!(pool.count_source(Source::Synthetic), 400);
}

#[test]
fn enrich_train_and_score() {
    let real = augment_dataset(
        &generate_dataset(&SimulatorConfig::default(), 30, (0.5, 0.5), 10).unwrap().with_source(Source::Real),
        4,
    )
    .unwrap();
    let pool = generate_dataset(&SimulatorConfig::default(), 40, (0.4, 0.6), 11).unwrap();
    let (train, val) = split_real(&real, &SplitSpec { val_fraction: 0.33, seed: 1 }).unwrap();
    assert_eq!((train.len(), val.len()), (80, 40));
    let spec = MixSpec {
        mode: MixMode::Additive,
        amount: MixAmount::PercentOfTotal(25.0),
        seed: 2,
    };
    let (mixed, acc) = mix(&train, &pool, &spec, real.len(), train.len()).unwrap();
    assert_eq!((acc.synthetic_count, mixed.len()), (30, 110));

    let cfg = ModelConfig {
        units: vec![8, 8, 8],
        epochs: 3,
        batch_size: 16,
        ..ModelConfig::default()
    };
    let outcome = lstm::train(&cfg, &mixed, &val, 5).unwrap();
    assert_eq!(outcome.history.len(), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    outcome.model.save(&path).unwrap();
    let model = Model::load(&path).unwrap();
    let scores = model.predict(&val).unwrap();
    assert_eq!(scores, outcome.val_scores);
    let r = evaluate(&scores, &val.labels()).unwrap();
    assert_eq!(r.accuracy, outcome.history.last().unwrap().val_accuracy);
}
