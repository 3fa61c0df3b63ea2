//! End-to-end pipeline checks through the public API: generate scenes,
//! write and re-read datasets, train briefly, predict, serialize
//! predictions, and evaluate.

use textspot::alphabet::Alphabet;
use textspot::cost::CostWeights;
use textspot::dataset;
use textspot::eval::{evaluate, EvalProtocol};
use textspot::experiment::predict_scenes;
use textspot::loss::LossWeights;
use textspot::model::{ModelConfig, ToyModel};
use textspot::train::{train, TrainConfig, TrainMode};
use textspot::world::{generate_scenes, Domain, WorldConfig};

fn small_world() -> WorldConfig {
    WorldConfig {
        grid_size: 3,
        words_per_scene: (1, 2),
        word_len: (1, 3),
        alphabet: Alphabet::new("abcd".chars()).unwrap(),
        feature_noise: 0.01,
        num_queries: 4,
        feature_dim: 14,
        max_word_len: 4,
        shift_seed: 9,
        shift_bias: 0.3,
    }
}

#[test]
fn dataset_files_round_trip_through_disk() {
    let world = small_world();
    let scenes = generate_scenes(&world, Domain::A, 100, 20).unwrap();
    let weak: Vec<_> = scenes.iter().map(|s| s.to_weak()).collect();
    let dir = tempfile::tempdir().unwrap();

    for (name, set) in [("full.jsonl", &scenes), ("weak.jsonl", &weak)] {
        let path = dir.path().join(name);
        dataset::write_scenes(&path, set, &world.alphabet).unwrap();
        let parsed = dataset::parse_dataset(&path, &world.alphabet).unwrap();
        assert_eq!(&parsed, set);
    }
}

#[test]
fn train_predict_serialize_evaluate() {
    let world = small_world();
    let scenes = generate_scenes(&world, Domain::A, 200, 60).unwrap();
    let test = generate_scenes(&world, Domain::A, 900, 20).unwrap();
    let config = ModelConfig {
        feature_dim: world.feature_dim,
        embed_dim: 16,
        hidden_dim: 16,
        alphabet_size: world.alphabet.size(),
        max_word_len: world.max_word_len,
    };
    let mut model = ToyModel::init(config, 5).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.01,
        epochs: 60,
        seed: 5,
        mode: TrainMode::Full,
        cost_weights: CostWeights::default(),
        loss_weights: LossWeights::default(),
    };
    let history = train(&mut model, &scenes, &world.alphabet, &tc).unwrap();
    assert_eq!(history.len(), tc.epochs);
    assert!(
        history.last().unwrap() < &history[0],
        "loss should decrease: {history:?}"
    );

    let predictions = predict_scenes(&model, &test, &world.alphabet, 0.5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let preds_path = dir.path().join("preds.jsonl");
    let scored_only: Vec<_> = predictions.clone();
    dataset::write_scored_predictions(&preds_path, &scored_only).unwrap();
    let reread = dataset::parse_predictions(&preds_path, &world.alphabet).unwrap();
    assert_eq!(reread, predictions);

    let report = evaluate(&reread, &test, &EvalProtocol::end_to_end(0.5), &world.alphabet).unwrap();
    assert!(report.precision >= 0.0 && report.precision <= 1.0);
    assert!(report.recall >= 0.0 && report.recall <= 1.0);
}

#[test]
fn checkpoints_preserve_training_state_exactly() {
    let world = small_world();
    let scenes = generate_scenes(&world, Domain::A, 300, 10).unwrap();
    let config = ModelConfig {
        feature_dim: world.feature_dim,
        embed_dim: 8,
        hidden_dim: 8,
        alphabet_size: world.alphabet.size(),
        max_word_len: world.max_word_len,
    };
    let mut model = ToyModel::init(config, 7).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.02,
        epochs: 3,
        seed: 7,
        mode: TrainMode::Full,
        cost_weights: CostWeights::default(),
        loss_weights: LossWeights::default(),
    };
    train(&mut model, &scenes, &world.alphabet, &tc).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.jsonl");
    model.save(&path).unwrap();
    let restored = ToyModel::load(&path).unwrap();
    assert_eq!(model, restored);

    // restored model predicts identically
    let scene = &scenes[0];
    let a = model.forward(&scene.features).unwrap();
    let b = restored.forward(&scene.features).unwrap();
    assert_eq!(a, b);
}
