//! Scratch probe for tuning the gym: trains on domain A, fine-tunes on
//! domain B, and prints losses, metrics, and wall times.

use std::time::Instant;

use textspot::cost::MatchMode;
use textspot::eval::{evaluate, evaluate_detection, EvalProtocol};
use textspot::experiment::{predict_scenes, ExperimentConfig};
use textspot::loss::hungarian_loss;
use textspot::model::ToyModel;
use textspot::train::{train, TrainConfig, TrainMode};
use textspot::world::{generate_scenes, Domain};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pre_epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let ft_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let scenes_n: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(500);
    let ft_lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(lr);

    let mut config = ExperimentConfig::default();
    config.pretrain.epochs = pre_epochs;
    config.pretrain.learning_rate = lr;
    config.finetune.epochs = ft_epochs;
    config.finetune.learning_rate = ft_lr;
    config.train_scenes = scenes_n;

    let world = &config.world;
    let alphabet = world.alphabet.clone();
    let seed = 1u64;

    let train_a = generate_scenes(world, Domain::A, 1000, config.train_scenes).unwrap();
    let test_a = generate_scenes(world, Domain::A, 9000, config.test_scenes).unwrap();
    let train_b = generate_scenes(world, Domain::B, 2000, config.train_scenes).unwrap();
    let train_b_weak: Vec<_> = train_b.iter().map(|s| s.to_weak()).collect();
    let test_b = generate_scenes(world, Domain::B, 8000, config.test_scenes).unwrap();

    let tc = TrainConfig {
        learning_rate: config.pretrain.learning_rate,
        epochs: config.pretrain.epochs,
        seed,
        mode: TrainMode::Full,
        cost_weights: config.cost,
        loss_weights: config.loss,
    };

    let mut model = ToyModel::init(config.model_config(), seed).unwrap();
    let t0 = Instant::now();
    let history = train(&mut model, &train_a, &alphabet, &tc).unwrap();
    let pretrain_secs = t0.elapsed().as_secs_f64();
    println!(
        "pretrain {} epochs x {} scenes in {:.1}s ({:.2} ms/scene-step)",
        tc.epochs,
        train_a.len(),
        pretrain_secs,
        1000.0 * pretrain_secs / (tc.epochs * train_a.len()) as f64
    );
    let show = |h: &[f64]| {
        let idx = [0, 1, 2, 4, 9, 19, 39, 59, 79, 99, 149, 199, 299];
        for &i in idx.iter().filter(|&&i| i < h.len()) {
            print!("e{}={:.3} ", i + 1, h[i]);
        }
        println!();
    };
    show(&history);

    let eval_on = |m: &ToyModel, scenes: &[textspot::Scene], tag: &str| {
        let preds = predict_scenes(m, scenes, &alphabet, config.score_threshold).unwrap();
        let r = evaluate(&preds, scenes, &EvalProtocol::end_to_end(0.5)).unwrap();
        let d = evaluate_detection(&preds, scenes, 0.5).unwrap();
        // mean component breakdown over the first scenes
        let mut cls = 0.0;
        let mut l1 = 0.0;
        let mut gi = 0.0;
        let mut rec = 0.0;
        let k = scenes.len().min(50);
        for scene in &scenes[..k] {
            let all = m.forward(&scene.features).unwrap();
            let b = hungarian_loss(
                &all,
                &scene.ground_truth,
                &alphabet,
                &config.cost,
                &config.loss,
                MatchMode::Full,
            )
            .unwrap();
            cls += b.classification / k as f64;
            l1 += b.box_l1 / k as f64;
            gi += b.box_giou / k as f64;
            rec += b.recognition / k as f64;
        }
        println!(
            "{tag}: P={:.3} R={:.3} F={:.3} detF={:.3} (tp={} preds={} gts={}) [cls={cls:.2} l1={l1:.3} giou={gi:.3} rec={rec:.2}]",
            r.precision, r.recall, r.f_measure, d.f_measure, r.true_positives, r.num_predictions, r.num_ground_truths
        );
        r.f_measure
    };
    eval_on(&model, &test_a, "pretrained on A-test");
    let f_syn = eval_on(&model, &test_b, "pretrained on B-test");

    // weak fine-tune
    let tc_weak = TrainConfig {
        learning_rate: config.finetune.learning_rate,
        epochs: config.finetune.epochs,
        seed: seed + 1,
        mode: TrainMode::Weak,
        cost_weights: config.cost,
        loss_weights: config.loss,
    };
    let mut weak_model = model.clone();
    let t1 = Instant::now();
    let h = train(&mut weak_model, &train_b_weak, &alphabet, &tc_weak).unwrap();
    println!("weak finetune in {:.1}s", t1.elapsed().as_secs_f64());
    show(&h);
    let f_weak = eval_on(&weak_model, &test_b, "weak-finetuned on B-test");

    // full fine-tune
    let tc_full = TrainConfig {
        mode: TrainMode::Full,
        ..tc_weak.clone()
    };
    let mut full_model = model.clone();
    let t2 = Instant::now();
    let h = train(&mut full_model, &train_b, &alphabet, &tc_full).unwrap();
    println!("full finetune in {:.1}s", t2.elapsed().as_secs_f64());
    show(&h);
    let f_full = eval_on(&full_model, &test_b, "full-finetuned on B-test");

    println!(
        "margins: weak-syn = {:.1} pts (need >= 10), full-weak = {:.1} pts (need >= -2)",
        100.0 * (f_weak - f_syn),
        100.0 * (f_full - f_weak)
    );
}
