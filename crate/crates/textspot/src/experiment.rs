//! Canned experiments over the synthetic world, reported as per-arm
//! precision/recall/F records.
//!
//! - `weak_vs_synthetic`: pretrain on fully-annotated domain A, then
//!   compare (a) no fine-tuning, (b) transcription-only fine-tuning on
//!   domain B, (c) fully-supervised fine-tuning on domain B, all
//!   evaluated end-to-end on held-out domain B.
//! - `detection_ablation`: detection-only training versus joint
//!   detection+recognition training, scored on detection P/R/F.
//! - `matching_ablation`: matching with and without the recognition
//!   criterion, scored end-to-end.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::cost::CostWeights;
use crate::dataset::{self, ScoredPrediction};
use crate::eval::{evaluate, evaluate_detection, EvalProtocol, EvalReport};
use crate::loss::LossWeights;
use crate::model::{ModelConfig, ToyModel};
use crate::scene::Scene;
use crate::train::{train, TrainConfig, TrainMode};
use crate::world::{generate_scenes, Domain, WorldConfig};
use crate::{Error, Result};

/// The three canned experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    WeakVsSynthetic,
    DetectionAblation,
    MatchingAblation,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::WeakVsSynthetic => "weak_vs_synthetic",
            ExperimentName::DetectionAblation => "detection_ablation",
            ExperimentName::MatchingAblation => "matching_ablation",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak_vs_synthetic" => Ok(ExperimentName::WeakVsSynthetic),
            "detection_ablation" => Ok(ExperimentName::DetectionAblation),
            "matching_ablation" => Ok(ExperimentName::MatchingAblation),
            other => Err(Error::Argument(format!(
                "unknown experiment '{other}'; expected weak_vs_synthetic, detection_ablation, or matching_ablation"
            ))),
        }
    }
}

/// Learning rate and epoch count of one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.005,
            epochs: 300,
        }
    }
}

/// Full experiment configuration: world, model widths, training stages,
/// weights, seeds, and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub pretrain: TrainSection,
    pub finetune: TrainSection,
    pub cost: CostWeights,
    pub loss: LossWeights,
    pub seeds: Vec<u64>,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Queries below this text score are dropped at inference.
    pub score_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            embed_dim: 32,
            hidden_dim: 32,
            pretrain: TrainSection::default(),
            finetune: TrainSection {
                learning_rate: 0.0025,
                epochs: 120,
            },
            cost: CostWeights::default(),
            loss: LossWeights::default(),
            seeds: vec![1, 2, 3],
            train_scenes: 500,
            test_scenes: 100,
            score_threshold: 0.5,
            iou_threshold: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.cost.validate()?;
        self.loss.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Validation("at least one seed is required".into()));
        }
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::Validation(
                "train_scenes and test_scenes must be positive".into(),
            ));
        }
        if !(self.score_threshold >= 0.0 && self.score_threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "score_threshold must lie in [0, 1], got {}",
                self.score_threshold
            )));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "iou_threshold must lie in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Validation("model widths must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.world.feature_dim,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            alphabet_size: self.world.alphabet.size(),
            max_word_len: self.world.max_word_len,
        }
    }

    fn train_config(&self, mode: TrainMode, section: TrainSection, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: section.learning_rate,
            epochs: section.epochs,
            seed,
            mode,
            cost_weights: self.cost,
            loss_weights: self.loss,
        }
    }
}

/// One experiment arm: metrics of a trained model on the held-out set.
/// `wall_secs` is measured and therefore not deterministic; every other
/// field is reproducible bit-for-bit from the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub epochs: usize,
    pub wall_secs: f64,
}

/// All arms of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub arms: Vec<ArmReport>,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str, seed: u64) -> Option<&ArmReport> {
        self.arms
            .iter()
            .find(|a| a.arm == name && a.seed == seed)
    }

    /// Fixed-width text rendering, one line per arm.
    pub fn render_text(&self) -> String {
        let mut out = format!("experiment: {}\n", self.experiment);
        out.push_str("arm                     seed         P         R         F  epochs   wall_s\n");
        for a in &self.arms {
            out.push_str(&format!(
                "{:<22} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>8.1}\n",
                a.arm, a.seed, a.precision, a.recall, a.f_measure, a.epochs, a.wall_secs
            ));
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("experiment,arm,seed,precision,recall,f_measure,epochs,wall_secs\n");
        for a in &self.arms {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.experiment,
                a.arm,
                a.seed,
                a.precision,
                a.recall,
                a.f_measure,
                a.epochs,
                a.wall_secs
            ));
        }
        out
    }
}

/// Decode a model's detections on a scene batch.
pub fn predict_scenes(
    model: &ToyModel,
    scenes: &[Scene],
    alphabet: &Alphabet,
    score_threshold: f64,
) -> Result<Vec<(String, Vec<ScoredPrediction>)>> {
    let mut out = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let preds = model.predict(&scene.features, score_threshold)?;
        let scored = preds
            .iter()
            .map(|p| ScoredPrediction {
                score_text: p.text_score(),
                bbox: p.bbox,
                text: p.decode_greedy(alphabet),
            })
            .collect();
        out.push((scene.scene_id.clone(), scored));
    }
    Ok(out)
}

enum Metric {
    EndToEnd,
    Detection,
}

struct ArmOutcome {
    report: EvalReport,
    predictions: Vec<(String, Vec<ScoredPrediction>)>,
}

fn eval_arm(
    model: &ToyModel,
    test: &[Scene],
    config: &ExperimentConfig,
    metric: &Metric,
) -> Result<ArmOutcome> {
    let alphabet = &config.world.alphabet;
    let predictions = predict_scenes(model, test, alphabet, config.score_threshold)?;
    let report = match metric {
        Metric::EndToEnd => evaluate(
            &predictions,
            test,
            &EvalProtocol::end_to_end(config.iou_threshold),
            alphabet,
        )?,
        Metric::Detection => evaluate_detection(&predictions, test, config.iou_threshold)?,
    };
    Ok(ArmOutcome {
        report,
        predictions,
    })
}

/// Run one experiment. When `out_dir` is given, the held-out scenes and
/// every arm's predictions are also written in the dataset format for
/// inspection, next to `report.json`.
pub fn run_experiment(
    name: ExperimentName,
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let mut report = ExperimentReport {
        experiment: name.to_string(),
        arms: Vec::new(),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let alphabet = config.world.alphabet.clone();

    for &seed in &config.seeds {
        let arms = match name {
            ExperimentName::WeakVsSynthetic => weak_vs_synthetic_arms(config, seed)?,
            ExperimentName::DetectionAblation => detection_ablation_arms(config, seed)?,
            ExperimentName::MatchingAblation => matching_ablation_arms(config, seed)?,
        };
        for (arm_name, epochs, wall_secs, outcome, test) in arms {
            if let Some(dir) = out_dir {
                let stem = format!("{name}_seed{seed}");
                dataset::write_scenes(
                    &dir.join(format!("{stem}_test.jsonl")),
                    &test,
                    &alphabet,
                )?;
                dataset::write_scored_predictions(
                    &dir.join(format!("{stem}_{arm_name}.preds.jsonl")),
                    &outcome.predictions,
                )?;
            }
            report.arms.push(ArmReport {
                arm: arm_name,
                seed,
                precision: outcome.report.precision,
                recall: outcome.report.recall,
                f_measure: outcome.report.f_measure,
                epochs,
                wall_secs,
            });
        }
    }

    if let Some(dir) = out_dir {
        std::fs::write(
            dir.join(format!("{name}_report.json")),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
    }
    Ok(report)
}

type ArmRun = (String, usize, f64, ArmOutcome, Vec<Scene>);

// Seed streams: decorrelate dataset draws from model init and between
// purposes without extra state.
fn stream(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

fn weak_vs_synthetic_arms(config: &ExperimentConfig, seed: u64) -> Result<Vec<ArmRun>> {
    let world = &config.world;
    let alphabet = &world.alphabet;
    let train_a = generate_scenes(world, Domain::A, stream(seed, 1), config.train_scenes)?;
    let train_b = generate_scenes(world, Domain::B, stream(seed, 2), config.train_scenes)?;
    let train_b_weak: Vec<Scene> = train_b.iter().map(|s| s.to_weak()).collect();
    let test_b = generate_scenes(world, Domain::B, stream(seed, 3), config.test_scenes)?;

    let start = Instant::now();
    let mut pretrained = ToyModel::init(config.model_config(), stream(seed, 4))?;
    train(
        &mut pretrained,
        &train_a,
        alphabet,
        &config.train_config(TrainMode::Full, config.pretrain, stream(seed, 5)),
    )?;
    let pretrain_secs = start.elapsed().as_secs_f64();
    let synthetic_only = eval_arm(&pretrained, &test_b, config, &Metric::EndToEnd)?;

    let start = Instant::now();
    let mut weak_model = pretrained.clone();
    train(
        &mut weak_model,
        &train_b_weak,
        alphabet,
        &config.train_config(TrainMode::Weak, config.finetune, stream(seed, 6)),
    )?;
    let weak_secs = start.elapsed().as_secs_f64();
    let weak_finetuned = eval_arm(&weak_model, &test_b, config, &Metric::EndToEnd)?;

    let start = Instant::now();
    let mut box_model = pretrained.clone();
    train(
        &mut box_model,
        &train_b,
        alphabet,
        &config.train_config(TrainMode::Full, config.finetune, stream(seed, 7)),
    )?;
    let box_secs = start.elapsed().as_secs_f64();
    let full_finetuned = eval_arm(&box_model, &test_b, config, &Metric::EndToEnd)?;

    Ok(vec![
        (
            "synthetic_only".into(),
            config.pretrain.epochs,
            pretrain_secs,
            synthetic_only,
            test_b.clone(),
        ),
        (
            "weak_finetuned".into(),
            config.pretrain.epochs + config.finetune.epochs,
            pretrain_secs + weak_secs,
            weak_finetuned,
            test_b.clone(),
        ),
        (
            "full_finetuned".into(),
            config.pretrain.epochs + config.finetune.epochs,
            pretrain_secs + box_secs,
            full_finetuned,
            test_b,
        ),
    ])
}

fn detection_ablation_arms(config: &ExperimentConfig, seed: u64) -> Result<Vec<ArmRun>> {
    let world = &config.world;
    let train_a = generate_scenes(world, Domain::A, stream(seed, 11), config.train_scenes)?;
    let test_a = generate_scenes(world, Domain::A, stream(seed, 12), config.test_scenes)?;
    let mut arms = Vec::new();
    for (arm_name, mode) in [
        ("det_only".to_string(), TrainMode::DetOnly),
        ("det_recog".to_string(), TrainMode::Full),
    ] {
        let start = Instant::now();
        let mut model = ToyModel::init(config.model_config(), stream(seed, 13))?;
        train(
            &mut model,
            &train_a,
            &world.alphabet,
            &config.train_config(mode, config.pretrain, stream(seed, 14)),
        )?;
        let wall = start.elapsed().as_secs_f64();
        let outcome = eval_arm(&model, &test_a, config, &Metric::Detection)?;
        arms.push((arm_name, config.pretrain.epochs, wall, outcome, test_a.clone()));
    }
    Ok(arms)
}

fn matching_ablation_arms(config: &ExperimentConfig, seed: u64) -> Result<Vec<ArmRun>> {
    let world = &config.world;
    let train_a = generate_scenes(world, Domain::A, stream(seed, 21), config.train_scenes)?;
    let test_a = generate_scenes(world, Domain::A, stream(seed, 22), config.test_scenes)?;
    let mut arms = Vec::new();
    for (arm_name, mode) in [
        ("match_det_cls".to_string(), TrainMode::DetClsOnly),
        ("match_det_cls_rec".to_string(), TrainMode::Full),
    ] {
        let start = Instant::now();
        let mut model = ToyModel::init(config.model_config(), stream(seed, 23))?;
        train(
            &mut model,
            &train_a,
            &world.alphabet,
            &config.train_config(mode, config.pretrain, stream(seed, 24)),
        )?;
        let wall = start.elapsed().as_secs_f64();
        let outcome = eval_arm(&model, &test_a, config, &Metric::EndToEnd)?;
        arms.push((arm_name, config.pretrain.epochs, wall, outcome, test_a.clone()));
    }
    Ok(arms)
}
