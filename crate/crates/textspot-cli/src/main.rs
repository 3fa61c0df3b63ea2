//! `textspot`: dataset generation, matching inspection, loss evaluation,
//! training, evaluation, and experiment reports on one command line.
//!
//! Exit codes: 0 on success, 1 on runtime failures (I/O and similar),
//! 2 on usage or configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use textspot::dataset;
use textspot::eval::{evaluate, EvalProtocol, EvalTask};
use textspot::experiment::{run_experiment, ExperimentConfig, ExperimentName, ExperimentReport};
use textspot::loss::hungarian_loss;
use textspot::model::ToyModel;
use textspot::train::{train, TrainConfig, TrainMode};
use textspot::world::{generate_scenes, Domain};
use textspot::{build_cost_matrix, solve_assignment, Error, MatchMode, Prediction, Scene};

mod reconstruct;

#[derive(Parser)]
#[command(
    name = "textspot",
    version,
    about = "Set-prediction matching, losses, training, and evaluation for text spotting"
)]
struct Cli {
    /// Experiment configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets: domains A and B, full and weak variants.
    Gen {
        /// Output directory for the four dataset files.
        #[arg(long)]
        out: PathBuf,
        /// Base seed for scene generation.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Scenes per file; defaults to the configured train_scenes.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Print the matching cost matrix, assignment, and per-pair breakdown.
    Match {
        /// Prediction file (score/box/text records).
        #[arg(long)]
        preds: PathBuf,
        /// Ground-truth dataset file.
        #[arg(long)]
        gt: PathBuf,
        /// Matching criteria: full, weak, or detcls.
        #[arg(long, default_value = "full")]
        mode: String,
        /// Scene to inspect; defaults to the first scene of the file.
        #[arg(long)]
        scene_id: Option<String>,
    },
    /// Evaluate the matching loss on a prediction/ground-truth pair.
    Loss {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "full")]
        mode: String,
        #[arg(long)]
        scene_id: Option<String>,
    },
    /// Train a toy model on a dataset file and write a checkpoint.
    Train {
        /// Training dataset (scene lines).
        #[arg(long)]
        data: PathBuf,
        /// full, weak, det_cls_only, or det_only.
        #[arg(long, default_value = "full")]
        mode: String,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional warm-start checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Optional per-epoch loss history output (CSV).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a prediction file against ground truth.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// word_spotting or end_to_end.
        #[arg(long, default_value = "end_to_end")]
        task: String,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Lexicon file, one word per line.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Emit the full report as JSON instead of the summary.
        #[arg(long)]
        json: bool,
    },
    /// Run a canned experiment and write its report and artifacts.
    Experiment {
        /// weak_vs_synthetic, detection_ablation, or matching_ablation.
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an experiment report file as a table or CSV.
    Report {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        csv: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Io(_) | Error::Json(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let config: ExperimentConfig = toml::from_str(&text)
                .map_err(|e| Error::Validation(format!("config {}: {e}", p.display())))?;
            config.validate()?;
            Ok(config)
        }
    }
}

fn parse_match_mode(s: &str) -> Result<MatchMode, Error> {
    match s {
        "full" => Ok(MatchMode::Full),
        "weak" => Ok(MatchMode::Weak),
        "detcls" | "det_cls" | "det_cls_only" => Ok(MatchMode::DetClsOnly),
        other => Err(Error::Argument(format!(
            "unknown matching mode '{other}'; expected full, weak, or detcls"
        ))),
    }
}

fn parse_train_mode(s: &str) -> Result<TrainMode, Error> {
    match s {
        "full" => Ok(TrainMode::Full),
        "weak" => Ok(TrainMode::Weak),
        "det_cls_only" | "detcls" => Ok(TrainMode::DetClsOnly),
        "det_only" | "det" => Ok(TrainMode::DetOnly),
        other => Err(Error::Argument(format!(
            "unknown training mode '{other}'; expected full, weak, det_cls_only, or det_only"
        ))),
    }
}

fn pick_scene<'a>(scenes: &'a [Scene], id: Option<&str>) -> Result<&'a Scene, Error> {
    match id {
        None => scenes
            .first()
            .ok_or_else(|| Error::Argument("ground-truth file has no scenes".into())),
        Some(id) => scenes
            .iter()
            .find(|s| s.scene_id == id)
            .ok_or_else(|| Error::Argument(format!("scene '{id}' not found"))),
    }
}

/// Predictions of one scene, rebuilt with sharp logits from the decoded
/// records (the on-disk format stores scores and text, not logits).
fn scene_predictions(
    preds_path: &Path,
    scene_id: &str,
    config: &ExperimentConfig,
) -> Result<Vec<Prediction>, Error> {
    let all = dataset::parse_predictions(preds_path, &config.world.alphabet)?;
    let scored = all
        .iter()
        .find(|(id, _)| id == scene_id)
        .map(|(_, p)| p.as_slice())
        .unwrap_or(&[]);
    scored
        .iter()
        .map(|p| {
            reconstruct::prediction_from_scored(
                p,
                &config.world.alphabet,
                config.world.max_word_len,
            )
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Gen { out, seed, count } => cmd_gen(&config, &out, seed, count),
        Command::Match {
            preds,
            gt,
            mode,
            scene_id,
        } => cmd_match(&config, &preds, &gt, &mode, scene_id.as_deref()),
        Command::Loss {
            preds,
            gt,
            mode,
            scene_id,
        } => cmd_loss(&config, &preds, &gt, &mode, scene_id.as_deref()),
        Command::Train {
            data,
            mode,
            out,
            init,
            epochs,
            learning_rate,
            seed,
            history,
        } => cmd_train(
            &config,
            &data,
            &mode,
            &out,
            init.as_deref(),
            epochs,
            learning_rate,
            seed,
            history.as_deref(),
        ),
        Command::Eval {
            preds,
            gt,
            task,
            iou,
            lexicon,
            json,
        } => cmd_eval(&config, &preds, &gt, &task, iou, lexicon.as_deref(), json),
        Command::Experiment { name, out } => cmd_experiment(&config, &name, &out),
        Command::Report { file, csv } => cmd_report(&file, csv),
    }
}

fn cmd_gen(
    config: &ExperimentConfig,
    out: &Path,
    seed: u64,
    count: Option<usize>,
) -> Result<(), Error> {
    config.validate()?;
    let count = count.unwrap_or(config.train_scenes);
    std::fs::create_dir_all(out)?;
    let alphabet = &config.world.alphabet;
    for (domain, tag, salt) in [(Domain::A, "a", 0u64), (Domain::B, "b", 1u64)] {
        let scenes = generate_scenes(&config.world, domain, seed.wrapping_add(salt << 32), count)?;
        let weak: Vec<Scene> = scenes.iter().map(|s| s.to_weak()).collect();
        let full_path = out.join(format!("{tag}_full.jsonl"));
        let weak_path = out.join(format!("{tag}_weak.jsonl"));
        dataset::write_scenes(&full_path, &scenes, alphabet)?;
        dataset::write_scenes(&weak_path, &weak, alphabet)?;
        println!("wrote {} and {}", full_path.display(), weak_path.display());
    }
    Ok(())
}

fn cmd_match(
    config: &ExperimentConfig,
    preds_path: &Path,
    gt_path: &Path,
    mode: &str,
    scene_id: Option<&str>,
) -> Result<(), Error> {
    let mode = parse_match_mode(mode)?;
    let alphabet = &config.world.alphabet;
    let scenes = dataset::parse_dataset(gt_path, alphabet)?;
    let scene = pick_scene(&scenes, scene_id)?;
    let preds = scene_predictions(preds_path, &scene.scene_id, config)?;
    let gts: Vec<_> = scene.text_instances().cloned().collect();

    let matrix = build_cost_matrix(&preds, &gts, alphabet, &config.cost, mode)?;
    println!("scene {} ({mode:?} criteria)", scene.scene_id);
    println!("cost matrix ({} ground truths x {} predictions):", matrix.rows(), matrix.cols());
    for i in 0..matrix.rows() {
        let row: Vec<String> = (0..matrix.cols())
            .map(|j| format!("{:>9.4}", matrix.cost(i, j)))
            .collect();
        println!("  gt{i}: [{}]", row.join(", "));
    }
    let result = solve_assignment(&matrix);
    println!("assignment (total cost {:.6}):", result.total_cost);
    for pair in &result.pairs {
        let gt_text = gts[pair.row]
            .transcription()
            .map(|t| alphabet.decode(t))
            .unwrap_or_default();
        let pred_text = preds[pair.col].decode_greedy(alphabet);
        let comps = pair.components.unwrap_or_default();
        println!(
            "  gt{} '{}' -> pred{} '{}'  cost {:.4} (cls {:.4}, box {:.4}, rec {:.4})",
            pair.row,
            gt_text,
            pair.col,
            pred_text,
            pair.cost,
            comps.classification,
            comps.box_term,
            comps.recognition
        );
    }
    Ok(())
}

fn cmd_loss(
    config: &ExperimentConfig,
    preds_path: &Path,
    gt_path: &Path,
    mode: &str,
    scene_id: Option<&str>,
) -> Result<(), Error> {
    let mode = parse_match_mode(mode)?;
    let alphabet = &config.world.alphabet;
    let scenes = dataset::parse_dataset(gt_path, alphabet)?;
    let scene = pick_scene(&scenes, scene_id)?;
    let preds = scene_predictions(preds_path, &scene.scene_id, config)?;
    let out = hungarian_loss(
        &preds,
        &scene.ground_truth,
        alphabet,
        &config.cost,
        &config.loss,
        mode,
    )?;
    println!("scene {} ({mode:?})", scene.scene_id);
    println!("total          {:.6}", out.total);
    println!("classification {:.6}", out.classification);
    println!("box_l1         {:.6}", out.box_l1);
    println!("box_giou       {:.6}", out.box_giou);
    println!("recognition    {:.6}", out.recognition);
    println!("matched pairs  {}", out.matching.pairs.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: &ExperimentConfig,
    data: &Path,
    mode: &str,
    out: &Path,
    init: Option<&Path>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    seed: u64,
    history_path: Option<&Path>,
) -> Result<(), Error> {
    let mode = parse_train_mode(mode)?;
    let alphabet = &config.world.alphabet;
    let scenes = dataset::parse_dataset(data, alphabet)?;
    let mut model = match init {
        Some(path) => ToyModel::load(path)?,
        None => ToyModel::init(config.model_config(), seed)?,
    };
    let tc = TrainConfig {
        learning_rate: learning_rate.unwrap_or(config.pretrain.learning_rate),
        epochs: epochs.unwrap_or(config.pretrain.epochs),
        seed,
        mode,
        cost_weights: config.cost,
        loss_weights: config.loss,
    };
    let history = train(&mut model, &scenes, alphabet, &tc)?;
    model.save(out)?;
    if let Some(hp) = history_path {
        let mut text = String::from("epoch,mean_loss\n");
        for (i, loss) in history.iter().enumerate() {
            text.push_str(&format!("{},{}\n", i + 1, loss));
        }
        std::fs::write(hp, text)?;
    }
    println!(
        "trained {} epochs on {} scenes ({mode:?}); first epoch {:.4}, last {:.4}; checkpoint {}",
        tc.epochs,
        scenes.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    config: &ExperimentConfig,
    preds_path: &Path,
    gt_path: &Path,
    task: &str,
    iou: f64,
    lexicon: Option<&Path>,
    json: bool,
) -> Result<(), Error> {
    let task = match task {
        "word_spotting" | "ws" => EvalTask::WordSpotting,
        "end_to_end" | "e2e" => EvalTask::EndToEnd,
        other => {
            return Err(Error::Argument(format!(
                "unknown task '{other}'; expected word_spotting or end_to_end"
            )))
        }
    };
    let alphabet = &config.world.alphabet;
    let gt = dataset::parse_dataset(gt_path, alphabet)?;
    let preds = dataset::parse_predictions(preds_path, alphabet)?;
    let mut protocol = EvalProtocol {
        task,
        iou_threshold: iou,
        lexicon: None,
    };
    if let Some(path) = lexicon {
        let words: Vec<String> = std::fs::read_to_string(path)?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        protocol.lexicon = Some(words);
    }
    let report = evaluate(&preds, &gt, &protocol, alphabet)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("precision {:.3}", report.precision);
        println!("recall    {:.3}", report.recall);
        println!("f_measure {:.3}", report.f_measure);
    }
    Ok(())
}

fn cmd_experiment(config: &ExperimentConfig, name: &str, out: &Path) -> Result<(), Error> {
    let name: ExperimentName = name.parse()?;
    let report = run_experiment(name, config, Some(out))?;
    print!("{}", report.render_text());
    println!("report written to {}", out.join(format!("{name}_report.json")).display());
    Ok(())
}

fn cmd_report(file: &Path, csv: bool) -> Result<(), Error> {
    let text = std::fs::read_to_string(file)?;
    let report: ExperimentReport = serde_json::from_str(&text)?;
    if csv {
        print!("{}", report.render_csv());
    } else {
        print!("{}", report.render_text());
    }
    Ok(())
}
