//! Scratch runner: executes a named experiment with the default config
//! (optionally reduced) and prints the report.

use textspot::experiment::{run_experiment, ExperimentConfig, ExperimentName};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let name: ExperimentName = args
        .get(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(ExperimentName::WeakVsSynthetic);
    let mut config = ExperimentConfig::default();
    if let Some(n) = args.get(2).and_then(|s| s.parse().ok()) {
        config.train_scenes = n;
    }
    if let Some(e) = args.get(3).and_then(|s| s.parse().ok()) {
        config.pretrain.epochs = e;
    }
    if let Some(seeds) = args.get(4) {
        config.seeds = seeds.split(',').map(|s| s.parse().unwrap()).collect();
    }
    let report = run_experiment(name, &config, None).unwrap();
    print!("{}", report.render_text());
}
