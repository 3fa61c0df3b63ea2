//! The toy spotting model: a shared per-query embedding feeding a
//! 3-layer detection FFN, a linear classification head, and a recurrent
//! recognition head.
//!
//! Every query is processed independently: its feature vector is encoded
//! into a joint embedding `q_emb`, which all heads read. The recognition
//! head is a single recurrent cell whose initial hidden state is a
//! projection of `q_emb` and whose input at every step is `q_emb` itself,
//! unrolled `max_word_len` steps with one row of character logits each.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::CenterSizeBox;
use crate::scene::Prediction;
use crate::tape::{NodeId, Tape};
use crate::{Error, Result};

/// Shape configuration of the toy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// Joint query embedding width.
    pub embed_dim: usize,
    /// Recurrent hidden size of the recognition head.
    pub hidden_dim: usize,
    /// Character logit width `l` (symbols plus EOS and PAD).
    pub alphabet_size: usize,
    /// Recognition unroll length.
    pub max_word_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
            || self.alphabet_size < 3
            || self.max_word_len == 0
        {
            return Err(Error::Validation(format!(
                "invalid model configuration: {self:?}"
            )));
        }
        Ok(())
    }
}

/// A named weight matrix (biases are `1 x n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// The model: a flat list of named parameters plus its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    params: Vec<Param>,
}

/// Output node ids for one query on a tape.
pub struct QueryNodes {
    pub class_logits: NodeId,
    pub bbox: NodeId,
    /// One `1 x l` logits node per unrolled step.
    pub char_steps: Vec<NodeId>,
}

/// A taped forward pass: parameter leaves (aligned with
/// [`ToyModel::params`]) and per-query output nodes.
pub struct TapedForward {
    pub param_nodes: Vec<NodeId>,
    pub queries: Vec<QueryNodes>,
}

impl ToyModel {
    /// All-zero weights: boxes decode to `[0.5, 0.5, 0.5, 0.5]`, class
    /// probabilities to one half.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = layout(&config)
            .into_iter()
            .map(|(name, rows, cols)| Param {
                name,
                rows,
                cols,
                data: vec![0.0; rows * cols],
            })
            .collect();
        Ok(ToyModel { config, params })
    }

    /// Uniform init scaled by fan-in; biases start at zero. The encoder
    /// starts near the identity so each input dimension feeds its own
    /// embedding coordinate; heads then bind to disjoint coordinate
    /// groups and training stays modular.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = ToyModel::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut model.params {
            if p.name.ends_with(".bias") {
                continue;
            }
            let bound = 1.0 / (p.rows as f64).sqrt();
            for v in &mut p.data {
                *v = rng.gen_range(-bound..bound);
            }
            if p.name == "encoder.weight" {
                for i in 0..p.rows.min(p.cols) {
                    p.data[i * p.cols + i] = 1.0;
                }
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Parameters of the detection FFN (the box regressor).
    pub fn detection_params(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.name.starts_with("det."))
    }

    /// Build the forward graph for every query on the given tape.
    pub fn forward_on_tape(&self, tape: &mut Tape, features: &[Vec<f64>]) -> Result<TapedForward> {
        let cfg = &self.config;
        for f in features {
            if f.len() != cfg.feature_dim {
                return Err(Error::Argument(format!(
                    "feature vector has {} dims, encoder expects {}",
                    f.len(),
                    cfg.feature_dim
                )));
            }
        }
        let mut param_nodes = Vec::with_capacity(self.params.len());
        for p in &self.params {
            param_nodes.push(tape.leaf(p.rows, p.cols, p.data.clone())?);
        }
        let by_name: std::collections::HashMap<&str, NodeId> = self
            .params
            .iter()
            .zip(&param_nodes)
            .map(|(p, id)| (p.name.as_str(), *id))
            .collect();
        let w = |name: &str| -> NodeId { by_name[name] };

        let mut queries = Vec::with_capacity(features.len());
        for feature in features {
            let x = tape.leaf(1, cfg.feature_dim, feature.clone())?;

            // joint query embedding
            let mut q = tape.matmul(x, w("encoder.weight"))?;
            q = tape.add(q, w("encoder.bias"))?;
            let q = tape.tanh(q)?;

            // detection head: 3-layer FFN, sigmoid box output
            let mut d = tape.matmul(q, w("det.fc1.weight"))?;
            d = tape.add(d, w("det.fc1.bias"))?;
            d = tape.tanh(d)?;
            d = tape.matmul(d, w("det.fc2.weight"))?;
            d = tape.add(d, w("det.fc2.bias"))?;
            d = tape.tanh(d)?;
            d = tape.matmul(d, w("det.fc3.weight"))?;
            d = tape.add(d, w("det.fc3.bias"))?;
            let bbox = tape.sigmoid(d)?;

            // classification head: linear projection
            let mut c = tape.matmul(q, w("cls.weight"))?;
            c = tape.add(c, w("cls.bias"))?;

            // recognition head: recurrent cell seeded from the embedding,
            // fed the embedding at every step
            let mut h = tape.matmul(q, w("rec.init.weight"))?;
            h = tape.add(h, w("rec.init.bias"))?;
            h = tape.tanh(h)?;
            let mut char_steps = Vec::with_capacity(cfg.max_word_len);
            for step in 0..cfg.max_word_len {
                let mut logits = tape.matmul(h, w("rec.out.weight"))?;
                logits = tape.add(logits, w("rec.out.bias"))?;
                char_steps.push(logits);
                if step + 1 < cfg.max_word_len {
                    let hq = tape.concat_cols(h, q)?;
                    let mut next = tape.matmul(hq, w("rec.cell.weight"))?;
                    next = tape.add(next, w("rec.cell.bias"))?;
                    h = tape.tanh(next)?;
                }
            }

            queries.push(QueryNodes {
                class_logits: c,
                bbox,
                char_steps,
            });
        }
        Ok(TapedForward {
            param_nodes,
            queries,
        })
    }

    /// Pure forward pass: one prediction per feature vector.
    pub fn forward(&self, features: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let fwd = self.forward_on_tape(&mut tape, features)?;
        Ok(fwd
            .queries
            .iter()
            .map(|q| extract_prediction(&tape, q))
            .collect())
    }

    /// Forward pass keeping only confident text predictions.
    pub fn predict(&self, features: &[Vec<f64>], score_threshold: f64) -> Result<Vec<Prediction>> {
        Ok(self
            .forward(features)?
            .into_iter()
            .filter(|p| p.text_score() >= score_threshold)
            .collect())
    }

    /// Write the model as a line-delimited checkpoint: a config record
    /// followed by one record per parameter.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, &CheckpointLine::Config(self.config))?;
        out.write_all(b"\n")?;
        for p in &self.params {
            serde_json::to_writer(&mut out, &CheckpointLine::Param(p.clone()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Validation("empty checkpoint".into()))??;
        let CheckpointLine::Config(config) = serde_json::from_str(&first)? else {
            return Err(Error::Validation(
                "checkpoint must start with a config record".into(),
            ));
        };
        let mut loaded = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let CheckpointLine::Param(p) = serde_json::from_str(&line)? else {
                return Err(Error::Validation("unexpected config record".into()));
            };
            if p.data.len() != p.rows * p.cols {
                return Err(Error::Validation(format!(
                    "parameter '{}' has {} values for shape {}x{}",
                    p.name,
                    p.data.len(),
                    p.rows,
                    p.cols
                )));
            }
            loaded.push(p);
        }
        let expected = layout(&config);
        if loaded.len() != expected.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameters, expected {}",
                loaded.len(),
                expected.len()
            )));
        }
        for (p, (name, rows, cols)) in loaded.iter().zip(&expected) {
            if &p.name != name || p.rows != *rows || p.cols != *cols {
                return Err(Error::Validation(format!(
                    "checkpoint parameter '{}' ({}x{}) does not match expected '{name}' ({rows}x{cols})",
                    p.name, p.rows, p.cols
                )));
            }
        }
        Ok(ToyModel {
            config,
            params: loaded,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CheckpointLine {
    Config(ModelConfig),
    Param(Param),
}

/// Extract the numeric prediction of one query from an evaluated tape.
pub fn extract_prediction(tape: &Tape, q: &QueryNodes) -> Prediction {
    let cls = tape.value(q.class_logits);
    let b = tape.value(q.bbox);
    Prediction {
        class_logits: [cls[0], cls[1]],
        // sigmoid output is always a valid normalized box
        bbox: CenterSizeBox {
            cx: b[0],
            cy: b[1],
            w: b[2],
            h: b[3],
        },
        char_logits: q
            .char_steps
            .iter()
            .map(|&id| tape.value(id).to_vec())
            .collect(),
    }
}

fn layout(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let f = cfg.feature_dim;
    let d = cfg.embed_dim;
    let h = cfg.hidden_dim;
    let l = cfg.alphabet_size;
    vec![
        ("encoder.weight".into(), f, d),
        ("encoder.bias".into(), 1, d),
        ("det.fc1.weight".into(), d, d),
        ("det.fc1.bias".into(), 1, d),
        ("det.fc2.weight".into(), d, d),
        ("det.fc2.bias".into(), 1, d),
        ("det.fc3.weight".into(), d, 4),
        ("det.fc3.bias".into(), 1, 4),
        ("cls.weight".into(), d, 2),
        ("cls.bias".into(), 1, 2),
        ("rec.init.weight".into(), d, h),
        ("rec.init.bias".into(), 1, h),
        ("rec.cell.weight".into(), h + d, h),
        ("rec.cell.bias".into(), 1, h),
        ("rec.out.weight".into(), h, l),
        ("rec.out.bias".into(), 1, l),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 6,
            embed_dim: 5,
            hidden_dim: 4,
            alphabet_size: 6,
            max_word_len: 3,
        }
    }

    #[test]
    fn zero_weights_yield_centered_boxes_and_even_scores() {
        let model = ToyModel::zeros(small_config()).unwrap();
        let preds = model.forward(&[vec![0.3; 6], vec![-1.0; 6]]).unwrap();
        assert_eq!(preds.len(), 2);
        for p in preds {
            assert_eq!(p.bbox.as_array(), [0.5, 0.5, 0.5, 0.5]);
            assert!((p.text_score() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shapes_match_the_configuration() {
        let cfg = small_config();
        let model = ToyModel::init(cfg, 3).unwrap();
        let preds = model.forward(&vec![vec![0.1; 6]; 4]).unwrap();
        assert_eq!(preds.len(), 4);
        for p in &preds {
            assert_eq!(p.char_logits.len(), cfg.max_word_len);
            assert!(p.char_logits.iter().all(|r| r.len() == cfg.alphabet_size));
            assert!(p.bbox.validate().is_ok());
        }
    }

    #[test]
    fn forward_is_pure_and_bitwise_deterministic() {
        let model = ToyModel::init(small_config(), 7).unwrap();
        let features = vec![vec![0.2, -0.4, 0.9, 0.0, 1.0, -1.0]];
        let a = model.forward(&features).unwrap();
        let b = model.forward(&features).unwrap();
        assert_eq!(a, b);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(
                pa.class_logits[0].to_bits(),
                pb.class_logits[0].to_bits()
            );
        }
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let model = ToyModel::zeros(small_config()).unwrap();
        assert!(model.forward(&[vec![0.0; 5]]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = ToyModel::init(small_config(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.jsonl");
        model.save(&path).unwrap();
        let back = ToyModel::load(&path).unwrap();
        assert_eq!(model, back);
    }
}
