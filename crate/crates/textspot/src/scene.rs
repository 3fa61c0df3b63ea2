//! Scenes, ground-truth instances, and model predictions.
//!
//! All types here are immutable after construction, so scenes can be
//! processed concurrently without synchronization.

use serde::{Deserialize, Serialize};

use crate::alphabet::{Alphabet, Transcription};
use crate::geometry::CenterSizeBox;
use crate::{Error, Result};

/// Supervision level of a scene's annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// Boxes and transcriptions.
    Full,
    /// Transcriptions only; no spatial annotations.
    Weak,
}

/// One annotated instance: a real word, or the explicit no-object class
/// used to pad prediction sets.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruthInstance {
    Text {
        /// Absent under weak supervision.
        bbox: Option<CenterSizeBox>,
        transcription: Transcription,
    },
    NoObject,
}

impl GroundTruthInstance {
    pub fn text(bbox: CenterSizeBox, transcription: Transcription) -> Self {
        GroundTruthInstance::Text {
            bbox: Some(bbox),
            transcription,
        }
    }

    pub fn text_weak(transcription: Transcription) -> Self {
        GroundTruthInstance::Text {
            bbox: None,
            transcription,
        }
    }

    pub fn is_text(&self) -> bool {
        matches!(self, GroundTruthInstance::Text { .. })
    }

    pub fn bbox(&self) -> Option<&CenterSizeBox> {
        match self {
            GroundTruthInstance::Text { bbox, .. } => bbox.as_ref(),
            GroundTruthInstance::NoObject => None,
        }
    }

    pub fn transcription(&self) -> Option<&Transcription> {
        match self {
            GroundTruthInstance::Text { transcription, .. } => Some(transcription),
            GroundTruthInstance::NoObject => None,
        }
    }
}

/// Raw model output for one query: class logits over {text, no-object},
/// a normalized center-size box, and per-step character logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[text, no_object]` logits.
    pub class_logits: [f64; 2],
    pub bbox: CenterSizeBox,
    /// `max_word_len` rows of `l` logits each.
    pub char_logits: Vec<Vec<f64>>,
}

impl Prediction {
    pub const TEXT: usize = 0;
    pub const NO_OBJECT: usize = 1;

    /// Softmax over the two class logits, computed stably.
    pub fn class_probabilities(&self) -> [f64; 2] {
        let m = self.class_logits[0].max(self.class_logits[1]);
        let e0 = (self.class_logits[0] - m).exp();
        let e1 = (self.class_logits[1] - m).exp();
        let z = e0 + e1;
        [e0 / z, e1 / z]
    }

    /// Probability that this query contains a word.
    pub fn text_score(&self) -> f64 {
        self.class_probabilities()[Self::TEXT]
    }

    /// Greedy decode: argmax per step, truncated at the first reserved
    /// index (EOS or PAD).
    pub fn decode_greedy(&self, alphabet: &Alphabet) -> String {
        let mut out = String::new();
        for row in &self.char_logits {
            let Some(best) = argmax(row) else { break };
            match alphabet.symbol_at(best) {
                Some(c) => out.push(c),
                None => break,
            }
        }
        out
    }

    pub fn validate(&self, max_word_len: usize, alphabet_size: usize) -> Result<()> {
        self.bbox.validate()?;
        if self.class_logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite class logits".into()));
        }
        if self.char_logits.len() != max_word_len {
            return Err(Error::Validation(format!(
                "char_logits has {} rows, expected max_word_len {max_word_len}",
                self.char_logits.len()
            )));
        }
        for row in &self.char_logits {
            if row.len() != alphabet_size {
                return Err(Error::Validation(format!(
                    "char_logits row has {} entries, expected alphabet size {alphabet_size}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("non-finite character logits".into()));
            }
        }
        Ok(())
    }
}

fn argmax(row: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in row.iter().enumerate() {
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// One annotated scene: per-query input features and the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    /// One feature vector per candidate location / query slot.
    pub features: Vec<Vec<f64>>,
    pub ground_truth: Vec<GroundTruthInstance>,
    pub supervision: Supervision,
}

impl Scene {
    /// Check the supervision invariants: weak scenes carry no boxes, full
    /// scenes carry a box on every text instance.
    pub fn validate(&self) -> Result<()> {
        for gt in &self.ground_truth {
            if let GroundTruthInstance::Text { bbox, .. } = gt {
                match (self.supervision, bbox) {
                    (Supervision::Weak, Some(_)) => {
                        return Err(Error::Validation(format!(
                            "scene '{}' is weak but carries a box annotation",
                            self.scene_id
                        )))
                    }
                    (Supervision::Full, None) => {
                        return Err(Error::Validation(format!(
                            "scene '{}' is full but a text instance has no box",
                            self.scene_id
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// The weak view of this scene: boxes stripped, supervision set to
    /// [`Supervision::Weak`].
    pub fn to_weak(&self) -> Scene {
        Scene {
            scene_id: self.scene_id.clone(),
            features: self.features.clone(),
            ground_truth: self
                .ground_truth
                .iter()
                .map(|gt| match gt {
                    GroundTruthInstance::Text { transcription, .. } => GroundTruthInstance::Text {
                        bbox: None,
                        transcription: transcription.clone(),
                    },
                    GroundTruthInstance::NoObject => GroundTruthInstance::NoObject,
                })
                .collect(),
            supervision: Supervision::Weak,
        }
    }

    pub fn text_instances(&self) -> impl Iterator<Item = &GroundTruthInstance> {
        self.ground_truth.iter().filter(|g| g.is_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alphabet() -> Alphabet {
        Alphabet::new("ab".chars()).unwrap()
    }

    #[test]
    fn class_probabilities_sum_to_one_and_match_logit_layout() {
        let p = Prediction {
            class_logits: [4.0f64.ln(), 0.0],
            bbox: CenterSizeBox::new(0.5, 0.5, 0.2, 0.2).unwrap(),
            char_logits: vec![],
        };
        let probs = p.class_probabilities();
        assert!((probs[0] - 0.8).abs() < 1e-12);
        assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_decode_truncates_at_eos() {
        let a = alphabet();
        // rows: 'a', EOS, 'b' (unreachable)
        let p = Prediction {
            class_logits: [0.0, 0.0],
            bbox: CenterSizeBox::new(0.5, 0.5, 0.2, 0.2).unwrap(),
            char_logits: vec![
                vec![5.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 5.0, 0.0],
                vec![0.0, 5.0, 0.0, 0.0],
            ],
        };
        assert_eq!(p.decode_greedy(&a), "a");
    }

    #[test]
    fn weak_scene_with_box_is_rejected() {
        let a = alphabet();
        let t = a.encode("ab").unwrap();
        let scene = Scene {
            scene_id: "s".into(),
            features: vec![],
            ground_truth: vec![GroundTruthInstance::text(
                CenterSizeBox::new(0.5, 0.5, 0.1, 0.1).unwrap(),
                t,
            )],
            supervision: Supervision::Weak,
        };
        assert!(scene.validate().is_err());
        assert!(scene.to_weak().validate().is_ok());
    }
}
