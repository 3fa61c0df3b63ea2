//! Matching criteria: the classification, box, and transcription cost
//! terms combined into the cost matrix that drives the assignment.
//!
//! Full criteria combine all three terms; the weak criteria drop the box
//! term so matching works without spatial annotations; the det+cls
//! criteria drop the recognition term, which is the classic set-detection
//! matching.

use serde::{Deserialize, Serialize};

use crate::alphabet::{Alphabet, Transcription};
use crate::assignment::{CostComponents, CostMatrix};
use crate::geometry::{self, CenterSizeBox};
use crate::scene::{GroundTruthInstance, Prediction};
use crate::{Error, Result};

/// Weights of the matching criteria terms. The box weight is split into
/// its L1 and GIoU sub-weights. `recognition_length_norm` divides the
/// transcription term by the number of scored steps instead of using the
/// plain sum; it is off by default and exists for experimentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub classification: f64,
    pub box_l1: f64,
    pub box_giou: f64,
    pub recognition: f64,
    pub recognition_length_norm: bool,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            classification: 2.0,
            box_l1: 5.0,
            box_giou: 2.0,
            recognition: 1.0,
            recognition_length_norm: false,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.classification,
            self.box_l1,
            self.box_giou,
            self.recognition,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation(format!(
                "cost weights must be non-negative and finite: {all:?}"
            )));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Validation("cost weights must not all be zero".into()));
        }
        Ok(())
    }

    /// The same weights with the recognition criterion removed.
    pub fn without_recognition(mut self) -> Self {
        self.recognition = 0.0;
        self
    }
}

/// Which terms enter the matching criteria (and, downstream, the loss).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Classification + box + recognition.
    Full,
    /// Classification + recognition; no box term even when boxes exist.
    Weak,
    /// Classification + box, the set-detection baseline.
    DetClsOnly,
}

impl MatchMode {
    pub fn uses_box(self) -> bool {
        matches!(self, MatchMode::Full | MatchMode::DetClsOnly)
    }

    pub fn uses_recognition(self) -> bool {
        matches!(self, MatchMode::Full | MatchMode::Weak)
    }
}

/// `-alpha_c * p(class)` for the given class index, in `[-alpha_c, 0]`.
/// Matching uses the probability itself, not its log.
pub fn classification_cost(pred: &Prediction, class_index: usize, alpha_c: f64) -> f64 {
    -alpha_c * pred.class_probabilities()[class_index]
}

/// Weighted box criteria: L1 distance in center-size space plus the GIoU
/// complement on corners.
pub fn box_cost(pred_box: &CenterSizeBox, gt_box: &CenterSizeBox, w: &CostWeights) -> f64 {
    let l1 = geometry::l1_center_size(pred_box, gt_box);
    let g = geometry::giou(&pred_box.unit_corners(), &gt_box.unit_corners());
    w.box_l1 * l1 + w.box_giou * (1.0 - g)
}

/// Transcription cross-entropy summed over the word's characters plus the
/// terminating EOS, times `alpha_rec`. Steps beyond EOS are ignored.
pub fn recognition_cost(
    char_logits: &[Vec<f64>],
    gt: &Transcription,
    alphabet: &Alphabet,
    alpha_rec: f64,
) -> Result<f64> {
    Ok(alpha_rec * recognition_nll(char_logits, gt, alphabet)?)
}

/// [`recognition_cost`] divided by the number of scored steps (the word
/// length plus one for EOS). Off the default path.
pub fn recognition_cost_length_normalized(
    char_logits: &[Vec<f64>],
    gt: &Transcription,
    alphabet: &Alphabet,
    alpha_rec: f64,
) -> Result<f64> {
    let steps = (gt.len() + 1) as f64;
    Ok(alpha_rec * recognition_nll(char_logits, gt, alphabet)? / steps)
}

/// The unweighted recognition negative log-likelihood. The matching
/// criteria and the loss share this same function.
pub fn recognition_nll(
    char_logits: &[Vec<f64>],
    gt: &Transcription,
    alphabet: &Alphabet,
) -> Result<f64> {
    let steps = gt.len() + 1; // characters plus EOS
    if steps > char_logits.len() {
        return Err(Error::Argument(format!(
            "word of length {} needs {steps} steps but char_logits has {} rows",
            gt.len(),
            char_logits.len()
        )));
    }
    let mut total = 0.0;
    for (step, row) in char_logits.iter().take(steps).enumerate() {
        let target = if step < gt.len() {
            gt.indices()[step]
        } else {
            alphabet.eos_index()
        };
        if target >= row.len() {
            return Err(Error::Argument(format!(
                "target index {target} out of range for {} logits",
                row.len()
            )));
        }
        total += nll_from_logits(row, target);
    }
    Ok(total)
}

/// `-log softmax(logits)[target]` in log-sum-exp stable form.
pub(crate) fn nll_from_logits(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
    sum.ln() - (logits[target] - m)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    out
}

/// Build the matching cost matrix for the given mode: entry `(i, j)` is
/// the criteria value of assigning ground truth `i` to prediction `j`.
///
/// Ground-truth instances must all be text (no-object padding is a loss
/// concern, not a matching one) and must not outnumber the predictions.
pub fn build_cost_matrix(
    preds: &[Prediction],
    gts: &[GroundTruthInstance],
    alphabet: &Alphabet,
    w: &CostWeights,
    mode: MatchMode,
) -> Result<CostMatrix> {
    w.validate()?;
    if gts.iter().any(|g| !g.is_text()) {
        return Err(Error::Argument(
            "cost matrix expects text instances only; filter no-object padding first".into(),
        ));
    }
    if gts.len() > preds.len() {
        return Err(Error::Capacity {
            gts: gts.len(),
            preds: preds.len(),
        });
    }
    let mut components = Vec::with_capacity(gts.len() * preds.len());
    for gt in gts {
        let transcription = gt
            .transcription()
            .expect("text instance carries a transcription");
        let gt_box = gt.bbox();
        if mode.uses_box() && gt_box.is_none() {
            return Err(Error::Validation(format!(
                "{mode:?} matching requires ground-truth boxes, but an instance has none"
            )));
        }
        for pred in preds {
            let classification = classification_cost(pred, Prediction::TEXT, w.classification);
            let box_term = if mode.uses_box() {
                box_cost(&pred.bbox, gt_box.expect("checked above"), w)
            } else {
                0.0
            };
            let recognition = if !mode.uses_recognition() {
                0.0
            } else if w.recognition_length_norm {
                recognition_cost_length_normalized(
                    &pred.char_logits,
                    transcription,
                    alphabet,
                    w.recognition,
                )?
            } else {
                recognition_cost(&pred.char_logits, transcription, alphabet, w.recognition)?
            };
            components.push(CostComponents {
                classification,
                box_term,
                recognition,
            });
        }
    }
    CostMatrix::with_components(gts.len(), preds.len(), components)
}
