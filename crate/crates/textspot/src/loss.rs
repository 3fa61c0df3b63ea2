//! The matching-based training loss and its analytic gradients.
//!
//! The loss recomputes the optimal assignment on every call and treats it
//! as a constant: gradients flow through the loss terms at the fixed
//! matching, never through the discrete argmin. Matched predictions pay a
//! classification negative log-likelihood for the text class plus, in
//! full mode, the box terms, plus, in full and weak modes, the
//! recognition cross-entropy. Unmatched predictions pay a down-weighted
//! no-object classification term.

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::assignment::{solve_assignment, MatchResult};
use crate::cost::{build_cost_matrix, nll_from_logits, softmax, CostWeights, MatchMode};
use crate::geometry::{self};
use crate::scene::{GroundTruthInstance, Prediction};
use crate::{Error, Result};

/// Weights of the loss terms. `noobj_coef` down-weights the
/// classification loss of unmatched (no-object) predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub classification: f64,
    pub box_l1: f64,
    pub box_giou: f64,
    pub recognition: f64,
    pub noobj_coef: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            classification: 1.0,
            box_l1: 5.0,
            box_giou: 2.0,
            recognition: 1.0,
            noobj_coef: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.classification,
            self.box_l1,
            self.box_giou,
            self.recognition,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation(format!(
                "loss weights must be non-negative and finite: {all:?}"
            )));
        }
        if !(self.noobj_coef > 0.0 && self.noobj_coef <= 1.0) {
            return Err(Error::Validation(format!(
                "noobj_coef must lie in (0, 1], got {}",
                self.noobj_coef
            )));
        }
        Ok(())
    }

    /// The same weights with the recognition loss removed.
    pub fn without_recognition(mut self) -> Self {
        self.recognition = 0.0;
        self
    }
}

/// The loss value split into its unweighted component sums; the total is
/// the weighted combination. The down-weighted no-object term is folded
/// into the classification component.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub box_l1: f64,
    pub box_giou: f64,
    pub recognition: f64,
    pub matching: MatchResult,
}

/// Gradient of the total loss with respect to one prediction's raw
/// parameters, at fixed matching.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGradient {
    pub class_logits: [f64; 2],
    /// With respect to the center-size box parameters.
    pub bbox: [f64; 4],
    pub char_logits: Vec<Vec<f64>>,
}

impl PredictionGradient {
    fn zeros(max_word_len: usize, alphabet_size: usize) -> Self {
        PredictionGradient {
            class_logits: [0.0; 2],
            bbox: [0.0; 4],
            char_logits: vec![vec![0.0; alphabet_size]; max_word_len],
        }
    }
}

/// Evaluate the matching-based loss under the given mode.
///
/// No-object ground-truth entries are treated as padding and skipped;
/// text instances are matched one-to-one against the predictions using
/// the mode's criteria.
pub fn hungarian_loss(
    preds: &[Prediction],
    gts: &[GroundTruthInstance],
    alphabet: &Alphabet,
    cw: &CostWeights,
    lw: &LossWeights,
    mode: MatchMode,
) -> Result<LossBreakdown> {
    let (_, breakdown) = evaluate(preds, gts, alphabet, cw, lw, mode, false)?;
    Ok(breakdown)
}

/// The loss together with analytic gradients per prediction, holding the
/// matching fixed. In weak mode every box gradient is exactly zero.
pub fn loss_gradients(
    preds: &[Prediction],
    gts: &[GroundTruthInstance],
    alphabet: &Alphabet,
    cw: &CostWeights,
    lw: &LossWeights,
    mode: MatchMode,
) -> Result<(Vec<PredictionGradient>, LossBreakdown)> {
    let (grads, breakdown) = evaluate(preds, gts, alphabet, cw, lw, mode, true)?;
    Ok((grads.expect("gradients requested"), breakdown))
}

fn evaluate(
    preds: &[Prediction],
    gts: &[GroundTruthInstance],
    alphabet: &Alphabet,
    cw: &CostWeights,
    lw: &LossWeights,
    mode: MatchMode,
    with_grads: bool,
) -> Result<(Option<Vec<PredictionGradient>>, LossBreakdown)> {
    lw.validate()?;
    let text_gts: Vec<&GroundTruthInstance> = gts.iter().filter(|g| g.is_text()).collect();
    let owned: Vec<GroundTruthInstance> = text_gts.iter().map(|g| (*g).clone()).collect();
    let matrix = build_cost_matrix(preds, &owned, alphabet, cw, mode)?;
    let matching = solve_assignment(&matrix);

    let max_word_len = preds.first().map_or(0, |p| p.char_logits.len());
    let mut grads = with_grads.then(|| {
        preds
            .iter()
            .map(|_| PredictionGradient::zeros(max_word_len, alphabet.size()))
            .collect::<Vec<_>>()
    });

    let mut classification = 0.0;
    let mut box_l1 = 0.0;
    let mut box_giou = 0.0;
    let mut recognition = 0.0;

    let mut matched = vec![false; preds.len()];
    for (row, &col) in matching.assignment.iter().enumerate() {
        matched[col] = true;
        let gt = &owned[row];
        let pred = &preds[col];

        // classification toward the text class
        classification += nll_from_logits(&pred.class_logits, Prediction::TEXT);
        if let Some(g) = grads.as_mut() {
            let probs = pred.class_probabilities();
            g[col].class_logits[0] += lw.classification * (probs[0] - 1.0);
            g[col].class_logits[1] += lw.classification * probs[1];
        }

        // box terms, full mode only
        if mode == MatchMode::Full {
            let gt_box = gt.bbox().expect("full matching validated boxes");
            box_l1 += geometry::l1_center_size(&pred.bbox, gt_box);
            let (giou_val, giou_grad_corners) =
                geometry::giou_with_gradient(&pred.bbox.unit_corners(), &gt_box.unit_corners());
            box_giou += 1.0 - giou_val;
            if let Some(g) = grads.as_mut() {
                let pv = pred.bbox.as_array();
                let gv = gt_box.as_array();
                let [dx1, dy1, dx2, dy2] = giou_grad_corners;
                // chain rule: corners (x1,y1,x2,y2) from (cx,cy,w,h)
                let giou_cs = [
                    dx1 + dx2,
                    dy1 + dy2,
                    0.5 * (dx2 - dx1),
                    0.5 * (dy2 - dy1),
                ];
                for k in 0..4 {
                    let sign = if pv[k] > gv[k] {
                        1.0
                    } else if pv[k] < gv[k] {
                        -1.0
                    } else {
                        0.0
                    };
                    g[col].bbox[k] +=
                        lw.box_l1 * sign - lw.box_giou * giou_cs[k];
                }
            }
        }

        // recognition, full and weak modes
        if mode.uses_recognition() {
            let t = gt.transcription().expect("text instance");
            recognition += crate::cost::recognition_nll(&pred.char_logits, t, alphabet)?;
            if let Some(g) = grads.as_mut() {
                for step in 0..=t.len() {
                    let target = if step < t.len() {
                        t.indices()[step]
                    } else {
                        alphabet.eos_index()
                    };
                    let sm = softmax(&pred.char_logits[step]);
                    let row = &mut g[col].char_logits[step];
                    for (k, &p) in sm.iter().enumerate() {
                        row[k] += lw.recognition * (p - if k == target { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }

    // unmatched predictions pay the down-weighted no-object term
    for (j, pred) in preds.iter().enumerate() {
        if matched[j] {
            continue;
        }
        classification +=
            lw.noobj_coef * nll_from_logits(&pred.class_logits, Prediction::NO_OBJECT);
        if let Some(g) = grads.as_mut() {
            let probs = pred.class_probabilities();
            let scale = lw.noobj_coef * lw.classification;
            g[j].class_logits[0] += scale * probs[0];
            g[j].class_logits[1] += scale * (probs[1] - 1.0);
        }
    }

    let total = lw.classification * classification
        + lw.box_l1 * box_l1
        + lw.box_giou * box_giou
        + lw.recognition * recognition;

    Ok((
        grads,
        LossBreakdown {
            total,
            classification,
            box_l1,
            box_giou,
            recognition,
            matching,
        },
    ))
}
