//! IoU-matched word-spotting and end-to-end evaluation with optional
//! lexicon correction.
//!
//! Within each scene, (ground truth, prediction) pairs whose IoU meets
//! the threshold and whose transcriptions agree after normalization are
//! matched greedily by descending IoU, one-to-one. Word spotting
//! case-folds and strips non-alphanumerics before comparing and marks
//! short or non-alphanumeric ground-truth words as don't-care; end-to-end
//! compares case-folded exact strings. Counts are aggregated over scenes
//! (micro-average).

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::dataset::ScoredPrediction;
use crate::geometry::{iou, CornerBox};
use crate::scene::{GroundTruthInstance, Scene};
use crate::{Error, Result};

/// Which transcription comparison the protocol uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    WordSpotting,
    EndToEnd,
}

/// Evaluation protocol: task, IoU threshold, optional lexicon.
#[derive(Debug, Clone)]
pub struct EvalProtocol {
    pub task: EvalTask,
    pub iou_threshold: f64,
    pub lexicon: Option<Vec<String>>,
}

impl EvalProtocol {
    pub fn end_to_end(iou_threshold: f64) -> Self {
        EvalProtocol {
            task: EvalTask::EndToEnd,
            iou_threshold,
            lexicon: None,
        }
    }

    pub fn word_spotting(iou_threshold: f64) -> Self {
        EvalProtocol {
            task: EvalTask::WordSpotting,
            iou_threshold,
            lexicon: None,
        }
    }

    pub fn with_lexicon(mut self, lexicon: Vec<String>) -> Self {
        self.lexicon = Some(lexicon);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "iou threshold must lie in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        if let Some(lex) = &self.lexicon {
            if lex.is_empty() {
                return Err(Error::Validation("lexicon must not be empty".into()));
            }
        }
        Ok(())
    }
}

/// Per-scene match counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneEval {
    pub scene_id: String,
    pub true_positives: usize,
    /// Predictions counted toward precision (don't-care absorptions removed).
    pub predictions: usize,
    /// Ground truths counted toward recall (don't-care removed).
    pub ground_truths: usize,
    /// Matched `(gt_index, prediction_index)` pairs.
    pub matched: Vec<(usize, usize)>,
}

/// Micro-averaged precision, recall, and F-measure with the per-scene
/// breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_positives: usize,
    pub num_predictions: usize,
    pub num_ground_truths: usize,
    pub per_scene: Vec<SceneEval>,
}

impl EvalReport {
    fn from_scenes(per_scene: Vec<SceneEval>) -> Self {
        let tp: usize = per_scene.iter().map(|s| s.true_positives).sum();
        let preds: usize = per_scene.iter().map(|s| s.predictions).sum();
        let gts: usize = per_scene.iter().map(|s| s.ground_truths).sum();
        let precision = if preds > 0 { tp as f64 / preds as f64 } else { 0.0 };
        let recall = if gts > 0 { tp as f64 / gts as f64 } else { 0.0 };
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalReport {
            precision,
            recall,
            f_measure,
            true_positives: tp,
            num_predictions: preds,
            num_ground_truths: gts,
            per_scene,
        }
    }
}

/// Correct a word against a lexicon: the entry with minimal edit distance
/// wins, ties broken by lexicon order. A correction farther than
/// `ceil(|word| / 2)` is rejected and the case-folded word returned
/// unchanged.
pub fn lexicon_correct(word: &str, lexicon: &[String]) -> Result<String> {
    if lexicon.is_empty() {
        return Err(Error::Argument("lexicon must not be empty".into()));
    }
    let folded = word.to_lowercase();
    let mut best: Option<(usize, &String)> = None;
    for entry in lexicon {
        let d = levenshtein(&folded, &entry.to_lowercase());
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, entry));
        }
    }
    let (dist, entry) = best.expect("non-empty lexicon");
    let limit = folded.chars().count().div_ceil(2);
    if dist > limit {
        Ok(folded)
    } else {
        Ok(entry.to_lowercase())
    }
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn normalize(task: EvalTask, s: &str) -> String {
    let folded = s.to_lowercase();
    match task {
        EvalTask::EndToEnd => folded,
        EvalTask::WordSpotting => folded.chars().filter(|c| c.is_alphanumeric()).collect(),
    }
}

fn is_dont_care(task: EvalTask, raw: &str) -> bool {
    match task {
        EvalTask::EndToEnd => false,
        EvalTask::WordSpotting => {
            raw.chars().count() < 3 || raw.chars().any(|c| !c.is_alphanumeric())
        }
    }
}

enum TextRule {
    Protocol(EvalTask),
    DetectionOnly,
}

/// Evaluate predictions against ground truth under the given protocol.
///
/// Every prediction scene id must exist on the ground-truth side; scenes
/// without predictions count their ground truths as misses.
pub fn evaluate(
    preds_by_scene: &[(String, Vec<ScoredPrediction>)],
    gt_scenes: &[Scene],
    protocol: &EvalProtocol,
    alphabet: &Alphabet,
) -> Result<EvalReport> {
    protocol.validate()?;
    if let Some(lexicon) = &protocol.lexicon {
        for word in lexicon {
            alphabet.encode(word).map_err(|e| {
                Error::Validation(format!("lexicon word '{word}': {e}"))
            })?;
        }
    }
    evaluate_inner(
        preds_by_scene,
        gt_scenes,
        alphabet,
        protocol.iou_threshold,
        TextRule::Protocol(protocol.task),
        protocol.lexicon.as_deref(),
    )
}

/// Detection-only evaluation: IoU matching with no transcription
/// comparison, the standard text-detection P/R/F.
pub fn evaluate_detection(
    preds_by_scene: &[(String, Vec<ScoredPrediction>)],
    gt_scenes: &[Scene],
    iou_threshold: f64,
) -> Result<EvalReport> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Validation(format!(
            "iou threshold must lie in (0, 1], got {iou_threshold}"
        )));
    }
    evaluate_inner(
        preds_by_scene,
        gt_scenes,
        &Alphabet::alnum_lowercase(),
        iou_threshold,
        TextRule::DetectionOnly,
        None,
    )
}

fn evaluate_inner(
    preds_by_scene: &[(String, Vec<ScoredPrediction>)],
    gt_scenes: &[Scene],
    alphabet: &Alphabet,
    iou_threshold: f64,
    rule: TextRule,
    lexicon: Option<&[String]>,
) -> Result<EvalReport> {
    for (scene_id, _) in preds_by_scene {
        if !gt_scenes.iter().any(|s| &s.scene_id == scene_id) {
            return Err(Error::Validation(format!(
                "prediction scene '{scene_id}' has no ground-truth scene"
            )));
        }
    }
    let empty: Vec<ScoredPrediction> = Vec::new();
    let mut per_scene = Vec::with_capacity(gt_scenes.len());
    for scene in gt_scenes {
        let preds = preds_by_scene
            .iter()
            .find(|(id, _)| id == &scene.scene_id)
            .map(|(_, p)| p)
            .unwrap_or(&empty);
        per_scene.push(evaluate_scene(
            scene,
            preds,
            alphabet,
            iou_threshold,
            &rule,
            lexicon,
        )?);
    }
    Ok(EvalReport::from_scenes(per_scene))
}

struct GtEntry {
    corners: CornerBox,
    text: String,
    dont_care: bool,
}

fn evaluate_scene(
    scene: &Scene,
    preds: &[ScoredPrediction],
    alphabet: &Alphabet,
    iou_threshold: f64,
    rule: &TextRule,
    lexicon: Option<&[String]>,
) -> Result<SceneEval> {
    let mut gts = Vec::new();
    for gt in scene.text_instances() {
        let GroundTruthInstance::Text {
            bbox,
            transcription,
        } = gt
        else {
            continue;
        };
        let Some(bbox) = bbox else {
            return Err(Error::Validation(format!(
                "scene '{}' has no ground-truth boxes; evaluation needs full annotations",
                scene.scene_id
            )));
        };
        let raw = alphabet.decode(transcription);
        let (text, dont_care) = match rule {
            TextRule::Protocol(task) => (normalize(*task, &raw), is_dont_care(*task, &raw)),
            TextRule::DetectionOnly => (String::new(), false),
        };
        gts.push(GtEntry {
            corners: bbox.unit_corners(),
            text,
            dont_care,
        });
    }

    let mut pred_entries = Vec::with_capacity(preds.len());
    for p in preds {
        let text = match rule {
            TextRule::Protocol(task) => {
                let corrected = match lexicon {
                    Some(lex) => lexicon_correct(&p.text, lex)?,
                    None => p.text.to_lowercase(),
                };
                normalize(*task, &corrected)
            }
            TextRule::DetectionOnly => String::new(),
        };
        pred_entries.push((p.bbox.unit_corners(), text));
    }

    // candidate pairs sorted by descending IoU; ties by indices
    let mut candidates = Vec::new();
    for (gi, g) in gts.iter().enumerate() {
        if g.dont_care {
            continue;
        }
        for (pi, (corners, text)) in pred_entries.iter().enumerate() {
            let overlap = iou(&g.corners, corners);
            let text_ok = match rule {
                TextRule::Protocol(_) => *text == g.text,
                TextRule::DetectionOnly => true,
            };
            if overlap >= iou_threshold && text_ok {
                candidates.push((overlap, gi, pi));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut gt_matched = vec![false; gts.len()];
    let mut pred_matched = vec![false; pred_entries.len()];
    let mut matched = Vec::new();
    for (_, gi, pi) in candidates {
        if gt_matched[gi] || pred_matched[pi] {
            continue;
        }
        gt_matched[gi] = true;
        pred_matched[pi] = true;
        matched.push((gi, pi));
    }
    matched.sort_unstable();

    // unmatched predictions overlapping a don't-care region are excluded
    // from the precision denominator
    let mut ignored_preds = 0usize;
    for (pi, (corners, _)) in pred_entries.iter().enumerate() {
        if pred_matched[pi] {
            continue;
        }
        let absorbed = gts
            .iter()
            .any(|g| g.dont_care && iou(&g.corners, corners) >= iou_threshold);
        if absorbed {
            ignored_preds += 1;
        }
    }

    let real_gts = gts.iter().filter(|g| !g.dont_care).count();
    Ok(SceneEval {
        scene_id: scene.scene_id.clone(),
        true_positives: matched.len(),
        predictions: pred_entries.len() - ignored_preds,
        ground_truths: real_gts,
        matched,
    })
}
