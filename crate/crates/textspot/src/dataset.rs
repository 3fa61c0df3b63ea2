//! Line-delimited dataset and prediction files.
//!
//! One JSON object per line. Scene lines:
//!
//! ```text
//! {"scene_id":"s0","features":[[...]],"gt":[{"cls":"text","box":[cx,cy,w,h],"text":"ab"}],"supervision":"full"}
//! ```
//!
//! `scene_id`, `features`, and `supervision` are optional; supervision is
//! inferred from the presence of boxes when missing, and a scene mixing
//! boxed and box-less text instances is rejected. Prediction lines:
//!
//! ```text
//! {"scene_id":"s0","preds":[{"score_text":0.93,"box":[cx,cy,w,h],"text":"ab"}]}
//! ```
//!
//! Parsing and serialization are pure per-file and safe to run
//! concurrently on distinct files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::geometry::CenterSizeBox;
use crate::scene::{GroundTruthInstance, Prediction, Scene, Supervision};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawScene {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    features: Vec<Vec<f64>>,
    gt: Vec<RawGt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    supervision: Option<Supervision>,
}

#[derive(Serialize, Deserialize)]
struct RawGt {
    cls: String,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<CenterSizeBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawPredictionLine {
    scene_id: String,
    preds: Vec<RawPrediction>,
}

#[derive(Serialize, Deserialize)]
struct RawPrediction {
    score_text: f64,
    #[serde(rename = "box")]
    bbox: CenterSizeBox,
    text: String,
}

/// A serialized prediction: text score, box, and greedy-decoded word.
/// This is the evaluation-side view of a [`Prediction`]; the raw logits
/// are not preserved on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub score_text: f64,
    pub bbox: CenterSizeBox,
    pub text: String,
}

/// Parse a scene dataset. Scenes are returned in file order; every scene
/// is validated against the domain invariants.
pub fn parse_dataset(path: &Path, alphabet: &Alphabet) -> Result<Vec<Scene>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut scenes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawScene = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let scene = scene_from_raw(raw, line_no, alphabet)?;
        scenes.push(scene);
    }
    Ok(scenes)
}

fn scene_from_raw(raw: RawScene, line_no: usize, alphabet: &Alphabet) -> Result<Scene> {
    let mut ground_truth = Vec::with_capacity(raw.gt.len());
    let mut boxed = 0usize;
    let mut boxless = 0usize;
    for g in raw.gt {
        match g.cls.as_str() {
            "text" => {
                let text = g.text.ok_or_else(|| Error::Validation(format!(
                    "line {line_no}: text instance without a transcription"
                )))?;
                let transcription = alphabet
                    .encode(&text)
                    .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
                match g.bbox {
                    Some(_) => boxed += 1,
                    None => boxless += 1,
                }
                ground_truth.push(GroundTruthInstance::Text {
                    bbox: g.bbox,
                    transcription,
                });
            }
            "noobject" => {
                if g.bbox.is_some() || g.text.is_some() {
                    return Err(Error::Validation(format!(
                        "line {line_no}: noobject instance must not carry a box or text"
                    )));
                }
                ground_truth.push(GroundTruthInstance::NoObject);
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown class '{other}'"),
                })
            }
        }
    }
    if boxed > 0 && boxless > 0 {
        return Err(Error::Validation(format!(
            "line {line_no}: mixed supervision within one scene ({boxed} boxed, {boxless} box-less instances)"
        )));
    }
    let supervision = match raw.supervision {
        Some(s) => s,
        None if boxless > 0 => Supervision::Weak,
        None => Supervision::Full,
    };
    let scene = Scene {
        scene_id: raw
            .scene_id
            .unwrap_or_else(|| format!("scene{line_no}")),
        features: raw.features,
        ground_truth,
        supervision,
    };
    scene
        .validate()
        .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
    Ok(scene)
}

/// Write scenes in the dataset format, one per line, in input order.
pub fn write_scenes(path: &Path, scenes: &[Scene], alphabet: &Alphabet) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    for scene in scenes {
        let raw = RawScene {
            scene_id: Some(scene.scene_id.clone()),
            features: scene.features.clone(),
            gt: scene
                .ground_truth
                .iter()
                .map(|g| match g {
                    GroundTruthInstance::Text {
                        bbox,
                        transcription,
                    } => RawGt {
                        cls: "text".into(),
                        bbox: *bbox,
                        text: Some(alphabet.decode(transcription)),
                    },
                    GroundTruthInstance::NoObject => RawGt {
                        cls: "noobject".into(),
                        bbox: None,
                        text: None,
                    },
                })
                .collect(),
            supervision: Some(scene.supervision),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Serialize predictions: greedy-decode each one and write a prediction
/// line per scene. Boxes survive a round-trip exactly (shortest-float
/// JSON encoding); transcriptions survive exactly by construction.
pub fn write_predictions(
    path: &Path,
    predictions: &[(String, Vec<Prediction>)],
    alphabet: &Alphabet,
) -> Result<()> {
    let scored: Vec<(String, Vec<ScoredPrediction>)> = predictions
        .iter()
        .map(|(id, preds)| {
            (
                id.clone(),
                preds
                    .iter()
                    .map(|p| ScoredPrediction {
                        score_text: p.text_score(),
                        bbox: p.bbox,
                        text: p.decode_greedy(alphabet),
                    })
                    .collect(),
            )
        })
        .collect();
    write_scored_predictions(path, &scored)
}

/// Write already-decoded predictions.
pub fn write_scored_predictions(
    path: &Path,
    predictions: &[(String, Vec<ScoredPrediction>)],
) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    for (scene_id, preds) in predictions {
        let raw = RawPredictionLine {
            scene_id: scene_id.clone(),
            preds: preds
                .iter()
                .map(|p| RawPrediction {
                    score_text: p.score_text,
                    bbox: p.bbox,
                    text: p.text.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parse a prediction file. Transcriptions are case-folded and validated
/// against the alphabet.
pub fn parse_predictions(
    path: &Path,
    alphabet: &Alphabet,
) -> Result<Vec<(String, Vec<ScoredPrediction>)>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPredictionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut preds = Vec::with_capacity(raw.preds.len());
        for p in raw.preds {
            let text = p.text.to_lowercase();
            if !text.is_empty() {
                alphabet
                    .encode(&text)
                    .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
            }
            preds.push(ScoredPrediction {
                score_text: p.score_text,
                bbox: p.bbox,
                text,
            });
        }
        out.push((raw.scene_id, preds));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn parses_a_minimal_full_scene() {
        let f = write_tmp(
            r#"{"scene_id":"s0","gt":[{"cls":"text","box":[0.5,0.5,0.2,0.1],"text":"ab"}]}"#,
        );
        let a = Alphabet::new("ab".chars()).unwrap();
        let scenes = parse_dataset(f.path(), &a).unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].scene_id, "s0");
        assert_eq!(scenes[0].supervision, Supervision::Full);
        assert_eq!(scenes[0].ground_truth.len(), 1);
        let gt = &scenes[0].ground_truth[0];
        assert_eq!(a.decode(gt.transcription().unwrap()), "ab");
        assert!(gt.bbox().is_some());
    }

    #[test]
    fn out_of_alphabet_character_is_named() {
        let f = write_tmp(r#"{"gt":[{"cls":"text","box":[0.5,0.5,0.2,0.1],"text":"a$"}]}"#);
        let a = Alphabet::new("ab".chars()).unwrap();
        let err = parse_dataset(f.path(), &a).unwrap_err();
        assert!(err.to_string().contains('$'), "{err}");
    }

    #[test]
    fn weak_line_without_boxes_infers_weak_supervision() {
        let f = write_tmp(r#"{"gt":[{"cls":"text","text":"as"},{"cls":"text","text":"as"}]}"#);
        let a = Alphabet::alnum_lowercase();
        let scenes = parse_dataset(f.path(), &a).unwrap();
        assert_eq!(scenes[0].supervision, Supervision::Weak);
        assert_eq!(scenes[0].ground_truth.len(), 2);
        assert!(scenes[0].ground_truth.iter().all(|g| g.bbox().is_none()));
    }

    #[test]
    fn mixed_supervision_is_rejected() {
        let f = write_tmp(
            r#"{"gt":[{"cls":"text","box":[0.5,0.5,0.2,0.1],"text":"ab"},{"cls":"text","text":"ba"}]}"#,
        );
        let a = Alphabet::alnum_lowercase();
        assert!(parse_dataset(f.path(), &a).is_err());
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let f = write_tmp("{\"gt\":[]}\nnot json\n");
        let a = Alphabet::alnum_lowercase();
        match parse_dataset(f.path(), &a) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_prediction_list_writes_no_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        let a = Alphabet::alnum_lowercase();
        write_predictions(&path, &[], &a).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn greedy_decode_is_used_when_serializing() {
        let a = Alphabet::new("ab".chars()).unwrap();
        let pred = Prediction {
            class_logits: [1.0, 0.0],
            bbox: CenterSizeBox::new(0.5, 0.5, 0.25, 0.25).unwrap(),
            // argmaxes: 'a', EOS
            char_logits: vec![vec![3.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 3.0, 0.0]],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        write_predictions(&path, &[("s0".into(), vec![pred])], &a).unwrap();
        let parsed = parse_predictions(&path, &a).unwrap();
        assert_eq!(parsed[0].1[0].text, "a");
    }

    #[test]
    fn prediction_round_trip_is_exact_for_100_random_predictions() {
        let a = Alphabet::new("abcdefgh".chars()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut expected = Vec::new();
        for i in 0..100 {
            let n = rng.gen_range(0..4);
            let preds: Vec<ScoredPrediction> = (0..n)
                .map(|_| {
                    let w: f64 = rng.gen_range(0.0..0.4);
                    let h: f64 = rng.gen_range(0.0..0.4);
                    let cx = rng.gen_range(w / 2.0..1.0 - w / 2.0);
                    let cy = rng.gen_range(h / 2.0..1.0 - h / 2.0);
                    let len = rng.gen_range(1..6);
                    let text: String = (0..len)
                        .map(|_| a.symbol_at(rng.gen_range(0..a.num_symbols())).unwrap())
                        .collect();
                    ScoredPrediction {
                        score_text: rng.gen_range(0.0..1.0),
                        bbox: CenterSizeBox::new(cx, cy, w, h).unwrap(),
                        text,
                    }
                })
                .collect();
            expected.push((format!("s{i}"), preds));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        write_scored_predictions(&path, &expected).unwrap();
        let parsed = parse_predictions(&path, &a).unwrap();
        assert_eq!(parsed, expected);
    }

    #[test]
    fn scene_round_trip_preserves_scenes() {
        let a = Alphabet::new("abcdefgh".chars()).unwrap();
        let scenes = vec![
            Scene {
                scene_id: "x0".into(),
                features: vec![vec![0.25, -1.5], vec![0.0, 2.0]],
                ground_truth: vec![GroundTruthInstance::text(
                    CenterSizeBox::new(0.5, 0.5, 0.25, 0.125).unwrap(),
                    a.encode("abc").unwrap(),
                )],
                supervision: Supervision::Full,
            },
            Scene {
                scene_id: "x1".into(),
                features: vec![],
                ground_truth: vec![
                    GroundTruthInstance::text_weak(a.encode("hg").unwrap()),
                    GroundTruthInstance::text_weak(a.encode("hg").unwrap()),
                ],
                supervision: Supervision::Weak,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        write_scenes(&path, &scenes, &a).unwrap();
        let parsed = parse_dataset(&path, &a).unwrap();
        assert_eq!(parsed, scenes);
    }
}
