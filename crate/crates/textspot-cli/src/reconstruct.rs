//! Rebuild raw predictions from serialized score/box/text records.
//!
//! The on-disk prediction format keeps the decoded view only, so the
//! matching and loss commands reconstruct logits that reproduce it: the
//! class logits invert the text score exactly, and the character rows get
//! a sharp margin on the decoded characters. Costs computed from a
//! reconstruction are therefore faithful for the classification term and
//! sharply separate right from wrong transcriptions.

use textspot::dataset::ScoredPrediction;
use textspot::{Alphabet, Error, Prediction};

const CHAR_MARGIN: f64 = 20.0;

pub fn prediction_from_scored(
    scored: &ScoredPrediction,
    alphabet: &Alphabet,
    max_word_len: usize,
) -> Result<Prediction, Error> {
    let s = scored.score_text.clamp(1e-9, 1.0 - 1e-9);
    let class_logits = [(s / (1.0 - s)).ln(), 0.0];

    let indices = if scored.text.is_empty() {
        Vec::new()
    } else {
        alphabet.encode(&scored.text)?.indices().to_vec()
    };
    if indices.len() + 1 > max_word_len {
        return Err(Error::Validation(format!(
            "serialized transcription '{}' does not fit max_word_len {max_word_len}",
            scored.text
        )));
    }
    let mut char_logits = vec![vec![0.0; alphabet.size()]; max_word_len];
    for (step, row) in char_logits.iter_mut().enumerate() {
        let target = match indices.get(step) {
            Some(&c) => c,
            None if step == indices.len() => alphabet.eos_index(),
            None => continue, // beyond EOS: left neutral, ignored by costs
        };
        for (k, v) in row.iter_mut().enumerate() {
            *v = if k == target { CHAR_MARGIN } else { -CHAR_MARGIN };
        }
    }
    Ok(Prediction {
        class_logits,
        bbox: scored.bbox,
        char_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use textspot::CenterSizeBox;

    #[test]
    fn reconstruction_round_trips_score_and_text() {
        let a = Alphabet::new("abcdefgh".chars()).unwrap();
        let scored = ScoredPrediction {
            score_text: 0.73,
            bbox: CenterSizeBox::new(0.4, 0.5, 0.2, 0.1).unwrap(),
            text: "bad".into(),
        };
        let pred = prediction_from_scored(&scored, &a, 6).unwrap();
        assert!((pred.text_score() - 0.73).abs() < 1e-12);
        assert_eq!(pred.decode_greedy(&a), "bad");
        assert_eq!(pred.bbox, scored.bbox);
    }

    #[test]
    fn oversized_text_is_rejected() {
        let a = Alphabet::new("ab".chars()).unwrap();
        let scored = ScoredPrediction {
            score_text: 0.5,
            bbox: CenterSizeBox::new(0.5, 0.5, 0.1, 0.1).unwrap(),
            text: "ababab".into(),
        };
        assert!(prediction_from_scored(&scored, &a, 3).is_err());
    }
}
