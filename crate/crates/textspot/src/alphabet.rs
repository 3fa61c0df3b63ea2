//! Character alphabets and encoded transcriptions.
//!
//! An alphabet maps characters to dense indices `0..n`. Two reserved
//! indices follow the symbols: end-of-sequence at `n` and padding at
//! `n + 1`, so a recognition head emits `l = n + 2` logits per step.
//! Text is case-folded on encode; the default alphabet is lowercase
//! `a-z` plus digits.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An ordered set of characters plus the two reserved indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Alphabet {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Alphabet {
    /// Build an alphabet from the given symbols, case-folding each one.
    /// Fails on duplicates (including duplicates introduced by folding).
    pub fn new<I: IntoIterator<Item = char>>(symbols: I) -> Result<Self> {
        let mut folded = Vec::new();
        for c in symbols {
            let mut lowered = c.to_lowercase();
            let lc = lowered.next().unwrap_or(c);
            if lowered.next().is_some() {
                return Err(Error::Validation(format!(
                    "character '{c}' does not case-fold to a single character"
                )));
            }
            folded.push(lc);
        }
        let mut index = HashMap::new();
        for (i, &c) in folded.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate alphabet symbol '{c}'"
                )));
            }
        }
        if folded.is_empty() {
            return Err(Error::Validation("alphabet must not be empty".into()));
        }
        Ok(Alphabet {
            symbols: folded,
            index,
        })
    }

    /// Lowercase `a-z` plus digits, the default.
    pub fn alnum_lowercase() -> Self {
        Alphabet::new(('a'..='z').chain('0'..='9')).expect("static alphabet is valid")
    }

    /// Number of real symbols, excluding the reserved indices.
    pub fn num_symbols(&self) -> usize {
        self.symbols.len()
    }

    /// Total logit width `l`: symbols plus EOS and PAD.
    pub fn size(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn eos_index(&self) -> usize {
        self.symbols.len()
    }

    pub fn pad_index(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn symbol_at(&self, idx: usize) -> Option<char> {
        self.symbols.get(idx).copied()
    }

    /// Encode text into symbol indices, case-folding first. Fails on any
    /// character outside the alphabet, naming the character.
    pub fn encode(&self, text: &str) -> Result<Transcription> {
        let folded = text.to_lowercase();
        let mut indices = Vec::with_capacity(folded.chars().count());
        for c in folded.chars() {
            match self.index_of(c) {
                Some(i) => indices.push(i),
                None => {
                    return Err(Error::Validation(format!(
                        "transcription contains character '{c}' outside the alphabet"
                    )))
                }
            }
        }
        Transcription::new(indices, self)
    }

    pub fn decode(&self, t: &Transcription) -> String {
        t.indices()
            .iter()
            .filter_map(|&i| self.symbol_at(i))
            .collect()
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet::alnum_lowercase()
    }
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.symbols {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl From<Alphabet> for String {
    fn from(a: Alphabet) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for Alphabet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Alphabet::new(s.chars())
    }
}

/// A word as a non-empty sequence of alphabet symbol indices. The
/// terminating EOS is implicit and appended by cost and loss terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transcription(Vec<usize>);

impl Transcription {
    /// Validate indices against an alphabet: non-empty, every index a
    /// real (non-reserved) symbol.
    pub fn new(indices: Vec<usize>, alphabet: &Alphabet) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Validation("transcription must not be empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= alphabet.num_symbols()) {
            return Err(Error::Validation(format!(
                "transcription index {bad} is not a symbol index (alphabet has {} symbols)",
                alphabet.num_symbols()
            )));
        }
        Ok(Transcription(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }
}
