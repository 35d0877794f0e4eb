//! Token sequences over a small synthetic alphabet.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Number of text symbols; ids `0..N_TEXT_SYMBOLS`.
pub const N_TEXT_SYMBOLS: usize = 16;
pub const START: usize = N_TEXT_SYMBOLS;
pub const END: usize = N_TEXT_SYMBOLS + 1;
/// Text symbols plus start and end markers.
pub const VOCAB_SIZE: usize = N_TEXT_SYMBOLS + 2;

/// A non-empty list of token ids, start and end markers included.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SymbolSequence {
    ids: Vec<usize>,
}

impl SymbolSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(invalid("symbol sequence is empty"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= VOCAB_SIZE) {
            return Err(invalid(format!("symbol id {bad} outside alphabet of {VOCAB_SIZE}")));
        }
        Ok(SymbolSequence { ids })
    }

    /// Wraps text symbols in start and end markers.
    pub fn from_text(text: &[usize]) -> Result<Self> {
        if text.iter().any(|&i| i >= N_TEXT_SYMBOLS) {
            return Err(invalid("text symbols must be below the marker ids"));
        }
        let mut ids = Vec::with_capacity(text.len() + 2);
        ids.push(START);
        ids.extend_from_slice(text);
        ids.push(END);
        SymbolSequence::new(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl TryFrom<Vec<usize>> for SymbolSequence {
    type Error = crate::error::Error;

    fn try_from(ids: Vec<usize>) -> Result<Self> {
        SymbolSequence::new(ids)
    }
}

impl From<SymbolSequence> for Vec<usize> {
    fn from(s: SymbolSequence) -> Self {
        s.ids
    }
}
