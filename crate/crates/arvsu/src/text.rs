//! Utterance tokenisation, vocabulary construction and pretrained word
//! embeddings.
//!
//! The vocabulary reserves index 0 for unknown tokens (`<oov>`) and index 1
//! for padding (`<pad>`); real tokens start at index 2, ordered by corpus
//! frequency (descending) with alphabetical tie-breaks so the mapping is
//! reproducible. Tokenisation cannot produce the reserved spellings because
//! it strips the angle brackets.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const OOV_INDEX: usize = 0;
pub const PAD_INDEX: usize = 1;
pub const OOV_TOKEN: &str = "<oov>";
pub const PAD_TOKEN: &str = "<pad>";

/// Lowercase, split on whitespace, and trim non-alphanumeric characters
/// from both ends of each piece. Pieces that trim to nothing are dropped;
/// interior punctuation (as in `don't`) survives.
pub fn tokenize(utterance: &str) -> Vec<String> {
    utterance
        .to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token-to-index mapping with two reserved entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from tokenised documents, keeping tokens seen at least
    /// `min_count` times.
    pub fn build<'a, I>(docs: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for tok in doc {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens = Vec::with_capacity(kept.len() + 2);
        tokens.push(OOV_TOKEN.to_string());
        tokens.push(PAD_TOKEN.to_string());
        tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Self::from_ordered(tokens).expect("built list is valid by construction")
    }

    /// Rebuild from an index-ordered token list (checkpoint loading). The
    /// list must start with the two reserved entries and contain no
    /// duplicates.
    pub fn from_ordered(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != OOV_TOKEN || tokens[1] != PAD_TOKEN {
            return Err(Error::InvalidConfig(format!(
                "vocabulary must start with `{OOV_TOKEN}`, `{PAD_TOKEN}`"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds the reserved entries
    }

    /// Index of `token`, or [`OOV_INDEX`] when absent.
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_INDEX)
    }

    /// Exact position lookup that does not fall back to OOV.
    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// Tokens in index order (reserved entries first).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Map tokens to indices, unknown tokens to [`OOV_INDEX`].
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t)).collect()
    }
}

/// Outcome of loading a pretrained embedding file against a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadStats {
    /// Non-blank lines inspected.
    pub lines: usize,
    /// Lines that failed to parse at the established width and were skipped.
    pub malformed: usize,
    /// Vocabulary entries found in the file.
    pub matched: usize,
    /// Vocabulary entries absent from the file (randomly initialised).
    pub missing: usize,
}

/// Load whitespace-separated `token v1 .. vd` vectors into an embedding
/// table aligned with `vocab`.
///
/// The first line that parses establishes the file's vector width, which
/// must equal `embed_dim`. Later lines that fail to parse at that width are
/// counted in [`LoadStats::malformed`] and skipped; for duplicated tokens
/// the first occurrence wins. Vocabulary tokens absent from the file get
/// `U(-0.05, 0.05)` rows from `rng`; the two reserved rows stay zero.
pub fn load_pretrained(
    path: &Path,
    vocab: &Vocabulary,
    embed_dim: usize,
    rng: &mut Rng,
) -> Result<(Tensor, LoadStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut table = Tensor::zeros(vec![vocab.len(), embed_dim]);
    let mut covered = vec![false; vocab.len()];
    let mut stats = LoadStats::default();
    let mut established: Option<usize> = None;

    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;

        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            stats.malformed += 1;
            continue;
        };
        let values: Option<Vec<f64>> = fields.map(|f| f.parse::<f64>().ok()).collect();
        let Some(values) = values.filter(|v| !v.is_empty()) else {
            stats.malformed += 1;
            continue;
        };

        match established {
            None => {
                if values.len() != embed_dim {
                    return Err(Error::ConfigMismatch(format!(
                        "embedding file {} has {}-dimensional vectors, expected {}",
                        path.display(),
                        values.len(),
                        embed_dim
                    )));
                }
                established = Some(values.len());
            }
            Some(d) if values.len() != d => {
                stats.malformed += 1;
                continue;
            }
            Some(_) => {}
        }

        if let Some(idx) = vocab.position(token) {
            if idx >= 2 && !covered[idx] {
                table.data_mut()[idx * embed_dim..(idx + 1) * embed_dim].copy_from_slice(&values);
                covered[idx] = true;
                stats.matched += 1;
            }
        }
    }

    for idx in 2..vocab.len() {
        if !covered[idx] {
            for j in 0..embed_dim {
                table.data_mut()[idx * embed_dim + j] = rng.uniform(-0.05, 0.05);
            }
            stats.missing += 1;
        }
    }
    Ok((table, stats))
}
