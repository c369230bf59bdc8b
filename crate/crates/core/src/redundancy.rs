//! Redundancy score of a generated description against a reference.
//!
//! Each content word of the generated text is compared with every content
//! word of the reference. If its best cosine similarity `m` is below `θ` it
//! is flagged and contributes `1 − m`; otherwise it contributes 0. The score
//! is the mean contribution over the generated content words, lower is better.
//!
//! Tokenisation: lowercase, split on every non-alphanumeric character, drop
//! empty pieces. Words outside the vocabulary or in the stop set are skipped
//! on both sides. Similarities below zero count as zero, keeping every
//! contribution in `[0, 1]`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{common_dim, cosine_similarity, Embedding};
use crate::error::{Error, Result};

pub const DEFAULT_THETA: f64 = 0.5;

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct WordVectorLookup {
    vocabulary: HashMap<String, Embedding>,
    stop_set: HashSet<String>,
}

impl WordVectorLookup {
    pub fn new(vocabulary: HashMap<String, Embedding>, stop_set: HashSet<String>) -> Result<Self> {
        common_dim(vocabulary.values())?;
        if let Some(w) = vocabulary.iter().find(|(_, v)| v.norm_sq() == 0.0).map(|(w, _)| w) {
            return Err(Error::ZeroNorm(format!("word vector for '{w}'")));
        }
        let stop_set = stop_set.into_iter().map(|w| w.to_lowercase()).collect();
        let vocabulary = vocabulary.into_iter().map(|(w, v)| (w.to_lowercase(), v)).collect();
        Ok(WordVectorLookup { vocabulary, stop_set })
    }

    /// The vector of a content word, `None` for stopwords and unknown words.
    pub fn content_vector(&self, word: &str) -> Option<&Embedding> {
        if self.stop_set.contains(word) {
            return None;
        }
        self.vocabulary.get(word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocabulary.contains_key(word)
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stop_set.contains(word)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordRecord {
    word: String,
    vector: Embedding,
}

/// Loads `{"word","vector"}` rows and an optional stopword list (one word per line).
pub fn load_lookup(vectors: &Path, stopwords: Option<&Path>) -> Result<WordVectorLookup> {
    let rows = crate::io::read_jsonl::<WordRecord>(vectors)?;
    let mut vocabulary = HashMap::new();
    let mut dim = None;
    for row in rows {
        let d = row.value.vector.dim();
        if *dim.get_or_insert(d) != d {
            return Err(Error::parse(vectors, row.line, "vector", format!("dimension {d} differs from earlier rows")));
        }
        if row.value.vector.norm_sq() == 0.0 {
            return Err(Error::parse(vectors, row.line, "vector", "zero vector"));
        }
        vocabulary.insert(row.value.word.to_lowercase(), row.value.vector);
    }
    let stop_set = match stopwords {
        Some(p) => crate::io::read_to_string(p)?
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty() && !w.starts_with('#'))
            .map(str::to_string)
            .collect(),
        None => HashSet::new(),
    };
    WordVectorLookup::new(vocabulary, stop_set)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("theta must lie in (0, 1], got {theta}")));
    }
    Ok(())
}

fn best_similarity(word: &Embedding, reference: &[&Embedding]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for r in reference {
        best = best.max(cosine_similarity(word, r)?);
    }
    Ok(best.max(0.0))
}

/// `1 − m` if the best similarity `m` to the reference is below `theta`, else 0.
pub fn word_redundancy(word: &Embedding, reference: &[Embedding], theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if reference.is_empty() {
        return Err(Error::Empty("redundancy against an empty reference".into()));
    }
    let refs: Vec<&Embedding> = reference.iter().collect();
    let m = best_similarity(word, &refs)?;
    Ok(if m < theta { 1.0 - m } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub word: String,
    pub max_similarity: f64,
    pub flagged: bool,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport {
    pub score: f64,
    pub per_word: Vec<WordScore>,
    pub valid_count: usize,
    /// Generated words that were stopwords or out of vocabulary.
    pub skipped: Vec<String>,
    pub warning: Option<String>,
}

pub fn sentence_redundancy(
    generated: &str,
    ground_truth: &str,
    lookup: &WordVectorLookup,
    theta: f64,
) -> Result<RedundancyReport> {
    check_theta(theta)?;
    let reference: Vec<&Embedding> = tokenize(ground_truth)
        .iter()
        .filter_map(|w| lookup.content_vector(w))
        .collect();

    let mut per_word = Vec::new();
    let mut skipped = Vec::new();
    for word in tokenize(generated) {
        let Some(v) = lookup.content_vector(&word) else {
            skipped.push(word);
            continue;
        };
        // an empty reference leaves nothing to match: every content word is redundant
        let m = if reference.is_empty() { 0.0 } else { best_similarity(v, &reference)? };
        let flagged = m < theta;
        per_word.push(WordScore {
            word,
            max_similarity: m,
            flagged,
            contribution: if flagged { 1.0 - m } else { 0.0 },
        });
    }
    let valid_count = per_word.len();
    let (score, warning) = if valid_count == 0 {
        (0.0, Some("generated text has no in-vocabulary content words".to_string()))
    } else {
        let total: f64 = per_word.iter().map(|w| w.contribution).sum();
        ((total / valid_count as f64).clamp(0.0, 1.0), None)
    };
    Ok(RedundancyReport {
        score,
        per_word,
        valid_count,
        skipped,
        warning,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub id: String,
    pub generated: String,
    pub ground_truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub valid_count: usize,
}

pub fn score_batch(requests: &[ScoreRequest], lookup: &WordVectorLookup, theta: f64) -> Result<Vec<ScoreRecord>> {
    requests
        .iter()
        .map(|r| {
            let report = sentence_redundancy(&r.generated, &r.ground_truth, lookup, theta)?;
            Ok(ScoreRecord {
                id: r.id.clone(),
                score: report.score,
                valid_count: report.valid_count,
            })
        })
        .collect()
}
