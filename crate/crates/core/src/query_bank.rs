//! Per-movie character best-query bank.
//!
//! Each character's portrait embeddings are clustered with k-means; the
//! cluster centroids are the candidate queries. One candidate per character
//! is then selected to maximise
//!
//! ```text
//! f(Q) = Σ_j D_ext(q_j) / (D_int(q_j) + ε)
//! ```
//!
//! where `D_int` is the mean L2 distance from `q_j` to the character's
//! portraits and `D_ext` the L2 distance to the closest other query.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, common_dim, l2_distance, Embedding};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;

pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Above this many candidate combinations selection falls back to coordinate ascent.
pub const EXHAUSTIVE_LIMIT: u64 = 4096;
pub const MAX_SWEEPS: usize = 50;

/// Reserved label for unrecognised faces; never a valid character name.
pub const UNKNOWN: &str = "Unknown";

/// Note stored in a bank built from a single character.
pub const SINGLE_CHARACTER_NOTE: &str =
    "single character: inter-class distance taken as 1, objective term is 1/(D_int + epsilon)";

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitSet {
    pub character_name: String,
    pub embeddings: Vec<Embedding>,
    pub source_ids: Vec<String>,
}

impl PortraitSet {
    pub fn new(
        character_name: impl Into<String>,
        embeddings: Vec<Embedding>,
        source_ids: Vec<String>,
    ) -> Result<Self> {
        let set = PortraitSet {
            character_name: character_name.into(),
            embeddings,
            source_ids,
        };
        set.validate()?;
        Ok(set)
    }

    /// Portrait set with generated ids `"<name>#<i>"`.
    pub fn from_embeddings(character_name: impl Into<String>, embeddings: Vec<Embedding>) -> Result<Self> {
        let name = character_name.into();
        let ids = (0..embeddings.len()).map(|i| format!("{name}#{i}")).collect();
        Self::new(name, embeddings, ids)
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    fn validate(&self) -> Result<()> {
        validate_name(&self.character_name)?;
        if self.embeddings.is_empty() {
            return Err(Error::Empty(format!(
                "portrait set for '{}' has no embeddings",
                self.character_name
            )));
        }
        common_dim(&self.embeddings)?;
        if self.source_ids.len() != self.embeddings.len() {
            return Err(Error::invalid(format!(
                "portrait set for '{}' has {} embeddings but {} source ids",
                self.character_name,
                self.embeddings.len(),
                self.source_ids.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_name(name: &str) -> Result<()> {
    if name.trim().is_empty() {
        return Err(Error::invalid("character name is empty"));
    }
    if name == UNKNOWN {
        return Err(Error::invalid(format!("'{UNKNOWN}' is reserved and cannot name a character")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankEntry {
    pub name: String,
    pub query: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryBank {
    pub movie_id: String,
    pub dim: usize,
    pub epsilon: f64,
    pub objective_value: f64,
    pub entries: Vec<BankEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl QueryBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn queries(&self) -> Vec<Embedding> {
        self.entries.iter().map(|e| e.query.clone()).collect()
    }

    /// Checks name uniqueness, dimensions and scalar fields.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::invariant("bank has no entries"));
        }
        if self.dim == 0 {
            return Err(Error::invariant("bank dim must be positive"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invariant("bank epsilon must be positive and finite"));
        }
        if !self.objective_value.is_finite() {
            return Err(Error::invariant("bank objective_value must be finite"));
        }
        let mut seen = HashSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            validate_name(&entry.name).map_err(|e| Error::invariant(format!("entries[{i}].name: {e}")))?;
            if !seen.insert(entry.name.as_str()) {
                return Err(Error::invariant(format!(
                    "entries[{i}].name: duplicate character name '{}'",
                    entry.name
                )));
            }
            if entry.query.dim() != self.dim {
                return Err(Error::invariant(format!(
                    "entries[{i}].query: dimension {} does not match bank dim {}",
                    entry.query.dim(),
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

/// Mean L2 (not squared) distance from `query` to every portrait.
pub fn intra_class_distance(query: &Embedding, portraits: &PortraitSet) -> Result<f64> {
    intra(query, &portraits.embeddings)
}

fn intra(query: &Embedding, embeddings: &[Embedding]) -> Result<f64> {
    if embeddings.is_empty() {
        return Err(Error::Empty("intra-class distance over an empty portrait set".into()));
    }
    let mut sum = 0.0;
    for e in embeddings {
        sum += l2_distance(e, query)?;
    }
    Ok(sum / embeddings.len() as f64)
}

/// Distance from query `j` to the nearest other query; `+∞` when `j` is alone.
pub fn inter_class_distance(j: usize, queries: &[Embedding]) -> Result<f64> {
    let q = queries
        .get(j)
        .ok_or_else(|| Error::invalid(format!("query index {j} out of range for {} queries", queries.len())))?;
    let mut best = f64::INFINITY;
    for (i, other) in queries.iter().enumerate() {
        if i == j {
            continue;
        }
        let d = l2_distance(q, other)?;
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

/// `Σ_j D_ext(q_j) / (D_int(q_j) + ε)`. With a single character the
/// numerator is taken as 1.
pub fn objective(queries: &[Embedding], portrait_sets: &[PortraitSet], epsilon: f64) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Empty("objective over no characters".into()));
    }
    if queries.len() != portrait_sets.len() {
        return Err(Error::invalid(format!(
            "{} queries for {} portrait sets",
            queries.len(),
            portrait_sets.len()
        )));
    }
    common_dim(queries.iter().chain(portrait_sets.iter().flat_map(|p| &p.embeddings)))?;
    let single = queries.len() == 1;
    let mut total = 0.0;
    for (j, (q, set)) in queries.iter().zip(portrait_sets).enumerate() {
        let d_int = intra_class_distance(q, set)?;
        let d_ext = if single { 1.0 } else { inter_class_distance(j, queries)? };
        total += d_ext / (d_int + epsilon);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Exhaustive when the candidate space is at most [`EXHAUSTIVE_LIMIT`].
    Auto,
    Exhaustive,
    CoordinateAscent,
}

#[derive(Debug, Clone)]
pub struct BankOptions {
    pub k_clusters: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub selection: Selection,
}

impl Default for BankOptions {
    fn default() -> Self {
        BankOptions {
            k_clusters: 2,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            selection: Selection::Auto,
        }
    }
}

/// Full result of a bank build, including every candidate considered.
#[derive(Debug, Clone)]
pub struct BankBuild {
    pub bank: QueryBank,
    /// Candidate centroids per character, in portrait-set order.
    pub candidates: Vec<Vec<Embedding>>,
    /// Chosen candidate index per character.
    pub selection: Vec<usize>,
    pub exhaustive: bool,
}

pub fn build_bank(movie_id: &str, portrait_sets: &[PortraitSet], opts: &BankOptions) -> Result<QueryBank> {
    build_bank_detailed(movie_id, portrait_sets, opts).map(|b| b.bank)
}

fn character_seed(seed: u64, j: usize) -> u64 {
    seed.wrapping_add((j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn build_bank_detailed(movie_id: &str, portrait_sets: &[PortraitSet], opts: &BankOptions) -> Result<BankBuild> {
    if portrait_sets.is_empty() {
        return Err(Error::Empty("no portrait sets to build a bank from".into()));
    }
    if opts.k_clusters == 0 {
        return Err(Error::invalid("k_clusters must be at least 1"));
    }
    if !(opts.epsilon.is_finite() && opts.epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive and finite"));
    }
    let mut names = HashSet::new();
    for set in portrait_sets {
        set.validate()?;
        if !names.insert(set.character_name.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate character '{}' in bank input",
                set.character_name
            )));
        }
    }
    let dim = common_dim(portrait_sets.iter().flat_map(|p| &p.embeddings))?;

    let clusterings = portrait_sets
        .iter()
        .enumerate()
        .map(|(j, set)| kmeans(&set.embeddings, opts.k_clusters, character_seed(opts.seed, j)))
        .collect::<Result<Vec<_>>>()?;
    let candidates: Vec<Vec<Embedding>> = clusterings.iter().map(|c| c.centroids.clone()).collect();
    let table = ObjectiveTable::new(&candidates, portrait_sets, opts.epsilon)?;

    let combos = table.combinations();
    let exhaustive = match opts.selection {
        Selection::Auto => combos <= EXHAUSTIVE_LIMIT,
        Selection::Exhaustive => true,
        Selection::CoordinateAscent => false,
    };
    let selection = if exhaustive {
        table.exhaustive_argmax()
    } else {
        let start = clusterings.iter().map(|c| c.largest()).collect();
        table.coordinate_ascent(start)
    };

    let queries: Vec<Embedding> = selection
        .iter()
        .zip(&candidates)
        .map(|(&c, cands)| cands[c].clone())
        .collect();
    let objective_value = objective(&queries, portrait_sets, opts.epsilon)?;
    let entries = portrait_sets
        .iter()
        .zip(queries)
        .map(|(set, query)| BankEntry {
            name: set.character_name.clone(),
            query,
        })
        .collect();
    let notes = if portrait_sets.len() == 1 {
        vec![SINGLE_CHARACTER_NOTE.to_string()]
    } else {
        Vec::new()
    };
    Ok(BankBuild {
        bank: QueryBank {
            movie_id: movie_id.to_string(),
            dim,
            epsilon: opts.epsilon,
            objective_value,
            entries,
            notes,
        },
        candidates,
        selection,
        exhaustive,
    })
}

/// Precomputed intra-class distances per candidate and pairwise candidate
/// distances, so a combination is scored without touching the portraits.
/// The arithmetic mirrors [`objective`] term for term, so scores agree bit for bit.
struct ObjectiveTable {
    counts: Vec<usize>,
    offsets: Vec<usize>,
    d_int: Vec<f64>,
    pair: Vec<f64>,
    total: usize,
    epsilon: f64,
}

impl ObjectiveTable {
    fn new(candidates: &[Vec<Embedding>], sets: &[PortraitSet], epsilon: f64) -> Result<Self> {
        let counts: Vec<usize> = candidates.iter().map(Vec::len).collect();
        let mut offsets = Vec::with_capacity(counts.len());
        let mut total = 0;
        for &c in &counts {
            offsets.push(total);
            total += c;
        }
        let flat: Vec<&Embedding> = candidates.iter().flatten().collect();
        let mut d_int = Vec::with_capacity(total);
        for (cands, set) in candidates.iter().zip(sets) {
            for c in cands {
                d_int.push(intra(c, &set.embeddings)?);
            }
        }
        let mut pair = vec![0.0; total * total];
        for a in 0..total {
            for b in (a + 1)..total {
                let d = l2_distance(flat[a], flat[b])?;
                pair[a * total + b] = d;
                pair[b * total + a] = d;
            }
        }
        Ok(ObjectiveTable {
            counts,
            offsets,
            d_int,
            pair,
            total,
            epsilon,
        })
    }

    fn combinations(&self) -> u64 {
        self.counts
            .iter()
            .try_fold(1u64, |acc, &c| acc.checked_mul(c as u64))
            .unwrap_or(u64::MAX)
    }

    fn value(&self, sel: &[usize]) -> f64 {
        let single = sel.len() == 1;
        let mut total = 0.0;
        for (j, &c) in sel.iter().enumerate() {
            let a = self.offsets[j] + c;
            let d_ext = if single {
                1.0
            } else {
                let mut best = f64::INFINITY;
                for (k, &ck) in sel.iter().enumerate() {
                    if k == j {
                        continue;
                    }
                    let d = self.pair[a * self.total + self.offsets[k] + ck];
                    if d < best {
                        best = d;
                    }
                }
                best
            };
            total += d_ext / (self.d_int[a] + self.epsilon);
        }
        total
    }

    /// Mixed-radix decode with the first character most significant, so
    /// index order is lexicographic order over selections.
    fn decode(&self, mut idx: u64, out: &mut [usize]) {
        for j in (0..self.counts.len()).rev() {
            let k = self.counts[j] as u64;
            out[j] = (idx % k) as usize;
            idx /= k;
        }
    }

    /// Maximum over every combination; ties go to the lexicographically
    /// smallest selection. Parallel reduction is order-independent.
    fn exhaustive_argmax(&self) -> Vec<usize> {
        let n = self.combinations();
        let j = self.counts.len();
        let (_, best) = (0..n)
            .into_par_iter()
            .map_init(
                || vec![0usize; j],
                |buf, idx| {
                    self.decode(idx, buf);
                    (self.value(buf), idx)
                },
            )
            .reduce(
                || (f64::NEG_INFINITY, u64::MAX),
                |a, b| {
                    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                        b
                    } else {
                        a
                    }
                },
            );
        let mut sel = vec![0usize; j];
        self.decode(best, &mut sel);
        sel
    }

    fn coordinate_ascent(&self, mut sel: Vec<usize>) -> Vec<usize> {
        for _ in 0..MAX_SWEEPS {
            let mut changed = false;
            for j in 0..sel.len() {
                let current = sel[j];
                let mut best = (self.value(&sel), current);
                for c in 0..self.counts[j] {
                    if c == current {
                        continue;
                    }
                    sel[j] = c;
                    let v = self.value(&sel);
                    if v > best.0 {
                        best = (v, c);
                    }
                }
                sel[j] = best.1;
                changed |= best.1 != current;
            }
            if !changed {
                break;
            }
        }
        sel
    }
}

pub fn save_bank(bank: &QueryBank, path: &Path) -> Result<()> {
    bank.validate()?;
    crate::io::write_json(path, bank)
}

pub fn load_bank(path: &Path) -> Result<QueryBank> {
    let bank: QueryBank = crate::io::read_json(path)?;
    bank.validate()
        .map_err(|e| Error::parse(path, 0, "entries", e.to_string()))?;
    Ok(bank)
}

/// One portrait row in a JSONL portrait file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitRecord {
    pub character: String,
    pub id: String,
    pub vector: Embedding,
}

/// Groups portrait rows by character, in order of first appearance.
pub fn portrait_sets_from_records(records: Vec<PortraitRecord>) -> Result<Vec<PortraitSet>> {
    let mut sets: Vec<PortraitSet> = Vec::new();
    for r in records {
        match sets.iter_mut().find(|s| s.character_name == r.character) {
            Some(s) => {
                s.embeddings.push(r.vector);
                s.source_ids.push(r.id);
            }
            None => sets.push(PortraitSet {
                character_name: r.character,
                embeddings: vec![r.vector],
                source_ids: vec![r.id],
            }),
        }
    }
    for s in &sets {
        s.validate()?;
    }
    Ok(sets)
}

pub fn load_portraits(path: &Path) -> Result<Vec<PortraitSet>> {
    let rows = crate::io::read_jsonl::<PortraitRecord>(path)?;
    let mut dim = None;
    for row in &rows {
        validate_name(&row.value.character)
            .map_err(|e| Error::parse(path, row.line, "character", e.to_string()))?;
        let d = row.value.vector.dim();
        if *dim.get_or_insert(d) != d {
            return Err(Error::parse(
                path,
                row.line,
                "vector",
                format!("dimension {d} differs from earlier rows ({})", dim.unwrap()),
            ));
        }
    }
    portrait_sets_from_records(rows.into_iter().map(|r| r.value).collect())
}

/// Checks that `e` has the bank's dimension.
pub(crate) fn check_query_dim(bank: &QueryBank, e: &Embedding) -> Result<()> {
    check_dims(&bank.entries[0].query, e)
}
