//! Fixed-dimension real vectors and the distances shared by every stage.
//!
//! All arithmetic is carried out in `f64` and summed in natural index order,
//! so every function here is bit-reproducible and symmetric where the math is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense real vector. The dimension is the vector length and is always ≥ 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding has no components".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("embedding component {i} is not finite")));
        }
        Ok(Embedding { values })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Whether the L2 norm is 1 within `tol`.
    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    pub fn scaled(&self, s: f64) -> Embedding {
        Embedding {
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

pub(crate) fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Squared Euclidean distance, `Σ (a_i − b_i)²`.
pub fn l2_distance_sq(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum())
}

/// Plain (non-squared) Euclidean distance.
pub fn l2_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    l2_distance_sq(a, b).map(f64::sqrt)
}

pub fn dot(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum())
}

/// Cosine similarity clamped to `[-1, 1]`.
///
/// The denominator is `sqrt(|a|²·|b|²)`, which makes `cos(a, a)` exactly 1.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    let na = a.norm_sq();
    if na == 0.0 {
        return Err(Error::ZeroNorm("left operand of cosine similarity".into()));
    }
    let nb = b.norm_sq();
    if nb == 0.0 {
        return Err(Error::ZeroNorm("right operand of cosine similarity".into()));
    }
    let sim = dot(a, b)? / (na * nb).sqrt();
    Ok(sim.clamp(-1.0, 1.0))
}

pub fn normalize(a: &Embedding) -> Result<Embedding> {
    let n = a.norm();
    if n == 0.0 {
        return Err(Error::ZeroNorm("cannot normalize the zero vector".into()));
    }
    Ok(Embedding {
        values: a.values.iter().map(|v| v / n).collect(),
    })
}

/// Element-wise arithmetic mean, accumulated in input order.
pub fn mean<'a, I>(items: I) -> Result<Embedding>
where
    I: IntoIterator<Item = &'a Embedding>,
{
    let mut iter = items.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Empty("mean of no embeddings".into()))?;
    let mut acc = first.values.clone();
    let mut n = 1usize;
    for e in iter {
        check_dims(first, e)?;
        for (a, v) in acc.iter_mut().zip(&e.values) {
            *a += v;
        }
        n += 1;
    }
    let n = n as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(Embedding { values: acc })
}

/// Ensures every embedding in `items` shares one dimension and returns it.
pub fn common_dim<'a, I>(items: I) -> Result<usize>
where
    I: IntoIterator<Item = &'a Embedding>,
{
    let mut dim = None;
    for e in items {
        match dim {
            None => dim = Some(e.dim()),
            Some(d) if d != e.dim() => {
                return Err(Error::DimMismatch {
                    left: d,
                    right: e.dim(),
                })
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| Error::Empty("no embeddings".into()))
}
