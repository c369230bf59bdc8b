//! Seeded Lloyd k-means used to generate best-query candidates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{l2_distance, l2_distance_sq, mean, Embedding};
use crate::error::{Error, Result};

pub(crate) const MAX_ITERATIONS: usize = 100;
pub(crate) const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub(crate) struct Clustering {
    pub centroids: Vec<Embedding>,
    pub sizes: Vec<usize>,
}

impl Clustering {
    /// Index of the most populated cluster, lowest index on ties.
    pub fn largest(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.sizes.iter().enumerate() {
            if s > self.sizes[best] {
                best = i;
            }
        }
        best
    }
}

fn nearest(point: &Embedding, centroids: &[Embedding]) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = l2_distance_sq(point, centroid)?;
        if d < best.1 {
            best = (c, d);
        }
    }
    Ok(best)
}

/// Farthest-point seeding: the first centre is drawn from `rng`, each
/// further centre is the point farthest from all centres chosen so far.
fn init_centroids(points: &[Embedding], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Embedding>> {
    let first = rng.random_range(0..points.len());
    let mut centroids = vec![points[first].clone()];
    let mut min_dist: Vec<f64> = points
        .iter()
        .map(|p| l2_distance_sq(p, &centroids[0]))
        .collect::<Result<_>>()?;
    while centroids.len() < k {
        let mut far = 0;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > min_dist[far] {
                far = i;
            }
        }
        let next = points[far].clone();
        for (i, p) in points.iter().enumerate() {
            let d = l2_distance_sq(p, &next)?;
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
        centroids.push(next);
    }
    Ok(centroids)
}

/// Runs k-means with `k = min(k, points.len())`.
pub(crate) fn kmeans(points: &[Embedding], k: usize, seed: u64) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::Empty("k-means over no points".into()));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_centroids(points, k, &mut rng)?;
    let mut assignment = vec![0usize; points.len()];
    let mut dist = vec![0.0f64; points.len()];

    for _ in 0..MAX_ITERATIONS {
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids)?;
            assignment[i] = c;
            dist[i] = d;
        }
        reseed_empty(&mut assignment, &mut dist, k);

        let mut moved = 0.0f64;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p);
            let updated = mean(members)?;
            moved = moved.max(l2_distance(centroid, &updated)?);
            *centroid = updated;
        }
        if moved <= CONVERGENCE_TOL {
            break;
        }
    }

    let mut sizes = vec![0usize; k];
    for &a in &assignment {
        sizes[a] += 1;
    }
    Ok(Clustering { centroids, sizes })
}

/// Moves, for each empty cluster, the point farthest from its own centroid
/// (taken only from clusters with more than one member) into that cluster.
fn reseed_empty(assignment: &mut [usize], dist: &mut [f64], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..assignment.len() {
            if sizes[assignment[i]] <= 1 {
                continue;
            }
            if pick.is_none_or(|p| dist[i] > dist[p]) {
                pick = Some(i);
            }
        }
        // k ≤ n guarantees a donor exists while any cluster is empty
        let i = pick.expect("a cluster with spare members");
        sizes[assignment[i]] -= 1;
        sizes[c] += 1;
        assignment[i] = c;
        dist[i] = 0.0;
    }
}
