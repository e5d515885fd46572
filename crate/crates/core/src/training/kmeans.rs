use alloc::vec;
use alloc::vec::Vec;

use crate::error::{QuantError, Result};
use crate::grid::Codebook;
use crate::leaf::nearest;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Mean squared distance to the assigned centroid, one entry per
    /// assignment pass. The last entry belongs to the returned codebook.
    pub objective: Vec<f64>,
    pub assignments: Vec<u32>,
}

impl KMeansFit {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("at least one assignment pass")
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(samples: &[f64], dim: usize, clusters: usize, rng: &mut Rng) -> Vec<f64> {
    let count = samples.len() / dim;
    let row = |i: usize| &samples[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(clusters * dim);
    let first = rng.below(count as u64) as usize;
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..count).map(|i| sq_dist(row(i), row(first))).collect();
    while centroids.len() < clusters * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the final sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            rng.below(count as u64) as usize
        };
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), row(pick)));
        }
    }
    centroids
}

/// Lloyd's k-means over `samples` (row-major, `dim` columns) with k-means++
/// seeding.
///
/// Stops after `iters` updates or once an assignment pass changes nothing.
/// A cluster left empty by an update is reseeded at the sample farthest from
/// its centroid, so the objective never increases.
pub fn kmeans_fit(samples: &[f64], dim: usize, clusters: usize, iters: usize, rng: &mut Rng) -> Result<KMeansFit> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(QuantError::InvalidLength {
            expected: dim.max(1) * (samples.len() / dim.max(1)),
            found: samples.len(),
        });
    }
    if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
        return Err(QuantError::NonFinite { index });
    }
    let count = samples.len() / dim;
    if clusters == 0 || count < clusters {
        return Err(QuantError::InsufficientSamples { samples: count, clusters });
    }
    let row = |i: usize| &samples[i * dim..(i + 1) * dim];

    let mut codebook = Codebook::new(clusters, dim, plus_plus_init(samples, dim, clusters, rng))?;
    let mut assignments = vec![u32::MAX; count];
    let mut distances = vec![0.0; count];
    let mut objective = Vec::with_capacity(iters + 1);

    let assign = |codebook: &Codebook, assignments: &mut [u32], distances: &mut [f64]| -> (f64, bool) {
        let mut changed = false;
        let mut total = 0.0;
        for i in 0..count {
            let (code, d) = nearest(row(i), codebook);
            changed |= assignments[i] != code;
            assignments[i] = code;
            distances[i] = d;
            total += d;
        }
        (total / count as f64, changed)
    };

    let mut converged = false;
    for _ in 0..iters {
        let (obj, changed) = assign(&codebook, &mut assignments, &mut distances);
        objective.push(obj);
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![0.0; clusters * dim];
        let mut counts = vec![0usize; clusters];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a as usize] += 1;
            for (s, x) in sums[a as usize * dim..(a as usize + 1) * dim].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        let mut far: Vec<usize> = (0..count).filter(|&i| distances[i] > 0.0).collect();
        far.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for j in 0..clusters {
            let centroid = codebook.codeword_mut(j);
            if counts[j] > 0 {
                let n = counts[j] as f64;
                for (c, s) in centroid.iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                    *c = s / n;
                }
            } else if let Some(i) = far.next() {
                centroid.copy_from_slice(row(i));
            }
        }
    }
    if !converged {
        let (obj, _) = assign(&codebook, &mut assignments, &mut distances);
        objective.push(obj);
    }
    Ok(KMeansFit { codebook, objective, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn as_many_clusters_as_samples() {
        let samples = [0.0, 0.0, 1.0, 2.0, -3.0, 0.5, 4.0, 4.0];
        let fit = kmeans_fit(&samples, 2, 4, 10, &mut Rng::new(1)).unwrap();
        assert_eq!(fit.final_objective(), 0.0);
        let mut rows: Vec<Vec<f64>> = fit.codebook.codewords().map(|c| c.to_vec()).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(rows, vec![vec![-3.0, 0.5], vec![0.0, 0.0], vec![1.0, 2.0], vec![4.0, 4.0]]);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(
            kmeans_fit(&[1.0, 2.0], 1, 3, 5, &mut Rng::new(0)),
            Err(QuantError::InsufficientSamples { samples: 2, clusters: 3 })
        );
        assert!(matches!(kmeans_fit(&[1.0, f64::NAN], 1, 1, 5, &mut Rng::new(0)), Err(QuantError::NonFinite { .. })));
    }

    #[test]
    fn duplicate_samples_do_not_break_seeding() {
        let samples = [1.0; 10];
        let fit = kmeans_fit(&samples, 1, 3, 5, &mut Rng::new(2)).unwrap();
        assert_eq!(fit.final_objective(), 0.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = Rng::new(9);
        let samples: Vec<f64> = (0..300).map(|_| rng.next_gaussian()).collect();
        let a = kmeans_fit(&samples, 3, 8, 20, &mut Rng::new(5)).unwrap();
        let b = kmeans_fit(&samples, 3, 8, 20, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_monotone() {
        let mut rng = Rng::new(10);
        let samples: Vec<f64> = (0..2000).map(|_| rng.next_gaussian()).collect();
        let fit = kmeans_fit(&samples, 4, 16, 20, &mut rng).unwrap();
        for w in fit.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }
}
