//! Lloyd's k-means with k-means++ seeding. The fitted centroids define the
//! disjoint covariate subsets that each carry their own EBM.

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionModel {
    centroids: Matrix,
    inertia: f64,
    inertia_trace: Vec<f64>,
}

impl PartitionModel {
    pub(crate) fn from_parts(centroids: Matrix, inertia: f64) -> Self {
        PartitionModel {
            centroids,
            inertia,
            inertia_trace: vec![inertia],
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    /// Sum of squared distances of the training points to their centroid.
    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub fn inertia_trace(&self) -> &[f64] {
        &self.inertia_trace
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn assign(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }

    pub fn assign_all(&self, x: &Matrix) -> Result<Vec<usize>> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "partition input",
                expected: self.dim(),
                found: x.cols(),
            });
        }
        Ok(x.row_iter().map(|r| self.assign(r)).collect())
    }
}

fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.row_iter().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_points(x: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>, f64) {
    let mut labels = Vec::with_capacity(x.rows());
    let mut dists = Vec::with_capacity(x.rows());
    let mut inertia = 0.0;
    for r in x.row_iter() {
        let (j, d) = nearest(centroids, r);
        labels.push(j);
        dists.push(d);
        inertia += d;
    }
    (labels, dists, inertia)
}

fn kmeans_plus_plus(x: &Matrix, k: usize, rng: &mut SeededRng) -> Result<Matrix> {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = x.row_iter().map(|r| squared_distance(r, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::TooFewSamples {
                needed: k,
                got: c,
            });
        }
        let target = rng.uniform() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if acc > target && d > 0.0 {
                pick = i;
                break;
            }
        }
        // guard against landing on a zero-weight tail through round-off
        if d2[pick] == 0.0 {
            pick = (0..n).rev().find(|&i| d2[i] > 0.0).expect("total > 0");
        }
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, r) in x.row_iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(r, x.row(pick)));
        }
    }
    Ok(centroids)
}

/// Fits `k` centroids to the rows of `x`.
///
/// Lloyd iterations stop at an assignment fixpoint, when inertia improves
/// by less than `tol`, or after `max_iter` updates. A cluster that empties
/// out is re-seeded at the point farthest from its own centroid.
pub fn kmeans_fit(
    x: &Matrix,
    k: usize,
    rng: &mut SeededRng,
    max_iter: usize,
    tol: f64,
) -> Result<PartitionModel> {
    if k == 0 {
        return Err(Error::InvalidDimension("k must be at least 1".into()));
    }
    if max_iter == 0 || !(tol >= 0.0) {
        return Err(Error::Config("kmeans needs max_iter >= 1 and tol >= 0".into()));
    }
    let n = x.rows();
    if n < k {
        return Err(Error::TooFewSamples { needed: k, got: n });
    }
    let d = x.cols();
    let mut centroids = kmeans_plus_plus(x, k, rng)?;
    let (mut labels, mut dists, mut inertia) = assign_points(x, &centroids);
    let mut trace = vec![inertia];

    for _ in 0..max_iter {
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &j) in labels.iter().enumerate() {
            counts[j] += 1;
            for (s, v) in sums.row_mut(j).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                for (dst, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *dst = s / c;
                }
            } else {
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("n >= k leaves a candidate");
                taken.push(far);
                log::debug!("kmeans: re-seeding empty cluster {j} at point {far}");
                centroids.row_mut(j).copy_from_slice(x.row(far));
            }
        }
        let (new_labels, new_dists, new_inertia) = assign_points(x, &centroids);
        trace.push(new_inertia);
        let changed = new_labels != labels;
        let gain = inertia - new_inertia;
        labels = new_labels;
        dists = new_dists;
        inertia = new_inertia;
        if !changed || gain < tol {
            break;
        }
    }

    Ok(PartitionModel {
        centroids,
        inertia,
        inertia_trace: trace,
    })
}
