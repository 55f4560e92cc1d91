//! L2-regularized logistic regression for the propensity score.

use crate::error::{Error, Result};
use crate::numerics::{dot, Cholesky, Matrix};

pub const CLIP: (f64, f64) = (0.01, 0.99);
const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    coef: Vec<f64>,
    intercept: f64,
    l2: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl PropensityModel {
    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    /// Unclipped probabilities.
    pub fn predict_raw(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.coef.len() {
            return Err(Error::DimensionMismatch {
                context: "propensity input width",
                expected: self.coef.len(),
                found: x.cols(),
            });
        }
        Ok(x.row_iter()
            .map(|r| sigmoid(self.intercept + dot(&self.coef, r)))
            .collect())
    }

    /// Probabilities clipped to `[0.01, 0.99]`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .predict_raw(x)?
            .into_iter()
            .map(|p| p.clamp(CLIP.0, CLIP.1))
            .collect())
    }
}

/// Minimizes `Σ log-loss + (l2 / 2)‖w‖²` (intercept unpenalized) by damped
/// Newton iterations.
pub fn propensity_fit(x: &Matrix, a: &[bool], l2: f64) -> Result<PropensityModel> {
    let (n, d) = x.shape();
    if a.len() != n {
        return Err(Error::DimensionMismatch {
            context: "treatment length",
            expected: n,
            found: a.len(),
        });
    }
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(Error::Config(format!("propensity l2 must be positive, got {l2}")));
    }
    let treated = a.iter().filter(|&&t| t).count();
    if treated == 0 {
        return Err(Error::EmptyArm("treated"));
    }
    if treated == n {
        return Err(Error::EmptyArm("control"));
    }
    let t: Vec<f64> = a.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let objective = |theta: &[f64]| -> f64 {
        let pen = 0.5 * l2 * dot(&theta[1..], &theta[1..]);
        x.row_iter()
            .zip(&t)
            .map(|(r, ti)| {
                let z = theta[0] + dot(&theta[1..], r);
                softplus(z) - ti * z
            })
            .sum::<f64>()
            + pen
    };

    let base = treated as f64 / n as f64;
    let mut theta = vec![0.0; d + 1];
    theta[0] = (base / (1.0 - base)).ln();
    let mut f = objective(&theta);
    for iter in 0..MAX_ITER {
        let mut g = vec![0.0; d + 1];
        let mut h = Matrix::zeros(d + 1, d + 1);
        let mut xt = vec![1.0; d + 1];
        for (r, ti) in x.row_iter().zip(&t) {
            xt[1..].copy_from_slice(r);
            let p = sigmoid(dot(&theta, &xt));
            let s = p * (1.0 - p);
            for i in 0..=d {
                g[i] += (p - ti) * xt[i];
                let row = h.row_mut(i);
                for j in 0..=d {
                    row[j] += s * xt[i] * xt[j];
                }
            }
        }
        for i in 1..=d {
            g[i] += l2 * theta[i];
            h.row_mut(i)[i] += l2;
        }
        h.row_mut(0)[0] += 1e-10;
        let gnorm = dot(&g, &g).sqrt() / n as f64;
        if gnorm < TOL {
            log::debug!("propensity converged after {iter} Newton steps");
            break;
        }
        let step = Cholesky::factor(&h)?.solve(&g);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(v, s)| v - scale * s).collect();
            let fc = objective(&cand);
            if fc <= f {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("propensity coefficients"));
    }
    let model = PropensityModel {
        intercept: theta[0],
        coef: theta[1..].to_vec(),
        l2,
    };
    let raw = model.predict_raw(x)?;
    if raw.iter().any(|&p| !(CLIP.0..=CLIP.1).contains(&p)) {
        log::warn!("propensity estimates reach the clipping bounds; treatment is nearly separable");
    }
    Ok(model)
}
