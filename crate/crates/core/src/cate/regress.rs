//! Ridge and RBF kernel ridge base regressors, with optional per-row
//! weights and k-fold selection of their hyperparameters.

use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{dot, squared_distance, Cholesky, Matrix, SeededRng};

const LAMBDA_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
/// Bandwidths are these multiples of `1 / d`.
const GAMMA_GRID: [f64; 4] = [0.1, 0.3, 1.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    Ridge,
    KernelRidge,
}

impl FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridge" => Ok(BaseKind::Ridge),
            "kernel_ridge" | "kernel-ridge" | "krr" => Ok(BaseKind::KernelRidge),
            other => Err(Error::Config(format!(
                "unknown base regressor `{other}`; valid kinds: ridge, kernel_ridge"
            ))),
        }
    }
}

/// How to build a base regressor. Unset hyperparameters are chosen by
/// cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSpec {
    pub kind: BaseKind,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub folds: usize,
    pub cv_seed: u64,
    /// Larger training sets are subsampled to this many rows for the
    /// hyperparameter search only.
    pub cv_max_rows: usize,
}

impl Default for BaseSpec {
    fn default() -> Self {
        BaseSpec {
            kind: BaseKind::KernelRidge,
            lambda: None,
            gamma: None,
            folds: 5,
            cv_seed: 0,
            cv_max_rows: 500,
        }
    }
}

impl BaseSpec {
    pub fn ridge(lambda: f64) -> Self {
        BaseSpec {
            kind: BaseKind::Ridge,
            lambda: Some(lambda),
            ..BaseSpec::default()
        }
    }

    pub fn kernel_ridge(lambda: f64, gamma: f64) -> Self {
        BaseSpec {
            kind: BaseKind::KernelRidge,
            lambda: Some(lambda),
            gamma: Some(gamma),
            ..BaseSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be positive, got {l}")));
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        if self.folds < 2 {
            return Err(Error::Config("cross-validation needs at least 2 folds".into()));
        }
        Ok(())
    }

    pub fn fit(&self, x: &Matrix, y: &[f64]) -> Result<Regressor> {
        self.fit_weighted(x, y, None)
    }

    /// Minimizes `Σ w_i (y_i − f(x_i))² + λ‖f‖²`.
    pub fn fit_weighted(&self, x: &Matrix, y: &[f64], w: Option<&[f64]>) -> Result<Regressor> {
        self.validate()?;
        let (lambda, gamma) = self.select(x, y, w)?;
        fit_with(self.kind, x, y, w, lambda, gamma)
    }

    fn candidates(&self, d: usize) -> Vec<(f64, f64)> {
        let lambdas: Vec<f64> = self.lambda.map_or(LAMBDA_GRID.to_vec(), |l| vec![l]);
        let gammas: Vec<f64> = match (self.kind, self.gamma) {
            (BaseKind::Ridge, _) => vec![0.0],
            (_, Some(g)) => vec![g],
            (_, None) => GAMMA_GRID.iter().map(|g| g / d as f64).collect(),
        };
        gammas
            .iter()
            .flat_map(|&g| lambdas.iter().map(move |&l| (l, g)))
            .collect()
    }

    fn select(&self, x: &Matrix, y: &[f64], w: Option<&[f64]>) -> Result<(f64, f64)> {
        let grid = self.candidates(x.cols());
        if grid.len() == 1 {
            return Ok(grid[0]);
        }
        let n = x.rows();
        let mut rows: Vec<usize> = (0..n).collect();
        let mut rng = SeededRng::new(self.cv_seed);
        if n > self.cv_max_rows {
            rows = rng.permutation(n);
            rows.truncate(self.cv_max_rows);
            rows.sort_unstable();
        }
        let m = rows.len();
        if m < 2 * self.folds {
            let fallback = (1.0, 1.0 / x.cols() as f64);
            log::debug!("too few rows for {}-fold search; using {fallback:?}", self.folds);
            return Ok((self.lambda.unwrap_or(fallback.0), self.gamma.unwrap_or(fallback.1)));
        }
        let order = rng.split(1).permutation(m);
        let mut fold_of = vec![0; m];
        for (p, &i) in order.iter().enumerate() {
            fold_of[i] = p % self.folds;
        }
        let sub_x = x.select_rows(&rows);
        let sub_y: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let sub_w: Option<Vec<f64>> = w.map(|w| rows.iter().map(|&i| w[i]).collect());

        let mut errs = vec![0.0; grid.len()];
        for f in 0..self.folds {
            let tr: Vec<usize> = (0..m).filter(|&i| fold_of[i] != f).collect();
            let te: Vec<usize> = (0..m).filter(|&i| fold_of[i] == f).collect();
            let xtr = sub_x.select_rows(&tr);
            let xte = sub_x.select_rows(&te);
            let ytr: Vec<f64> = tr.iter().map(|&i| sub_y[i]).collect();
            let wtr: Option<Vec<f64>> = sub_w.as_ref().map(|w| tr.iter().map(|&i| w[i]).collect());
            let fold_errs: Vec<f64> = grid
                .par_iter()
                .map(|&(l, g)| {
                    let model = match fit_with(self.kind, &xtr, &ytr, wtr.as_deref(), l, g) {
                        Ok(m) => m,
                        Err(_) => return f64::INFINITY,
                    };
                    let pred = model.predict(&xte).expect("width checked");
                    te.iter()
                        .zip(&pred)
                        .map(|(&i, p)| {
                            let wi = sub_w.as_ref().map_or(1.0, |w| w[i]);
                            wi * (sub_y[i] - p).powi(2)
                        })
                        .sum()
                })
                .collect();
            for (e, fe) in errs.iter_mut().zip(fold_errs) {
                *e += fe;
            }
        }
        let mut best = 0;
        for (i, e) in errs.iter().enumerate() {
            if *e < errs[best] {
                best = i;
            }
        }
        if !errs[best].is_finite() {
            return Err(Error::IllConditioned);
        }
        Ok(grid[best])
    }
}

fn fit_with(
    kind: BaseKind,
    x: &Matrix,
    y: &[f64],
    w: Option<&[f64]>,
    lambda: f64,
    gamma: f64,
) -> Result<Regressor> {
    match kind {
        BaseKind::Ridge => ridge_fit_weighted(x, y, w, lambda),
        BaseKind::KernelRidge => kernel_ridge_fit_weighted(x, y, w, lambda, gamma),
    }
}

/// A fitted base regressor.
#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Ridge {
        coef: Vec<f64>,
        intercept: f64,
        lambda: f64,
    },
    KernelRidge {
        train: Matrix,
        alpha: Vec<f64>,
        offset: f64,
        lambda: f64,
        gamma: f64,
    },
}

impl Regressor {
    pub fn input_dim(&self) -> usize {
        match self {
            Regressor::Ridge { coef, .. } => coef.len(),
            Regressor::KernelRidge { train, .. } => train.cols(),
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Regressor::Ridge { lambda, .. } | Regressor::KernelRidge { lambda, .. } => *lambda,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "regressor input width",
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        Ok(match self {
            Regressor::Ridge {
                coef, intercept, ..
            } => x.row_iter().map(|r| intercept + dot(coef, r)).collect(),
            Regressor::KernelRidge {
                train,
                alpha,
                offset,
                gamma,
                ..
            } => (0..x.rows())
                .into_par_iter()
                .map(|i| {
                    let r = x.row(i);
                    offset
                        + train
                            .row_iter()
                            .zip(alpha)
                            .map(|(t, a)| a * (-gamma * squared_distance(r, t)).exp())
                            .sum::<f64>()
                })
                .collect(),
        })
    }
}

fn check_inputs(x: &Matrix, y: &[f64], w: Option<&[f64]>, lambda: f64) -> Result<Vec<f64>> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "regression targets",
            expected: n,
            found: y.len(),
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression targets"));
    }
    let w = match w {
        None => vec![1.0; n],
        Some(w) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "regression weights",
                    expected: n,
                    found: w.len(),
                });
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::NonFinite("regression weights"));
            }
            w.to_vec()
        }
    };
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::Config("regression weights sum to zero".into()));
    }
    Ok(w)
}

fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    dot(v, w) / w.iter().sum::<f64>()
}

/// Ridge with an unpenalized intercept: `(X_cᵀX_c + λI) w = X_cᵀ y_c` on
/// centered data.
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<Regressor> {
    ridge_fit_weighted(x, y, None, lambda)
}

pub fn ridge_fit_weighted(
    x: &Matrix,
    y: &[f64],
    w: Option<&[f64]>,
    lambda: f64,
) -> Result<Regressor> {
    let w = check_inputs(x, y, w, lambda)?;
    let (n, d) = x.shape();
    let xm: Vec<f64> = (0..d).map(|j| weighted_mean(&x.column(j), &w)).collect();
    let ym = weighted_mean(y, &w);
    let mut a = Matrix::identity(d);
    for i in 0..d {
        a.row_mut(i)[i] = lambda;
    }
    let mut b = vec![0.0; d];
    let mut xc = vec![0.0; d];
    for r in 0..n {
        for (c, (v, m)) in xc.iter_mut().zip(x.row(r).iter().zip(&xm)) {
            *c = v - m;
        }
        let yc = y[r] - ym;
        for i in 0..d {
            let wi = w[r] * xc[i];
            b[i] += wi * yc;
            let row = a.row_mut(i);
            for j in 0..d {
                row[j] += wi * xc[j];
            }
        }
    }
    let coef = Cholesky::factor(&a)?.solve(&b);
    let intercept = ym - dot(&coef, &xm);
    Ok(Regressor::Ridge {
        coef,
        intercept,
        lambda,
    })
}

/// RBF kernel ridge on centered targets: `(K + λI) α = y − ȳ` with
/// `K_ij = exp(−γ‖x_i − x_j‖²)`.
pub fn kernel_ridge_fit(x: &Matrix, y: &[f64], lambda: f64, gamma: f64) -> Result<Regressor> {
    kernel_ridge_fit_weighted(x, y, None, lambda, gamma)
}

/// Weighted form, solved symmetrically as `(DKD + λI) β = D(y − c)` with
/// `D = diag(√w)` and `α = Dβ`.
pub fn kernel_ridge_fit_weighted(
    x: &Matrix,
    y: &[f64],
    w: Option<&[f64]>,
    lambda: f64,
    gamma: f64,
) -> Result<Regressor> {
    let w = check_inputs(x, y, w, lambda)?;
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let n = x.rows();
    let sq: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let offset = weighted_mean(y, &w);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let k = (-gamma * squared_distance(x.row(i), x.row(j))).exp();
                    let v = sq[i] * k * sq[j];
                    if i == j {
                        v + lambda
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let a = Matrix::from_rows(&rows)?;
    let rhs: Vec<f64> = y.iter().zip(&sq).map(|(v, s)| s * (v - offset)).collect();
    let beta = Cholesky::factor(&a)?.solve(&rhs);
    let alpha = beta.iter().zip(&sq).map(|(b, s)| b * s).collect();
    Ok(Regressor::KernelRidge {
        train: x.clone(),
        alpha,
        offset,
        lambda,
        gamma,
    })
}
