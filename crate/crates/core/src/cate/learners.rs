//! T-, X-, DR- and R-learners over a common base-regressor family.

use std::fmt;
use std::str::FromStr;

use super::propensity::{propensity_fit, PropensityModel, CLIP};
use super::regress::{BaseSpec, Regressor};
use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{mix_seed, Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LearnerKind {
    T,
    X,
    Dr,
    R,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] = [LearnerKind::T, LearnerKind::X, LearnerKind::Dr, LearnerKind::R];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::T => "t",
            LearnerKind::X => "x",
            LearnerKind::Dr => "dr",
            LearnerKind::R => "r",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" => Ok(LearnerKind::T),
            "x" => Ok(LearnerKind::X),
            "dr" => Ok(LearnerKind::Dr),
            "r" => Ok(LearnerKind::R),
            _ => Err(Error::Config(format!(
                "unknown learner `{s}`; valid kinds: t, x, dr, r"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSpec {
    pub base: BaseSpec,
    pub propensity_l2: f64,
    /// Seeds the DR sample split.
    pub split_seed: u64,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec {
            base: BaseSpec::default(),
            propensity_l2: 1.0,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Parts {
    T {
        mu0: Regressor,
        mu1: Regressor,
    },
    X {
        tau0: Regressor,
        tau1: Regressor,
        prop: PropensityModel,
    },
    Direct(Regressor),
}

/// A fitted CATE estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CateModel {
    kind: LearnerKind,
    input_dim: usize,
    parts: Parts,
}

impl CateModel {
    pub fn kind(&self) -> LearnerKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `τ̂(x)` for every row of `x`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "CATE model input width",
                expected: self.input_dim,
                found: x.cols(),
            });
        }
        match &self.parts {
            Parts::T { mu0, mu1 } => {
                let (m0, m1) = (mu0.predict(x)?, mu1.predict(x)?);
                Ok(m1.iter().zip(&m0).map(|(a, b)| a - b).collect())
            }
            Parts::X { tau0, tau1, prop } => {
                let (t0, t1, g) = (tau0.predict(x)?, tau1.predict(x)?, prop.predict(x)?);
                Ok((0..x.rows()).map(|i| g[i] * t0[i] + (1.0 - g[i]) * t1[i]).collect())
            }
            Parts::Direct(tau) => tau.predict(x),
        }
    }
}

pub fn fit_cate(kind: LearnerKind, data: &Dataset, spec: &LearnerSpec) -> Result<CateModel> {
    match kind {
        LearnerKind::T => t_learner(data, spec),
        LearnerKind::X => x_learner(data, spec),
        LearnerKind::Dr => dr_learner(data, spec),
        LearnerKind::R => r_learner(data, spec),
    }
}

fn arms(a: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let treated = (0..a.len()).filter(|&i| a[i]).collect();
    let control = (0..a.len()).filter(|&i| !a[i]).collect();
    (control, treated)
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

fn fit_arms(x: &Matrix, a: &[bool], y: &[f64], base: &BaseSpec) -> Result<(Regressor, Regressor)> {
    let (c, t) = arms(a);
    if t.is_empty() {
        return Err(Error::EmptyArm("treated"));
    }
    if c.is_empty() {
        return Err(Error::EmptyArm("control"));
    }
    let mu0 = base.fit(&x.select_rows(&c), &pick(y, &c))?;
    let mu1 = base.fit(&x.select_rows(&t), &pick(y, &t))?;
    Ok((mu0, mu1))
}

/// Separate outcome regressions per arm; `τ̂ = μ̂1 − μ̂0`.
pub fn t_learner(data: &Dataset, spec: &LearnerSpec) -> Result<CateModel> {
    let (mu0, mu1) = fit_arms(data.x(), data.treatment(), data.outcome(), &spec.base)?;
    Ok(CateModel {
        kind: LearnerKind::T,
        input_dim: data.d(),
        parts: Parts::T { mu0, mu1 },
    })
}

/// Imputed effects per arm, blended by the estimated propensity.
pub fn x_learner(data: &Dataset, spec: &LearnerSpec) -> Result<CateModel> {
    let (x, a, y) = (data.x(), data.treatment(), data.outcome());
    let (mu0, mu1) = fit_arms(x, a, y, &spec.base)?;
    let (c, t) = arms(a);
    let xt = x.select_rows(&t);
    let xc = x.select_rows(&c);
    let d1: Vec<f64> = mu0
        .predict(&xt)?
        .iter()
        .zip(&t)
        .map(|(m, &i)| y[i] - m)
        .collect();
    let d0: Vec<f64> = mu1
        .predict(&xc)?
        .iter()
        .zip(&c)
        .map(|(m, &i)| m - y[i])
        .collect();
    let tau1 = spec.base.fit(&xt, &d1)?;
    let tau0 = spec.base.fit(&xc, &d0)?;
    let prop = propensity_fit(x, a, spec.propensity_l2)?;
    Ok(CateModel {
        kind: LearnerKind::X,
        input_dim: data.d(),
        parts: Parts::X { tau0, tau1, prop },
    })
}

/// Uncentered influence-function pseudo-outcome
/// `A/π (Y − μ1) + μ1 − (1−A)/(1−π) (Y − μ0) − μ0`.
pub fn dr_pseudo_outcome(a: &[bool], y: &[f64], mu0: &[f64], mu1: &[f64], pi: &[f64]) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let (ai, p) = (if a[i] { 1.0 } else { 0.0 }, pi[i]);
            ai / p * (y[i] - mu1[i]) + mu1[i] - (1.0 - ai) / (1.0 - p) * (y[i] - mu0[i]) - mu0[i]
        })
        .collect()
}

const MAX_SPLITS: u64 = 5;

/// Three-way split: outcome models on the first third, propensity on the
/// second, pseudo-outcome regression on the last.
pub fn dr_learner(data: &Dataset, spec: &LearnerSpec) -> Result<CateModel> {
    let n = data.n();
    if n < 30 {
        return Err(Error::TooFewSamples { needed: 30, got: n });
    }
    data.check_arms()?;
    let a = data.treatment();
    let both = |idx: &[usize]| idx.iter().any(|&i| a[i]) && idx.iter().any(|&i| !a[i]);
    for attempt in 0..MAX_SPLITS {
        let seed = if attempt == 0 {
            spec.split_seed
        } else {
            mix_seed(spec.split_seed, attempt)
        };
        let perm = SeededRng::new(seed).permutation(n);
        let (s1, rest) = perm.split_at(n / 3);
        let (s2, s3) = rest.split_at(n / 3);
        if !(both(s1) && both(s2)) {
            log::debug!("dr split {attempt} left an arm empty; resplitting");
            continue;
        }
        let part = |idx: &[usize]| {
            let mut idx = idx.to_vec();
            idx.sort_unstable();
            data.select_rows(&idx)
        };
        let (d1, d2, d3) = (part(s1), part(s2), part(s3));
        let (mu0, mu1) = fit_arms(d1.x(), d1.treatment(), d1.outcome(), &spec.base)?;
        let prop = propensity_fit(d2.x(), d2.treatment(), spec.propensity_l2)?;
        let phi = dr_pseudo_outcome(
            d3.treatment(),
            d3.outcome(),
            &mu0.predict(d3.x())?,
            &mu1.predict(d3.x())?,
            &prop.predict(d3.x())?,
        );
        let tau = spec.base.fit(d3.x(), &phi)?;
        return Ok(CateModel {
            kind: LearnerKind::Dr,
            input_dim: data.d(),
            parts: Parts::Direct(tau),
        });
    }
    Err(Error::DegenerateDraw {
        attempts: MAX_SPLITS as usize,
        reason: "every DR split left a treatment arm empty".into(),
    })
}

/// Known nuisance values per row.
#[derive(Debug, Clone, Copy)]
pub struct Nuisances<'a> {
    pub mu0: &'a [f64],
    pub mu1: &'a [f64],
    pub pi: &'a [f64],
}

impl<'a> Nuisances<'a> {
    /// The true nuisances stored in a generated dataset.
    pub fn from_oracle(data: &'a Dataset) -> Result<Self> {
        let missing = || Error::Config("dataset has no oracle nuisance columns".into());
        let o = data.oracle().ok_or_else(missing)?;
        Ok(Nuisances {
            mu0: o.mu0.as_deref().ok_or_else(missing)?,
            mu1: o.mu1.as_deref().ok_or_else(missing)?,
            pi: o.pi.as_deref().ok_or_else(missing)?,
        })
    }
}

/// DR final stage with injected nuisances. No split is needed, so the
/// pseudo-outcome regression uses every row.
pub fn dr_learner_with_nuisances(
    data: &Dataset,
    nuisances: Nuisances<'_>,
    spec: &LearnerSpec,
) -> Result<CateModel> {
    let n = data.n();
    for (name, v) in [("mu0", nuisances.mu0), ("mu1", nuisances.mu1), ("pi", nuisances.pi)] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                context: if name == "pi" { "nuisance pi" } else { "nuisance outcome" },
                expected: n,
                found: v.len(),
            });
        }
    }
    let pi: Vec<f64> = nuisances.pi.iter().map(|p| p.clamp(CLIP.0, CLIP.1)).collect();
    let phi = dr_pseudo_outcome(data.treatment(), data.outcome(), nuisances.mu0, nuisances.mu1, &pi);
    let tau = spec.base.fit(data.x(), &phi)?;
    Ok(CateModel {
        kind: LearnerKind::Dr,
        input_dim: data.d(),
        parts: Parts::Direct(tau),
    })
}

/// Residual-on-residual regression: minimizes `Σ (Ỹ − Ã τ(X))²` plus the
/// base penalty, as a weighted fit of `Ỹ/Ã` with weights `Ã²`.
pub fn r_learner(data: &Dataset, spec: &LearnerSpec) -> Result<CateModel> {
    data.check_arms()?;
    let (x, a, y) = (data.x(), data.treatment(), data.outcome());
    let m = spec.base.fit(x, y)?.predict(x)?;
    let pi = propensity_fit(x, a, spec.propensity_l2)?.predict(x)?;
    let mut target = Vec::with_capacity(y.len());
    let mut weight = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let at = if a[i] { 1.0 } else { 0.0 } - pi[i];
        target.push((y[i] - m[i]) / at);
        weight.push(at * at);
    }
    let tau = spec.base.fit_weighted(x, &target, Some(&weight))?;
    Ok(CateModel {
        kind: LearnerKind::R,
        input_dim: data.d(),
        parts: Parts::Direct(tau),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::sample_linear;
    use crate::eval::pehe;

    fn constant_effect(n: usize, effect: f64, noise: f64, seed: u64) -> Dataset {
        let mut rng = SeededRng::new(seed);
        let x = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.normal()).collect()).unwrap();
        let a: Vec<bool> = (0..n).map(|i| rng.uniform() < 0.3 + 0.4 * ((x[(i, 0)] > 0.0) as u8 as f64)).collect();
        let y = (0..n)
            .map(|i| if a[i] { effect } else { 0.0 } + noise * rng.normal())
            .collect();
        Dataset::new(x, a, y, None).unwrap()
    }

    fn spec() -> LearnerSpec {
        LearnerSpec {
            base: BaseSpec::ridge(1e-3),
            ..LearnerSpec::default()
        }
    }

    #[test]
    fn constant_effect_recovered_by_every_learner() {
        let ds = constant_effect(600, 1.0, 0.0, 1);
        for kind in LearnerKind::ALL {
            let m = fit_cate(kind, &ds, &spec()).unwrap();
            for t in m.predict(ds.x()).unwrap() {
                assert!((t - 1.0).abs() < 0.05, "{kind}: {t}");
            }
        }
    }

    #[test]
    fn null_effect_gives_zero() {
        let ds = constant_effect(900, 0.0, 0.5, 2);
        for kind in LearnerKind::ALL {
            let m = fit_cate(kind, &ds, &spec()).unwrap();
            let p = m.predict(ds.x()).unwrap();
            let mean = p.iter().sum::<f64>() / p.len() as f64;
            assert!(mean.abs() < 0.1, "{kind}: {mean}");
        }
    }

    #[test]
    fn linear_effect_t_learner() {
        let ds = sample_linear(2000, 3, 3).unwrap();
        let m = t_learner(&ds, &spec()).unwrap();
        assert!(pehe(&m.predict(ds.x()).unwrap(), ds.tau().unwrap()).unwrap() < 0.1);
    }

    #[test]
    fn randomized_linear_r_learner() {
        let mut rng = SeededRng::new(4);
        let n = 2000;
        let x = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.normal()).collect()).unwrap();
        let a: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        let tau: Vec<f64> = (0..n).map(|i| 1.0 + x[(i, 1)]).collect();
        let y = (0..n)
            .map(|i| x[(i, 0)] + if a[i] { tau[i] } else { 0.0 } + rng.normal())
            .collect();
        let ds = Dataset::new(x, a, y, None).unwrap();
        let m = r_learner(&ds, &spec()).unwrap();
        assert!(pehe(&m.predict(ds.x()).unwrap(), &tau).unwrap() < 0.1);
    }

    #[test]
    fn empty_arm_rejected() {
        let x = Matrix::zeros(40, 1);
        let ds = Dataset::new(x, vec![false; 40], vec![0.0; 40], None).unwrap();
        for kind in LearnerKind::ALL {
            assert!(matches!(fit_cate(kind, &ds, &spec()), Err(Error::EmptyArm(_))));
        }
    }

    #[test]
    fn dr_needs_thirty_rows() {
        let ds = constant_effect(20, 1.0, 0.1, 5);
        assert!(matches!(dr_learner(&ds, &spec()), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn clipped_propensity_keeps_pseudo_outcome_finite() {
        let phi = dr_pseudo_outcome(&[true, false], &[1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0], &[0.01, 0.99]);
        assert!(phi.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn oracle_pseudo_outcome_is_unbiased() {
        let ds = sample_linear(20_000, 2, 6).unwrap();
        let nu = Nuisances::from_oracle(&ds).unwrap();
        let phi = dr_pseudo_outcome(ds.treatment(), ds.outcome(), nu.mu0, nu.mu1, nu.pi);
        let n = phi.len() as f64;
        let tau = ds.tau().unwrap();
        let diff: Vec<f64> = phi.iter().zip(tau).map(|(p, t)| p - t).collect();
        let mean = diff.iter().sum::<f64>() / n;
        let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "{mean} vs se {}", sd / n.sqrt());
    }

    #[test]
    fn learner_names_parse() {
        for k in LearnerKind::ALL {
            assert_eq!(k.name().parse::<LearnerKind>().unwrap(), k);
        }
        let err = "q".parse::<LearnerKind>().unwrap_err().to_string();
        assert!(err.contains("t, x, dr, r"));
    }
}
