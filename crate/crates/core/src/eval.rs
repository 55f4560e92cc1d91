//! PEHE, per-dimension MCC, the CATE-spread experiment, and result tables.

use std::path::Path;

use rayon::prelude::*;

use crate::cate::{fit_cate, fit_reducer, LearnerKind, LearnerSpec, ReducerKind};
use crate::dgp::{write_text, Dataset};
use crate::error::{Error, Result};
use crate::nce::TrainConfig;
use crate::numerics::{column_stats, Matrix, OrthogonalMatrix};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "effect vectors",
            expected: b.len(),
            found: a.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(())
}

/// Mean squared error between estimated and true effects.
pub fn pehe(tau_hat: &[f64], tau: &[f64]) -> Result<f64> {
    check_lengths(tau_hat, tau)?;
    let s: f64 = tau_hat.iter().zip(tau).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(s / tau.len() as f64)
}

/// Square root of [`pehe`].
pub fn pehe_root(tau_hat: &[f64], tau: &[f64]) -> Result<f64> {
    pehe(tau_hat, tau).map(f64::sqrt)
}

/// Pearson correlation of column `i` of `r1` with column `i` of `r2`,
/// averaged over columns. No sign or permutation matching.
pub fn mcc(r1: &Matrix, r2: &Matrix) -> Result<f64> {
    Ok(per_dimension_correlation(r1, r2)?.iter().sum::<f64>() / r1.cols() as f64)
}

pub fn per_dimension_correlation(r1: &Matrix, r2: &Matrix) -> Result<Vec<f64>> {
    if r1.shape() != r2.shape() {
        return Err(Error::DimensionMismatch {
            context: "mcc operands",
            expected: r1.rows() * r1.cols(),
            found: r2.rows() * r2.cols(),
        });
    }
    if r1.rows() < 2 || r1.cols() == 0 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: r1.rows(),
        });
    }
    let (s1, s2) = (column_stats(r1), column_stats(r2));
    let n = r1.rows() as f64;
    (0..r1.cols())
        .map(|j| {
            for s in [&s1, &s2] {
                if !(s.stds[j] > 1e-12 * s.means[j].abs().max(1.0)) {
                    return Err(Error::DegenerateColumn { column: j });
                }
            }
            let cov: f64 = r1
                .row_iter()
                .zip(r2.row_iter())
                .map(|(a, b)| (a[j] - s1.means[j]) * (b[j] - s2.means[j]))
                .sum::<f64>()
                / n;
            Ok((cov / (s1.stds[j] * s2.stds[j])).clamp(-1.0, 1.0))
        })
        .collect()
}

/// Mean, sample standard deviation and count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, std, n }
    }
}

/// Pairwise MCC between every pair of representations, and the summary
/// over pairs `i < j`.
pub fn mcc_matrix(reprs: &[Matrix]) -> Result<(Matrix, Summary)> {
    let m = reprs.len();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let mut out = Matrix::identity(m);
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let v = mcc(&reprs[i], &reprs[j])?;
            out.row_mut(i)[j] = v;
            out.row_mut(j)[i] = v;
            pairs.push(v);
        }
    }
    Ok((out, Summary::of(&pairs)))
}

/// Population standard deviation across runs for each sample.
pub fn per_sample_std(runs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let r = runs.len();
    if r < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: r });
    }
    let n = runs[0].len();
    if let Some(bad) = runs.iter().find(|v| v.len() != n) {
        return Err(Error::DimensionMismatch {
            context: "run prediction length",
            expected: n,
            found: bad.len(),
        });
    }
    Ok((0..n)
        .map(|i| {
            let mean = runs.iter().map(|v| v[i]).sum::<f64>() / r as f64;
            (runs.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / r as f64).sqrt()
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct CateStdResult {
    /// One row per test sample.
    pub per_sample: Vec<f64>,
    pub mean: f64,
    /// `runs × n_test` predictions, in run order.
    pub predictions: Vec<Vec<f64>>,
}

/// Trains one reducer per init seed (sharing `B` for the EBM), fits the
/// learner on each representation of `train`, and measures how much the
/// predictions on `test_x` spread across runs.
pub fn cate_std_experiment(
    train: &Dataset,
    test_x: &Matrix,
    reducer: ReducerKind,
    learner: LearnerKind,
    spec: &LearnerSpec,
    config: &TrainConfig,
    fixed_b: Option<&OrthogonalMatrix>,
    seeds: &[u64],
) -> Result<CateStdResult> {
    if seeds.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: seeds.len(),
        });
    }
    let predictions: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            let run = || -> Result<Vec<f64>> {
                let red = fit_reducer(reducer, train.x(), &cfg, fixed_b)?;
                let feats = train.with_features(red.transform(train.x())?)?;
                let model = fit_cate(learner, &feats, spec)?;
                model.predict(&red.transform(test_x)?)
            };
            run().inspect_err(|e| log::error!("{reducer} run with seed {seed} failed: {e}"))
        })
        .collect::<Result<_>>()?;
    let per_sample = per_sample_std(&predictions)?;
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(CateStdResult {
        per_sample,
        mean,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeheCell {
    pub learner: LearnerKind,
    pub condition: ReducerKind,
    pub pehe: Summary,
    pub root_pehe: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdCell {
    pub learner: LearnerKind,
    pub condition: ReducerKind,
    pub per_sample: Summary,
}

/// Everything one experiment reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub experiment_id: String,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub pehe: Vec<PeheCell>,
    pub mcc: Option<Summary>,
    pub cate_std: Vec<StdCell>,
}

impl MetricsReport {
    pub fn new(experiment_id: &str, fingerprint: &str, seeds: Vec<u64>) -> Self {
        MetricsReport {
            experiment_id: experiment_id.to_string(),
            fingerprint: fingerprint.to_string(),
            seeds,
            pehe: Vec::new(),
            mcc: None,
            cate_std: Vec::new(),
        }
    }

    pub fn pehe_mean(&self, learner: LearnerKind, condition: ReducerKind) -> Option<f64> {
        self.pehe
            .iter()
            .find(|c| c.learner == learner && c.condition == condition)
            .map(|c| c.pehe.mean)
    }

    fn rows(&self) -> Vec<[String; 6]> {
        let mut rows = Vec::new();
        let fmt = |s: &Summary| [s.mean.to_string(), s.std.to_string(), s.n.to_string()];
        for c in &self.pehe {
            for (metric, s) in [("pehe", &c.pehe), ("root_pehe", &c.root_pehe)] {
                let [m, sd, n] = fmt(s);
                rows.push([metric.into(), c.learner.name().into(), c.condition.name().into(), m, sd, n]);
            }
        }
        if let Some(s) = &self.mcc {
            let [m, sd, n] = fmt(s);
            rows.push(["mcc".into(), "-".into(), "ebm".into(), m, sd, n]);
        }
        for c in &self.cate_std {
            let [m, sd, n] = fmt(&c.per_sample);
            rows.push(["cate_std".into(), c.learner.name().into(), c.condition.name().into(), m, sd, n]);
        }
        rows
    }

    /// `experiment,fingerprint,metric,learner,condition,mean,std,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,fingerprint,metric,learner,condition,mean,std,count\n");
        for r in self.rows() {
            out.push_str(&format!("{},{},{}\n", self.experiment_id, self.fingerprint, r.join(",")));
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = format!(
            "experiment  {}\nfingerprint {}\nseeds       {}\n\n",
            self.experiment_id,
            self.fingerprint,
            seeds.join(" ")
        );
        out.push_str(&format!(
            "{:<10} {:<7} {:<9} {:>14} {:>14} {:>6}\n",
            "metric", "learner", "condition", "mean", "std", "count"
        ));
        for r in self.rows() {
            let mean: f64 = r[3].parse().unwrap_or(f64::NAN);
            let sd: f64 = r[4].parse().unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{:<10} {:<7} {:<9} {:>14.6} {:>14.6} {:>6}\n",
                r[0], r[1], r[2], mean, sd, r[5]
            ));
        }
        out
    }

    /// Writes `report.csv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("report.csv"), &self.to_csv())?;
        write_text(&dir.join("report.txt"), &self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn random(n: usize, k: usize, seed: u64) -> Matrix {
        let mut rng = SeededRng::new(seed);
        Matrix::from_vec(n, k, (0..n * k).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn pehe_examples() {
        let t = [1.0, -2.0, 0.5];
        assert_eq!(pehe(&t, &t).unwrap(), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 2.0).collect();
        assert_eq!(pehe(&shifted, &t).unwrap(), 4.0);
        assert_eq!(pehe_root(&shifted, &t).unwrap(), 2.0);
        let a = [0.3, -1.2, 2.5, 0.0, 4.1];
        let b = [0.1, -0.2, 2.0, 1.0, 3.1];
        let hand = (0.04 + 1.0 + 0.25 + 1.0 + 1.0) / 5.0;
        assert!((pehe(&a, &b).unwrap() - hand).abs() < 1e-15);
        assert!(pehe(&a, &b[..4]).is_err());
    }

    #[test]
    fn pehe_shift_identity() {
        let mut rng = SeededRng::new(3);
        let th: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
        let t: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
        let c = 0.7;
        let shifted: Vec<f64> = th.iter().map(|v| v + c).collect();
        let md = th.iter().zip(&t).map(|(a, b)| a - b).sum::<f64>() / 50.0;
        let want = pehe(&th, &t).unwrap() + 2.0 * c * md + c * c;
        assert!((pehe(&shifted, &t).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn mcc_examples() {
        let r = random(100, 3, 1);
        assert_eq!(mcc(&r, &r).unwrap(), 1.0);
        let mut shifted = r.clone();
        for i in 0..100 {
            for (j, v) in shifted.row_mut(i).iter_mut().enumerate() {
                *v += [1.0, -4.0, 9.0][j];
            }
        }
        assert!((mcc(&r, &shifted).unwrap() - 1.0).abs() < 1e-12);
        let perm = Matrix::from_rows(
            &r.row_iter().map(|x| vec![x[1], x[2], x[0]]).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(mcc(&r, &perm).unwrap() < 1.0);
    }

    #[test]
    fn mcc_symmetric_and_rejects_constant() {
        let (a, b) = (random(60, 2, 2), random(60, 2, 3));
        assert!((mcc(&a, &b).unwrap() - mcc(&b, &a).unwrap()).abs() < 1e-12);
        let c = Matrix::from_vec(60, 2, vec![1.0; 120]).unwrap();
        assert!(matches!(mcc(&a, &c), Err(Error::DegenerateColumn { .. })));
    }

    #[test]
    fn identical_runs_have_zero_spread() {
        let v = vec![vec![1.0, 2.0, 3.0]; 2];
        assert_eq!(per_sample_std(&v).unwrap(), vec![0.0; 3]);
        assert!(per_sample_std(&v[..1]).is_err());
    }

    #[test]
    fn report_is_pure() {
        let mut r = MetricsReport::new("e", "abc", vec![1, 2]);
        r.pehe.push(PeheCell {
            learner: LearnerKind::T,
            condition: ReducerKind::Raw,
            pehe: Summary::of(&[1.0, 2.0]),
            root_pehe: Summary::of(&[1.0, 2f64.sqrt()]),
        });
        assert_eq!(r.to_csv(), r.clone().to_csv());
        assert_eq!(r.to_text(), r.clone().to_text());
        assert_eq!(r.to_csv().lines().count(), 3);
        assert_eq!(r.pehe_mean(LearnerKind::T, ReducerKind::Raw), Some(1.5));
    }
}
