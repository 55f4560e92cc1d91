//! End-to-end orchestration behind the CLI subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cate::{fit_cate, LearnerKind, ReducerKind};
use crate::config::ExperimentConfig;
use crate::dgp::{
    gen_dgp_with_latent, load_csv, predictions_to_csv, write_matrix_csv, write_text, CsvSchema,
    Dataset, DgpSpec,
};
use crate::ebm::EbmModel;
use crate::error::{Error, Result};
use crate::eval::{
    cate_std_experiment, mcc_matrix, pehe, pehe_root, MetricsReport, PeheCell, StdCell, Summary,
};
use crate::nce::{train_ebm, TrainedEbm};
use crate::numerics::{mix_seed, Matrix};

/// Seed of the shared test sample.
pub fn test_seed(cfg: &ExperimentConfig) -> u64 {
    mix_seed(cfg.dgp.seed, 0)
}

/// Seed of the training sample for run `run`.
pub fn train_seed(cfg: &ExperimentConfig, run: usize) -> u64 {
    mix_seed(cfg.dgp.seed, run as u64 + 1)
}

/// Training and test data for an experiment, synthetic or loaded.
pub struct DataSource {
    dgp: Option<DgpSpec>,
    external_train: Option<Dataset>,
    test: Option<Dataset>,
    n: usize,
}

impl DataSource {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        if let Some(train) = &cfg.io.train_csv {
            let schema = CsvSchema::default();
            let train = load_csv(train, &schema)?;
            let test = cfg.io.test_csv.as_ref().map(|p| load_csv(p, &schema)).transpose()?;
            if cfg.ebm.k >= train.d() {
                return Err(Error::Config(format!(
                    "ebm.k = {} must be smaller than the {} covariates",
                    cfg.ebm.k,
                    train.d()
                )));
            }
            return Ok(DataSource {
                dgp: None,
                n: train.n(),
                external_train: Some(train),
                test,
            });
        }
        let dgp = gen_dgp_with_latent(cfg.dgp.seed, cfg.dgp.d, cfg.dgp.latent_dim)?
            .with_literal_outcome(cfg.dgp.literal_outcome);
        let test = dgp.sample(cfg.dgp.test_n, test_seed(cfg))?;
        Ok(DataSource {
            dgp: Some(dgp),
            external_train: None,
            test: Some(test),
            n: cfg.dgp.n,
        })
    }

    /// Run `run` draws a fresh synthetic training sample; loaded data is
    /// reused by every run.
    pub fn train(&self, cfg: &ExperimentConfig, run: usize) -> Result<Dataset> {
        match (&self.dgp, &self.external_train) {
            (Some(g), _) => g.sample(self.n, train_seed(cfg, run)),
            (None, Some(t)) => Ok(t.clone()),
            (None, None) => unreachable!("data source has neither generator nor file"),
        }
    }

    pub fn test(&self) -> Option<&Dataset> {
        self.test.as_ref()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating directory {}", dir.display()), e))
}

/// Creates the experiment directory and records the resolved config in it.
/// An existing directory must carry the same fingerprint.
pub fn prepare_experiment_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.experiment_dir();
    let stamp = dir.join("config.toml");
    if stamp.is_file() {
        let text = std::fs::read_to_string(&stamp)
            .map_err(|e| Error::io(format!("reading {}", stamp.display()), e))?;
        let old = ExperimentConfig::from_toml_str(&text, None)?;
        if old.fingerprint() != cfg.fingerprint() {
            return Err(Error::FingerprintMismatch(format!(
                "{} holds artifacts for config {}, not {}",
                dir.display(),
                old.fingerprint(),
                cfg.fingerprint()
            )));
        }
    }
    create_dir(&dir)?;
    // the output root is left out so identical experiments stamp identically
    let mut recorded = cfg.clone();
    recorded.io.out_dir = PathBuf::from(".");
    write_text(&stamp, &recorded.to_toml_string())?;
    Ok(dir)
}

/// Writes the run-0 training sample and the test sample.
pub fn gen_data(cfg: &ExperimentConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if cfg.uses_external_data() {
        return Err(Error::Config(
            "gen-data needs the synthetic generator; remove io.train_csv".into(),
        ));
    }
    let src = DataSource::new(cfg)?;
    create_dir(dir)?;
    let (train_path, test_path) = (dir.join("train.csv"), dir.join("test.csv"));
    src.train(cfg, 0)?.write_csv(&train_path)?;
    src.test().expect("synthetic test set").write_csv(&test_path)?;
    Ok((train_path, test_path))
}

/// Trains the EBM for run `run` and stamps the config fingerprint into it.
pub fn fit_ebm(cfg: &ExperimentConfig, x: &Matrix, run: usize) -> Result<TrainedEbm> {
    let mut trained = train_ebm(x, &cfg.train_config(run), None)?;
    trained.model.set_config_hash(cfg.fingerprint_u64());
    Ok(trained)
}

/// Checks that models can be compared coordinate by coordinate.
pub fn check_comparable(models: &[EbmModel]) -> Result<()> {
    let Some(first) = models.first() else {
        return Ok(());
    };
    for (i, m) in models.iter().enumerate().skip(1) {
        if m.input_dim() != first.input_dim() || m.k() != first.k() {
            return Err(Error::FingerprintMismatch(format!(
                "model {i} has shape {}→{}, model 0 has {}→{}",
                m.input_dim(),
                m.k(),
                first.input_dim(),
                first.k()
            )));
        }
        if m.b_fingerprint() != first.b_fingerprint() {
            return Err(Error::FingerprintMismatch(format!(
                "model {i} uses a different B ({:016x} vs {:016x}); per-dimension MCC needs a shared B",
                m.b_fingerprint(),
                first.b_fingerprint()
            )));
        }
    }
    Ok(())
}

struct RunResult {
    /// `pehe[condition][learner]`, conditions in raw, ebm order.
    pehe: [Vec<f64>; 2],
    test_repr: Matrix,
}

fn run_once(
    cfg: &ExperimentConfig,
    src: &DataSource,
    test: &Dataset,
    tau: &[f64],
    learners: &[LearnerKind],
    run: usize,
    dir: &Path,
) -> Result<RunResult> {
    let seed = cfg.train_config(run).seed;
    let stage = |name: &'static str| {
        move |e: Error| {
            log::error!("stage {name} failed in run {run} (init seed {seed}): {e}");
            e
        }
    };
    let run_dir = dir.join(format!("run-{run}"));
    create_dir(&run_dir)?;
    let train = src.train(cfg, run).map_err(stage("gen-data"))?;
    let trained = fit_ebm(cfg, train.x(), run).map_err(stage("fit-ebm"))?;
    log::info!(
        "run {run}: best validation loss {:.6} at epoch {}",
        trained.best_val_loss,
        trained.best_epoch
    );
    trained.model.save(run_dir.join("model.preb"))?;
    write_text(&run_dir.join("train_log.csv"), &trained.log_csv())?;
    let model = trained.model;
    let train_repr = model.represent(train.x(), true).map_err(stage("transform"))?;
    let test_repr = model.represent(test.x(), true).map_err(stage("transform"))?;
    write_matrix_csv(run_dir.join("test_repr.csv"), &test_repr, "z")?;

    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let conditions = [
        (ReducerKind::Raw, train.clone(), test.x().clone()),
        (ReducerKind::Ebm, train.with_features(train_repr)?, test_repr.clone()),
    ];
    for (slot, (cond, data, tx)) in conditions.into_iter().enumerate() {
        for &kind in learners {
            let m = fit_cate(kind, &data, &cfg.learner_spec()?).map_err(stage("fit-cate"))?;
            let tau_hat = m.predict(&tx).map_err(stage("fit-cate"))?;
            write_text(
                &run_dir.join(format!("pred_{cond}_{kind}.csv")),
                &predictions_to_csv(&tau_hat),
            )?;
            out[slot].push(pehe(&tau_hat, tau)?);
        }
    }
    Ok(RunResult {
        pehe: out,
        test_repr,
    })
}

pub struct PipelineOutput {
    pub dir: PathBuf,
    pub report: MetricsReport,
}

/// Data generation, one EBM per run, learners on raw and EBM features,
/// and the aggregated report.
pub fn run_pipeline(cfg: &ExperimentConfig, with_mcc: bool) -> Result<PipelineOutput> {
    cfg.validate()?;
    let with_mcc = with_mcc || cfg.eval.mcc;
    if with_mcc && cfg.eval.runs < 2 {
        return Err(Error::Config("MCC needs eval.runs >= 2".into()));
    }
    let learners = cfg.learner_kinds()?;
    let dir = prepare_experiment_dir(cfg)?;
    let src = DataSource::new(cfg)?;
    let test = src
        .test()
        .ok_or_else(|| Error::Config("pipeline needs a test set (io.test_csv)".into()))?;
    let tau = test.tau().ok_or_else(|| {
        Error::Config("test data has no tau column; PEHE needs the true effects".into())
    })?;
    if !cfg.uses_external_data() {
        test.write_csv(dir.join("test.csv"))?;
    }

    let runs: Vec<RunResult> = (0..cfg.eval.runs)
        .into_par_iter()
        .map(|r| run_once(cfg, &src, test, tau, &learners, r, &dir))
        .collect::<Result<_>>()?;

    let seeds: Vec<u64> = (0..cfg.eval.runs).map(|r| cfg.train_config(r).seed).collect();
    let mut report = MetricsReport::new(&cfg.experiment_id, &cfg.fingerprint(), seeds.clone());
    for (slot, cond) in [ReducerKind::Raw, ReducerKind::Ebm].into_iter().enumerate() {
        for (li, &kind) in learners.iter().enumerate() {
            let vals: Vec<f64> = runs.iter().map(|r| r.pehe[slot][li]).collect();
            let roots: Vec<f64> = vals.iter().map(|v| v.sqrt()).collect();
            report.pehe.push(PeheCell {
                learner: kind,
                condition: cond,
                pehe: Summary::of(&vals),
                root_pehe: Summary::of(&roots),
            });
        }
    }
    if with_mcc {
        let reprs: Vec<Matrix> = runs.into_iter().map(|r| r.test_repr).collect();
        let (pairs, summary) = mcc_matrix(&reprs)?;
        write_matrix_csv(dir.join("mcc_pairs.csv"), &pairs, "run")?;
        report.mcc = Some(summary);
    }
    if cfg.eval.cate_std {
        let train = src.train(cfg, 0)?;
        let base = cfg.train_config(0);
        for &kind in &learners {
            for cond in [ReducerKind::Ebm, ReducerKind::Ae] {
                let res = cate_std_experiment(
                    &train,
                    test.x(),
                    cond,
                    kind,
                    &cfg.learner_spec()?,
                    &base,
                    None,
                    &seeds,
                )?;
                report.cate_std.push(StdCell {
                    learner: kind,
                    condition: cond,
                    per_sample: Summary::of(&res.per_sample),
                });
            }
        }
    }
    report.write(&dir)?;
    Ok(PipelineOutput { dir, report })
}

/// Pairwise MCC across models on shared data.
pub fn mcc_of_models(models: &[EbmModel], x: &Matrix) -> Result<(Matrix, Summary)> {
    if models.len() < 2 {
        return Err(Error::Config(format!(
            "mcc needs at least 2 models, got {}",
            models.len()
        )));
    }
    check_comparable(models)?;
    let reprs: Vec<Matrix> = models
        .iter()
        .map(|m| m.represent(x, true))
        .collect::<Result<_>>()?;
    mcc_matrix(&reprs)
}

/// PEHE and root PEHE of one prediction vector, for summary lines.
pub fn pehe_pair(tau_hat: &[f64], tau: &[f64]) -> Result<(f64, f64)> {
    Ok((pehe(tau_hat, tau)?, pehe_root(tau_hat, tau)?))
}
