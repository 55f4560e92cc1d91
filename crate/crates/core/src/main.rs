use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cate_ebm::cate::{fit_cate, LearnerKind};
use cate_ebm::config::ExperimentConfig;
use cate_ebm::dgp::{load_csv, predictions_to_csv, read_features, write_matrix_csv, write_text, CsvSchema};
use cate_ebm::ebm::EbmModel;
use cate_ebm::pipeline::{self, pehe_pair};
use cate_ebm::{Error, Result};

#[derive(Parser)]
#[command(name = "cate-ebm", version, about = "EBM representations for CATE estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root directory for experiment outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the data seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Named hyperparameter preset.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded synthetic train.csv and test.csv.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train an EBM and save it with its training log.
    FitEbm {
        #[command(flatten)]
        common: Common,
        /// Training CSV; defaults to the synthetic run-0 sample.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Write standardized representations of a data file.
    Transform {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV; defaults to repr.csv beside the model.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Refuse models trained under a different config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit CATE learners on a feature file and write predictions.
    FitCate {
        #[command(flatten)]
        common: Common,
        /// Covariates or representations for the training rows.
        #[arg(long)]
        features: PathBuf,
        /// Dataset CSV supplying treatment and outcome (and tau, if present).
        #[arg(long)]
        data: PathBuf,
        /// Features to predict on; defaults to the training features.
        #[arg(long)]
        predict: Option<PathBuf>,
        /// Dataset whose tau column scores the `--predict` rows.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Comma-separated learner kinds; overrides the config.
        #[arg(long, value_delimiter = ',')]
        learners: Option<Vec<String>>,
    },
    /// Full experiment: data, EBMs, learners on raw and EBM features, report.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Also report MCC across runs.
        #[arg(long)]
        mcc: bool,
    },
    /// Pairwise per-dimension MCC between saved models.
    Mcc {
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Directory for mcc.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), p) => ExperimentConfig::load(path, p.as_deref())?,
        (None, Some(p)) => ExperimentConfig::preset(p)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.io.out_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.dgp.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "features".into())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = resolve(&common)?;
            let dir = pipeline::prepare_experiment_dir(&cfg)?;
            let (train, test) = pipeline::gen_data(&cfg, &dir)?;
            println!("wrote {} ({} rows)", train.display(), cfg.dgp.n);
            println!("wrote {} ({} rows)", test.display(), cfg.dgp.test_n);
        }
        Command::FitEbm { common, train, run } => {
            let cfg = resolve(&common)?;
            let x = match &train {
                Some(p) => read_features(p)?,
                None => pipeline::DataSource::new(&cfg)?.train(&cfg, run)?.x().clone(),
            };
            let dir = pipeline::prepare_experiment_dir(&cfg)?;
            let trained = pipeline::fit_ebm(&cfg, &x, run)?;
            let model_path = dir.join("model.preb");
            trained.model.save(&model_path)?;
            write_text(&dir.join("train_log.csv"), &trained.log_csv())?;
            println!("wrote {}", model_path.display());
            println!(
                "final validation loss {:.6} (best epoch {}, chance level {:.6})",
                trained.best_val_loss,
                trained.best_epoch,
                ((cfg.ebm.b + 1) as f64).ln()
            );
        }
        Command::Transform {
            model,
            data,
            out,
            config,
        } => {
            let m = EbmModel::load(&model)?;
            if let Some(c) = config {
                let cfg = ExperimentConfig::load(&c, None)?;
                if m.fingerprint().config_hash != cfg.fingerprint_u64() {
                    return Err(Error::FingerprintMismatch(format!(
                        "model {} was trained under config {:016x}, not {}",
                        model.display(),
                        m.fingerprint().config_hash,
                        cfg.fingerprint()
                    )));
                }
            }
            let x = read_features(&data)?;
            let z = m.represent(&x, true)?;
            let out = out.unwrap_or_else(|| {
                model
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join("repr.csv")
            });
            write_matrix_csv(&out, &z, "z")?;
            println!("wrote {} ({} x {})", out.display(), z.rows(), z.cols());
        }
        Command::FitCate {
            common,
            features,
            data,
            predict,
            truth,
            learners,
        } => {
            let cfg = resolve(&common)?;
            let kinds: Vec<LearnerKind> = match learners {
                Some(v) => v.iter().map(|s| s.trim().parse()).collect::<Result<_>>()?,
                None => cfg.learner_kinds()?,
            };
            let labels = load_csv(&data, &CsvSchema::default())?;
            let train = labels.with_features(read_features(&features)?)?;
            let (px, truth) = match &predict {
                Some(p) => {
                    let t = truth.map(|t| load_csv(t, &CsvSchema::default())).transpose()?;
                    (read_features(p)?, t)
                }
                None => (train.x().clone(), Some(labels.clone())),
            };
            let tau = truth.as_ref().and_then(|t| t.tau().map(<[f64]>::to_vec));
            let dir = pipeline::prepare_experiment_dir(&cfg)?;
            let tag = file_stem(predict.as_ref().unwrap_or(&features));
            let spec = cfg.learner_spec()?;
            for kind in kinds {
                let model = fit_cate(kind, &train, &spec)?;
                let tau_hat = model.predict(&px)?;
                let path = dir.join(format!("pred_{tag}_{kind}.csv"));
                write_text(&path, &predictions_to_csv(&tau_hat))?;
                let mean = tau_hat.iter().sum::<f64>() / tau_hat.len() as f64;
                let mut line = format!("{kind:<3} mean tau_hat {mean:.6}");
                if let Some(t) = &tau {
                    let (p, r) = pehe_pair(&tau_hat, t)?;
                    line += &format!("  pehe {p:.6}  root_pehe {r:.6}");
                }
                println!("{line}  -> {}", path.display());
            }
        }
        Command::Pipeline { common, mcc } => {
            let cfg = resolve(&common)?;
            let out = pipeline::run_pipeline(&cfg, mcc)?;
            print!("{}", out.report.to_text());
            println!("\nwrote {}", out.dir.display());
        }
        Command::Mcc { models, data, out } => {
            let loaded: Vec<EbmModel> = models.iter().map(EbmModel::load).collect::<Result<_>>()?;
            let x = read_features(&data)?;
            let (pairs, summary) = pipeline::mcc_of_models(&loaded, &x)?;
            for i in 0..pairs.rows() {
                let row: Vec<String> = pairs.row(i).iter().map(|v| format!("{v:.4}")).collect();
                println!("{}", row.join("  "));
            }
            println!(
                "mean MCC {:.6} ± {:.6} over {} pairs",
                summary.mean, summary.std, summary.n
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
                write_matrix_csv(dir.join("mcc.csv"), &pairs, "model")?;
            }
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("CATE_EBM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CATE_EBM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
