//! Baseline dimensionality reducers: PCA and a plain autoencoder.

use crate::ebm::EbmModel;
use crate::error::{Error, Result};
use crate::nce::{train_ebm, EpochRecord, TrainConfig};
use crate::numerics::{
    column_stats, standardize_columns, symmetric_eigen, Adam, ColumnStats, Matrix, MlpNet,
    OrthogonalMatrix, SeededRng,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    mean: Vec<f64>,
    /// `d × k`, one principal direction per column.
    components: Matrix,
    variances: Vec<f64>,
}

/// Top-`k` eigenvectors of the sample covariance (divisor n).
pub fn pca_fit(x: &Matrix, k: usize) -> Result<Pca> {
    let (n, d) = x.shape();
    if k == 0 || k > d {
        return Err(Error::InvalidDimension(format!(
            "pca needs 1 <= k <= d, got k = {k}, d = {d}"
        )));
    }
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mean = column_stats(x).means;
    let mut cov = Matrix::zeros(d, d);
    let mut c = vec![0.0; d];
    for r in x.row_iter() {
        for (ci, (v, m)) in c.iter_mut().zip(r.iter().zip(&mean)) {
            *ci = v - m;
        }
        for i in 0..d {
            let row = cov.row_mut(i);
            for j in 0..d {
                row[j] += c[i] * c[j];
            }
        }
    }
    for v in cov.as_mut_slice() {
        *v /= n as f64;
    }
    let eig = symmetric_eigen(&cov)?;
    let cols: Vec<usize> = (0..k).collect();
    let mut components = Matrix::zeros(d, k);
    for i in 0..d {
        for &j in &cols {
            components.row_mut(i)[j] = eig.vectors[(i, j)];
        }
    }
    Ok(Pca {
        mean,
        components,
        variances: eig.values[..k].to_vec(),
    })
}

impl Pca {
    pub fn k(&self) -> usize {
        self.components.cols()
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.variances
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "pca input width",
                expected: self.mean.len(),
                found: x.cols(),
            });
        }
        let mut centered = x.clone();
        for i in 0..centered.rows() {
            for (v, m) in centered.row_mut(i).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        centered.matmul(&self.components)
    }

    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = z.matmul(&self.components.transpose())?;
        for i in 0..out.rows() {
            for (v, m) in out.row_mut(i).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(out)
    }
}

/// Encoder `d → hidden → k` and mirrored decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    encoder: MlpNet,
    decoder: MlpNet,
    stats: ColumnStats,
}

impl Autoencoder {
    pub fn encoder(&self) -> &MlpNet {
        &self.encoder
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.encoder.forward_batch(x)
    }

    /// Codes standardized with training statistics.
    pub fn represent(&self, x: &Matrix) -> Result<Matrix> {
        self.stats.apply(&self.encode(x)?)
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        self.decoder.forward_batch(&self.encode(x)?)
    }
}

/// Mean over rows of `‖x̂ − x‖² / d`.
pub fn reconstruction_mse(ae: &Autoencoder, x: &Matrix) -> Result<f64> {
    let rec = ae.reconstruct(x)?;
    let se: f64 = rec
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(se / x.as_slice().len() as f64)
}

struct AeLoss {
    loss: f64,
    enc_grad: Vec<f64>,
    dec_grad: Vec<f64>,
}

fn ae_loss_and_grad(enc: &MlpNet, dec: &MlpNet, x: &Matrix) -> Result<AeLoss> {
    let ec = enc.forward_cached(x)?;
    let dc = dec.forward_cached(ec.output())?;
    let scale = 1.0 / x.as_slice().len() as f64;
    let rec = dc.output();
    let mut up = rec.clone();
    let mut loss = 0.0;
    for (u, v) in up.as_mut_slice().iter_mut().zip(x.as_slice()) {
        let diff = *u - v;
        loss += diff * diff;
        *u = 2.0 * diff * scale;
    }
    let (dec_grad, dcode) = dec.backward_with_input(&dc, &up)?;
    let enc_grad = enc.backward(&ec, &dcode)?;
    Ok(AeLoss {
        loss: loss * scale,
        enc_grad,
        dec_grad,
    })
}

/// Trains with the same schedule as the EBM: Adam, a validation holdout,
/// early stopping, and best-validation parameters.
pub fn ae_fit(x: &Matrix, config: &TrainConfig) -> Result<(Autoencoder, Vec<EpochRecord>)> {
    config.validate()?;
    let (n, d) = x.shape();
    let k = config.k;
    if k > d {
        return Err(Error::InvalidDimension(format!("code width {k} exceeds d = {d}")));
    }
    if n < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: n });
    }
    let master = SeededRng::new(config.seed);
    let perm = master.split(0).permutation(n);
    let n_val = ((n as f64 * config.val_fraction).round() as usize).clamp(1, n - 2);
    let mut val: Vec<usize> = perm[..n_val].to_vec();
    let mut train: Vec<usize> = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    let xval = x.select_rows(&val);

    let enc_w = config.widths(d);
    let dec_w: Vec<usize> = enc_w.iter().rev().cloned().collect();
    let mut init = master.split(1);
    let mut enc = MlpNet::init_uniform(&enc_w, &mut init)?;
    let mut dec = MlpNet::init_uniform(&dec_w, &mut init)?;
    let mut opt_e = Adam::new(enc.num_params(), config.lr);
    let mut opt_d = Adam::new(dec.num_params(), config.lr);

    let val_loss = |e: &MlpNet, dd: &MlpNet| ae_loss_and_grad(e, dd, &xval).map(|l| l.loss);
    let v0 = val_loss(&enc, &dec)?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        val_loss: v0,
    }];
    let mut best = (v0, enc.params().to_vec(), dec.params().to_vec());
    let mut since = 0;
    for epoch in 1..=config.epochs {
        let mut rng = master.split(1000 + epoch as u64);
        let mut order = train.clone();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select_rows(chunk);
            let l = ae_loss_and_grad(&enc, &dec, &xb)?;
            if !l.loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    last_finite_epoch: epoch - 1,
                });
            }
            total += l.loss * chunk.len() as f64;
            opt_e.step(enc.params_mut(), &l.enc_grad)?;
            opt_d.step(dec.params_mut(), &l.dec_grad)?;
        }
        let v = val_loss(&enc, &dec)?;
        log.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: v,
        });
        if v < best.0 {
            best = (v, enc.params().to_vec(), dec.params().to_vec());
            since = 0;
        } else {
            since += 1;
            if since >= config.patience {
                break;
            }
        }
    }
    enc.set_params(&best.1)?;
    dec.set_params(&best.2)?;
    let (_, stats) = standardize_columns(&enc.forward_batch(x)?)?;
    Ok((
        Autoencoder {
            encoder: enc,
            decoder: dec,
            stats,
        },
        log,
    ))
}

/// Which features a learner sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReducerKind {
    Raw,
    Ebm,
    Pca,
    Ae,
}

impl ReducerKind {
    pub fn name(self) -> &'static str {
        match self {
            ReducerKind::Raw => "raw",
            ReducerKind::Ebm => "ebm",
            ReducerKind::Pca => "pca",
            ReducerKind::Ae => "ae",
        }
    }
}

impl std::fmt::Display for ReducerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ReducerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ReducerKind::Raw),
            "ebm" => Ok(ReducerKind::Ebm),
            "pca" => Ok(ReducerKind::Pca),
            "ae" => Ok(ReducerKind::Ae),
            _ => Err(Error::Config(format!(
                "unknown reducer `{s}`; valid kinds: raw, ebm, pca, ae"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedReducer {
    Raw,
    Ebm(Box<EbmModel>),
    Pca(Pca),
    Ae(Autoencoder),
}

/// Fits a reducer of the given kind on `x`. The EBM uses `fixed_b` when
/// given, otherwise draws `B` from `config.b_seed`.
pub fn fit_reducer(
    kind: ReducerKind,
    x: &Matrix,
    config: &TrainConfig,
    fixed_b: Option<&OrthogonalMatrix>,
) -> Result<FittedReducer> {
    Ok(match kind {
        ReducerKind::Raw => FittedReducer::Raw,
        ReducerKind::Ebm => {
            let trained = train_ebm(x, config, fixed_b.cloned())?;
            FittedReducer::Ebm(Box::new(trained.model))
        }
        ReducerKind::Pca => FittedReducer::Pca(pca_fit(x, config.k)?),
        ReducerKind::Ae => FittedReducer::Ae(ae_fit(x, config)?.0),
    })
}

impl FittedReducer {
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            FittedReducer::Raw => Ok(x.clone()),
            FittedReducer::Ebm(m) => m.represent(x, true),
            FittedReducer::Pca(p) => p.transform(x),
            FittedReducer::Ae(a) => a.represent(x),
        }
    }
}
