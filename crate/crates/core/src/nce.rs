//! Noise-contrastive ranking objective for the partially randomized EBM.
//!
//! Every clean sample is hidden among `b` corrupted copies of itself and the
//! network is trained to pick it out. Corruption is symmetric (additive
//! standard normal noise, uniform categorical resampling), so the noise
//! density terms cancel between candidates and the posterior over
//! candidates is a softmax of the scores `β_jᵀ f(v)` alone.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::ebm::{EbmModel, ModelFingerprint};
use crate::error::{Error, Result};
use crate::numerics::{
    dot, random_orthogonal, Adam, Matrix, MlpNet, OrthogonalMatrix, SeededRng,
};
use crate::partition::kmeans_fit;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Continuous,
    /// Categorical feature; corruption redraws uniformly from these values.
    Categorical(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    rho: f64,
    kinds: Vec<FeatureKind>,
    b: usize,
}

impl CorruptionSpec {
    pub fn new(rho: f64, kinds: Vec<FeatureKind>, b: usize) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Config(format!("corruption probability {rho} not in (0, 1]")));
        }
        if b == 0 {
            return Err(Error::Config("need at least one corrupted copy (b >= 1)".into()));
        }
        if kinds.is_empty() {
            return Err(Error::InvalidDimension("no features to corrupt".into()));
        }
        for (f, k) in kinds.iter().enumerate() {
            if let FeatureKind::Categorical(vals) = k {
                if vals.is_empty() || vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!(
                        "categorical feature {f} needs a non-empty finite value set"
                    )));
                }
            }
        }
        Ok(CorruptionSpec { rho, kinds, b })
    }

    /// All-continuous spec over `d` features.
    pub fn continuous(d: usize, rho: f64, b: usize) -> Result<Self> {
        CorruptionSpec::new(rho, vec![FeatureKind::Continuous; d], b)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.rho.to_le_bytes());
        h.update((self.b as u64).to_le_bytes());
        for k in &self.kinds {
            match k {
                FeatureKind::Continuous => h.update([0u8]),
                FeatureKind::Categorical(vals) => {
                    h.update([1u8]);
                    h.update((vals.len() as u64).to_le_bytes());
                    for v in vals {
                        h.update(v.to_le_bytes());
                    }
                }
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Corrupts each feature independently with probability `rho`.
///
/// Per feature the stream yields one selection draw, then one noise draw
/// when the feature is selected.
pub fn corrupt<R: Rng + ?Sized>(x: &[f64], spec: &CorruptionSpec, rng: &mut R) -> Vec<f64> {
    assert_eq!(x.len(), spec.dim(), "feature count must match the corruption spec");
    x.iter()
        .zip(&spec.kinds)
        .map(|(&v, kind)| {
            if rng.random::<f64>() >= spec.rho {
                return v;
            }
            match kind {
                FeatureKind::Continuous => v + rng.sample::<f64, _>(StandardNormal),
                FeatureKind::Categorical(vals) => vals[rng.random_range(0..vals.len())],
            }
        })
        .collect()
}

/// A clean sample hidden among its corrupted copies.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// `(b + 1) × d`, one candidate per row.
    pub values: Matrix,
    /// Row of `values` holding the clean sample.
    pub true_index: usize,
    /// Partition subset of the clean sample (0-based).
    pub subset: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }
}

/// Draws `b` corrupted copies of `x`, appends the clean sample and applies a
/// uniform random permutation.
pub fn build_candidates<R: Rng + ?Sized>(
    x: &[f64],
    subset: usize,
    spec: &CorruptionSpec,
    rng: &mut R,
) -> CandidateSet {
    let b = spec.b;
    let d = x.len();
    let mut rows: Vec<Vec<f64>> = (0..b).map(|_| corrupt(x, spec, rng)).collect();
    rows.push(x.to_vec());
    let mut order: Vec<usize> = (0..=b).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut data = Vec::with_capacity((b + 1) * d);
    let mut true_index = 0;
    for (pos, &src) in order.iter().enumerate() {
        if src == b {
            true_index = pos;
        }
        data.extend_from_slice(&rows[src]);
    }
    CandidateSet {
        values: Matrix::from_vec_unchecked(b + 1, d, data),
        true_index,
        subset,
    }
}

/// Log-probabilities of a softmax over `scores`, computed with max
/// subtraction.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let (arg, m) = scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(ai, am), (i, &s)| if s > am { (i, s) } else { (ai, am) });
    let rest: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &s)| (s - m).exp())
        .sum();
    let lse = m + rest.ln_1p();
    scores.iter().map(|s| s - lse).collect()
}

fn candidate_scores(net: &MlpNet, beta: &[f64], values: &Matrix) -> Result<Vec<f64>> {
    let out = net.forward_batch(values)?;
    let scores: Vec<f64> = out.row_iter().map(|f| dot(beta, f)).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("network output"));
    }
    Ok(scores)
}

/// Posterior probability that each candidate is the clean sample.
pub fn posterior(model: &EbmModel, cs: &CandidateSet) -> Result<Vec<f64>> {
    if cs.values.cols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "candidate width",
            expected: model.input_dim(),
            found: cs.values.cols(),
        });
    }
    if cs.subset >= model.k() {
        return Err(Error::InvalidDimension(format!("subset {} out of range", cs.subset)));
    }
    let beta = model.b_matrix().column(cs.subset);
    let scores = candidate_scores(model.net(), &beta, &cs.values)?;
    Ok(log_softmax(&scores).into_iter().map(f64::exp).collect())
}

/// Loss value and its gradient with respect to the network parameters.
#[derive(Debug, Clone)]
pub struct NceLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Number of distinct subsets that contributed.
    pub subsets_present: usize,
}

struct SubsetWeights {
    weights: Vec<f64>,
    counts: Vec<usize>,
    present: usize,
}

fn subset_weights(batch: &[CandidateSet], k: usize) -> Result<SubsetWeights> {
    let mut counts = vec![0usize; k];
    for cs in batch {
        if cs.subset >= k {
            return Err(Error::InvalidDimension(format!(
                "candidate subset {} out of range for k = {k}",
                cs.subset
            )));
        }
        counts[cs.subset] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < k {
        log::debug!("nce batch covers {present} of {k} subsets; absent ones are skipped");
    }
    let weights = batch
        .iter()
        .map(|cs| 1.0 / (counts[cs.subset] as f64 * present as f64))
        .collect();
    Ok(SubsetWeights {
        weights,
        counts,
        present,
    })
}

fn check_batch(net: &MlpNet, b: &OrthogonalMatrix, batch: &[CandidateSet]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidDimension("empty NCE batch".into()));
    }
    if net.output_dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "network output width vs B",
            expected: b.dim(),
            found: net.output_dim(),
        });
    }
    for cs in batch {
        if cs.values.cols() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "candidate width",
                expected: net.input_dim(),
                found: cs.values.cols(),
            });
        }
        if cs.true_index >= cs.len() {
            return Err(Error::InvalidDimension("true index outside candidate set".into()));
        }
    }
    Ok(())
}

/// Negative ranking objective: minus the mean log posterior of the clean
/// candidate, averaged within each subset and then across the subsets
/// present in the batch.
pub fn nce_loss(net: &MlpNet, b: &OrthogonalMatrix, batch: &[CandidateSet]) -> Result<f64> {
    check_batch(net, b, batch)?;
    let k = b.dim();
    let sw = subset_weights(batch, k)?;
    let betas = b.columns();
    let mut per_subset = vec![0.0; k];
    for cs in batch {
        let scores = candidate_scores(net, &betas[cs.subset], &cs.values)?;
        per_subset[cs.subset] -= log_softmax(&scores)[cs.true_index];
    }
    Ok(combine(&per_subset, &sw))
}

fn combine(per_subset: &[f64], sw: &SubsetWeights) -> f64 {
    let total: f64 = per_subset
        .iter()
        .zip(&sw.counts)
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| s / c as f64)
        .sum();
    total / sw.present as f64
}

/// [`nce_loss`] together with its exact gradient.
pub fn nce_loss_and_grad(
    net: &MlpNet,
    b: &OrthogonalMatrix,
    batch: &[CandidateSet],
) -> Result<NceLoss> {
    check_batch(net, b, batch)?;
    let k = b.dim();
    let d = net.input_dim();
    let sw = subset_weights(batch, k)?;
    let betas = b.columns();

    let total_rows: usize = batch.iter().map(CandidateSet::len).sum();
    let mut stacked = Vec::with_capacity(total_rows * d);
    for cs in batch {
        stacked.extend_from_slice(cs.values.as_slice());
    }
    let stacked = Matrix::from_vec_unchecked(total_rows, d, stacked);
    let cache = net.forward_cached(&stacked)?;
    let out = cache.output();
    if !out.is_finite() {
        return Err(Error::NonFinite("network output"));
    }

    let mut upstream = Matrix::zeros(total_rows, k);
    let mut per_subset = vec![0.0; k];
    let mut row = 0;
    for (cs, &w) in batch.iter().zip(&sw.weights) {
        let beta = &betas[cs.subset];
        let scores: Vec<f64> = (row..row + cs.len()).map(|r| dot(beta, out.row(r))).collect();
        let logq = log_softmax(&scores);
        per_subset[cs.subset] -= logq[cs.true_index];
        for (c, lq) in logq.iter().enumerate() {
            let indicator = if c == cs.true_index { 1.0 } else { 0.0 };
            let ds = w * (lq.exp() - indicator);
            for (u, bv) in upstream.row_mut(row + c).iter_mut().zip(beta) {
                *u = ds * bv;
            }
        }
        row += cs.len();
    }
    let grad = net.backward(&cache, &upstream)?;
    Ok(NceLoss {
        loss: combine(&per_subset, &sw),
        grad,
        subsets_present: sw.present,
    })
}

/// Training hyperparameters for [`train_ebm`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Representation dimension, equal to the number of partition subsets.
    pub k: usize,
    pub hidden: Vec<usize>,
    /// Corrupted copies per clean sample.
    pub b: usize,
    /// Per-feature corruption probability.
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Drives initialization, the validation split and corruption noise.
    pub seed: u64,
    /// Drives `B` and the k-means partition.
    pub b_seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    /// Per-feature kinds; `None` treats every feature as continuous.
    pub feature_kinds: Option<Vec<FeatureKind>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 4,
            hidden: vec![20, 20, 20],
            b: 10,
            rho: 0.5,
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            b_seed: 0,
            patience: 30,
            val_fraction: 0.2,
            feature_kinds: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.b == 0 {
            return bad("b must be at least 1");
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad("rho must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    pub fn corruption_spec(&self, d: usize) -> Result<CorruptionSpec> {
        match &self.feature_kinds {
            Some(kinds) => {
                if kinds.len() != d {
                    return Err(Error::DimensionMismatch {
                        context: "feature kinds vs covariates",
                        expected: d,
                        found: kinds.len(),
                    });
                }
                CorruptionSpec::new(self.rho, kinds.clone(), self.b)
            }
            None => CorruptionSpec::continuous(d, self.rho, self.b),
        }
    }

    pub fn widths(&self, d: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(d);
        w.extend_from_slice(&self.hidden);
        w.push(self.k);
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedEbm {
    pub model: EbmModel,
    /// Epoch 0 is the untrained network.
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainedEbm {
    /// Training log as CSV with columns `epoch,train_loss,val_loss`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.log {
            // no training loss exists before the first epoch
            let train = if r.train_loss.is_nan() { String::new() } else { r.train_loss.to_string() };
            s.push_str(&format!("{},{},{}\n", r.epoch, train, r.val_loss));
        }
        s
    }
}

fn draw_candidates(
    x: &Matrix,
    rows: &[usize],
    labels: &[usize],
    spec: &CorruptionSpec,
    rng: &mut SeededRng,
) -> Vec<CandidateSet> {
    rows.iter()
        .map(|&i| build_candidates(x.row(i), labels[i], spec, rng))
        .collect()
}

/// Splits `rows` into batches that each draw proportionally from every
/// subset.
fn stratified_batches(
    rows: &[usize],
    labels: &[usize],
    k: usize,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Vec<Vec<usize>> {
    let nb = rows.len().div_ceil(batch_size).max(1);
    let mut by_subset: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, &i) in rows.iter().enumerate() {
        by_subset[labels[i]].push(pos);
    }
    let mut batches: Vec<Vec<usize>> = vec![Vec::new(); nb];
    let mut offset = 0;
    for group in &mut by_subset {
        rng.shuffle(group);
        for (p, &pos) in group.iter().enumerate() {
            batches[(p + offset) % nb].push(pos);
        }
        offset += group.len();
    }
    batches.retain(|b| !b.is_empty());
    batches
}

/// Trains the partially randomized EBM on the rows of `x`.
///
/// Fits the partition, fixes `B` (drawn from `config.b_seed` unless given),
/// holds out `val_fraction` of the rows, runs Adam on fresh candidate sets
/// every epoch, keeps the parameters with the lowest validation loss, and
/// finally computes the representation statistics on all of `x`.
pub fn train_ebm(
    x: &Matrix,
    config: &TrainConfig,
    fixed_b: Option<OrthogonalMatrix>,
) -> Result<TrainedEbm> {
    config.validate()?;
    let (n, d) = x.shape();
    let k = config.k;
    if d == 0 {
        return Err(Error::InvalidDimension("no covariates".into()));
    }
    if n < 2 * k {
        return Err(Error::TooFewSamples { needed: 2 * k, got: n });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("training covariates"));
    }
    let spec = config.corruption_spec(d)?;

    let structure = SeededRng::new(config.b_seed);
    let b = match fixed_b {
        Some(b) if b.dim() != k => {
            return Err(Error::DimensionMismatch {
                context: "fixed B vs k",
                expected: k,
                found: b.dim(),
            })
        }
        Some(b) => b,
        None => random_orthogonal(k, &mut structure.split(0))?,
    };
    let partition = kmeans_fit(x, k, &mut structure.split(1), 300, 0.0)?;
    let labels = partition.assign_all(x)?;

    let master = SeededRng::new(config.seed);
    let perm = master.split(0).permutation(n);
    let n_val = ((n as f64 * config.val_fraction).round() as usize).clamp(1, n - k);
    let (val_rows, train_rows) = perm.split_at(n_val);
    let mut train_rows = train_rows.to_vec();
    train_rows.sort_unstable();
    let mut val_rows = val_rows.to_vec();
    val_rows.sort_unstable();

    let mut net = MlpNet::init_uniform(&config.widths(d), &mut master.split(1))?;
    let val_sets = draw_candidates(x, &val_rows, &labels, &spec, &mut master.split(2));
    let mut opt = Adam::new(net.num_params(), config.lr);

    let init_val = nce_loss(&net, &b, &val_sets)?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        val_loss: init_val,
    }];
    let mut best = (init_val, 0usize, net.params().to_vec());
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        let mut rng = master.split(1000 + epoch as u64);
        let sets = draw_candidates(x, &train_rows, &labels, &spec, &mut rng);
        let batches = stratified_batches(&train_rows, &labels, k, config.batch_size, &mut rng);
        let mut weighted = 0.0;
        for batch in &batches {
            let members: Vec<CandidateSet> = batch.iter().map(|&p| sets[p].clone()).collect();
            let out = nce_loss_and_grad(&net, &b, &members).map_err(|e| diverged(e, epoch))?;
            if !out.loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    last_finite_epoch: epoch - 1,
                });
            }
            weighted += out.loss * members.len() as f64;
            opt.step(net.params_mut(), &out.grad)
                .map_err(|e| diverged(e, epoch))?;
        }
        let train_loss = weighted / train_rows.len() as f64;
        let val_loss = nce_loss(&net, &b, &val_sets).map_err(|e| diverged(e, epoch))?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                last_finite_epoch: epoch - 1,
            });
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, net.params().to_vec());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::debug!("early stop at epoch {epoch}, best epoch {}", best.1);
                break;
            }
        }
    }

    net.set_params(&best.2)?;
    let fingerprint = ModelFingerprint {
        input_dim: d as u64,
        k: k as u64,
        corruption_hash: spec.fingerprint(),
        init_seed: config.seed,
        b_seed: config.b_seed,
        config_hash: 0,
    };
    let mut model = EbmModel::new(net, b, partition, fingerprint)?;
    model.fit_repr_stats(x)?;
    Ok(TrainedEbm {
        model,
        log,
        best_epoch: best.1,
        best_val_loss: best.0,
    })
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(_) | Error::TrainingDiverged { .. } => Error::TrainingDiverged {
            last_finite_epoch: epoch - 1,
        },
        other => other,
    }
}

/// Maximizes `Σ_a w_a log v_a` over the probability simplex by projected
/// gradient ascent, starting from the uniform vector. The maximizer is
/// `v = w`, which is what makes the ranking loss recover the true
/// posterior at the population level.
pub fn maximize_expected_log_score(w: &[f64], steps: usize) -> Vec<f64> {
    let n = w.len();
    assert!(n > 0);
    let floor = 1e-12;
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..steps {
        // step size tied to the smallest coordinate keeps the iteration
        // inside the curvature bound 1/v_a of the objective
        let eta = 0.5 * v.iter().cloned().fold(f64::INFINITY, f64::min);
        let moved: Vec<f64> = v.iter().zip(w).map(|(vi, wi)| vi + eta * wi / vi).collect();
        v = project_to_simplex(&moved, floor);
    }
    v
}

/// Euclidean projection onto `{v : v_a ≥ floor, Σ v_a = 1}`.
pub fn project_to_simplex(y: &[f64], floor: f64) -> Vec<f64> {
    let n = y.len();
    let budget = 1.0 - floor * n as f64;
    let shifted: Vec<f64> = y.iter().map(|v| v - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - budget) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    shifted.iter().map(|v| (v - theta).max(0.0) + floor).collect()
}
