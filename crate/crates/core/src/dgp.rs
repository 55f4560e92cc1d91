//! Latent-variable synthetic generator with oracle effects, and CSV
//! ingestion/export for datasets and feature matrices.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{mix_seed, Matrix, MlpNet, SeededRng};

const HIDDEN: [usize; 3] = [16, 16, 16];
const OVERLAP_MARGIN: f64 = 0.02;
const MAX_ATTEMPTS: u64 = 5;

/// Frozen generator networks.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    latent_dim: usize,
    d: usize,
    seed: u64,
    g: MlpNet,
    mu0: MlpNet,
    mu1: MlpNet,
    pi: MlpNet,
    literal_outcome: bool,
}

/// Builds a generator with `latent_dim = 5`.
pub fn gen_dgp(seed: u64, d: usize) -> Result<DgpSpec> {
    gen_dgp_with_latent(seed, d, 5)
}

pub fn gen_dgp_with_latent(seed: u64, d: usize, latent_dim: usize) -> Result<DgpSpec> {
    if d == 0 || latent_dim == 0 {
        return Err(Error::InvalidDimension(
            "generator needs d >= 1 and latent dim >= 1".into(),
        ));
    }
    let root = SeededRng::new(seed);
    let mut widths = vec![latent_dim];
    widths.extend_from_slice(&HIDDEN);
    widths.push(d);
    let g = MlpNet::init_gaussian(&widths, &mut root.split(0))?;
    let mu0 = MlpNet::init_gaussian(&[latent_dim, 1], &mut root.split(1))?;
    let mu1 = MlpNet::init_gaussian(&[latent_dim, 1], &mut root.split(2))?;
    let mut pi = MlpNet::init_gaussian(&[latent_dim, 1], &mut root.split(3))?;
    // narrower logits keep π inside the overlap margin on large samples
    for w in pi.params_mut() {
        *w *= 0.5;
    }
    Ok(DgpSpec {
        latent_dim,
        d,
        seed,
        g,
        mu0,
        mu1,
        pi,
        literal_outcome: false,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DgpSpec {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Attach `μ0` to the treated arm and `μ1` to controls, as the outcome
    /// equation is printed in the source description. The oracle effect is
    /// still `μ1 − μ0`.
    pub fn with_literal_outcome(mut self, literal: bool) -> Self {
        self.literal_outcome = literal;
        self
    }

    /// Copies the control outcome network into the treated one, giving a
    /// null effect everywhere.
    pub fn with_tied_outcomes(mut self) -> Self {
        self.mu1 = self.mu0.clone();
        self
    }

    pub fn g(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.g.forward(u)
    }

    pub fn mu0(&self, u: &[f64]) -> Result<f64> {
        Ok(self.mu0.forward(u)?[0].exp())
    }

    pub fn mu1(&self, u: &[f64]) -> Result<f64> {
        Ok(self.mu1.forward(u)?[0].exp())
    }

    pub fn propensity(&self, u: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.pi.forward(u)?[0]))
    }

    /// Draws `n` rows. A draw with an empty arm or a propensity outside the
    /// overlap margin is retried on a derived seed, at most five times.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let mut reason = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            let s = if attempt == 0 { seed } else { mix_seed(seed, attempt) };
            match self.sample_once(n, s)? {
                Ok(ds) => return Ok(ds),
                Err(why) => {
                    log::warn!("dgp draw {attempt} rejected: {why}");
                    reason = why;
                }
            }
        }
        Err(Error::DegenerateDraw {
            attempts: MAX_ATTEMPTS as usize,
            reason,
        })
    }

    fn sample_once(&self, n: usize, seed: u64) -> Result<std::result::Result<Dataset, String>> {
        let mut rng = SeededRng::new(seed);
        let (ds, dd) = (self.latent_dim, self.d);
        let mut u = Vec::with_capacity(n * ds);
        let mut x = Vec::with_capacity(n * dd);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut oracle = Oracle::with_capacity(n);
        for _ in 0..n {
            let ui: Vec<f64> = (0..ds).map(|_| rng.normal()).collect();
            let gi = self.g(&ui)?;
            x.extend(gi.iter().map(|v| v + rng.normal()));
            let p = self.propensity(&ui)?;
            if !(OVERLAP_MARGIN..=1.0 - OVERLAP_MARGIN).contains(&p) {
                return Ok(Err(format!("propensity {p} outside overlap margin")));
            }
            let treated = rng.uniform() < p;
            let eps = rng.normal();
            let (m0, m1) = (self.mu0(&ui)?, self.mu1(&ui)?);
            let mean = match (treated, self.literal_outcome) {
                (true, false) | (false, true) => m1,
                _ => m0,
            };
            y.push(mean + eps);
            a.push(treated);
            oracle.push(m1 - m0, m0, m1, p, eps);
            u.extend_from_slice(&ui);
        }
        oracle.u = Some(Matrix::from_vec(n, ds, u)?);
        let treated = a.iter().filter(|&&t| t).count();
        if treated == 0 || treated == n {
            return Ok(Err("all rows in one arm".into()));
        }
        let ds = Dataset::new(Matrix::from_vec(n, dd, x)?, a, y, Some(oracle))?;
        Ok(Ok(ds))
    }
}

/// Linear benchmark: `X ~ N(0, I_d)`, `π = σ(0.5 x₀)`, `μ0 = Σ x_f / √d`,
/// `τ = 2 x₁` (`τ = 2 x₀` when `d = 1`), unit outcome noise.
pub fn sample_linear(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if d == 0 {
        return Err(Error::InvalidDimension("d must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut rng = SeededRng::new(seed);
    let mut x = Vec::with_capacity(n * d);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut oracle = Oracle::with_capacity(n);
    let scale = 1.0 / (d as f64).sqrt();
    for _ in 0..n {
        let xi: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let p = sigmoid(0.5 * xi[0]);
        let treated = rng.uniform() < p;
        let eps = rng.normal();
        let m0 = xi.iter().sum::<f64>() * scale;
        let tau = 2.0 * xi[d.min(2) - 1];
        let m1 = m0 + tau;
        y.push(if treated { m1 } else { m0 } + eps);
        a.push(treated);
        oracle.push(tau, m0, m1, p, eps);
        x.extend_from_slice(&xi);
    }
    Dataset::new(Matrix::from_vec(n, d, x)?, a, y, Some(oracle))
}

/// Ground truth carried alongside generated or semi-synthetic data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Oracle {
    pub tau: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    pub pi: Option<Vec<f64>>,
    pub u: Option<Matrix>,
    /// Outcome noise draws. Kept in memory only, never written to CSV.
    pub eps: Option<Vec<f64>>,
}

impl Oracle {
    fn with_capacity(n: usize) -> Self {
        Oracle {
            tau: Some(Vec::with_capacity(n)),
            mu0: Some(Vec::with_capacity(n)),
            mu1: Some(Vec::with_capacity(n)),
            pi: Some(Vec::with_capacity(n)),
            u: None,
            eps: Some(Vec::with_capacity(n)),
        }
    }

    fn push(&mut self, tau: f64, m0: f64, m1: f64, p: f64, eps: f64) {
        for (col, v) in [
            (&mut self.tau, tau),
            (&mut self.mu0, m0),
            (&mut self.mu1, m1),
            (&mut self.pi, p),
            (&mut self.eps, eps),
        ] {
            col.as_mut().expect("allocated").push(v);
        }
    }

    fn select(&self, idx: &[usize]) -> Oracle {
        let pick = |v: &Option<Vec<f64>>| v.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect());
        Oracle {
            tau: pick(&self.tau),
            mu0: pick(&self.mu0),
            mu1: pick(&self.mu1),
            pi: pick(&self.pi),
            u: self.u.as_ref().map(|u| u.select_rows(idx)),
            eps: pick(&self.eps),
        }
    }

    fn lengths(&self) -> impl Iterator<Item = usize> + '_ {
        [&self.tau, &self.mu0, &self.mu1, &self.pi, &self.eps]
            .into_iter()
            .flatten()
            .map(Vec::len)
            .chain(self.u.as_ref().map(Matrix::rows))
    }
}

/// Covariates, binary treatment and outcome, with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    a: Vec<bool>,
    y: Vec<f64>,
    oracle: Option<Oracle>,
}

impl Dataset {
    pub fn new(x: Matrix, a: Vec<bool>, y: Vec<f64>, oracle: Option<Oracle>) -> Result<Self> {
        let n = x.rows();
        if a.len() != n || y.len() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset column lengths",
                expected: n,
                found: if a.len() != n { a.len() } else { y.len() },
            });
        }
        if let Some(o) = &oracle {
            if let Some(bad) = o.lengths().find(|&l| l != n) {
                return Err(Error::DimensionMismatch {
                    context: "oracle column length",
                    expected: n,
                    found: bad,
                });
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome"));
        }
        Ok(Dataset { x, a, y, oracle })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn treatment(&self) -> &[bool] {
        &self.a
    }

    pub fn outcome(&self) -> &[f64] {
        &self.y
    }

    pub fn oracle(&self) -> Option<&Oracle> {
        self.oracle.as_ref()
    }

    pub fn tau(&self) -> Option<&[f64]> {
        self.oracle.as_ref()?.tau.as_deref()
    }

    pub fn n_treated(&self) -> usize {
        self.a.iter().filter(|&&t| t).count()
    }

    /// Errors when either arm is empty.
    pub fn check_arms(&self) -> Result<()> {
        let t = self.n_treated();
        if t == 0 {
            return Err(Error::EmptyArm("treated"));
        }
        if t == self.n() {
            return Err(Error::EmptyArm("control"));
        }
        Ok(())
    }

    /// Same labels with a different feature matrix (e.g. a representation).
    pub fn with_features(&self, x: Matrix) -> Result<Dataset> {
        Dataset::new(x, self.a.clone(), self.y.clone(), self.oracle.clone())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            oracle: self.oracle.as_ref().map(|o| o.select(idx)),
        }
    }

    /// CSV text with columns `x0..,a,y` followed by whichever of
    /// `tau,mu0,mu1,pi,u0..` are present.
    pub fn to_csv_string(&self) -> String {
        let mut header: Vec<String> = (0..self.d()).map(|i| format!("x{i}")).collect();
        header.push("a".into());
        header.push("y".into());
        let o = self.oracle.clone().unwrap_or_default();
        let extra: Vec<(&str, &Vec<f64>)> = [
            ("tau", &o.tau),
            ("mu0", &o.mu0),
            ("mu1", &o.mu1),
            ("pi", &o.pi),
        ]
        .into_iter()
        .filter_map(|(name, v)| v.as_ref().map(|v| (name, v)))
        .collect();
        header.extend(extra.iter().map(|(n, _)| n.to_string()));
        if let Some(u) = &o.u {
            header.extend((0..u.cols()).map(|i| format!("u{i}")));
        }
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.n() {
            let mut fields: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            fields.push(if self.a[i] { "1" } else { "0" }.into());
            fields.push(self.y[i].to_string());
            fields.extend(extra.iter().map(|(_, v)| v[i].to_string()));
            if let Some(u) = &o.u {
                fields.extend(u.row(i).iter().map(|v| v.to_string()));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv_string())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut f = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(ctx(), e))
}

/// Column roles for [`load_csv`]. Oracle columns named `tau`, `mu0`,
/// `mu1`, `pi` and `u0..` are picked up whenever present.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    /// Covariate column names; empty selects every `x<index>` column in
    /// index order.
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            covariates: Vec::new(),
            treatment: "a".into(),
            outcome: "y".into(),
        }
    }
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    /// Parsed cells; `lines[r]` is the 1-based file line of row `r`.
    cells: Vec<Vec<f64>>,
    raw: Vec<Vec<String>>,
    lines: Vec<usize>,
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| Error::MissingColumn {
            path: self.path.clone(),
            column: name.to_string(),
        })
    }

    /// Parses column `c` as numbers, reporting the first bad cell.
    fn numeric(&self, c: usize) -> Result<Vec<f64>> {
        self.cells
            .iter()
            .zip(&self.raw)
            .zip(&self.lines)
            .map(|((row, raw), &line)| {
                let v = row[c];
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonNumeric {
                        path: self.path.clone(),
                        row: line,
                        column: self.header[c].clone(),
                        value: raw[c].clone(),
                    })
                }
            })
            .collect()
    }

    fn matrix(&self, cols: &[usize]) -> Result<Matrix> {
        let parsed: Vec<Vec<f64>> = cols.iter().map(|&c| self.numeric(c)).collect::<Result<_>>()?;
        let n = self.cells.len();
        let mut data = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            data.extend(parsed.iter().map(|col| col[r]));
        }
        Matrix::from_vec(n, cols.len(), data)
    }

    /// Columns named `<prefix><index>`, ordered by index.
    fn indexed(&self, prefix: &str) -> Vec<usize> {
        let mut found: Vec<(usize, usize)> = self
            .header
            .iter()
            .enumerate()
            .filter_map(|(c, h)| {
                let rest = h.strip_prefix(prefix)?;
                if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                Some((rest.parse().ok()?, c))
            })
            .collect();
        found.sort_unstable();
        found.into_iter().map(|(_, c)| c).collect()
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let shown = path.to_path_buf();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(&shown, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(&shown, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.iter().all(String::is_empty) {
        return Err(Error::EmptyFile { path: shown });
    }
    let mut cells = Vec::new();
    let mut raw = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(&shown, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
        cells.push(
            fields
                .iter()
                .map(|f| f.parse::<f64>().unwrap_or(f64::NAN))
                .collect(),
        );
        raw.push(fields);
        lines.push(line);
    }
    if cells.is_empty() {
        return Err(Error::EmptyFile { path: shown });
    }
    Ok(Table {
        path: shown,
        header,
        cells,
        raw,
        lines,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(format!("reading {}", path.display()), source),
        other => Error::MalformedCsv {
            path: path.to_path_buf(),
            row,
            message: format!("{other:?}"),
        },
    }
}

/// Reads a dataset file. Row numbers in errors are 1-based file lines
/// (the header is line 1).
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let t = read_table(path.as_ref())?;
    let cov_cols: Vec<usize> = if schema.covariates.is_empty() {
        let cols = t.indexed("x");
        if cols.is_empty() {
            return Err(Error::MissingColumn {
                path: t.path.clone(),
                column: "x0".into(),
            });
        }
        cols
    } else {
        schema
            .covariates
            .iter()
            .map(|c| t.require(c))
            .collect::<Result<_>>()?
    };
    let x = t.matrix(&cov_cols)?;
    let ac = t.require(&schema.treatment)?;
    let yc = t.require(&schema.outcome)?;
    let mut a = Vec::with_capacity(t.cells.len());
    for ((row, raw), &line) in t.cells.iter().zip(&t.raw).zip(&t.lines) {
        match row[ac] {
            v if v == 0.0 => a.push(false),
            v if v == 1.0 => a.push(true),
            _ => {
                return Err(Error::NonBinaryTreatment {
                    path: t.path.clone(),
                    row: line,
                    value: raw[ac].clone(),
                })
            }
        }
    }
    let y = t.numeric(yc)?;
    let opt = |name: &str| t.column(name).map(|c| t.numeric(c)).transpose();
    let u_cols = t.indexed("u");
    let oracle = Oracle {
        tau: opt("tau")?,
        mu0: opt("mu0")?,
        mu1: opt("mu1")?,
        pi: opt("pi")?,
        u: if u_cols.is_empty() {
            None
        } else {
            Some(t.matrix(&u_cols)?)
        },
        eps: None,
    };
    let has_oracle = oracle != Oracle::default();
    let ds = Dataset::new(x, a, y, has_oracle.then_some(oracle))?;
    log::info!("loaded {}: n = {}, d = {}", t.path.display(), ds.n(), ds.d());
    Ok(ds)
}

/// Feature matrix from a CSV file: the `x<index>` columns of a dataset
/// file when present, otherwise every column.
pub fn read_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let t = read_table(path.as_ref())?;
    let xs = t.indexed("x");
    if !xs.is_empty() {
        return t.matrix(&xs);
    }
    let all: Vec<usize> = (0..t.header.len()).collect();
    t.matrix(&all)
}

/// Matrix as CSV with header `<prefix>0,<prefix>1,..`.
pub fn matrix_to_csv(m: &Matrix, prefix: &str) -> String {
    let header: Vec<String> = (0..m.cols()).map(|i| format!("{prefix}{i}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for r in m.row_iter() {
        let fields: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix, prefix: &str) -> Result<()> {
    write_text(path.as_ref(), &matrix_to_csv(m, prefix))
}

/// Predictions as `id,tau_hat`.
pub fn predictions_to_csv(tau_hat: &[f64]) -> String {
    let mut out = String::from("id,tau_hat\n");
    for (i, v) in tau_hat.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(gen_dgp(4, 10).unwrap(), gen_dgp(4, 10).unwrap());
        assert_ne!(gen_dgp(4, 10).unwrap(), gen_dgp(5, 10).unwrap());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(gen_dgp(0, 0).is_err());
    }

    #[test]
    fn mean_propensity_inside_overlap_band() {
        let g = gen_dgp(1, 100).unwrap();
        let mut rng = SeededRng::new(99);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| {
                let u: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
                g.propensity(&u).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        assert!(mean > 0.05 && mean < 0.95, "{mean}");
    }

    #[test]
    fn outcome_means_positive() {
        let ds = gen_dgp(2, 8).unwrap().sample(500, 3).unwrap();
        let o = ds.oracle().unwrap();
        assert!(o.mu0.as_ref().unwrap().iter().all(|&v| v > 0.0));
        assert!(o.mu1.as_ref().unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn tied_outcomes_give_null_effect() {
        let ds = gen_dgp(2, 4).unwrap().with_tied_outcomes().sample(200, 1).unwrap();
        assert!(ds.tau().unwrap().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn latent_means_and_treated_fraction() {
        let g = gen_dgp(3, 3).unwrap();
        let n = 100_000;
        let ds = g.sample(n, 17).unwrap();
        let u = ds.oracle().unwrap().u.as_ref().unwrap();
        for j in 0..5 {
            let m = u.column(j).iter().sum::<f64>() / n as f64;
            assert!(m.abs() < 0.02, "u{j} mean {m}");
        }
        let frac = ds.n_treated() as f64 / n as f64;
        let mean_pi = ds.oracle().unwrap().pi.as_ref().unwrap().iter().sum::<f64>() / n as f64;
        assert!((frac - mean_pi).abs() < 0.02);
    }

    #[test]
    fn outcome_reconstructs_from_noise() {
        for literal in [false, true] {
            let ds = gen_dgp(6, 5).unwrap().with_literal_outcome(literal).sample(300, 2).unwrap();
            let o = ds.oracle().unwrap();
            let (m0, m1, eps, tau) = (
                o.mu0.as_ref().unwrap(),
                o.mu1.as_ref().unwrap(),
                o.eps.as_ref().unwrap(),
                o.tau.as_ref().unwrap(),
            );
            for i in 0..ds.n() {
                let treated = ds.treatment()[i];
                let mean = if treated != literal { m1[i] } else { m0[i] };
                assert_eq!(ds.outcome()[i], mean + eps[i]);
                assert_eq!(tau[i], m1[i] - m0[i]);
            }
        }
    }

    #[test]
    fn propensities_respect_margin() {
        let ds = gen_dgp(8, 20).unwrap().sample(5000, 8).unwrap();
        let pi = ds.oracle().unwrap().pi.as_ref().unwrap();
        assert!(pi.iter().all(|&p| (0.02..=0.98).contains(&p)));
    }

    #[test]
    fn tiny_sample_rejected() {
        assert!(matches!(
            gen_dgp(0, 3).unwrap().sample(1, 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = gen_dgp(1, 3).unwrap().sample(40, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.write_csv(&p).unwrap();
        let back = load_csv(&p, &CsvSchema::default()).unwrap();
        assert_eq!(back.x(), ds.x());
        assert_eq!(back.treatment(), ds.treatment());
        assert_eq!(back.outcome(), ds.outcome());
        assert_eq!(back.tau(), ds.tau());
        assert_eq!(back.oracle().unwrap().u, ds.oracle().unwrap().u);
    }

    #[test]
    fn linear_generator_effect() {
        let ds = sample_linear(100, 3, 1).unwrap();
        let tau = ds.tau().unwrap();
        for i in 0..100 {
            assert_eq!(tau[i], 2.0 * ds.x()[(i, 1)]);
        }
    }
}
