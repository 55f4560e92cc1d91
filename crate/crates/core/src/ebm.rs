//! The partially randomized EBM: one shared network `f`, a fixed random
//! orthogonal matrix `B` whose column `j` scores subset `j`, the k-means
//! partition, and the standardization statistics of the representation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ColumnStats, Matrix, MlpNet, OrthogonalMatrix};
use crate::partition::PartitionModel;

/// Identifies how a model was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelFingerprint {
    pub input_dim: u64,
    pub k: u64,
    pub corruption_hash: u64,
    pub init_seed: u64,
    pub b_seed: u64,
    /// Fingerprint of the experiment configuration, 0 when trained outside
    /// a configured experiment.
    pub config_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbmModel {
    net: MlpNet,
    b: OrthogonalMatrix,
    partition: PartitionModel,
    repr_stats: Option<ColumnStats>,
    fingerprint: ModelFingerprint,
}

impl EbmModel {
    pub fn new(
        net: MlpNet,
        b: OrthogonalMatrix,
        partition: PartitionModel,
        fingerprint: ModelFingerprint,
    ) -> Result<Self> {
        let k = b.dim();
        if net.output_dim() != k {
            return Err(Error::DimensionMismatch {
                context: "network output width vs B",
                expected: k,
                found: net.output_dim(),
            });
        }
        if partition.k() != k {
            return Err(Error::DimensionMismatch {
                context: "partition size vs B",
                expected: k,
                found: partition.k(),
            });
        }
        if partition.dim() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "partition dimension vs network input",
                expected: net.input_dim(),
                found: partition.dim(),
            });
        }
        Ok(EbmModel {
            net,
            b,
            partition,
            repr_stats: None,
            fingerprint,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn k(&self) -> usize {
        self.b.dim()
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.net
    }

    pub fn b_matrix(&self) -> &OrthogonalMatrix {
        &self.b
    }

    pub fn partition(&self) -> &PartitionModel {
        &self.partition
    }

    pub fn repr_stats(&self) -> Option<&ColumnStats> {
        self.repr_stats.as_ref()
    }

    pub fn fingerprint(&self) -> &ModelFingerprint {
        &self.fingerprint
    }

    pub fn set_config_hash(&mut self, hash: u64) {
        self.fingerprint.config_hash = hash;
    }

    /// Hash of the exact bits of `B`; models are only comparable when this
    /// agrees.
    pub fn b_fingerprint(&self) -> u64 {
        let mut h = crc32fast::Hasher::new();
        for v in self.b.as_matrix().as_slice() {
            h.update(&v.to_le_bytes());
        }
        let lo = h.finalize() as u64;
        (self.k() as u64) << 32 | lo
    }

    /// Energy of `x` under subset `j` (0-based): `β_jᵀ f(x)`.
    pub fn energy(&self, x: &[f64], j: usize) -> Result<f64> {
        if j >= self.k() {
            return Err(Error::InvalidDimension(format!(
                "subset index {j} out of range for k = {}",
                self.k()
            )));
        }
        let f = self.net.forward(x)?;
        let beta = self.b.column(j);
        Ok(crate::numerics::dot(&beta, &f))
    }

    /// Raw network outputs `f(x_i)`, one row per input row.
    pub fn raw_representation(&self, x: &Matrix) -> Result<Matrix> {
        let out = self.net.forward_batch(x)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("network output"));
        }
        Ok(out)
    }

    /// Representations of the rows of `x`, standardized with the training
    /// statistics when `use_train_stats` is set.
    pub fn represent(&self, x: &Matrix, use_train_stats: bool) -> Result<Matrix> {
        let raw = self.raw_representation(x)?;
        if !use_train_stats {
            return Ok(raw);
        }
        let stats = self.repr_stats.as_ref().ok_or(Error::UntrainedModel)?;
        stats.apply(&raw)
    }

    /// Computes and stores standardization statistics from `x`.
    pub fn fit_repr_stats(&mut self, x: &Matrix) -> Result<()> {
        let raw = self.raw_representation(x)?;
        let (_, stats) = crate::numerics::standardize_columns(&raw)?;
        self.repr_stats = Some(stats);
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, format::encode(self))
            .map_err(|e| Error::io(format!("writing model {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading model {}", path.display()), e))?;
        format::decode(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        format::decode(bytes)
    }
}

/// `PREB` container: magic, `u16` version, five tagged length-prefixed
/// sections (partition, B, network, statistics, fingerprint), trailing
/// CRC32 of everything before it. All integers and floats little-endian.
pub mod format {
    use super::*;
    use crate::numerics::OrthogonalMatrix;

    pub const MAGIC: &[u8; 4] = b"PREB";
    pub const VERSION: u16 = 1;

    const TAG_PARTITION: u8 = 1;
    const TAG_B: u8 = 2;
    const TAG_NET: u8 = 3;
    const TAG_STATS: u8 = 4;
    const TAG_FINGERPRINT: u8 = 5;

    #[derive(Default)]
    struct Writer(Vec<u8>);

    impl Writer {
        fn u8(&mut self, v: u8) {
            self.0.push(v);
        }
        fn u64(&mut self, v: u64) {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        fn f64(&mut self, v: f64) {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        fn f64s(&mut self, vs: &[f64]) {
            for &v in vs {
                self.f64(v);
            }
        }
        fn section(&mut self, tag: u8, body: Writer) {
            self.u8(tag);
            self.u64(body.0.len() as u64);
            self.0.extend_from_slice(&body.0);
        }
    }

    struct Reader<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
            if end > self.buf.len() {
                return Err(Error::Truncated);
            }
            let s = &self.buf[self.pos..end];
            self.pos = end;
            Ok(s)
        }
        fn u8(&mut self) -> Result<u8> {
            Ok(self.take(1)?[0])
        }
        fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        fn usize(&mut self) -> Result<usize> {
            usize::try_from(self.u64()?).map_err(|_| Error::MalformedModel("size overflow".into()))
        }
        fn f64(&mut self) -> Result<f64> {
            Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
            if n.checked_mul(8).is_none_or(|b| b > self.buf.len() - self.pos) {
                return Err(Error::Truncated);
            }
            (0..n).map(|_| self.f64()).collect()
        }
        fn section(&mut self, tag: u8) -> Result<Reader<'a>> {
            let found = self.u8()?;
            if found != tag {
                return Err(Error::MalformedModel(format!(
                    "expected section {tag}, found {found}"
                )));
            }
            let len = self.usize()?;
            Ok(Reader {
                buf: self.take(len)?,
                pos: 0,
            })
        }
        fn finish(&self) -> Result<()> {
            if self.pos != self.buf.len() {
                return Err(Error::MalformedModel("trailing bytes in section".into()));
            }
            Ok(())
        }
    }

    pub fn encode(model: &EbmModel) -> Vec<u8> {
        let mut w = Writer::default();
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());

        let mut s = Writer::default();
        let c = model.partition.centroids();
        s.u64(c.rows() as u64);
        s.u64(c.cols() as u64);
        s.f64(model.partition.inertia());
        s.f64s(c.as_slice());
        w.section(TAG_PARTITION, s);

        let mut s = Writer::default();
        s.u64(model.k() as u64);
        s.f64s(model.b.as_matrix().as_slice());
        w.section(TAG_B, s);

        let mut s = Writer::default();
        let widths = model.net.widths();
        s.u64(widths.len() as u64);
        for &wd in widths {
            s.u64(wd as u64);
        }
        s.u64(model.net.num_params() as u64);
        s.f64s(model.net.params());
        w.section(TAG_NET, s);

        let mut s = Writer::default();
        match &model.repr_stats {
            Some(st) => {
                s.u8(1);
                s.u64(st.means.len() as u64);
                s.f64s(&st.means);
                s.f64s(&st.stds);
            }
            None => s.u8(0),
        }
        w.section(TAG_STATS, s);

        let mut s = Writer::default();
        let fp = &model.fingerprint;
        for v in [
            fp.input_dim,
            fp.k,
            fp.corruption_hash,
            fp.init_seed,
            fp.b_seed,
            fp.config_hash,
        ] {
            s.u64(v);
        }
        w.section(TAG_FINGERPRINT, s);

        let crc = crc32fast::hash(&w.0);
        w.0.extend_from_slice(&crc.to_le_bytes());
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<EbmModel> {
        if bytes.len() < 6 {
            return Err(Error::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        // structural walk first so truncation and corruption are reported
        // before any payload is interpreted
        let mut walk = Reader { buf: bytes, pos: 6 };
        for _ in 0..5 {
            walk.u8()?;
            let len = walk.usize()?;
            walk.take(len)?;
        }
        let body_end = walk.pos;
        let crc_bytes = walk.take(4)?;
        if walk.pos != bytes.len() {
            return Err(Error::MalformedModel("trailing bytes after checksum".into()));
        }
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32fast::hash(&bytes[..body_end]) != stored {
            return Err(Error::ChecksumMismatch);
        }

        let mut r = Reader {
            buf: &bytes[..body_end],
            pos: 6,
        };
        let mut s = r.section(TAG_PARTITION)?;
        let (k, d) = (s.usize()?, s.usize()?);
        let inertia = s.f64()?;
        let centroids = Matrix::from_vec(k, d, s.f64s(k * d)?)?;
        s.finish()?;

        let mut s = r.section(TAG_B)?;
        let kb = s.usize()?;
        let b = OrthogonalMatrix::new(Matrix::from_vec(kb, kb, s.f64s(kb * kb)?)?)?;
        s.finish()?;

        let mut s = r.section(TAG_NET)?;
        let nw = s.usize()?;
        let widths = (0..nw).map(|_| s.usize()).collect::<Result<Vec<_>>>()?;
        let np = s.usize()?;
        let net = MlpNet::from_params(&widths, s.f64s(np)?)?;
        s.finish()?;

        let mut s = r.section(TAG_STATS)?;
        let repr_stats = match s.u8()? {
            0 => None,
            1 => {
                let m = s.usize()?;
                let means = s.f64s(m)?;
                let stds = s.f64s(m)?;
                if m != kb || stds.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::MalformedModel("invalid representation statistics".into()));
                }
                Some(ColumnStats { means, stds })
            }
            t => return Err(Error::MalformedModel(format!("bad statistics flag {t}"))),
        };
        s.finish()?;

        let mut s = r.section(TAG_FINGERPRINT)?;
        let fingerprint = ModelFingerprint {
            input_dim: s.u64()?,
            k: s.u64()?,
            corruption_hash: s.u64()?,
            init_seed: s.u64()?,
            b_seed: s.u64()?,
            config_hash: s.u64()?,
        };
        s.finish()?;

        let partition = PartitionModel::from_parts(centroids, inertia);
        let mut model = EbmModel::new(net, b, partition, fingerprint)?;
        model.repr_stats = repr_stats;
        Ok(model)
    }
}
