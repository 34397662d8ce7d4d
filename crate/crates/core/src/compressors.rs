//! Sparsifying compression operators with exact bit accounting.
//!
//! * `RandK(k)`: k coordinates drawn uniformly without replacement, scaled by
//!   `d/k` so that `E[Q(z)] = z` and `E‖Q(z)‖² = (d/k)‖z‖²`.
//! * `TopK(k)`: the k largest-magnitude coordinates, unscaled; ties go to the
//!   lowest index. `‖C(z) − z‖² ≤ (1 − k/d)‖z‖²` for every z.
//! * `Identity`: everything, unscaled.
//!
//! Payload bits count values only (`k·b`); index overhead (`k·⌈log₂ d⌉`) is
//! reported separately and is zero for dense messages.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum CompressorKind {
    Identity,
    RandK(usize),
    TopK(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    pub dim: usize,
    /// Bits per transmitted scalar, 32 or 64.
    pub float_bits: u32,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, dim: usize, float_bits: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("compressor dimension must be >= 1".into()));
        }
        if float_bits != 32 && float_bits != 64 {
            return Err(Error::InvalidParameter(format!(
                "float_bits must be 32 or 64, got {float_bits}"
            )));
        }
        if let CompressorKind::RandK(k) | CompressorKind::TopK(k) = kind {
            if k == 0 || k > dim {
                return Err(Error::InvalidParameter(format!("k = {k} outside 1..={dim}")));
            }
        }
        Ok(Self { kind, dim, float_bits })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            kind: CompressorKind::Identity,
            dim,
            float_bits: 64,
        }
    }

    /// Same compressor with a different scalar width (32 or 64).
    pub fn with_bits(mut self, float_bits: u32) -> Self {
        debug_assert!(float_bits == 32 || float_bits == 64);
        self.float_bits = float_bits;
        self
    }

    /// `k` such that `k/d` is the closest value to `fraction`, at least 1.
    pub fn k_for_fraction(dim: usize, fraction: f64) -> usize {
        ((fraction * dim as f64).round() as usize).clamp(1, dim)
    }

    pub fn is_unbiased(&self) -> bool {
        !matches!(self.kind, CompressorKind::TopK(_))
    }

    fn retained(&self) -> usize {
        match self.kind {
            CompressorKind::Identity => self.dim,
            CompressorKind::RandK(k) | CompressorKind::TopK(k) => k,
        }
    }

    /// `q` for unbiased compressors, `δ` for contractive ones: `d/k`.
    pub fn variance_param(&self) -> f64 {
        self.dim as f64 / self.retained() as f64
    }

    /// β: ratio of dense to compressed payload bits.
    pub fn expected_density(&self) -> f64 {
        self.variance_param()
    }

    pub fn payload_bits(&self) -> u64 {
        self.retained() as u64 * self.float_bits as u64
    }

    pub fn index_bits(&self) -> u64 {
        match self.kind {
            CompressorKind::Identity => 0,
            CompressorKind::RandK(k) | CompressorKind::TopK(k) => k as u64 * index_width(self.dim),
        }
    }
}

/// `⌈log₂ d⌉`, the bits needed to address one of `d` coordinates.
pub fn index_width(dim: usize) -> u64 {
    if dim <= 1 {
        0
    } else {
        u64::from(usize::BITS - (dim - 1).leading_zeros())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressedMessage {
    pub kind: CompressorKind,
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub payload_bits: u64,
    pub index_bits: u64,
}

/// Dense uncompressed message, used for full synchronisations.
pub fn dense_message(z: &[f64], float_bits: u32) -> CompressedMessage {
    CompressedMessage {
        kind: CompressorKind::Identity,
        dim: z.len(),
        indices: (0..z.len() as u32).collect(),
        values: z.to_vec(),
        payload_bits: z.len() as u64 * float_bits as u64,
        index_bits: 0,
    }
}

pub fn compress<R: Rng + ?Sized>(spec: &CompressorSpec, z: &[f64], rng: &mut R) -> Result<CompressedMessage> {
    check_dim(spec.dim, z.len())?;
    let d = spec.dim;
    let (indices, values) = match spec.kind {
        CompressorKind::Identity => ((0..d as u32).collect(), z.to_vec()),
        CompressorKind::RandK(k) => {
            let scale = d as f64 / k as f64;
            let mut idx: Vec<u32> = rand::seq::index::sample(rng, d, k)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            idx.sort_unstable();
            let values = idx.iter().map(|&i| scale * z[i as usize]).collect();
            (idx, values)
        }
        CompressorKind::TopK(k) => {
            let idx = top_k_indices(z, k);
            let values = idx.iter().map(|&i| z[i as usize]).collect();
            (idx, values)
        }
    };
    Ok(CompressedMessage {
        kind: spec.kind,
        dim: d,
        indices,
        values,
        payload_bits: spec.payload_bits(),
        index_bits: spec.index_bits(),
    })
}

fn top_k_indices(z: &[f64], k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..z.len() as u32).collect();
    // magnitude descending, then index ascending: a total order, so the
    // selected set is unique
    let cmp = |a: &u32, b: &u32| {
        z[*b as usize]
            .abs()
            .total_cmp(&z[*a as usize].abs())
            .then(a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

impl CompressedMessage {
    fn validate(&self) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::MalformedMessage(format!(
                "{} indices but {} values",
                self.indices.len(),
                self.values.len()
            )));
        }
        for w in self.indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::MalformedMessage("indices not strictly increasing".into()));
            }
        }
        if let Some(&last) = self.indices.last() {
            if last as usize >= self.dim {
                return Err(Error::MalformedMessage(format!(
                    "index {last} out of range for dimension {}",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn decompress(&self) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.decompress_into(&mut out)?;
        Ok(out)
    }

    pub fn decompress_into(&self, out: &mut [f64]) -> Result<()> {
        self.validate()?;
        check_dim(self.dim, out.len())?;
        out.fill(0.0);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        Ok(())
    }

    /// Wire form: little-endian `u32` count, `u32` indices, `f64` values.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 12 * self.values.len());
        out.extend_from_slice(&(self.indices.len() as u32).to_le_bytes());
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`encode`](Self::encode); `spec` supplies what the wire
    /// form leaves implicit (dimension, kind, bit widths).
    pub fn decode(bytes: &[u8], spec: &CompressorSpec) -> Result<Self> {
        let short = || Error::MalformedMessage("truncated message".into());
        let count = u32::from_le_bytes(bytes.get(0..4).ok_or_else(short)?.try_into().unwrap()) as usize;
        if bytes.len() != 4 + 12 * count {
            return Err(Error::MalformedMessage(format!(
                "expected {} bytes for {count} entries, got {}",
                4 + 12 * count,
                bytes.len()
            )));
        }
        let (idx_bytes, val_bytes) = bytes[4..].split_at(4 * count);
        let indices = idx_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let values = val_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let dense = spec.kind == CompressorKind::Identity;
        let msg = Self {
            kind: spec.kind,
            dim: spec.dim,
            indices,
            values,
            payload_bits: count as u64 * spec.float_bits as u64,
            index_bits: if dense { 0 } else { count as u64 * index_width(spec.dim) },
        };
        msg.validate()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn rand_k_full_is_identity() {
        let spec = CompressorSpec::new(CompressorKind::RandK(3), 3, 64).unwrap();
        let m = compress(&spec, &[1.0, 2.0, 3.0], &mut rng()).unwrap();
        assert_eq!(m.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn rand_1_of_2_outcomes() {
        let spec = CompressorSpec::new(CompressorKind::RandK(1), 2, 64).unwrap();
        let mut seen = [false; 2];
        let mut r = rng();
        for _ in 0..64 {
            let v = compress(&spec, &[4.0, 0.0], &mut r).unwrap().decompress().unwrap();
            if v == [8.0, 0.0] {
                seen[0] = true;
            } else {
                assert_eq!(v, vec![0.0, 0.0]);
                seen[1] = true;
            }
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn top_k_examples() {
        let spec = CompressorSpec::new(CompressorKind::TopK(1), 3, 64).unwrap();
        let m = compress(&spec, &[3.0, -4.0, 1.0], &mut rng()).unwrap();
        assert_eq!(m.indices, vec![1]);
        assert_eq!(m.values, vec![-4.0]);
        assert_eq!(m.decompress().unwrap(), vec![0.0, -4.0, 0.0]);
    }

    #[test]
    fn top_k_ties_prefer_low_index() {
        let spec = CompressorSpec::new(CompressorKind::TopK(2), 4, 64).unwrap();
        let m = compress(&spec, &[1.0, -1.0, 1.0, 1.0], &mut rng()).unwrap();
        assert_eq!(m.indices, vec![0, 1]);
    }

    #[test]
    fn identity_round_trip() {
        let z = [0.5, -1.25, 3.0, 1e-300];
        let m = compress(&CompressorSpec::identity(4), &z, &mut rng()).unwrap();
        assert_eq!(m.decompress().unwrap(), z.to_vec());
        assert_eq!(m.payload_bits, 256);
        assert_eq!(m.index_bits, 0);
    }

    #[test]
    fn parameters() {
        let r = CompressorSpec::new(CompressorKind::RandK(30), 100, 64).unwrap();
        assert_eq!(r.variance_param(), 100.0 / 30.0);
        assert_eq!(r.expected_density(), 100.0 / 30.0);
        let t = CompressorSpec::new(CompressorKind::TopK(25), 100, 64).unwrap();
        assert_eq!(t.variance_param(), 4.0);
        assert_eq!(t.expected_density(), 4.0);
        let i = CompressorSpec::identity(100);
        assert_eq!((i.variance_param(), i.expected_density()), (1.0, 1.0));
    }

    #[test]
    fn bit_counts() {
        let t = CompressorSpec::new(CompressorKind::TopK(30), 100, 64).unwrap();
        assert_eq!(t.payload_bits(), 1920);
        assert_eq!(t.index_bits(), 210);
        assert_eq!(index_width(100), 7);
        assert_eq!(index_width(128), 7);
        assert_eq!(index_width(129), 8);
        assert_eq!(index_width(2), 1);
    }

    #[test]
    fn invalid_specs() {
        assert!(CompressorSpec::new(CompressorKind::RandK(0), 3, 64).is_err());
        assert!(CompressorSpec::new(CompressorKind::TopK(4), 3, 64).is_err());
        assert!(CompressorSpec::new(CompressorKind::Identity, 3, 16).is_err());
        let spec = CompressorSpec::identity(3);
        assert!(matches!(
            compress(&spec, &[1.0], &mut rng()),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn decompress_rejects_bad_index() {
        let m = CompressedMessage {
            kind: CompressorKind::TopK(1),
            dim: 2,
            indices: vec![2],
            values: vec![1.0],
            payload_bits: 64,
            index_bits: 1,
        };
        assert!(matches!(m.decompress(), Err(Error::MalformedMessage(_))));
    }

    #[test]
    fn wire_round_trip() {
        let spec = CompressorSpec::new(CompressorKind::RandK(7), 50, 64).unwrap();
        let z: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let m = compress(&spec, &z, &mut rng()).unwrap();
        let bytes = m.encode();
        assert_eq!(bytes.len(), 4 + 7 * 12);
        assert_eq!(CompressedMessage::decode(&bytes, &spec).unwrap(), m);
        assert!(CompressedMessage::decode(&bytes[..bytes.len() - 1], &spec).is_err());
    }
}
