//! Dense bipolar hypervector algebra.
//!
//! Hypervectors are stored as `i8` sequences whose elements are exactly -1 or
//! +1. Bundles keep integer sums; prototypes elsewhere in the crate are plain
//! `f64` accumulators. [`cosine`] works across all three through the
//! [`Components`] view.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::splitmix64_at;

/// Default hypervector dimensionality.
pub const DEFAULT_HYPER_DIM: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Hypervector {
    values: Vec<i8>,
}

impl Hypervector {
    pub fn from_values(values: Vec<i8>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("hypervector must have positive dimension"));
        }
        if let Some(pos) = values.iter().position(|&v| v != 1 && v != -1) {
            return Err(invalid(format!(
                "hypervector element {pos} is {} (must be -1 or +1)",
                values[pos]
            )));
        }
        Ok(Self { values })
    }

    /// The all-(+1) vector.
    pub fn ones(dim: usize) -> Self {
        Self { values: vec![1; dim] }
    }

    /// Fair random bipolar vector.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(dim);
        while values.len() < dim {
            let word: u64 = rng.gen();
            for bit in 0..64.min(dim - values.len()) {
                values.push(if (word >> bit) & 1 == 1 { 1 } else { -1 });
            }
        }
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    /// Pack signs into bytes, +1 as a set bit, little-endian bit order.
    pub fn to_bits(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.values.len().div_ceil(8)];
        for (i, &v) in self.values.iter().enumerate() {
            if v > 0 {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }
}

/// Component-wise sum of bipolar hypervectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleVector {
    values: Vec<i32>,
    count: usize,
}

impl BundleVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    /// Number of bundled constituents.
    pub fn count(&self) -> usize {
        self.count
    }
}

/// A read-only numeric view used by [`cosine`].
pub trait Components {
    fn dim(&self) -> usize;
    fn component(&self, i: usize) -> f64;
}

impl Components for Hypervector {
    fn dim(&self) -> usize {
        self.values.len()
    }
    #[inline]
    fn component(&self, i: usize) -> f64 {
        self.values[i] as f64
    }
}

impl Components for BundleVector {
    fn dim(&self) -> usize {
        self.values.len()
    }
    #[inline]
    fn component(&self, i: usize) -> f64 {
        self.values[i] as f64
    }
}

impl Components for [f64] {
    fn dim(&self) -> usize {
        self.len()
    }
    #[inline]
    fn component(&self, i: usize) -> f64 {
        self[i]
    }
}

impl Components for Vec<f64> {
    fn dim(&self) -> usize {
        self.len()
    }
    #[inline]
    fn component(&self, i: usize) -> f64 {
        self[i]
    }
}

/// Encoder descriptor: everything needed to regenerate the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hyper_dim: usize,
    pub seed: u64,
}

const ROW_BLOCK: usize = 2048;

/// Random-projection sign encoder, `h = sgn(E x)` with `sgn(0) = +1`.
///
/// Entry `E[i][j]` is +1 when bit `j % 64` of `splitmix64_at(seed, (i << 32) | (j / 64))`
/// is set and -1 otherwise. The matrix is therefore a pure function of
/// `(input_dim, hyper_dim, seed)` and is never persisted.
///
/// The matrix is kept bit-packed, group-major: byte `g * hyper_dim + i` holds
/// columns `8g..8g+8` of row `i`. Encoding tabulates all 256 signed partial
/// sums of each eight-column group, so each output element costs one table
/// lookup per group, and the lookups for one group stream through memory.
#[derive(Debug, Clone)]
pub struct ProjectionEncoder {
    spec: EncoderSpec,
    row_bytes: usize,
    bits: Vec<u8>,
}

impl PartialEq for ProjectionEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.bits == other.bits
    }
}

impl ProjectionEncoder {
    pub fn new(input_dim: usize, hyper_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hyper_dim == 0 {
            return Err(invalid(format!(
                "encoder dimensions must be positive (input_dim={input_dim}, hyper_dim={hyper_dim})"
            )));
        }
        if input_dim > (u32::MAX as usize) * 64 || hyper_dim > u32::MAX as usize {
            return Err(invalid("encoder dimensions too large"));
        }
        let row_bytes = input_dim.div_ceil(8);
        let words = input_dim.div_ceil(64);
        let tail = input_dim % 8;
        let mut bits = vec![0u8; row_bytes * hyper_dim];
        for row in 0..hyper_dim {
            for block in 0..words {
                let word = splitmix64_at(seed, ((row as u64) << 32) | block as u64).to_le_bytes();
                for (k, &byte) in word.iter().enumerate() {
                    let g = block * 8 + k;
                    if g < row_bytes {
                        bits[g * hyper_dim + row] = byte;
                    }
                }
            }
            // Clear padding bits so two encoders compare equal iff their
            // matrices do.
            if tail != 0 {
                bits[(row_bytes - 1) * hyper_dim + row] &= (1u8 << tail) - 1;
            }
        }
        Ok(Self {
            spec: EncoderSpec {
                input_dim,
                hyper_dim,
                seed,
            },
            row_bytes,
            bits,
        })
    }

    pub fn from_spec(spec: EncoderSpec) -> Result<Self> {
        Self::new(spec.input_dim, spec.hyper_dim, spec.seed)
    }

    pub fn spec(&self) -> EncoderSpec {
        self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn hyper_dim(&self) -> usize {
        self.spec.hyper_dim
    }

    pub fn seed(&self) -> u64 {
        self.spec.seed
    }

    /// Matrix entry `E[row][col]`, either -1 or +1.
    pub fn entry(&self, row: usize, col: usize) -> i8 {
        assert!(row < self.spec.hyper_dim && col < self.spec.input_dim);
        let byte = self.bits[(col / 8) * self.spec.hyper_dim + row];
        if (byte >> (col % 8)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Packed matrix bits in the group-major layout described above.
    pub fn packed(&self) -> &[u8] {
        &self.bits
    }

    pub fn encode(&self, x: &[f64]) -> Result<Hypervector> {
        if x.len() != self.spec.input_dim {
            return Err(invalid(format!(
                "input length {} does not match encoder input_dim {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("input element {pos} is not finite")));
        }
        if x.iter().all(|&v| v == 0.0) {
            log::warn!("encoding an all-zero input; every row sum is 0 and maps to +1");
        }
        let table = self.partial_sum_table(x);
        let dim = self.spec.hyper_dim;
        let mut values = Vec::with_capacity(dim);
        let mut acc = [0f32; ROW_BLOCK];
        for start in (0..dim).step_by(ROW_BLOCK) {
            let len = ROW_BLOCK.min(dim - start);
            let acc = &mut acc[..len];
            acc.fill(0.0);
            let bytes = |g: usize| &self.bits[g * dim + start..g * dim + start + len];
            let tab = |g: usize| -> &[f32; 256] {
                table[g << 8..(g + 1) << 8].try_into().expect("256 entries")
            };
            let mut g = 0;
            while g + 4 <= self.row_bytes {
                let (t0, t1, t2, t3) = (tab(g), tab(g + 1), tab(g + 2), tab(g + 3));
                let (b0, b1, b2, b3) = (bytes(g), bytes(g + 1), bytes(g + 2), bytes(g + 3));
                for i in 0..len {
                    acc[i] += (t0[b0[i] as usize] + t1[b1[i] as usize])
                        + (t2[b2[i] as usize] + t3[b3[i] as usize]);
                }
                g += 4;
            }
            for g in g..self.row_bytes {
                let (t, b) = (tab(g), bytes(g));
                for i in 0..len {
                    acc[i] += t[b[i] as usize];
                }
            }
            values.extend(acc.iter().map(|&s| if s >= 0.0 { 1i8 } else { -1 }));
        }
        Ok(Hypervector { values })
    }

    /// For each group of eight input columns, the signed sum for all 256
    /// sign patterns (bit set = +1). Padding columns contribute zero.
    fn partial_sum_table(&self, x: &[f64]) -> Vec<f32> {
        let groups = self.row_bytes;
        let mut table = vec![0f32; groups * 256];
        let mut chunk = [0f32; 8];
        for g in 0..groups {
            chunk.fill(0.0);
            for (c, &v) in chunk.iter_mut().zip(&x[g * 8..(g * 8 + 8).min(x.len())]) {
                *c = v as f32;
            }
            let base = &mut table[g << 8..(g + 1) << 8];
            let total: f32 = chunk.iter().sum();
            base[0] = -total;
            for pattern in 1..256usize {
                let low = pattern.trailing_zeros() as usize;
                base[pattern] = base[pattern & (pattern - 1)] + 2.0 * chunk[low];
            }
        }
        table
    }
}

pub fn bundle(hvs: &[Hypervector]) -> Result<BundleVector> {
    let first = hvs
        .first()
        .ok_or_else(|| invalid("bundle requires at least one hypervector"))?;
    let dim = first.dim();
    let mut values = vec![0i32; dim];
    for (m, hv) in hvs.iter().enumerate() {
        if hv.dim() != dim {
            return Err(invalid(format!(
                "bundle dimension mismatch: element {m} has dim {} (expected {dim})",
                hv.dim()
            )));
        }
        for (acc, &v) in values.iter_mut().zip(&hv.values) {
            *acc += v as i32;
        }
    }
    Ok(BundleVector {
        values,
        count: hvs.len(),
    })
}

/// Hadamard product. Self-inverse: `bind(bind(a, b), b) == a`.
pub fn bind(a: &Hypervector, b: &Hypervector) -> Result<Hypervector> {
    if a.dim() != b.dim() {
        return Err(invalid(format!(
            "bind dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(Hypervector {
        values: a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect(),
    })
}

pub fn cosine<A, B>(a: &A, b: &B) -> Result<f64>
where
    A: Components + ?Sized,
    B: Components + ?Sized,
{
    let dim = a.dim();
    if b.dim() != dim {
        return Err(invalid(format!(
            "cosine dimension mismatch: {dim} vs {}",
            b.dim()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..dim {
        let (x, y) = (a.component(i), b.component(i));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// `h . c` for a bipolar `h`, summed in eight fixed lanes.
#[inline]
pub fn dot_bipolar(h: &[i8], c: &[f64]) -> f64 {
    debug_assert_eq!(h.len(), c.len());
    let mut lanes = [0f64; 8];
    let mut hs = h.chunks_exact(8);
    let mut cs = c.chunks_exact(8);
    for (hc, cc) in (&mut hs).zip(&mut cs) {
        for k in 0..8 {
            lanes[k] += hc[k] as f64 * cc[k];
        }
    }
    let mut tail = 0.0;
    for (&x, &y) in hs.remainder().iter().zip(cs.remainder()) {
        tail += x as f64 * y;
    }
    reduce_lanes(&lanes) + tail
}

/// Squared L2 norm, summed in eight fixed lanes.
#[inline]
pub fn norm_sq(c: &[f64]) -> f64 {
    let mut lanes = [0f64; 8];
    let mut cs = c.chunks_exact(8);
    for cc in &mut cs {
        for k in 0..8 {
            lanes[k] += cc[k] * cc[k];
        }
    }
    let tail: f64 = cs.remainder().iter().map(|v| v * v).sum();
    reduce_lanes(&lanes) + tail
}

/// Real dot product, summed in eight fixed lanes.
#[inline]
pub fn dot_real(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0f64; 8];
    let mut xs = a.chunks_exact(8);
    let mut ys = b.chunks_exact(8);
    for (xc, yc) in (&mut xs).zip(&mut ys) {
        for k in 0..8 {
            lanes[k] += xc[k] * yc[k];
        }
    }
    let mut tail = 0.0;
    for (&x, &y) in xs.remainder().iter().zip(ys.remainder()) {
        tail += x * y;
    }
    reduce_lanes(&lanes) + tail
}

#[inline]
fn reduce_lanes(l: &[f64; 8]) -> f64 {
    ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]))
}

/// `c += weight * h`.
#[inline]
pub fn axpy_bipolar(c: &mut [f64], weight: f64, h: &[i8]) {
    for (acc, &v) in c.iter_mut().zip(h) {
        *acc += weight * v as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoder_is_deterministic() {
        let a = ProjectionEncoder::new(4, 8, 7).unwrap();
        let b = ProjectionEncoder::new(4, 8, 7).unwrap();
        assert_eq!(a.packed(), b.packed());
    }

    #[test]
    fn encoder_seed_changes_matrix() {
        let a = ProjectionEncoder::new(4, 8, 7).unwrap();
        let b = ProjectionEncoder::new(4, 8, 8).unwrap();
        let differs = (0..8).any(|i| (0..4).any(|j| a.entry(i, j) != b.entry(i, j)));
        assert!(differs);
    }

    #[test]
    fn encoder_rejects_zero_dims() {
        assert!(matches!(
            ProjectionEncoder::new(0, 8, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            ProjectionEncoder::new(8, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn entries_independent_of_input_dim() {
        // Column j of row i only depends on (seed, i, j).
        let narrow = ProjectionEncoder::new(70, 16, 3).unwrap();
        let wide = ProjectionEncoder::new(200, 16, 3).unwrap();
        for i in 0..16 {
            for j in 0..70 {
                assert_eq!(narrow.entry(i, j), wide.entry(i, j));
            }
        }
    }

    #[test]
    fn encode_matches_direct_sum() {
        let enc = ProjectionEncoder::new(37, 256, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..37).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = enc.encode(&x).unwrap();
            for i in 0..256 {
                let s: f64 = (0..37).map(|j| enc.entry(i, j) as f64 * x[j]).sum();
                if s.abs() > 1e-4 {
                    assert_eq!(h.values()[i], if s > 0.0 { 1 } else { -1 });
                }
            }
        }
    }

    #[test]
    fn encode_rejects_bad_inputs() {
        let enc = ProjectionEncoder::new(3, 8, 1).unwrap();
        assert!(enc.encode(&[1.0, 2.0]).is_err());
        assert!(enc.encode(&[1.0, f64::NAN, 0.0]).is_err());
        assert!(enc.encode(&[1.0, f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn encode_zero_input_is_all_ones() {
        let enc = ProjectionEncoder::new(5, 32, 1).unwrap();
        assert_eq!(enc.encode(&[0.0; 5]).unwrap(), Hypervector::ones(32));
    }

    #[test]
    fn bundle_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = Hypervector::random(64, &mut rng);
        let single = bundle(std::slice::from_ref(&h)).unwrap();
        assert!(single
            .values()
            .iter()
            .zip(h.values())
            .all(|(&a, &b)| a == b as i32));
        let cancel = bundle(&[h.clone(), h.negated()]).unwrap();
        assert!(cancel.values().iter().all(|&v| v == 0));
        assert!(bundle(&[]).is_err());
        assert!(bundle(&[h, Hypervector::ones(63)]).is_err());
    }

    #[test]
    fn bind_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Hypervector::random(100, &mut rng);
        let b = Hypervector::random(100, &mut rng);
        assert_eq!(bind(&a, &a).unwrap(), Hypervector::ones(100));
        assert_eq!(bind(&bind(&a, &b).unwrap(), &b).unwrap(), a);
        assert!(bind(&a, &Hypervector::ones(99)).is_err());
    }

    #[test]
    fn cosine_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Hypervector::random(128, &mut rng);
        assert_eq!(cosine(&h, &h).unwrap(), 1.0);
        assert_eq!(cosine(&h, &h.negated()).unwrap(), -1.0);
        let zero = vec![0.0; 128];
        assert!(matches!(
            cosine(&h, &zero),
            Err(Error::UndefinedSimilarity)
        ));
    }

    #[test]
    fn fast_kernels_match_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = Hypervector::random(1003, &mut rng);
        let c: Vec<f64> = (0..1003).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let naive: f64 = h.values().iter().zip(&c).map(|(&a, b)| a as f64 * b).sum();
        assert!((dot_bipolar(h.values(), &c) - naive).abs() < 1e-9);
        let nn: f64 = c.iter().map(|v| v * v).sum();
        assert!((norm_sq(&c) - nn).abs() < 1e-9);
        assert!((dot_real(&c, &c) - nn).abs() < 1e-9);
    }

    #[test]
    fn from_values_validates() {
        assert!(Hypervector::from_values(vec![1, -1, 0]).is_err());
        assert!(Hypervector::from_values(vec![]).is_err());
        assert!(Hypervector::from_values(vec![1, -1]).is_ok());
    }
}
