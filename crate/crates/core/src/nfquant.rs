//! Block-wise NormalFloat quantization with a double-quantized absmax chain.
//!
//! A `d × n` tensor is flattened row-major and cut into blocks of `B0`
//! weights. Each weight is divided by its block absmax and snapped to the
//! nearest level of a `b0`-bit NormalFloat codebook. The block absmax values
//! are grouped `B1` at a time; each group keeps its own absmax at `b2`
//! precision and the block absmax values inside it are stored as `b1`-bit
//! codes on a uniform grid over `[0, 1]` relative to that group absmax.

use crate::error::{invalid, Result};
use crate::linalg::Mat;
use crate::qconfig::{AbsmaxFormat, LayerQuantConfig};
use crate::scalar::Scalar;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

/// Sorted NormalFloat code levels in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NfCodebook {
    bits: u8,
    levels: Vec<f64>,
    midpoints: Vec<f64>,
}

impl NfCodebook {
    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, code: u8) -> f64 {
        self.levels[code as usize]
    }

    pub fn zero_code(&self) -> u8 {
        self.levels
            .iter()
            .position(|&l| l == 0.0)
            .expect("codebook has an exact zero") as u8
    }

    /// Index of the level closest to `x`; exact midpoints go to the lower
    /// level.
    pub fn nearest(&self, x: f64) -> u8 {
        self.midpoints.partition_point(|&m| m < x) as u8
    }

    /// Largest distance between adjacent levels.
    pub fn max_gap(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// Builds the `bits`-bit NormalFloat codebook.
///
/// The negative half takes `2^(bits-1)` evenly spaced standard-normal
/// quantiles between probability 1/2 and `offset`, the positive half
/// `2^(bits-1) + 1`; both include the zero quantile, which is kept once.
/// Everything is divided by the largest quantile so the endpoints are ±1.
/// `offset` sits halfway between `1 - 1/(2(2^b - 1))` and `1 - 1/(2·2^b)`,
/// which reproduces the usual NF4 table for `bits = 4`.
pub fn nf_codebook(bits: u8) -> Result<NfCodebook> {
    if !matches!(bits, 2 | 3 | 4 | 8) {
        return Err(invalid(format!("unsupported NF code width {bits}")));
    }
    let n = 1usize << bits;
    let half = n / 2;
    let offset = 0.5 * ((1.0 - 0.5 / (n - 1) as f64) + (1.0 - 0.5 / n as f64));
    let normal = Normal::standard();
    let quantile = |k: usize, steps: usize| {
        let p = 0.5 + (offset - 0.5) * k as f64 / steps as f64;
        if k == 0 {
            0.0
        } else {
            normal.inverse_cdf(p)
        }
    };
    let top = quantile(half, half);
    let mut levels = Vec::with_capacity(n);
    for k in (1..half).rev() {
        levels.push(-quantile(k, half - 1) / top);
    }
    for k in 0..=half {
        levels.push(quantile(k, half) / top);
    }
    // Pin the endpoints; the quantile ratios are 1 only up to rounding.
    levels[0] = -1.0;
    levels[n - 1] = 1.0;
    debug_assert_eq!(levels.len(), n);
    let midpoints = levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    Ok(NfCodebook {
        bits,
        levels,
        midpoints,
    })
}

/// Shared, lazily built codebook for a supported width.
pub fn codebook(bits: u8) -> Result<&'static NfCodebook> {
    static BOOKS: [OnceLock<NfCodebook>; 4] = [
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
    ];
    let slot = match bits {
        2 => 0,
        3 => 1,
        4 => 2,
        8 => 3,
        _ => return Err(invalid(format!("unsupported NF code width {bits}"))),
    };
    Ok(BOOKS[slot].get_or_init(|| nf_codebook(bits).expect("supported width")))
}

/// A quantized `d × n` weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor<T> {
    pub shape: (usize, usize),
    /// One `b0`-bit code per weight, row-major.
    pub codes: Vec<u8>,
    /// One `b1`-bit code per first-level block.
    pub absmax1_codes: Vec<u8>,
    /// One group absmax per second-level group, already rounded to `b2`.
    pub absmax2: Vec<T>,
    pub cfg: LayerQuantConfig,
    pub storage_bits_total: u64,
}

#[inline]
fn absmax_levels(b1: u8) -> usize {
    (1usize << b1) - 1
}

/// Reconstructed block absmax from its code and the stored group absmax.
#[inline]
fn decode_absmax<T: Scalar>(code: u8, group_absmax: T, b1: u8) -> T {
    group_absmax * T::of_usize(code as usize) / T::of_usize(absmax_levels(b1))
}

impl<T: Scalar> QuantizedTensor<T> {
    pub fn numel(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn num_blocks(&self) -> usize {
        self.absmax1_codes.len()
    }

    pub fn num_groups(&self) -> usize {
        self.absmax2.len()
    }

    /// Dequantized absmax of every first-level block.
    pub fn block_absmax(&self) -> Vec<T> {
        let per_group = self.cfg.block1 as usize;
        self.absmax1_codes
            .iter()
            .enumerate()
            .map(|(k, &c)| decode_absmax(c, self.absmax2[k / per_group], self.cfg.b1))
            .collect()
    }

    /// Packs the tensor into bytes: the weight codes (`b0` bits each), then
    /// the block absmax codes (`b1` bits each), then the group absmax values
    /// in their storage format, little-endian, each section padded to a byte
    /// boundary. Returns the bytes and the number of payload bits written
    /// (excluding padding).
    pub fn to_bytes(&self) -> (Vec<u8>, u64) {
        let mut w = BitWriter::default();
        for &c in &self.codes {
            w.push(c as u64, self.cfg.b0 as u32);
        }
        w.pad();
        for &c in &self.absmax1_codes {
            w.push(c as u64, self.cfg.b1 as u32);
        }
        w.pad();
        for &a in &self.absmax2 {
            let a = a.as_f64();
            let (bits, width) = match self.cfg.b2 {
                AbsmaxFormat::Bf16 => (half::bf16::from_f64(a).to_bits() as u64, 16),
                AbsmaxFormat::Fp16 => (half::f16::from_f64(a).to_bits() as u64, 16),
                AbsmaxFormat::Fp32 => ((a as f32).to_bits() as u64, 32),
            };
            w.push(bits, width);
        }
        w.pad();
        (w.bytes, w.payload_bits)
    }

    /// Inverse of [`to_bytes`](Self::to_bytes).
    pub fn from_bytes(bytes: &[u8], shape: (usize, usize), cfg: LayerQuantConfig) -> Result<Self> {
        cfg.validate()?;
        let numel = shape.0 * shape.1;
        let (blocks, groups) = cfg.block_counts(numel);
        let mut r = BitReader::new(bytes);
        let mut codes = Vec::with_capacity(numel);
        for _ in 0..numel {
            codes.push(r.take(cfg.b0 as u32)? as u8);
        }
        r.align();
        let mut absmax1_codes = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            absmax1_codes.push(r.take(cfg.b1 as u32)? as u8);
        }
        r.align();
        let mut absmax2 = Vec::with_capacity(groups);
        for _ in 0..groups {
            let v = match cfg.b2 {
                AbsmaxFormat::Bf16 => half::bf16::from_bits(r.take(16)? as u16).to_f64(),
                AbsmaxFormat::Fp16 => half::f16::from_bits(r.take(16)? as u16).to_f64(),
                AbsmaxFormat::Fp32 => f32::from_bits(r.take(32)? as u32) as f64,
            };
            absmax2.push(T::of(v));
        }
        Ok(Self {
            shape,
            codes,
            absmax1_codes,
            absmax2,
            cfg,
            storage_bits_total: cfg.storage_bits(shape.0, shape.1),
        })
    }
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
    payload_bits: u64,
}

impl BitWriter {
    fn push(&mut self, value: u64, width: u32) {
        for i in 0..width {
            if self.used == 0 {
                self.bytes.push(0);
            }
            let bit = ((value >> i) & 1) as u8;
            *self.bytes.last_mut().unwrap() |= bit << self.used;
            self.used = (self.used + 1) % 8;
        }
        self.payload_bits += width as u64;
    }

    fn pad(&mut self) {
        self.used = 0;
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, width: u32) -> Result<u64> {
        let mut v = 0u64;
        for i in 0..width {
            let byte = *self
                .bytes
                .get(self.pos / 8)
                .ok_or_else(|| invalid("truncated quantized tensor stream"))?;
            v |= (((byte >> (self.pos % 8)) & 1) as u64) << i;
            self.pos += 1;
        }
        Ok(v)
    }

    fn align(&mut self) {
        self.pos = self.pos.div_ceil(8) * 8;
    }
}

/// Quantizes `w` under `cfg`.
pub fn quantize_layer<T: Scalar>(w: &Mat<T>, cfg: &LayerQuantConfig) -> Result<QuantizedTensor<T>> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(invalid("cannot quantize an empty matrix"));
    }
    if !w.all_finite() {
        return Err(invalid("weights contain non-finite values"));
    }
    let book = codebook(cfg.b0)?;
    let zero = book.zero_code();
    let data = w.as_slice();
    let b0 = cfg.block0 as usize;
    let b1 = cfg.block1 as usize;
    let (blocks, groups) = cfg.block_counts(data.len());

    let block_max: Vec<T> = data
        .chunks(b0)
        .map(|c| c.iter().fold(T::zero(), |m, &x| m.max(x.abs())))
        .collect();

    let levels = absmax_levels(cfg.b1);
    let mut absmax2 = Vec::with_capacity(groups);
    let mut absmax1_codes = Vec::with_capacity(blocks);
    for group in block_max.chunks(b1) {
        let gmax = group.iter().fold(T::zero(), |m, &x| m.max(x));
        let stored = T::of(cfg.b2.round(gmax.as_f64()));
        if !stored.is_finite() {
            return Err(invalid(format!(
                "group absmax {gmax} overflows {} storage",
                cfg.b2.name()
            )));
        }
        for &a in group {
            let code = if stored > T::zero() {
                let x = (a / stored * T::of_usize(levels)).round();
                x.max(T::zero()).min(T::of_usize(levels)).as_f64() as u8
            } else {
                0
            };
            absmax1_codes.push(code);
        }
        absmax2.push(stored);
    }

    let mut codes = Vec::with_capacity(data.len());
    for (k, block) in data.chunks(b0).enumerate() {
        let deq = decode_absmax(absmax1_codes[k], absmax2[k / b1], cfg.b1);
        if deq == T::zero() {
            codes.extend(std::iter::repeat_n(zero, block.len()));
        } else {
            let amax = block_max[k];
            codes.extend(block.iter().map(|&x| book.nearest((x / amax).as_f64())));
        }
    }

    Ok(QuantizedTensor {
        shape: w.shape(),
        codes,
        absmax1_codes,
        absmax2,
        cfg: *cfg,
        storage_bits_total: cfg.storage_bits(w.rows(), w.cols()),
    })
}

/// Reconstructs the weights: code level times the dequantized block absmax.
pub fn dequantize<T: Scalar>(qt: &QuantizedTensor<T>) -> Mat<T> {
    let book = codebook(qt.cfg.b0).expect("validated config");
    let absmax = qt.block_absmax();
    let b0 = qt.cfg.block0 as usize;
    let data = qt
        .codes
        .iter()
        .enumerate()
        .map(|(i, &c)| T::of(book.level(c)) * absmax[i / b0])
        .collect();
    Mat::from_vec(qt.shape.0, qt.shape.1, data).expect("consistent shape")
}

/// `dequantize(quantize_layer(w, cfg))`.
pub fn fake_quantize<T: Scalar>(w: &Mat<T>, cfg: &LayerQuantConfig) -> Result<Mat<T>> {
    Ok(dequantize(&quantize_layer(w, cfg)?))
}

/// Storage bits per weight of a `d × n` layer under `cfg`.
pub fn effective_bits(cfg: &LayerQuantConfig, d: usize, n: usize) -> f64 {
    crate::qconfig::effective_bits(cfg, d, n)
}

/// Symmetric round-to-nearest quantization with a single scale
/// `s = max|w| / (2^(bits-1) - 1)`; returns the reconstructed weights.
pub fn rtn_quantize<T: Scalar>(w: &Mat<T>, bits: u32) -> Result<Mat<T>> {
    if !(2..=31).contains(&bits) {
        return Err(invalid(format!("RTN bit width {bits} outside 2..=31")));
    }
    if !w.all_finite() {
        return Err(invalid("weights contain non-finite values"));
    }
    let qmax = T::of(((1u64 << (bits - 1)) - 1) as f64);
    let qmin = -T::of((1u64 << (bits - 1)) as f64);
    let s = w.max_abs() / qmax;
    if s == T::zero() {
        return Ok(Mat::zeros(w.rows(), w.cols()));
    }
    Ok(w.map(|x| s * (x / s).round().max(qmin).min(qmax)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qconfig::AbsmaxFormat::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(b0: u8, b1: u8, b2: AbsmaxFormat, block0: u32, block1: u32) -> LayerQuantConfig {
        LayerQuantConfig::new(b0, b1, b2, block0, block1).unwrap()
    }

    fn randn(d: usize, n: usize, seed: u64) -> Mat<f64> {
        Mat::randn(d, n, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn codebook_shape() {
        for bits in [2u8, 3, 4, 8] {
            let b = nf_codebook(bits).unwrap();
            let l = b.levels();
            assert_eq!(l.len(), 1 << bits);
            assert_eq!(l[0], -1.0);
            assert_eq!(*l.last().unwrap(), 1.0);
            assert!(l.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(l.iter().filter(|&&x| x == 0.0).count(), 1);
        }
        let two = nf_codebook(2).unwrap();
        assert!(two.levels().contains(&0.0));
        assert!(nf_codebook(5).is_err());
        assert!(nf_codebook(1).is_err());
    }

    #[test]
    fn codebook_is_deterministic() {
        let a = nf_codebook(8).unwrap();
        let b = nf_codebook(8).unwrap();
        let bits = |c: &NfCodebook| c.levels().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn nf3_matches_high_precision_quantiles() {
        // Levels evaluated at 40 significant digits with an arbitrary
        // precision inverse error function.
        const GOLDEN: [f64; 8] = [
            -1.0,
            -0.535_022_708_485_538_1,
            -0.246_931_431_811_575_22,
            0.0,
            0.183_337_480_335_487_5,
            0.381_993_954_320_913_83,
            0.622_985_741_714_342_5,
            1.0,
        ];
        let book = nf_codebook(3).unwrap();
        for (a, b) in book.levels().iter().zip(GOLDEN) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn nf4_matches_reference_table() {
        const NF4: [f64; 16] = [
            -1.0, -0.6962, -0.5251, -0.3949, -0.2844, -0.1848, -0.0911, 0.0, 0.0796, 0.1609,
            0.2461, 0.3379, 0.4407, 0.5626, 0.7230, 1.0,
        ];
        let book = nf_codebook(4).unwrap();
        for (a, b) in book.levels().iter().zip(NF4) {
            assert!((a - b).abs() < 6e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn nearest_picks_closest_level() {
        let book = nf_codebook(4).unwrap();
        for i in 0..=2000 {
            let x = -1.0 + i as f64 / 1000.0;
            let c = book.nearest(x) as usize;
            let d = (book.levels()[c] - x).abs();
            assert!(book.levels().iter().all(|l| (l - x).abs() >= d - 1e-15));
        }
    }

    #[test]
    fn zero_matrix_roundtrips_exactly() {
        let w = Mat::<f64>::zeros(7, 9);
        for c in LayerQuantConfig::all().iter().step_by(37) {
            let qt = quantize_layer(&w, c).unwrap();
            let zero = codebook(c.b0).unwrap().zero_code();
            assert!(qt.codes.iter().all(|&k| k == zero));
            assert_eq!(dequantize(&qt), w);
        }
    }

    #[test]
    fn constant_matrix_within_absmax_grid() {
        let w = Mat::from_fn(8, 8, |_, _| 0.5f64);
        let c = cfg(4, 8, Fp32, 64, 256);
        let out = fake_quantize(&w, &c).unwrap();
        let spacing = 0.5 / 255.0;
        assert!(out.as_slice().iter().all(|&x| (x - 0.5).abs() <= spacing));
    }

    #[test]
    fn storage_example_32x32() {
        let w = randn(32, 32, 3);
        let qt = quantize_layer(&w, &cfg(2, 2, Bf16, 64, 256)).unwrap();
        assert_eq!(qt.storage_bits_total, 1024 * 2 + 16 * 2 + 16);
        assert_eq!(qt.num_blocks(), 16);
        assert_eq!(qt.num_groups(), 1);
    }

    #[test]
    fn effective_bits_examples() {
        // Serialize-and-count values at 64x64 (64 blocks of 64 fit in one
        // partial group of 256, so the group absmax costs 16/4096).
        let w = randn(64, 64, 4);
        let counted = |c: LayerQuantConfig| {
            let (_, bits) = quantize_layer(&w, &c).unwrap().to_bytes();
            bits as f64 / 4096.0
        };
        let c = cfg(2, 2, Bf16, 64, 256);
        assert_eq!(effective_bits(&c, 64, 64), counted(c));
        assert!((effective_bits(&c, 64, 64) - (2.0 + 2.0 / 64.0 + 16.0 / 4096.0)).abs() < 1e-15);
        let c = cfg(8, 8, Fp32, 16, 16);
        assert_eq!(effective_bits(&c, 64, 64), 8.625);
        assert_eq!(effective_bits(&c, 64, 64), counted(c));
        let c = cfg(4, 8, Fp32, 64, 256);
        assert_eq!(effective_bits(&c, 64, 64), counted(c));
        // Fully block-aligned shape: closed form b0 + b1/B0 + bits(b2)/(B0 B1).
        let c = cfg(2, 2, Bf16, 64, 256);
        assert!((effective_bits(&c, 128, 128) - 2.032_226_562_5).abs() < 1e-12);
        let c = cfg(4, 8, Fp32, 64, 256);
        assert!((effective_bits(&c, 128, 128) - 4.126_953_125).abs() < 1e-12);
    }

    #[test]
    fn roundtrip_error_bound_holds() {
        // |w - w~| <= absmax·g/2 + |absmax - absmax~|·|level|, with `level`
        // the nearest level of w/absmax found by direct search.
        let configs = LayerQuantConfig::all();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for t in 0..120u64 {
            let c = configs[(t as usize * 53) % configs.len()];
            let (d, n) = (1 + (t as usize % 13) * 5, 3 + (t as usize % 7) * 9);
            let scale = [1e-3, 1.0, 40.0][t as usize % 3];
            let w: Mat<f64> = Mat::randn(d, n, scale, &mut rng);
            let qt = quantize_layer(&w, &c).unwrap();
            let rec = dequantize(&qt);
            let book = codebook(c.b0).unwrap();
            let g = book.max_gap();
            let deq_absmax = qt.block_absmax();
            for (k, block) in w.as_slice().chunks(c.block0 as usize).enumerate() {
                let amax = block.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                for (j, &x) in block.iter().enumerate() {
                    let i = k * c.block0 as usize + j;
                    let level = if amax > 0.0 {
                        let y = x / amax;
                        *book
                            .levels()
                            .iter()
                            .min_by(|a, b| (*a - y).abs().partial_cmp(&(*b - y).abs()).unwrap())
                            .unwrap()
                    } else {
                        0.0
                    };
                    let bound = amax * g / 2.0 + (amax - deq_absmax[k]).abs() * level.abs();
                    let err = (x - rec.as_slice()[i]).abs();
                    assert!(err <= bound * (1.0 + 1e-12) + 1e-300, "t={t} i={i}: {err} > {bound}");
                }
            }
        }
    }

    #[test]
    fn finer_codes_never_increase_error() {
        for seed in 0..20 {
            let w = randn(32, 32, 1000 + seed);
            let mut last = f64::INFINITY;
            for b0 in [2u8, 3, 4, 8] {
                let rec = fake_quantize(&w, &cfg(b0, 8, Fp32, 64, 16)).unwrap();
                let err = w.sub(&rec).frobenius_norm();
                assert!(err <= last, "seed {seed}, b0 {b0}: {err} > {last}");
                last = err;
            }
        }
    }

    #[test]
    fn requantizing_is_a_fixed_point() {
        let configs = LayerQuantConfig::all();
        for (t, c) in configs.iter().enumerate().step_by(11) {
            let w = randn(24, 20, t as u64);
            let qt = quantize_layer(&w, c).unwrap();
            let again = quantize_layer(&dequantize(&qt), c).unwrap();
            assert_eq!(qt.codes, again.codes, "config {c}");
            assert_eq!(qt.absmax1_codes, again.absmax1_codes, "config {c}");
        }
    }

    #[test]
    fn serialized_bits_match_storage_for_every_config() {
        for &(d, n) in &[(64usize, 64usize), (32, 32), (17, 33)] {
            let w = randn(d, n, (d * n) as u64);
            for c in LayerQuantConfig::all() {
                let qt = quantize_layer(&w, &c).unwrap();
                let (bytes, bits) = qt.to_bytes();
                assert_eq!(bits, qt.storage_bits_total);
                assert_eq!(bits, c.storage_bits(d, n));
                let (blocks, groups) = c.block_counts(d * n);
                let expect_bytes = (d * n * c.b0 as usize).div_ceil(8)
                    + (blocks * c.b1 as usize).div_ceil(8)
                    + groups * c.b2.bits() as usize / 8;
                assert_eq!(bytes.len(), expect_bytes);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut w = Mat::<f64>::zeros(2, 2);
        w[(0, 1)] = f64::NAN;
        assert!(quantize_layer(&w, &cfg(4, 8, Fp32, 64, 256)).is_err());
        assert!(rtn_quantize(&w, 4).is_err());
    }

    #[test]
    fn rtn_examples() {
        let w = Mat::from_vec(1, 2, vec![0.0f64, 1.0]).unwrap();
        assert_eq!(rtn_quantize(&w, 2).unwrap().as_slice(), &[0.0, 1.0]);
        let w = Mat::from_vec(1, 2, vec![-2.0f64, 1.5]).unwrap();
        let out = rtn_quantize(&w, 4).unwrap();
        assert!((out[(0, 0)] + 2.0).abs() < 1e-15);
        assert!((out[(0, 1)] - 10.0 / 7.0).abs() < 1e-15);
        let z = Mat::<f64>::zeros(3, 3);
        assert_eq!(rtn_quantize(&z, 3).unwrap(), z);
        assert!(rtn_quantize(&z, 1).is_err());
    }

    #[test]
    fn single_precision_quantization() {
        let w: Mat<f32> = randn(16, 16, 5).cast();
        let c = cfg(4, 8, Fp32, 16, 16);
        let q32 = quantize_layer(&w, &c).unwrap();
        let q64 = quantize_layer(&w.cast::<f64>(), &c).unwrap();
        assert_eq!(q32.codes, q64.codes);
        assert!(dequantize(&q32).cast::<f64>().sub(&dequantize(&q64)).max_abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn bytes_roundtrip(idx in 0usize..432, d in 1usize..40, n in 1usize..40, seed in 0u64..1000) {
                let c = LayerQuantConfig::all()[idx];
                let w = randn(d, n, seed);
                let qt = quantize_layer(&w, &c).unwrap();
                let (bytes, _) = qt.to_bytes();
                let back = QuantizedTensor::<f64>::from_bytes(&bytes, (d, n), c).unwrap();
                prop_assert_eq!(&back, &qt);
            }
        }
    }
}
