//! Uniform mid-point quantizer with saturation and subtractive dither.
//!
//! A `b`-bit quantizer over `[u_min, u_max]` has resolution
//! `eps = (u_max - u_min) / 2^b`. Encoding is `floor((x - u_min) / eps)`,
//! clamped to `0..=2^b - 1` outside the open range; decoding returns the
//! centre of the selected cell. A value exactly on a cell edge lands in the
//! upper cell. Under continuous dither that set has probability zero.
//!
//! Subtractive dither adds `w ~ U[-eps/2, eps/2]` before encoding and removes
//! it after decoding, which makes the reconstruction error uniform on
//! `[-eps/2, eps/2]` and independent of the source as long as `x + w` stays
//! inside the quantizer range.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuantizerSpecRepr", into = "QuantizerSpecRepr")]
pub struct QuantizerSpec {
    u_min: f64,
    u_max: f64,
    bits: u32,
    resolution: f64,
}

#[derive(Serialize, Deserialize)]
struct QuantizerSpecRepr {
    u_min: f64,
    u_max: f64,
    bits: u32,
}

impl TryFrom<QuantizerSpecRepr> for QuantizerSpec {
    type Error = Error;
    fn try_from(r: QuantizerSpecRepr) -> Result<Self> {
        QuantizerSpec::new(r.u_min, r.u_max, r.bits)
    }
}

impl From<QuantizerSpec> for QuantizerSpecRepr {
    fn from(q: QuantizerSpec) -> Self {
        QuantizerSpecRepr {
            u_min: q.u_min,
            u_max: q.u_max,
            bits: q.bits,
        }
    }
}

impl QuantizerSpec {
    /// Codes must stay exactly representable as `f64`.
    pub const MAX_BITS: u32 = 52;

    pub fn new(u_min: f64, u_max: f64, bits: u32) -> Result<Self> {
        if !(u_min.is_finite() && u_max.is_finite()) || u_min >= u_max {
            return Err(Error::InvalidQuantizer(format!(
                "need finite u_min < u_max, got [{u_min}, {u_max}]"
            )));
        }
        if bits == 0 || bits > Self::MAX_BITS {
            return Err(Error::InvalidQuantizer(format!(
                "bits must be in 1..={}, got {bits}",
                Self::MAX_BITS
            )));
        }
        // division by a power of two is exact
        let resolution = (u_max - u_min) / 2f64.powi(bits as i32);
        Ok(Self {
            u_min,
            u_max,
            bits,
            resolution,
        })
    }

    pub fn u_min(&self) -> f64 {
        self.u_min
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Cell width `eps`.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn max_code(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    /// Extended quantizer: total over the reals, saturating outside
    /// `(u_min, u_max)`. NaN encodes to 0.
    pub fn encode(&self, x: f64) -> u64 {
        if !(x > self.u_min) {
            return 0;
        }
        if x >= self.u_max {
            return self.max_code();
        }
        let cell = ((x - self.u_min) / self.resolution).floor() as u64;
        // rounding just below u_max can land on 2^b
        cell.min(self.max_code())
    }

    pub fn decode(&self, code: u64) -> Result<f64> {
        if code > self.max_code() {
            return Err(Error::InvalidCode {
                code,
                max: self.max_code(),
            });
        }
        Ok(self.decode_unchecked(code))
    }

    fn decode_unchecked(&self, code: u64) -> f64 {
        self.resolution * code as f64 + self.u_min + self.resolution / 2.0
    }

    /// Deterministic quantize-then-decode, no dither.
    pub fn quantize(&self, x: f64) -> f64 {
        self.decode_unchecked(self.encode(x))
    }

    /// True when `y` falls in the saturation region (outside the open range).
    pub fn saturates(&self, y: f64) -> bool {
        !(y > self.u_min && y < self.u_max)
    }

    /// Subtractive-dither reconstruction `Q(x + w) - w`.
    pub fn dither_quantize(&self, x: f64, w: f64) -> f64 {
        self.quantize(x + w) - w
    }

    /// Quantizes every entry of `m` with one fresh dither draw per element,
    /// consumed in row-major order.
    pub fn quantize_matrix(&self, m: &DMatrix<f64>, dither: &mut DitherStream) -> QuantizedMatrix {
        let (rows, cols) = m.shape();
        let mut out = DMatrix::zeros(rows, cols);
        let mut saturation_count = 0;
        for i in 0..rows {
            for j in 0..cols {
                let x = m[(i, j)];
                let w = dither.next_dither(self.resolution);
                if self.saturates(x + w) {
                    saturation_count += 1;
                }
                out[(i, j)] = self.dither_quantize(x, w);
            }
        }
        QuantizedMatrix {
            matrix: out,
            saturation_count,
        }
    }

    /// Raw codes of `m + w` in row-major dither order, for transmission.
    pub fn encode_matrix(&self, m: &DMatrix<f64>, dither: &mut DitherStream) -> DMatrix<f64> {
        let (rows, cols) = m.shape();
        let mut codes = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let w = dither.next_dither(self.resolution);
                codes[(i, j)] = self.encode(m[(i, j)] + w) as f64;
            }
        }
        codes
    }

    /// Receiver side of [`encode_matrix`](Self::encode_matrix): replays the
    /// same dither stream and subtracts it from the decoded cell centres.
    pub fn decode_matrix(&self, codes: &DMatrix<f64>, dither: &mut DitherStream) -> Result<DMatrix<f64>> {
        let (rows, cols) = codes.shape();
        let mut out = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let w = dither.next_dither(self.resolution);
                let c = codes[(i, j)];
                if c < 0.0 || c.fract() != 0.0 || c > self.max_code() as f64 {
                    return Err(Error::parse(
                        format!("code matrix ({i}, {j})"),
                        format!("{c} is not a valid code for {} bits", self.bits),
                    ));
                }
                out[(i, j)] = self.decode_unchecked(c as u64) - w;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct QuantizedMatrix {
    pub matrix: DMatrix<f64>,
    /// Entries whose dithered value `x + w` fell outside `(u_min, u_max)`.
    pub saturation_count: usize,
}

/// Seeded source of i.i.d. uniform dither.
///
/// Backed by ChaCha8. Sub-stream `k` of a seed is the ChaCha stream `k` of
/// the generator keyed by that seed, so sub-streams never overlap and can
/// be consumed independently (one per matrix, per thread, ...).
#[derive(Debug, Clone)]
pub struct DitherStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl DitherStream {
    pub fn new(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on `[-resolution / 2, resolution / 2)`.
    pub fn next_dither(&mut self, resolution: f64) -> f64 {
        resolution * (self.next_unit() - 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Pearson correlation between the error and the source.
    pub source_correlation: f64,
    /// Set when either the source or the error has zero variance, in which
    /// case the correlation is reported as 0.
    pub degenerate: bool,
}

/// Moments of `e = reconstructed - source` and its correlation with `source`.
pub fn error_stats(source: &[f64], reconstructed: &[f64]) -> Result<ErrorStats> {
    if source.len() != reconstructed.len() {
        return Err(Error::Shape(format!(
            "source has {} samples, reconstruction {}",
            source.len(),
            reconstructed.len()
        )));
    }
    let n = source.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let err = || source.iter().zip(reconstructed).map(|(s, r)| r - s);
    let mean_e = err().sum::<f64>() / nf;
    let mean_s = source.iter().sum::<f64>() / nf;
    let (mut see, mut sss, mut sse) = (0.0, 0.0, 0.0);
    for (e, s) in err().zip(source) {
        let de = e - mean_e;
        let ds = s - mean_s;
        see += de * de;
        sss += ds * ds;
        sse += de * ds;
    }
    let degenerate = see == 0.0 || sss == 0.0;
    let source_correlation = if degenerate {
        0.0
    } else {
        sse / (see.sqrt() * sss.sqrt())
    };
    Ok(ErrorStats {
        mean: mean_e,
        variance: see / (nf - 1.0),
        source_correlation,
        degenerate,
    })
}

/// `(1/T) sum_t a[t] * b[t + lag]`, with `T = a.len()`.
///
/// The sum runs over every `t` for which `t + lag` is in range, but the
/// normalisation is always by the full length.
pub fn lagged_time_average(a: &[f64], b: &[f64], lag: usize) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "series lengths {} and {} must match and be nonzero",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let sum: f64 = (0..n.saturating_sub(lag)).map(|t| a[t] * b[t + lag]).sum();
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bit() -> QuantizerSpec {
        QuantizerSpec::new(-1.0, 1.0, 2).unwrap()
    }

    #[test]
    fn resolution_identity() {
        for bits in 1..=QuantizerSpec::MAX_BITS {
            let q = QuantizerSpec::new(-0.3, 1.7, bits).unwrap();
            assert_eq!(q.resolution() * 2f64.powi(bits as i32), 1.7 - (-0.3));
        }
        assert_eq!(two_bit().resolution(), 0.5);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(QuantizerSpec::new(1.0, 1.0, 4).is_err());
        assert!(QuantizerSpec::new(2.0, 1.0, 4).is_err());
        assert!(QuantizerSpec::new(-1.0, 1.0, 0).is_err());
        assert!(QuantizerSpec::new(-1.0, 1.0, 53).is_err());
        assert!(QuantizerSpec::new(f64::NAN, 1.0, 4).is_err());
    }

    #[test]
    fn encode_examples() {
        let q = two_bit();
        assert_eq!(q.encode(0.3), 2);
        assert_eq!(q.encode(-1.2), 0);
        assert_eq!(q.encode(1.7), 3);
        assert_eq!(q.encode(-1.0), 0);
        assert_eq!(q.encode(1.0), 3);
        // cell edge goes up
        assert_eq!(q.encode(0.0), 2);
        assert_eq!(q.encode(f64::NAN), 0);
        assert_eq!(q.encode(1.0 - 1e-17), 3);
    }

    #[test]
    fn decode_examples() {
        let q = two_bit();
        assert_eq!(q.decode(2).unwrap(), 0.25);
        assert_eq!(q.decode(0).unwrap(), -0.75);
        assert!(matches!(q.decode(4), Err(Error::InvalidCode { code: 4, max: 3 })));
        let back = q.decode(q.encode(0.3)).unwrap();
        assert_eq!(back, 0.25);
        assert!(((back - 0.3) - (-0.05)).abs() < 1e-15);
    }

    #[test]
    fn dither_quantize_examples() {
        let q = two_bit();
        assert_eq!(q.dither_quantize(0.3, 0.0), 0.25);
        let y = q.dither_quantize(0.3, 0.2);
        assert!((y - 0.55).abs() < 1e-15);
        assert!(((y - 0.3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn quantize_matrix_zero_input_bounded_and_deterministic() {
        let q = QuantizerSpec::new(-1.0, 1.0, 8).unwrap();
        let m = DMatrix::zeros(7, 13);
        let a = q.quantize_matrix(&m, &mut DitherStream::new(42));
        let b = q.quantize_matrix(&m, &mut DitherStream::new(42));
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.saturation_count, 0);
        let half = q.resolution() / 2.0;
        assert!(a.matrix.iter().all(|e| e.abs() <= half));
    }

    #[test]
    fn quantize_matrix_counts_saturation() {
        let q = QuantizerSpec::new(-1.0, 1.0, 4).unwrap();
        let m = DMatrix::from_element(3, 3, 5.0);
        let out = q.quantize_matrix(&m, &mut DitherStream::new(1));
        assert_eq!(out.saturation_count, 9);
    }

    #[test]
    fn quantize_matrix_mean_error_vanishes() {
        let q = QuantizerSpec::new(-1.0, 1.0, 4).unwrap();
        let mut src = DitherStream::substream(7, 99);
        let m = DMatrix::from_fn(100, 1000, |_, _| 1.8 * (src.next_unit() - 0.5));
        let out = q.quantize_matrix(&m, &mut DitherStream::new(3));
        let n = (100 * 1000) as f64;
        let mean = (&out.matrix - &m).sum() / n;
        let bound = 4.0 * (q.resolution() / 12f64.sqrt()) / n.sqrt();
        assert!(mean.abs() <= bound, "mean {mean} bound {bound}");
    }

    #[test]
    fn encode_decode_matrix_matches_quantize_matrix() {
        let q = QuantizerSpec::new(-1.0, 1.0, 6).unwrap();
        let m = DMatrix::from_fn(4, 9, |i, j| ((i * 9 + j) as f64 * 0.37).sin() * 0.9);
        let codes = q.encode_matrix(&m, &mut DitherStream::substream(5, 2));
        let rec = q.decode_matrix(&codes, &mut DitherStream::substream(5, 2)).unwrap();
        let direct = q.quantize_matrix(&m, &mut DitherStream::substream(5, 2)).matrix;
        assert_eq!(rec, direct);
        let mut bad = codes.clone();
        bad[(0, 0)] = 64.0;
        assert!(q.decode_matrix(&bad, &mut DitherStream::substream(5, 2)).is_err());
    }

    #[test]
    fn substreams_differ_and_are_reproducible() {
        let mut a = DitherStream::substream(9, 0);
        let mut b = DitherStream::substream(9, 1);
        let mut a2 = DitherStream::new(9);
        let xa: Vec<f64> = (0..8).map(|_| a.next_unit()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.next_unit()).collect();
        let xa2: Vec<f64> = (0..8).map(|_| a2.next_unit()).collect();
        assert_ne!(xa, xb);
        assert_eq!(xa, xa2);
    }

    #[test]
    fn error_stats_zero_error() {
        let s = [0.1, 0.5, -0.2];
        let st = error_stats(&s, &s).unwrap();
        assert_eq!((st.mean, st.variance, st.source_correlation), (0.0, 0.0, 0.0));
        assert!(st.degenerate);
    }

    #[test]
    fn error_stats_constant_source_is_degenerate() {
        let st = error_stats(&[1.0, 1.0, 1.0], &[1.1, 0.9, 1.0]).unwrap();
        assert!(st.degenerate);
        assert_eq!(st.source_correlation, 0.0);
        assert!(error_stats(&[1.0], &[1.0]).is_err());
        assert!(error_stats(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn undithered_ramp_error_correlates_with_source() {
        let q = QuantizerSpec::new(-1.0, 1.0, 3).unwrap();
        // ramp within a single cell: error falls as the source rises
        let src: Vec<f64> = (0..1000).map(|k| 0.26 + 0.2 * k as f64 / 1000.0).collect();
        let rec: Vec<f64> = src.iter().map(|&x| q.quantize(x)).collect();
        let st = error_stats(&src, &rec).unwrap();
        assert!(st.source_correlation < -0.9, "{}", st.source_correlation);
    }

    #[test]
    fn lagged_average_normalises_by_full_length() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(lagged_time_average(&a, &a, 0).unwrap(), 14.0 / 3.0);
        assert_eq!(lagged_time_average(&a, &a, 1).unwrap(), 8.0 / 3.0);
        assert!(lagged_time_average(&a, &a[..2], 0).is_err());
    }

    #[test]
    fn spec_serde_validates() {
        let q: QuantizerSpec = serde_json::from_str(r#"{"u_min":-1.0,"u_max":1.0,"bits":3}"#).unwrap();
        assert_eq!(q.resolution(), 0.25);
        assert!(serde_json::from_str::<QuantizerSpec>(r#"{"u_min":1.0,"u_max":1.0,"bits":3}"#).is_err());
    }
}
