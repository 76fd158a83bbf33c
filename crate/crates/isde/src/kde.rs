//! Spherical Gaussian kernel density estimation with a single scalar
//! bandwidth, a numerically stable log-density, and V-fold cross-validated
//! bandwidth selection.
//!
//! Log-densities are computed through the log-sum-exp transform, so they are
//! finite for every finite input even when the raw density underflows (which
//! is certain for a dozen features at bandwidths near 0.01).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{Error, Result};

/// Kernel terms this far (in log units) below the leading term are skipped:
/// exp of anything below -700 is at most ~1e-304, which cannot move a sum
/// whose leading term is exp(0) = 1 at f64 resolution.
const LOG_SKIP: f64 = -700.0;

fn ln_2pi() -> f64 {
    (2.0 * std::f64::consts::PI).ln()
}

fn has_avx2_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        use std::sync::OnceLock;
        static FLAG: OnceLock<bool> = OnceLock::new();
        *FLAG.get_or_init(|| {
            std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
        })
    }
    #[cfg(not(target_arch = "x86_64"))]
    false
}

/// Four-lane exp for the kernel loops (arguments in [-708, 0]), plus the
/// vector bodies of the cross-validation hot paths. Exponent extraction goes
/// through the 1.5 * 2^52 magic constant; the mantissa polynomial is a
/// degree-12 Taylor on |r| <= ln2/2. Within a few ulps of the libm exp (the
/// tests scan the domain densely); results stay normal on this domain, so no
/// underflow handling is needed.
#[cfg(target_arch = "x86_64")]
mod simd {
    use super::LOG_SKIP;
    use core::arch::x86_64::*;

    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const SHIFT_BITS: i64 = 0x4338_0000_0000_0000;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;

    #[inline]
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn exp4(x: __m256d) -> __m256d {
        let t = _mm256_fmadd_pd(
            x,
            _mm256_set1_pd(std::f64::consts::LOG2_E),
            _mm256_set1_pd(SHIFT),
        );
        let n = _mm256_sub_pd(t, _mm256_set1_pd(SHIFT));
        let n_int = _mm256_sub_epi64(_mm256_castpd_si256(t), _mm256_set1_epi64x(SHIFT_BITS));
        let scale = _mm256_castsi256_pd(_mm256_slli_epi64::<52>(_mm256_add_epi64(
            n_int,
            _mm256_set1_epi64x(1023),
        )));
        let r = _mm256_fnmadd_pd(n, _mm256_set1_pd(LN2_HI), x);
        let r = _mm256_fnmadd_pd(n, _mm256_set1_pd(LN2_LO), r);
        let mut p = _mm256_set1_pd(1.0 / 479_001_600.0);
        for c in [
            1.0 / 39_916_800.0,
            1.0 / 3_628_800.0,
            1.0 / 362_880.0,
            1.0 / 40_320.0,
            1.0 / 5_040.0,
            1.0 / 720.0,
            1.0 / 120.0,
            1.0 / 24.0,
            1.0 / 6.0,
            0.5,
            1.0,
            1.0,
        ] {
            p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(c));
        }
        _mm256_mul_pd(scale, p)
    }

    /// `out[s] += exp(-d * coeffs[s])` for both accumulator rows; `coeffs`
    /// and the rows are padded to a multiple of four.
    #[inline]
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn raw_pair_terms(d: f64, coeffs: &[f64], acc_i: &mut [f64], acc_j: &mut [f64]) {
        let neg_d = _mm256_set1_pd(-d);
        for s in (0..coeffs.len()).step_by(4) {
            let c = _mm256_loadu_pd(coeffs.as_ptr().add(s));
            let e = exp4(_mm256_mul_pd(neg_d, c));
            let ai = acc_i.as_mut_ptr().add(s);
            _mm256_storeu_pd(ai, _mm256_add_pd(_mm256_loadu_pd(ai), e));
            let aj = acc_j.as_mut_ptr().add(s);
            _mm256_storeu_pd(aj, _mm256_add_pd(_mm256_loadu_pd(aj), e));
        }
    }

    /// `sums[s] += sum over dists of exp((d_min - d) * coeffs[s])`, dropping
    /// terms below the skip threshold (they round to zero next to the leading
    /// exp(0) term). Element order fixed; padded like `raw_pair_terms`.
    #[inline]
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn lse_point_sums(dists: &[f64], d_min: f64, coeffs: &[f64], sums: &mut [f64]) {
        let skip = _mm256_set1_pd(LOG_SKIP);
        for &d in dists {
            let base = _mm256_set1_pd(d_min - d);
            for s in (0..coeffs.len()).step_by(4) {
                let t = _mm256_mul_pd(base, _mm256_loadu_pd(coeffs.as_ptr().add(s)));
                let mask = _mm256_cmp_pd::<_CMP_GE_OQ>(t, skip);
                let e = _mm256_and_pd(exp4(_mm256_max_pd(t, skip)), mask);
                let ptr = sums.as_mut_ptr().add(s);
                _mm256_storeu_pd(ptr, _mm256_add_pd(_mm256_loadu_pd(ptr), e));
            }
        }
    }

    /// Sum of exp((d_min - d) * c) over the distances: four-lane striping in
    /// element order, lanes combined low to high, then the scalar tail.
    #[inline]
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn kernel_sum(sq: &[f64], d_min: f64, c: f64) -> f64 {
        let cc = _mm256_set1_pd(c);
        let dm = _mm256_set1_pd(d_min);
        let skip = _mm256_set1_pd(LOG_SKIP);
        let mut acc = _mm256_setzero_pd();
        let chunks = sq.len() / 4 * 4;
        for s in (0..chunks).step_by(4) {
            let d = _mm256_loadu_pd(sq.as_ptr().add(s));
            let t = _mm256_mul_pd(_mm256_sub_pd(dm, d), cc);
            let mask = _mm256_cmp_pd::<_CMP_GE_OQ>(t, skip);
            let e = _mm256_and_pd(exp4(_mm256_max_pd(t, skip)), mask);
            acc = _mm256_add_pd(acc, e);
        }
        let mut lanes = [0.0f64; 4];
        _mm256_storeu_pd(lanes.as_mut_ptr(), acc);
        let mut sum = ((lanes[0] + lanes[1]) + lanes[2]) + lanes[3];
        for &d in &sq[chunks..] {
            let t = (d_min - d) * c;
            if t >= LOG_SKIP {
                sum += t.exp();
            }
        }
        sum
    }
}

/// Adds `exp(-d * coeffs[s])` into both accumulator rows (slices padded to a
/// multiple of four).
#[inline]
fn raw_pair_terms_dispatch(
    use_simd: bool,
    d: f64,
    coeffs: &[f64],
    acc_i: &mut [f64],
    acc_j: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    if use_simd {
        // SAFETY: use_simd is set only when AVX2 and FMA were detected
        unsafe { simd::raw_pair_terms(d, coeffs, acc_i, acc_j) };
        return;
    }
    let _ = use_simd;
    for ((ai, aj), &c) in acc_i.iter_mut().zip(acc_j.iter_mut()).zip(coeffs) {
        let e = (-d * c).exp();
        *ai += e;
        *aj += e;
    }
}

/// Adds each distance's kernel terms (normalized by `d_min`) into the
/// per-slot sums, skipping sub-threshold terms.
#[inline]
fn lse_point_sums_dispatch(
    use_simd: bool,
    dists: &[f64],
    d_min: f64,
    coeffs: &[f64],
    sums: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    if use_simd {
        // SAFETY: use_simd is set only when AVX2 and FMA were detected
        unsafe { simd::lse_point_sums(dists, d_min, coeffs, sums) };
        return;
    }
    let _ = use_simd;
    for &d in dists {
        let base = d_min - d;
        for (slot, &c) in coeffs.iter().enumerate() {
            let t = base * c;
            if t >= LOG_SKIP {
                sums[slot] += t.exp();
            }
        }
    }
}

/// Sum of `exp((d_min - d) * c)` over the distances with skip threshold.
#[inline]
fn kernel_sum_dispatch(use_simd: bool, sq: &[f64], d_min: f64, c: f64) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if use_simd {
        // SAFETY: use_simd is set only when AVX2 and FMA were detected
        return unsafe { simd::kernel_sum(sq, d_min, c) };
    }
    let _ = use_simd;
    let mut sum = 0.0;
    for &d in sq {
        let t = (d_min - d) * c;
        if t >= LOG_SKIP {
            sum += t.exp();
        }
    }
    sum
}

/// A fitted spherical Gaussian KDE: training points and one bandwidth.
#[derive(Debug, Clone)]
pub struct KdeModel {
    train: Dataset,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(train: Dataset, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be a positive real, got {bandwidth}"
            )));
        }
        Ok(KdeModel { train, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.train.n_features()
    }

    pub fn n_train(&self) -> usize {
        self.train.n_rows()
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    /// log f(x) for the spherical Gaussian KDE
    /// f(x) = (1/m) sum_i exp(-|X_i - x|^2 / (2 h^2)) / ((2 pi)^{p/2} h^p),
    /// evaluated via log-sum-exp; finite for all finite x.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let mut scratch = Vec::new();
        self.log_density_with(x, &mut scratch)
    }

    fn log_density_with(&self, x: &[f64], scratch: &mut Vec<f64>) -> Result<f64> {
        let p = self.dim();
        if x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite query point".into()));
        }
        squared_distances(&self.train, x, scratch);
        Ok(log_density_from_sq_dists(
            scratch,
            self.bandwidth,
            p,
            self.train.n_rows(),
        ))
    }

    /// Mean of `log_density` over the rows of `eval` (summed in row order).
    pub fn mean_log_density(&self, eval: &Dataset) -> Result<f64> {
        if eval.n_features() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: eval.n_features(),
            });
        }
        let values: Vec<f64> = eval
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map_init(Vec::new, |scratch, row| {
                self.log_density_with(row, scratch).expect("dims checked")
            })
            .collect();
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Writes `|t - x|^2` for every training row `t` into `out`.
fn squared_distances(train: &Dataset, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.reserve(train.n_rows());
    for row in train.rows() {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            let diff = a - b;
            acc += diff * diff;
        }
        out.push(acc);
    }
}

/// Log-sum-exp over kernel terms from precomputed squared distances, in the
/// order given. Terms more than `LOG_SKIP` below the leading one are dropped;
/// they would round to exactly 0.0 next to it.
fn log_density_from_sq_dists(sq: &[f64], h: f64, p: usize, m: usize) -> f64 {
    let c = 1.0 / (2.0 * h * h);
    let d_min = sq.iter().copied().fold(f64::INFINITY, f64::min);
    let sum = kernel_sum_dispatch(has_avx2_fma(), sq, d_min, c);
    -d_min * c + sum.ln() - (m as f64).ln() - 0.5 * (p as f64) * ln_2pi() - (p as f64) * h.ln()
}

/// Same quantity from distances sorted ascending, truncating the tail by
/// binary search. Used by the cross-validation loop, where one sorted buffer
/// serves the whole bandwidth grid.
fn log_density_from_sorted_sq_dists(sorted_sq: &[f64], h: f64, p: usize, m: usize) -> f64 {
    let c = 1.0 / (2.0 * h * h);
    let d_min = sorted_sq[0];
    let cutoff = d_min - LOG_SKIP / c; // d <= cutoff  <=>  (d_min - d) * c >= LOG_SKIP
    let end = sorted_sq.partition_point(|&d| d <= cutoff);
    let mut sum = 0.0;
    for &d in &sorted_sq[..end] {
        sum += ((d_min - d) * c).exp();
    }
    -d_min * c + sum.ln() - (m as f64).ln() - 0.5 * (p as f64) * ln_2pi() - (p as f64) * h.ln()
}

/// How the candidate bandwidths are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScale {
    Log,
    Linear,
}

/// A bandwidth grid from `min` to `max` inclusive with `count` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub scale: GridScale,
}

impl BandwidthGrid {
    pub fn new(min: f64, max: f64, count: usize, scale: GridScale) -> Result<Self> {
        let grid = BandwidthGrid {
            min,
            max,
            count,
            scale,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// The default experiment grid: 30 log-spaced values from 0.01 to 1.
    pub fn default_grid() -> Self {
        BandwidthGrid {
            min: 0.01,
            max: 1.0,
            count: 30,
            scale: GridScale::Log,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.min.is_finite() && self.max.is_finite() && self.min <= self.max)
        {
            return Err(Error::InvalidArgument(format!(
                "bandwidth grid needs 0 < min <= max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.count == 0 {
            return Err(Error::InvalidArgument("empty bandwidth grid".into()));
        }
        Ok(())
    }

    /// Materializes the grid: geometric spacing for `Log`, arithmetic for
    /// `Linear`, endpoints exact.
    pub fn values(&self) -> Vec<f64> {
        let n = self.count;
        if n == 1 {
            return vec![self.min];
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let frac = i as f64 / (n - 1) as f64;
            let v = match self.scale {
                GridScale::Log => (self.min.ln() + frac * (self.max.ln() - self.min.ln())).exp(),
                GridScale::Linear => self.min + frac * (self.max - self.min),
            };
            out.push(v);
        }
        out[0] = self.min;
        out[n - 1] = self.max;
        out
    }
}

/// Materializes a [`BandwidthGrid`].
pub fn make_grid(grid: &BandwidthGrid) -> Vec<f64> {
    grid.values()
}

/// Above this many squared-distance entries the CV switches from the shared
/// distance-matrix algorithm to the streaming one (same results, less memory).
const CV_MATRIX_CAP: usize = 36_000_000;

/// Selects a bandwidth by V-fold cross-validation of the held-out mean
/// log-density. Rows are shuffled once (ChaCha8 keyed by `seed`) and cut into
/// V near-equal contiguous chunks; for each grid value the CV score is the
/// unweighted mean over folds of the held-out fold's mean log-density. Ties
/// break toward the largest bandwidth.
///
/// Returns the winning bandwidth and the full score vector (grid order).
pub fn select_bandwidth_cv(
    train: &Dataset,
    grid: &BandwidthGrid,
    folds: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    grid.validate()?;
    let n_rows = train.n_rows();
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    if folds > n_rows {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds but only {n_rows} rows"
        )));
    }
    let hs = grid.values();

    // fold assignment: shuffled order cut into near-equal contiguous chunks,
    // the first (n % V) folds one row longer
    let mut order: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n_rows / folds;
    let extra = n_rows % folds;
    let mut fold_of = vec![0usize; n_rows];
    let mut fold_len = vec![0usize; folds];
    let mut start = 0usize;
    for (f, slot) in fold_len.iter_mut().enumerate() {
        let len = base + usize::from(f < extra);
        for &i in &order[start..start + len] {
            fold_of[i] = f;
        }
        *slot = len;
        start += len;
    }

    let cv = if n_rows * n_rows <= CV_MATRIX_CAP {
        cv_scores_shared_matrix(train, &hs, &fold_of, &fold_len)
    } else {
        cv_scores_streaming(train, &hs, &order, &fold_len)
    };

    let mut best = 0;
    for (i, &s) in cv.iter().enumerate() {
        if s >= cv[best] {
            best = i; // >= pushes ties toward the larger bandwidth
        }
    }
    Ok((hs[best], cv))
}

/// CV scores via one shared squared-distance matrix.
///
/// The bandwidth grid is split by the data's bounding-box diameter: for
/// bandwidths where no kernel term can drop below exp(-700), the raw kernel
/// sums are accumulated pair-symmetrically (each cross-fold pair contributes
/// one exp to both endpoints' sums), halving the exp work; smaller bandwidths
/// go through the per-point sorted-prefix log-sum-exp route, where the same
/// cutoff makes their prefixes short. Accumulation orders are fixed (row
/// chunks of a deterministic size, merged in order), so results do not depend
/// on the thread count.
fn cv_scores_shared_matrix(
    train: &Dataset,
    hs: &[f64],
    fold_of: &[usize],
    fold_len: &[usize],
) -> Vec<f64> {
    let m = train.n_rows();
    let p = train.n_features();
    let folds = fold_len.len();

    // squared bounding-box diameter bounds every pairwise distance
    let mut lo = vec![f64::INFINITY; p];
    let mut hi = vec![f64::NEG_INFINITY; p];
    for row in train.rows() {
        for (j, &v) in row.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let diameter_sq: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum();

    // raw route is safe when diameter^2 / (2 h^2) <= -LOG_SKIP
    let (raw_idx, lse_idx): (Vec<usize>, Vec<usize>) =
        (0..hs.len()).partition(|&gi| diameter_sq <= -LOG_SKIP * 2.0 * hs[gi] * hs[gi]);

    // full m x m squared-distance matrix (row-parallel, deterministic)
    let mut matrix = vec![0.0f64; m * m];
    let rows: Vec<&[f64]> = train.rows().collect();
    matrix
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, out_row)| {
            let xi = rows[i];
            for (j, slot) in out_row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (a, b) in xi.iter().zip(rows[j]) {
                    let diff = a - b;
                    acc += diff * diff;
                }
                *slot = acc;
            }
        });

    // pair-symmetric raw kernel sums: acc[point][raw slot], slot arrays
    // padded to a multiple of four for the vector kernels (pad entries have
    // coefficient zero and are never read back)
    let use_simd = has_avx2_fma();
    let n_raw = raw_idx.len();
    let stride = n_raw.div_ceil(4) * 4;
    let mut raw_c = vec![0.0f64; stride];
    for (slot, &gi) in raw_idx.iter().enumerate() {
        raw_c[slot] = 1.0 / (2.0 * hs[gi] * hs[gi]);
    }
    let mut raw_acc = vec![0.0f64; m * stride];
    if n_raw > 0 {
        let chunk_rows = m.div_ceil(16); // fixed chunking, independent of threads
        let partials: Vec<Vec<f64>> = (0..m.div_ceil(chunk_rows))
            .into_par_iter()
            .map(|chunk| {
                let i_lo = chunk * chunk_rows;
                let i_hi = (i_lo + chunk_rows).min(m);
                let mut acc = vec![0.0f64; m * stride];
                for i in i_lo..i_hi {
                    let row = &matrix[i * m..(i + 1) * m];
                    let fi = fold_of[i];
                    for j in i + 1..m {
                        if fi == fold_of[j] {
                            continue;
                        }
                        // rows i and j of the accumulator are disjoint (j > i)
                        let (left, right) = acc.split_at_mut(j * stride);
                        raw_pair_terms_dispatch(
                            use_simd,
                            row[j],
                            &raw_c,
                            &mut left[i * stride..i * stride + stride],
                            &mut right[..stride],
                        );
                    }
                }
                acc
            })
            .collect();
        for partial in partials {
            for (total, v) in raw_acc.iter_mut().zip(partial) {
                *total += v;
            }
        }
    }

    // coefficients of the log-sum-exp route, padded like the raw ones
    let n_lse = lse_idx.len();
    let lse_stride = n_lse.div_ceil(4) * 4;
    let mut lse_c = vec![0.0f64; lse_stride];
    for (slot, &gi) in lse_idx.iter().enumerate() {
        lse_c[slot] = 1.0 / (2.0 * hs[gi] * hs[gi]);
    }

    // per-point log-densities for every grid value
    let ln_2pi = ln_2pi();
    let per_point: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map_init(Vec::new, |scratch: &mut Vec<f64>, i| {
            let m_train = m - fold_len[fold_of[i]];
            let norm = -((m_train as f64).ln()) - 0.5 * (p as f64) * ln_2pi;
            let mut out = vec![0.0f64; hs.len()];
            for (slot, &gi) in raw_idx.iter().enumerate() {
                let sum = raw_acc[i * stride + slot];
                out[gi] = sum.ln() + norm - (p as f64) * hs[gi].ln();
            }
            if n_lse > 0 {
                // cross-fold distances in row order, for the per-point
                // log-sum-exp route; one min scan serves every grid value
                scratch.clear();
                let row = &matrix[i * m..(i + 1) * m];
                for j in 0..m {
                    if fold_of[j] != fold_of[i] {
                        scratch.push(row[j]);
                    }
                }
                let d_min = scratch.iter().copied().fold(f64::INFINITY, f64::min);
                let mut sums = vec![0.0f64; lse_stride];
                lse_point_sums_dispatch(use_simd, scratch, d_min, &lse_c, &mut sums);
                for (slot, &gi) in lse_idx.iter().enumerate() {
                    let h = hs[gi];
                    let c = lse_c[slot];
                    out[gi] = -d_min * c + sums[slot].ln() + norm - (p as f64) * h.ln();
                }
            }
            out
        })
        .collect();

    // fold means, then the mean over folds, in index order
    let mut cv = vec![0.0f64; hs.len()];
    for (gi, slot) in cv.iter_mut().enumerate() {
        let mut fold_sum = vec![0.0f64; folds];
        for (i, values) in per_point.iter().enumerate() {
            fold_sum[fold_of[i]] += values[gi];
        }
        *slot = fold_sum
            .iter()
            .zip(fold_len)
            .map(|(s, &len)| s / len as f64)
            .sum::<f64>()
            / folds as f64;
    }
    cv
}

/// Streaming CV scores: per held-out point, one sorted distance buffer serves
/// the whole grid. Used when the distance matrix would not fit comfortably.
fn cv_scores_streaming(
    train: &Dataset,
    hs: &[f64],
    order: &[usize],
    fold_len: &[usize],
) -> Vec<f64> {
    let n_rows = train.n_rows();
    let p = train.n_features();
    let folds = fold_len.len();
    let mut cv = vec![0.0; hs.len()];
    let mut start = 0usize;
    for &len in fold_len {
        let held: &[usize] = &order[start..start + len];
        start += len;

        let mut fit_values = Vec::with_capacity((n_rows - len) * p);
        for (pos, &i) in order.iter().enumerate() {
            if pos < start - len || pos >= start {
                fit_values.extend_from_slice(train.row(i));
            }
        }
        let fit = Dataset::new(fit_values, n_rows - len, p).expect("rows are finite");
        let m = fit.n_rows();

        let per_point: Vec<Vec<f64>> = held
            .par_iter()
            .map_init(Vec::new, |scratch: &mut Vec<f64>, &i| {
                squared_distances(&fit, train.row(i), scratch);
                scratch.sort_unstable_by(f64::total_cmp);
                hs.iter()
                    .map(|&h| log_density_from_sorted_sq_dists(scratch, h, p, m))
                    .collect()
            })
            .collect();

        for (gi, slot) in cv.iter_mut().enumerate() {
            let fold_sum: f64 = per_point.iter().map(|v| v[gi]).sum();
            *slot += fold_sum / len as f64;
        }
    }
    for v in &mut cv {
        *v /= folds as f64;
    }
    cv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use rand::Rng;

    fn ds(rows: &[Vec<f64>]) -> Dataset {
        Dataset::from_rows(rows).unwrap()
    }

    /// Direct (non-log) evaluation of the SGKDE formula; underflows for
    /// far-apart points, so only usable where the density is representable.
    fn direct_density(train: &Dataset, h: f64, x: &[f64]) -> f64 {
        let p = train.n_features() as f64;
        let norm = (2.0 * std::f64::consts::PI).powf(p / 2.0) * h.powf(p);
        let mut total = 0.0;
        for row in train.rows() {
            let sq: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            total += (-sq / (2.0 * h * h)).exp() / norm;
        }
        total / train.n_rows() as f64
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn simd_exp_tracks_libm_over_the_domain() {
        if !has_avx2_fma() {
            return;
        }
        let mut worst = 0.0f64;
        let mut xs = [0.0f64; 4];
        let mut out = [0.0f64; 4];
        for base in 0..350_000 {
            for (lane, x) in xs.iter_mut().enumerate() {
                *x = -((base * 4 + lane) as f64) * 5e-4; // 0 down to -700
            }
            unsafe {
                use core::arch::x86_64::*;
                let v = simd::exp4(_mm256_loadu_pd(xs.as_ptr()));
                _mm256_storeu_pd(out.as_mut_ptr(), v);
            }
            for (x, got) in xs.iter().zip(&out) {
                let want = x.exp();
                worst = worst.max(((got - want) / want).abs());
            }
        }
        assert!(worst < 5e-15, "worst relative error {worst:e}");
    }

    #[test]
    fn kernel_at_zero_distance() {
        let model = KdeModel::new(ds(&[vec![0.3]]), 1.0).unwrap();
        let got = model.log_density(&[0.3]).unwrap();
        let expected = -(0.5f64) * (2.0 * std::f64::consts::PI).ln(); // log(1/sqrt(2pi))
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((expected + 0.9189385).abs() < 1e-6);
    }

    #[test]
    fn symmetric_pair_collapses_to_single_kernel() {
        let a = 0.7;
        let pair = KdeModel::new(ds(&[vec![a], vec![-a]]), 0.4).unwrap();
        let single = KdeModel::new(ds(&[vec![a]]), 0.4).unwrap();
        let got = pair.log_density(&[0.0]).unwrap();
        let expected = single.log_density(&[0.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn agrees_with_direct_formula_on_small_instance() {
        let train = ds(&[
            vec![0.1, 0.9],
            vec![0.4, 0.2],
            vec![0.8, 0.6],
            vec![0.3, 0.3],
            vec![0.95, 0.05],
        ]);
        for h in [0.2, 0.5, 1.5] {
            let model = KdeModel::new(train.clone(), h).unwrap();
            for x in [[0.5, 0.5], [0.0, 1.0], [0.9, 0.1]] {
                let direct = direct_density(&train, h, &x);
                assert!(direct > 0.0, "direct value underflowed");
                let got = model.log_density(&x).unwrap();
                assert!(
                    (got - direct.ln()).abs() < 1e-12,
                    "h={h} x={x:?}: {got} vs {}",
                    direct.ln()
                );
            }
        }
    }

    #[test]
    fn log_density_rejects_bad_inputs() {
        let model = KdeModel::new(ds(&[vec![0.0, 0.0]]), 1.0).unwrap();
        assert!(matches!(
            model.log_density(&[0.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(model.log_density(&[f64::NAN, 0.0]).is_err());
        assert!(KdeModel::new(ds(&[vec![0.0]]), 0.0).is_err());
    }

    #[test]
    fn finite_even_when_raw_density_underflows() {
        // distance 40 at h = 0.01: the raw kernel is exp(-200000), far below
        // the smallest positive f64
        let model = KdeModel::new(ds(&[vec![0.0]]), 0.01).unwrap();
        let got = model.log_density(&[40.0]).unwrap();
        assert!(got.is_finite());
        assert!(got < -1e6);
    }

    #[test]
    fn mean_log_density_basics() {
        let model = KdeModel::new(ds(&[vec![0.0], vec![1.0], vec![0.5]]), 0.3).unwrap();
        let single = ds(&[vec![0.2]]);
        let m1 = model.mean_log_density(&single).unwrap();
        assert_eq!(m1, model.log_density(&[0.2]).unwrap());

        let eval = ds(&[vec![0.2], vec![0.8], vec![0.4]]);
        let permuted = ds(&[vec![0.8], vec![0.4], vec![0.2]]);
        let a = model.mean_log_density(&eval).unwrap();
        let b = model.mean_log_density(&permuted).unwrap();
        assert!((a - b).abs() < 1e-12);

        let by_hand: f64 = eval
            .rows()
            .map(|r| model.log_density(r).unwrap())
            .sum::<f64>()
            / 3.0;
        assert_eq!(a, by_hand);
    }

    #[test]
    fn translation_equivariance() {
        let train = ds(&[vec![0.1, 0.4], vec![0.9, 0.2], vec![0.5, 0.55]]);
        let model = KdeModel::new(train.clone(), 0.25).unwrap();
        let shift = [13.5, -7.25];
        let shifted_rows: Vec<Vec<f64>> = train
            .rows()
            .map(|r| r.iter().zip(&shift).map(|(a, s)| a + s).collect())
            .collect();
        let shifted = KdeModel::new(ds(&shifted_rows), 0.25).unwrap();
        for x in [[0.3, 0.3], [0.0, 1.0]] {
            let y: Vec<f64> = x.iter().zip(&shift).map(|(a, s)| a + s).collect();
            let a = model.log_density(&x).unwrap();
            let b = shifted.log_density(&y).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn one_dimensional_density_integrates_to_one() {
        // composite Simpson over a wide interval
        let model = KdeModel::new(ds(&[vec![0.1], vec![0.35], vec![0.6], vec![0.9]]), 0.7).unwrap();
        let (lo, hi, steps) = (-25.0, 25.0, 40_000usize);
        let h = (hi - lo) / steps as f64;
        let f = |x: f64| model.log_density(&[x]).unwrap().exp();
        let mut integral = f(lo) + f(hi);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * f(lo + i as f64 * h);
        }
        integral *= h / 3.0;
        assert!((integral - 1.0).abs() < 1e-6, "integral = {integral}");
    }

    #[test]
    fn huge_bandwidth_limit() {
        let p = 2usize;
        let model = KdeModel::new(ds(&[vec![0.2, 0.8], vec![0.6, 0.1]]), 1e3).unwrap();
        let got = model.log_density(&[0.4, 0.4]).unwrap();
        let limit = -0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln() - p as f64 * 1e3f64.ln();
        assert!((got - limit).abs() < 1e-3, "{got} vs {limit}");
    }

    #[test]
    fn grid_construction() {
        let g = BandwidthGrid::new(0.01, 1.0, 3, GridScale::Log).unwrap();
        let v = g.values();
        assert_eq!(v[0], 0.01);
        assert!((v[1] - 0.1).abs() < 1e-12);
        assert_eq!(v[2], 1.0);

        let g = BandwidthGrid::default_grid();
        let v = g.values();
        assert_eq!(v.len(), 30);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[29], 1.0);

        let g = BandwidthGrid::new(1.0, 1.0, 5, GridScale::Linear).unwrap();
        assert_eq!(g.values(), vec![1.0; 5]);

        assert!(BandwidthGrid::new(0.0, 1.0, 3, GridScale::Log).is_err());
        assert!(BandwidthGrid::new(2.0, 1.0, 3, GridScale::Log).is_err());
        assert!(BandwidthGrid::new(0.1, 1.0, 0, GridScale::Log).is_err());
    }

    fn normal_sample(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.sample::<f64, _>(rand_distr::StandardNormal)])
            .collect();
        ds(&rows)
    }

    #[test]
    fn cv_singleton_and_duplicate_grids() {
        let train = normal_sample(40, 3);
        let g = BandwidthGrid::new(0.37, 0.37, 1, GridScale::Log).unwrap();
        let (h, scores) = select_bandwidth_cv(&train, &g, 5, 11).unwrap();
        assert_eq!(h, 0.37);
        assert_eq!(scores.len(), 1);

        let g2 = BandwidthGrid::new(0.37, 0.37, 2, GridScale::Log).unwrap();
        let (h2, scores2) = select_bandwidth_cv(&train, &g2, 5, 11).unwrap();
        assert_eq!(h2, 0.37);
        assert_eq!(scores2[0], scores2[1]);
    }

    #[test]
    fn cv_rejects_bad_folds() {
        let train = normal_sample(4, 0);
        let g = BandwidthGrid::default_grid();
        assert!(select_bandwidth_cv(&train, &g, 1, 0).is_err());
        assert!(select_bandwidth_cv(&train, &g, 5, 0).is_err());
    }

    #[test]
    fn cv_is_deterministic() {
        let train = normal_sample(60, 9);
        let g = BandwidthGrid::new(0.05, 1.0, 8, GridScale::Log).unwrap();
        let a = select_bandwidth_cv(&train, &g, 5, 123).unwrap();
        let b = select_bandwidth_cv(&train, &g, 5, 123).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    /// Independent double-loop CV: refits a fresh model per (h, fold) and
    /// evaluates with a plain data-order log-sum-exp.
    fn naive_cv(train: &Dataset, hs: &[f64], folds: usize, seed: u64) -> Vec<f64> {
        let n = train.n_rows();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let base = n / folds;
        let extra = n % folds;

        let naive_ld = |fit: &Dataset, h: f64, x: &[f64]| -> f64 {
            let p = fit.n_features() as f64;
            let ts: Vec<f64> = fit
                .rows()
                .map(|r| {
                    let sq: f64 = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    -sq / (2.0 * h * h)
                })
                .collect();
            let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = ts.iter().map(|t| (t - t_max).exp()).sum();
            t_max + sum.ln()
                - (fit.n_rows() as f64).ln()
                - 0.5 * p * (2.0 * std::f64::consts::PI).ln()
                - p * h.ln()
        };

        let mut scores = vec![0.0; hs.len()];
        let mut start = 0;
        for f in 0..folds {
            let len = base + usize::from(f < extra);
            let held = &order[start..start + len];
            start += len;
            let fit_rows: Vec<Vec<f64>> = order
                .iter()
                .enumerate()
                .filter(|(pos, _)| *pos < start - len || *pos >= start)
                .map(|(_, &i)| train.row(i).to_vec())
                .collect();
            let fit = Dataset::from_rows(&fit_rows).unwrap();
            for (gi, &h) in hs.iter().enumerate() {
                let mean: f64 = held
                    .iter()
                    .map(|&i| naive_ld(&fit, h, train.row(i)))
                    .sum::<f64>()
                    / len as f64;
                scores[gi] += mean / folds as f64;
            }
        }
        scores
    }

    #[test]
    fn cv_matrix_and_streaming_routes_agree() {
        let train = normal_sample(300, 21);
        let grid = BandwidthGrid::default_grid();
        let hs = grid.values();

        let mut order: Vec<usize> = (0..300).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        order.shuffle(&mut rng);
        let fold_len = vec![60usize; 5];
        let mut fold_of = vec![0usize; 300];
        let mut start = 0;
        for (f, &len) in fold_len.iter().enumerate() {
            for &i in &order[start..start + len] {
                fold_of[i] = f;
            }
            start += len;
        }

        let a = cv_scores_shared_matrix(&train, &hs, &fold_of, &fold_len);
        let b = cv_scores_streaming(&train, &hs, &order, &fold_len);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn cv_matches_independent_double_loop_oracle() {
        let train = normal_sample(500, 42);
        let grid = BandwidthGrid::default_grid();
        let (h_best, scores) = select_bandwidth_cv(&train, &grid, 5, 7).unwrap();
        let oracle = naive_cv(&train, &grid.values(), 5, 7);
        for (a, b) in scores.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let best_oracle = oracle.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let chosen_idx = grid.values().iter().position(|&h| h == h_best).unwrap();
        assert!(oracle[chosen_idx] >= best_oracle - 1e-9);
    }
}
