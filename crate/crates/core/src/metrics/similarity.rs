//! Similarity metrics for frames and sequences: windowed SSIM, exact 1-D
//! earth mover's distance, (Fast)DTW, and Pearson correlation.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;

/// SSIM constants: 8x8 uniform sliding window, K1/K2 per the conventional
/// design, dynamic range matching the pixel encoding.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    pub window: usize,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            window: 8,
            dynamic_range: 1.0,
        }
    }
}

/// Mean structural similarity over all `window x window` positions
/// (stride 1, uniform weights, population moments). Equals 1 iff the images
/// are identical; symmetric in its arguments.
pub fn ssim<F: Float>(a: ArrayView2<F>, b: ArrayView2<F>, cfg: &SsimConfig) -> Result<F> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "ssim over {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w) = a.dim();
    let win = cfg.window;
    if h < win || w < win {
        return Err(Error::TooShort {
            needed: win,
            got: h.min(w),
        });
    }
    let c1 = F::cast((cfg.k1 * cfg.dynamic_range).powi(2));
    let c2 = F::cast((cfg.k2 * cfg.dynamic_range).powi(2));
    let inv_n = F::one() / F::cast((win * win) as f64);
    let two = F::cast(2.0);

    let mut acc = F::zero();
    let mut count = 0usize;
    for r in 0..=(h - win) {
        for c in 0..=(w - win) {
            let mut ma = F::zero();
            let mut mb = F::zero();
            for i in 0..win {
                for j in 0..win {
                    ma += a[[r + i, c + j]];
                    mb += b[[r + i, c + j]];
                }
            }
            ma = ma * inv_n;
            mb = mb * inv_n;
            let mut va = F::zero();
            let mut vb = F::zero();
            let mut cov = F::zero();
            for i in 0..win {
                for j in 0..win {
                    let da = a[[r + i, c + j]] - ma;
                    let db = b[[r + i, c + j]] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va = va * inv_n;
            vb = vb * inv_n;
            cov = cov * inv_n;
            let s = ((two * ma * mb + c1) * (two * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            acc += s;
            count += 1;
        }
    }
    Ok(acc / F::cast(count as f64))
}

/// Exact 1-D earth mover's distance between normalized histograms sharing an
/// ordered bin axis with unit inter-bin distance:
/// `EMD = sum_i |CDF_a(i) - CDF_b(i)|`.
pub fn emd_1d<F: Float>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "emd over lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let tol = F::cast(1e-9);
    for (name, h) in [("first", a), ("second", b)] {
        let sum: F = h.iter().copied().sum();
        if (sum - F::one()).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "{name} histogram sums to {sum}, expected 1"
            )));
        }
        if h.iter().any(|&v| v < -tol) {
            return Err(Error::InvalidInput(format!(
                "{name} histogram has a negative bin"
            )));
        }
    }
    let mut cdf_a = F::zero();
    let mut cdf_b = F::zero();
    let mut dist = F::zero();
    for i in 0..a.len() - 1 {
        cdf_a += a[i];
        cdf_b += b[i];
        dist += (cdf_a - cdf_b).abs();
    }
    Ok(dist)
}

// ---------------------------------------------------------------------------
// Dynamic time warping
// ---------------------------------------------------------------------------

/// Euclidean ground cost between observation rows.
fn ground_cost<F: Float>(a: ArrayView2<F>, i: usize, b: ArrayView2<F>, j: usize) -> F {
    let mut acc = F::zero();
    for k in 0..a.ncols() {
        let d = a[[i, k]] - b[[j, k]];
        acc += d * d;
    }
    acc.sqrt()
}

/// Per-row column windows, half-open.
#[derive(Debug, Clone)]
struct Band {
    ranges: Vec<(usize, usize)>,
}

impl Band {
    fn full(n: usize, m: usize) -> Self {
        Band {
            ranges: vec![(0, m); n],
        }
    }
}

/// Banded DTW with path recovery. Ties break deterministically:
/// diagonal, then up, then left.
fn dtw_banded<F: Float>(
    a: ArrayView2<F>,
    b: ArrayView2<F>,
    band: &Band,
) -> (F, Vec<(usize, usize)>) {
    let n = a.nrows();
    let inf = F::infinity();
    let mut rows: Vec<Vec<F>> = Vec::with_capacity(n);
    let mut parents: Vec<Vec<u8>> = Vec::with_capacity(n);

    for i in 0..n {
        let (lo, hi) = band.ranges[i];
        let mut row = vec![inf; hi - lo];
        let mut par = vec![0u8; hi - lo];
        for j in lo..hi {
            let cost = ground_cost(a, i, b, j);
            let prev = |ii: i64, jj: i64| -> F {
                if ii < 0 || jj < 0 {
                    return if ii == -1 && jj == -1 { F::zero() } else { inf };
                }
                let (plo, phi) = band.ranges[ii as usize];
                let jj = jj as usize;
                if jj < plo || jj >= phi {
                    inf
                } else if ii as usize == i {
                    row[jj - plo]
                } else {
                    rows[ii as usize][jj - plo]
                }
            };
            let diag = prev(i as i64 - 1, j as i64 - 1);
            let up = prev(i as i64 - 1, j as i64);
            let left = prev(i as i64, j as i64 - 1);
            let (best, dir) = if diag <= up && diag <= left {
                (diag, 0u8)
            } else if up <= left {
                (up, 1u8)
            } else {
                (left, 2u8)
            };
            row[j - lo] = cost + best;
            par[j - lo] = dir;
        }
        rows.push(row);
        parents.push(par);
    }

    let m = b.nrows();
    let (llo, _) = band.ranges[n - 1];
    let total = rows[n - 1][m - 1 - llo];

    // Backtrack.
    let mut path = Vec::new();
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        path.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        let (lo, _) = band.ranges[i];
        match parents[i][j - lo] {
            0 => {
                i = i.saturating_sub(1);
                j = j.saturating_sub(1);
            }
            1 => i -= 1,
            _ => j -= 1,
        }
    }
    path.reverse();
    (total, path)
}

/// Exact DTW over the full alignment lattice.
pub fn dtw_exact<F: Float>(a: ArrayView2<F>, b: ArrayView2<F>) -> Result<F> {
    validate_seqs(a, b)?;
    Ok(dtw_banded(a, b, &Band::full(a.nrows(), b.nrows())).0)
}

fn validate_seqs<F: Float>(a: ArrayView2<F>, b: ArrayView2<F>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InvalidInput("empty sequence in DTW".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "DTW feature widths {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(())
}

/// Below this length the multiresolution recursion solves exactly.
pub const FASTDTW_MIN_SIZE: usize = 16;

/// Radius used while projecting paths between pyramid levels. Keeping it
/// fixed makes the pyramid canonical: the user radius only widens the final
/// band, so the distance is monotone non-increasing in the radius.
const PYRAMID_REFINE_RADIUS: usize = 1;

/// Multiresolution approximate DTW: coarsen by pairwise averaging, solve
/// recursively, and refine within `radius` cells of the projected path.
/// Equals exact DTW whenever `min(len) <= max(radius + 2, FASTDTW_MIN_SIZE)`
/// or the radius covers the whole lattice; monotone non-increasing in
/// `radius`.
pub fn fast_dtw<F: Float>(a: ArrayView2<F>, b: ArrayView2<F>, radius: usize) -> Result<F> {
    validate_seqs(a, b)?;
    let (n, m) = (a.nrows(), b.nrows());
    if n.min(m) <= FASTDTW_MIN_SIZE.max(radius + 2) {
        return Ok(dtw_banded(a, b, &Band::full(n, m)).0);
    }
    Ok(fast_dtw_level(a, b, radius).0)
}

fn halve<F: Float>(x: ArrayView2<F>) -> ndarray::Array2<F> {
    let n = x.nrows();
    let half = F::cast(0.5);
    let m = n / 2 + n % 2;
    let mut out = ndarray::Array2::<F>::zeros((m, x.ncols()));
    for i in 0..m {
        let j = 2 * i;
        if j + 1 < n {
            for k in 0..x.ncols() {
                out[[i, k]] = (x[[j, k]] + x[[j + 1, k]]) * half;
            }
        } else {
            for k in 0..x.ncols() {
                out[[i, k]] = x[[j, k]];
            }
        }
    }
    out
}

/// One pyramid level: `band_radius` widens this level's refinement band
/// while deeper levels always use `PYRAMID_REFINE_RADIUS`, keeping the
/// coarse path independent of the user radius.
fn fast_dtw_level<F: Float>(
    a: ArrayView2<F>,
    b: ArrayView2<F>,
    band_radius: usize,
) -> (F, Vec<(usize, usize)>) {
    let n = a.nrows();
    let m = b.nrows();
    if n <= FASTDTW_MIN_SIZE || m <= FASTDTW_MIN_SIZE {
        return dtw_banded(a, b, &Band::full(n, m));
    }
    let a2 = halve(a);
    let b2 = halve(b);
    let (_, coarse_path) = fast_dtw_level(a2.view(), b2.view(), PYRAMID_REFINE_RADIUS);

    // Project the coarse path onto the fine lattice and widen by the radius.
    let radius = band_radius;
    let mut lo = vec![usize::MAX; n];
    let mut hi = vec![0usize; n];
    let mut mark = |i: usize, j: usize| {
        if i < n {
            lo[i] = lo[i].min(j.min(m - 1));
            hi[i] = hi[i].max(j.min(m - 1) + 1);
        }
    };
    for &(ci, cj) in &coarse_path {
        for di in 0..2 {
            for dj in 0..2 {
                mark(2 * ci + di, 2 * cj + dj);
            }
        }
    }
    // Radius inflation plus monotone continuity so the DP lattice is
    // connected.
    let mut ranges = Vec::with_capacity(n);
    for i in 0..n {
        let (mut l, mut h) = if lo[i] == usize::MAX {
            (0, m)
        } else {
            (lo[i].saturating_sub(radius), (hi[i] + radius).min(m))
        };
        let look_up = i.saturating_sub(radius);
        let look_dn = (i + radius).min(n - 1);
        for k in look_up..=look_dn {
            if lo[k] != usize::MAX {
                l = l.min(lo[k].saturating_sub(radius));
                h = h.max((hi[k] + radius).min(m));
            }
        }
        ranges.push((l, h));
    }
    ranges[0].0 = 0;
    ranges[n - 1].1 = m;
    for i in 1..n {
        // Each row must overlap its predecessor for the path to connect.
        if ranges[i].0 > ranges[i - 1].1 {
            ranges[i].0 = ranges[i - 1].1 - 1;
        }
        if ranges[i].1 < ranges[i - 1].0 + 1 {
            ranges[i].1 = ranges[i - 1].0 + 1;
        }
    }
    dtw_banded(a, b, &Band { ranges })
}

fn as_matrix<F: Float>(x: &[F]) -> ndarray::Array2<F> {
    ndarray::Array2::from_shape_vec((x.len(), 1), x.to_vec()).expect("column vector")
}

/// Exact DTW over scalar sequences (absolute-difference ground cost).
pub fn dtw_exact_1d<F: Float>(a: &[F], b: &[F]) -> Result<F> {
    dtw_exact(as_matrix(a).view(), as_matrix(b).view())
}

/// FastDTW over scalar sequences.
pub fn fast_dtw_1d<F: Float>(a: &[F], b: &[F], radius: usize) -> Result<F> {
    fast_dtw(as_matrix(a).view(), as_matrix(b).view(), radius)
}

/// Pearson correlation coefficient of two equal-length, non-constant
/// vectors.
pub fn pcc<F: Float>(x: &[F], y: &[F]) -> Result<F> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "pcc over lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mx = crate::float::mean(x);
    let my = crate::float::mean(y);
    let mut sxx = F::zero();
    let mut syy = F::zero();
    let mut sxy = F::zero();
    for (&a, &b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(Error::InvalidInput(
            "pcc undefined for constant input".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).min(F::one()).max(-F::one()))
}

/// Bundle of frame/sequence similarity results for one comparison pair.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub ssim: f64,
    pub emd: f64,
    pub dtw_distance: f64,
    pub pcc: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ssim_identical_is_one() {
        let img = Array2::from_shape_fn((16, 16), |(i, j)| (i * 17 + j * 3) as f64 / 300.0);
        let s = ssim(img.view(), img.view(), &SsimConfig::default()).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_constant_pair_is_one() {
        let a = Array2::from_elem((8, 8), 0.5);
        let s = ssim(a.view(), a.view(), &SsimConfig::default()).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_negative_image_is_small() {
        // 8x8 gradient: exactly one window; oracle below is an independent
        // direct evaluation of the one-window formula.
        let l = 1.0;
        let a = Array2::from_shape_fn((8, 8), |(i, j)| (i as f64 * 8.0 + j as f64) / 63.0);
        let b = a.mapv(|v| l - v);
        let cfg = SsimConfig::default();
        let s = ssim(a.view(), b.view(), &cfg).unwrap();
        assert!(s < 0.1, "ssim {s}");

        let naive = {
            let vals_a: Vec<f64> = a.iter().copied().collect();
            let vals_b: Vec<f64> = b.iter().copied().collect();
            let n = 64.0;
            let ma: f64 = vals_a.iter().sum::<f64>() / n;
            let mb: f64 = vals_b.iter().sum::<f64>() / n;
            let va: f64 = vals_a.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / n;
            let vb: f64 = vals_b.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / n;
            let cov: f64 = vals_a
                .iter()
                .zip(&vals_b)
                .map(|(x, y)| (x - ma) * (y - mb))
                .sum::<f64>()
                / n;
            let c1 = (cfg.k1 * l).powi(2);
            let c2 = (cfg.k2 * l).powi(2);
            (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        };
        assert!((s - naive).abs() < 1e-12, "{s} vs oracle {naive}");
    }

    #[test]
    fn ssim_rejects_mismatched_dims() {
        let a = Array2::<f64>::zeros((8, 8));
        let b = Array2::<f64>::zeros((8, 9));
        assert!(matches!(
            ssim(a.view(), b.view(), &SsimConfig::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    /// Greedy monotone transport: optimal for 1-D with convex ground cost.
    fn greedy_transport(a: &[f64], b: &[f64]) -> f64 {
        let mut supply: Vec<f64> = a.to_vec();
        let mut demand: Vec<f64> = b.to_vec();
        let mut i = 0;
        let mut j = 0;
        let mut cost = 0.0;
        while i < supply.len() && j < demand.len() {
            let moved = supply[i].min(demand[j]);
            cost += moved * (i as f64 - j as f64).abs();
            supply[i] -= moved;
            demand[j] -= moved;
            if supply[i] <= 1e-15 {
                i += 1;
            }
            if j < demand.len() && demand[j] <= 1e-15 {
                j += 1;
            }
        }
        cost
    }

    #[test]
    fn emd_examples_match_transport_oracle() {
        assert_eq!(emd_1d(&[0.2f64, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(), 0.0);
        let d = emd_1d(&[1.0f64, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert!((greedy_transport(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]) - 2.0).abs() < 1e-12);
        let d = emd_1d(&[0.5f64, 0.5], &[0.0, 1.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert!((greedy_transport(&[0.5, 0.5], &[0.0, 1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn emd_rejects_unnormalized() {
        assert!(matches!(
            emd_1d(&[0.5f64, 0.2], &[0.5, 0.5]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn emd_matches_transport_on_random_histograms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.random_range(2..12);
            let mut a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            a.iter_mut().for_each(|v| *v /= sa);
            b.iter_mut().for_each(|v| *v /= sb);
            let d = emd_1d(&a, &b).unwrap();
            let o = greedy_transport(&a, &b);
            assert!((d - o).abs() < 1e-9, "cdf {d} vs transport {o}");
        }
    }

    #[test]
    fn emd_symmetric_and_triangle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.random_range(2..10);
            let mut make = || {
                let mut h: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let s: f64 = h.iter().sum();
                h.iter_mut().for_each(|v| *v /= s);
                h
            };
            let (a, b, c) = (make(), make(), make());
            let ab = emd_1d(&a, &b).unwrap();
            let ba = emd_1d(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            let ac = emd_1d(&a, &c).unwrap();
            let cb = emd_1d(&c, &b).unwrap();
            assert!(ab <= ac + cb + 1e-12, "triangle violated");
        }
    }

    #[test]
    fn dtw_hand_examples() {
        assert_eq!(dtw_exact_1d(&[1.0f64, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let d = dtw_exact_1d(&[0.0f64, 0.0, 1.0], &[0.0, 1.0, 1.0]).unwrap();
        assert_eq!(d, 0.0);
        let d = dtw_exact_1d(&[0.0f64, 1.0], &[2.0, 3.0]).unwrap();
        assert!((d - 4.0).abs() < 1e-12);
    }

    #[test]
    fn dtw_rejects_empty() {
        assert!(dtw_exact_1d::<f64>(&[], &[1.0]).is_err());
    }

    #[test]
    fn fast_dtw_equals_exact_on_short_sequences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.random_range(2..=64);
            let m = rng.random_range(2..=64);
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let exact = dtw_exact_1d(&a, &b).unwrap();
            let fast = fast_dtw_1d(&a, &b, 64).unwrap();
            assert!(
                (exact - fast).abs() < 1e-12,
                "exact {exact} vs fast {fast} at n={n} m={m}"
            );
        }
    }

    #[test]
    fn fast_dtw_monotone_in_radius_and_bounded_below_by_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..50 {
            let n = rng.random_range(80..160);
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let exact = dtw_exact_1d(&a, &b).unwrap();
            let mut prev = f64::INFINITY;
            for radius in [0usize, 1, 2, 4, 8, 16, 32] {
                let d = fast_dtw_1d(&a, &b, radius).unwrap();
                assert!(d >= exact - 1e-12, "fast below exact");
                assert!(d <= prev + 1e-12, "radius {radius}: {d} > prev {prev}");
                prev = d;
            }
        }
    }

    #[test]
    fn pcc_hand_examples() {
        assert!((pcc(&[1.0f64, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pcc(&[1.0f64, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // Hand evaluation: cov = 1/3... r = 0.5 exactly.
        let r = pcc(&[1.0f64, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn pcc_invariances_and_errors() {
        let x = [0.3f64, 1.7, 0.9, 2.4];
        let y = [1.1f64, 0.2, 2.2, 0.5];
        let r = pcc(&x, &y).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + 10.0).collect();
        let scaled: Vec<f64> = y.iter().map(|v| v * 3.5).collect();
        assert!((pcc(&shifted, &y).unwrap() - r).abs() < 1e-12);
        assert!((pcc(&x, &scaled).unwrap() - r).abs() < 1e-12);
        let sym = pcc(&y, &x).unwrap();
        assert!((sym - r).abs() < 1e-15);
        assert!(pcc(&[1.0f64, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
