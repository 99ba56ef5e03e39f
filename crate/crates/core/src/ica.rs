//! Functional-connectivity-motivated EEG reconstruction.
//!
//! A fixed-point ICA (tanh contrast, symmetric decorrelation) separates the
//! channel mixture into independent components; components dominated by
//! high-variability noise are rejected by kurtosis / variance-share
//! criteria and the remaining components are remixed into cleaned channels.
//! Reconstruction quality is scored per channel with cosine similarity
//! between reconstructed and original signals (cosine distance is its
//! complement).

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::float::{excess_kurtosis, Float};
use crate::linalg::jacobi_eigh;
use crate::rngutil;

/// Fixed-point iteration settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcaConfig {
    /// Number of components; defaults to the channel count.
    pub n_components: Option<usize>,
    /// Convergence tolerance on the rotation update.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            n_components: None,
            tol: 1e-4,
            max_iter: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
    /// Set when every extracted source looks Gaussian: the mixture is then
    /// unidentifiable by ICA (documented assumption violation).
    pub unidentifiable: bool,
}

/// A fitted ICA decomposition.
#[derive(Debug, Clone)]
pub struct IcaModel<F> {
    pub n_channels: usize,
    pub n_components: usize,
    /// Orthonormal rotation in whitened space (rows have unit norm).
    pub rotation: Array2<F>,
    /// Maps centered channel data to sources: `S = unmixing . (X - means)`.
    pub unmixing: Array2<F>,
    /// Pseudo-inverse of `unmixing`; `unmixing . mixing ~ I`.
    pub mixing: Array2<F>,
    pub means: Array1<F>,
    pub report: ConvergenceReport,
}

/// Threshold below which a set of sources counts as all-Gaussian.
const GAUSSIAN_KURTOSIS_BAND: f64 = 0.5;

fn sym_decorrelate<F: Float>(w: &Array2<F>) -> Array2<F> {
    let k = w.dot(&w.t());
    let (evals, evecs) = jacobi_eigh(&k);
    let n = evals.len();
    let mut d = Array2::<F>::zeros((n, n));
    for i in 0..n {
        d[[i, i]] = F::one() / evals[i].max(F::cast(1e-300)).sqrt();
    }
    evecs.dot(&d).dot(&evecs.t()).dot(w)
}

/// Fit an ICA model to a channels-x-samples matrix.
///
/// The input is centered internally; whitening uses the eigendecomposition
/// of the channel covariance. Identical `(input, config)` pairs produce
/// bit-identical models.
pub fn fit_ica<F: Float>(x: &Array2<F>, cfg: &IcaConfig) -> Result<IcaModel<F>> {
    let (n_ch, n) = x.dim();
    let n_comp = cfg.n_components.unwrap_or(n_ch);
    if n_comp == 0 || n_comp > n_ch {
        return Err(Error::InvalidInput(format!(
            "n_components {n_comp} outside 1..={n_ch}"
        )));
    }
    if n < 10 * n_comp {
        return Err(Error::TooShort {
            needed: 10 * n_comp,
            got: n,
        });
    }

    let means = x.mean_axis(Axis(1)).expect("non-empty");
    let mut xc = x.clone();
    for (mut row, &m) in xc.rows_mut().into_iter().zip(means.iter()) {
        row.mapv_inplace(|v| v - m);
    }

    let cov = xc.dot(&xc.t()) / F::cast((n - 1) as f64);
    let (evals, evecs) = jacobi_eigh(&cov);
    let lead = evals[0].max(F::cast(1e-300));
    for i in 0..n_comp {
        if evals[i] <= lead * F::cast(1e-10) {
            return Err(Error::RankDeficient(format!(
                "covariance eigenvalue {i} vanishes; a channel is a linear \
                 combination of the others"
            )));
        }
    }

    // whitening = D^{-1/2} E^T restricted to the leading components
    let mut whitening = Array2::<F>::zeros((n_comp, n_ch));
    for i in 0..n_comp {
        let scale = F::one() / evals[i].sqrt();
        for j in 0..n_ch {
            whitening[[i, j]] = evecs[[j, i]] * scale;
        }
    }
    let z = whitening.dot(&xc);

    let mut rng = rngutil::subrng(cfg.seed, "ica-init");
    let mut w = Array2::<F>::zeros((n_comp, n_comp));
    for v in w.iter_mut() {
        *v = F::cast(rngutil::standard_normal(&mut rng));
    }
    let mut w = sym_decorrelate(&w);

    let inv_n = F::one() / F::cast(n as f64);
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let wz = w.dot(&z);
        let g = wz.mapv(|v| v.tanh());
        let g_prime_mean: Vec<F> = g
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|&t| F::one() - t * t).sum::<F>() * inv_n)
            .collect();

        let mut w_new = g.dot(&z.t()) * inv_n;
        for (k, mut row) in w_new.rows_mut().into_iter().enumerate() {
            let gp = g_prime_mean[k];
            for (dst, &old) in row.iter_mut().zip(w.row(k).iter()) {
                *dst = *dst - gp * old;
            }
        }
        let w_new = sym_decorrelate(&w_new);

        delta = w_new
            .rows()
            .into_iter()
            .zip(w.rows())
            .map(|(a, b)| {
                let dot: F = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum();
                (1.0 - dot.abs().as_f64()).abs()
            })
            .fold(0.0, f64::max);
        w = w_new;
        if delta < cfg.tol {
            break;
        }
    }
    let converged = delta < cfg.tol;

    // Gaussianity check on the extracted sources.
    let sources = w.dot(&z);
    let unidentifiable = sources.rows().into_iter().all(|row| {
        excess_kurtosis(&row.to_vec()).abs().as_f64() < GAUSSIAN_KURTOSIS_BAND
    });
    if !converged && !unidentifiable {
        return Err(Error::NonConvergence(format!(
            "ICA delta {delta:.3e} above tol {:.3e} after {} iterations",
            cfg.tol, cfg.max_iter
        )));
    }

    let unmixing = w.dot(&whitening);
    // mixing = E D^{1/2} W^T
    let mut mixing = Array2::<F>::zeros((n_ch, n_comp));
    for j in 0..n_comp {
        for i in 0..n_ch {
            let mut acc = F::zero();
            for k in 0..n_comp {
                acc = acc + evecs[[i, k]] * evals[k].sqrt() * w[[j, k]];
            }
            mixing[[i, j]] = acc;
        }
    }

    // Deterministic presentation: order components by explained channel-space
    // variance, largest first, and fix each mixing column's dominant sign.
    let mut order: Vec<usize> = (0..n_comp).collect();
    let explained: Vec<F> = (0..n_comp)
        .map(|j| mixing.column(j).iter().map(|&v| v * v).sum())
        .collect();
    order.sort_by(|&a, &b| explained[b].partial_cmp(&explained[a]).unwrap());

    let mut rotation = Array2::<F>::zeros((n_comp, n_comp));
    let mut unmixing_sorted = Array2::<F>::zeros((n_comp, n_ch));
    let mut mixing_sorted = Array2::<F>::zeros((n_ch, n_comp));
    for (dst, &src) in order.iter().enumerate() {
        let col = mixing.column(src);
        let mut best = 0;
        for k in 1..n_ch {
            if col[k].abs() > col[best].abs() {
                best = k;
            }
        }
        let flip = if col[best] < F::zero() { -F::one() } else { F::one() };
        for k in 0..n_comp {
            rotation[[dst, k]] = flip * w[[src, k]];
        }
        for k in 0..n_ch {
            unmixing_sorted[[dst, k]] = flip * unmixing[[src, k]];
            mixing_sorted[[k, dst]] = flip * mixing[[k, src]];
        }
    }

    Ok(IcaModel {
        n_channels: n_ch,
        n_components: n_comp,
        rotation,
        unmixing: unmixing_sorted,
        mixing: mixing_sorted,
        means,
        report: ConvergenceReport {
            iterations,
            final_delta: delta,
            converged,
            unidentifiable,
        },
    })
}

/// How to choose components to reject during reconstruction.
#[derive(Debug, Clone)]
pub enum Rejection {
    /// Kurtosis / variance-share thresholds.
    Auto(RejectionCriterion),
    /// Explicit component indices.
    Components(Vec<usize>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RejectionCriterion {
    /// Reject components whose source excess kurtosis exceeds this.
    pub kurtosis_threshold: f64,
    /// Reject components explaining more than this share of total variance.
    pub variance_share_threshold: f64,
}

impl Default for RejectionCriterion {
    fn default() -> Self {
        Self {
            kurtosis_threshold: 8.0,
            variance_share_threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComponentScore {
    pub index: usize,
    pub excess_kurtosis: f64,
    pub variance_share: f64,
}

/// Per-channel reconstruction quality report.
#[derive(Debug, Clone)]
pub struct ReconReport<F> {
    /// Cosine similarity of each reconstructed channel against the original
    /// (both-zero channels score 1, single-zero channels score 0).
    pub cosine_similarity: Vec<F>,
    /// Exactly `1 - cosine_similarity`.
    pub cosine_distance: Vec<F>,
    pub rejected: Vec<usize>,
    pub rejection_scores: Vec<ComponentScore>,
    /// Channels whose similarity fell below the acceptance floor and were
    /// reverted to the original signal. Similarities above record the
    /// pre-fallback values.
    pub fallback_channels: Vec<usize>,
}

/// Acceptance floor: reconstructed channels less similar than this fall back
/// to the original channel.
pub const DEFAULT_SIMILARITY_FLOOR: f64 = 0.7;

/// Remix the data with the rejected components zeroed.
///
/// With nothing rejected this is the identity (within 1e-9). Returns the
/// reconstructed matrix and the quality report.
pub fn reconstruct<F: Float>(
    x: &Array2<F>,
    model: &IcaModel<F>,
    rejection: &Rejection,
    similarity_floor: f64,
) -> Result<(Array2<F>, ReconReport<F>)> {
    let (n_ch, n) = x.dim();
    if n_ch != model.n_channels {
        return Err(Error::DimensionMismatch(format!(
            "model fitted on {} channels, data has {n_ch}",
            model.n_channels
        )));
    }

    let mut xc = x.clone();
    for (mut row, &m) in xc.rows_mut().into_iter().zip(model.means.iter()) {
        row.mapv_inplace(|v| v - m);
    }
    let mut sources = model.unmixing.dot(&xc);

    // Component scores.
    let src_var: Vec<F> = sources
        .rows()
        .into_iter()
        .map(|r| crate::float::variance(&r.to_vec()))
        .collect();
    let col_norm2: Vec<F> = (0..model.n_components)
        .map(|j| model.mixing.column(j).iter().map(|&v| v * v).sum())
        .collect();
    let total: F = src_var
        .iter()
        .zip(&col_norm2)
        .map(|(&v, &c)| v * c)
        .sum::<F>()
        .max(F::cast(1e-300));
    let scores: Vec<ComponentScore> = (0..model.n_components)
        .map(|j| ComponentScore {
            index: j,
            excess_kurtosis: excess_kurtosis(&sources.row(j).to_vec()).as_f64(),
            variance_share: (src_var[j] * col_norm2[j] / total).as_f64(),
        })
        .collect();

    let rejected: Vec<usize> = match rejection {
        Rejection::Components(list) => {
            let mut list = list.clone();
            list.sort_unstable();
            list.dedup();
            if let Some(&bad) = list.iter().find(|&&i| i >= model.n_components) {
                return Err(Error::InvalidInput(format!(
                    "component index {bad} out of range"
                )));
            }
            list
        }
        Rejection::Auto(c) => scores
            .iter()
            .filter(|s| {
                s.excess_kurtosis > c.kurtosis_threshold
                    || s.variance_share > c.variance_share_threshold
            })
            .map(|s| s.index)
            .collect(),
    };
    if rejected.len() == model.n_components {
        return Err(Error::RejectAll);
    }

    for &j in &rejected {
        sources.row_mut(j).fill(F::zero());
    }
    let mut recon = model.mixing.dot(&sources);
    for (mut row, &m) in recon.rows_mut().into_iter().zip(model.means.iter()) {
        row.mapv_inplace(|v| v + m);
    }

    let mut sims = Vec::with_capacity(n_ch);
    let mut fallback = Vec::new();
    for ch in 0..n_ch {
        let orig = x.row(ch).to_vec();
        let rec = recon.row(ch).to_vec();
        let sim = cosine_similarity_or_default(&rec, &orig);
        sims.push(sim);
        if sim.as_f64() < similarity_floor {
            fallback.push(ch);
        }
    }
    for &ch in &fallback {
        for i in 0..n {
            recon[[ch, i]] = x[[ch, i]];
        }
    }

    let distances = sims.iter().map(|&s| F::one() - s).collect();
    Ok((
        recon,
        ReconReport {
            cosine_similarity: sims,
            cosine_distance: distances,
            rejected,
            rejection_scores: scores,
            fallback_channels: fallback,
        },
    ))
}

/// Cosine similarity between two non-zero vectors:
/// `(t . e) / (||t|| ||e||)`, in `[-1, 1]`.
pub fn cosine_similarity<F: Float>(t: &[F], e: &[F]) -> Result<F> {
    if t.len() != e.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine similarity over lengths {} and {}",
            t.len(),
            e.len()
        )));
    }
    let nt = t.iter().map(|&v| v * v).sum::<F>().sqrt();
    let ne = e.iter().map(|&v| v * v).sum::<F>().sqrt();
    if nt == F::zero() || ne == F::zero() {
        return Err(Error::ZeroNorm);
    }
    let dot: F = t.iter().zip(e.iter()).map(|(&a, &b)| a * b).sum();
    Ok((dot / (nt * ne)).min(F::one()).max(-F::one()))
}

/// `1 - cosine_similarity`, per the reconstruction quality score.
pub fn cosine_distance<F: Float>(t: &[F], e: &[F]) -> Result<F> {
    Ok(F::one() - cosine_similarity(t, e)?)
}

fn cosine_similarity_or_default<F: Float>(t: &[F], e: &[F]) -> F {
    match cosine_similarity(t, e) {
        Ok(v) => v,
        Err(_) => {
            let zt = t.iter().all(|v| *v == F::zero());
            let ze = e.iter().all(|v| *v == F::zero());
            if zt && ze {
                F::one()
            } else {
                F::zero()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model persistence (structured-text matrix file)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct IcaModelFile {
    n_channels: usize,
    n_components: usize,
    rotation: Vec<Vec<f64>>,
    unmixing: Vec<Vec<f64>>,
    mixing: Vec<Vec<f64>>,
    means: Vec<f64>,
    report: ConvergenceReport,
}

fn to_rows<F: Float>(m: &Array2<F>) -> Vec<Vec<f64>> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v.as_f64()).collect())
        .collect()
}

fn from_rows<F: Float>(rows: &[Vec<f64>]) -> Result<Array2<F>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::InvalidInput("ragged matrix in model file".into()));
    }
    let flat: Vec<F> = rows.iter().flatten().map(|&v| F::cast(v)).collect();
    Array2::from_shape_vec((nr, nc), flat)
        .map_err(|e| Error::InvalidInput(format!("bad matrix shape: {e}")))
}

pub fn save_model<F: Float>(model: &IcaModel<F>, path: &Path) -> Result<()> {
    let file = IcaModelFile {
        n_channels: model.n_channels,
        n_components: model.n_components,
        rotation: to_rows(&model.rotation),
        unmixing: to_rows(&model.unmixing),
        mixing: to_rows(&model.mixing),
        means: model.means.iter().map(|&v| v.as_f64()).collect(),
        report: model.report,
    };
    let json = serde_json::to_string_pretty(&file).expect("model serializes");
    std::fs::write(path, json).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model<F: Float>(path: &Path) -> Result<IcaModel<F>> {
    let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: IcaModelFile = serde_json::from_str(&raw).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(IcaModel {
        n_channels: file.n_channels,
        n_components: file.n_components,
        rotation: from_rows(&file.rotation)?,
        unmixing: from_rows(&file.unmixing)?,
        mixing: from_rows(&file.mixing)?,
        means: Array1::from_vec(file.means.iter().map(|&v| F::cast(v)).collect()),
        report: file.report,
    })
}
