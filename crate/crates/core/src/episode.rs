//! Attention-episode extraction: sliding-window change-point detection over
//! the fused matrix proposes candidates, a windowed Morlet wavelet scalogram
//! classifies them into ERP episodes vs artifacts (optionally corroborated
//! by peripheral SCR/heart-rate events), and episodes map onto video frames
//! for cueing.
//!
//! The change-point machinery scores a candidate split `v` of the subsignal
//! `y[u..w)` with the cost gain `d = C(y[u..w)) - C(y[u..v)) - C(y[v..w))`
//! where `C` is the L1 deviation around the per-column mean. Candidates are
//! local maxima of `d` over adjacent windows on the step grid, thresholded
//! at `mean + k * std` of the session's score trace.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

use crate::eda::ScrEvent;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::fusion::FusedMatrix;
use crate::metrics::detection::episode_f1;
use crate::ppg::PpgBeats;
use crate::session::{Annotation, Modality};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Sliding-window CPD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpdConfig {
    /// Window length in seconds (grid-searched optimum: 0.75 s).
    pub window_s: f64,
    /// Candidate step in seconds.
    pub step_s: f64,
    /// Candidate threshold: `score > mean + threshold_k * std` of the trace.
    pub threshold_k: f64,
    /// Candidates closer than this merge into one episode.
    pub min_gap_s: f64,
    /// Lift the 0.1..=1.0 s window bound.
    pub allow_window_override: bool,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            window_s: 0.75,
            step_s: 0.25,
            threshold_k: 3.0,
            min_gap_s: 1.0,
            allow_window_override: false,
        }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.allow_window_override && !(0.1..=1.0).contains(&self.window_s) {
            return Err(Error::Config(format!(
                "window_s {} outside 0.1..=1.0 (set allow_window_override to lift)",
                self.window_s
            )));
        }
        if self.window_s <= 0.0 || self.step_s <= 0.0 {
            return Err(Error::Config("window_s and step_s must be > 0".into()));
        }
        if self.step_s > self.window_s {
            return Err(Error::Config(format!(
                "step_s {} exceeds window_s {}",
                self.step_s, self.window_s
            )));
        }
        Ok(())
    }
}

/// Morlet wavelet settings: center frequency 6, 24 logarithmic scales
/// covering 1-16 Hz at the fused rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwtConfig {
    pub omega0: f64,
    pub n_scales: usize,
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
}

impl Default for CwtConfig {
    fn default() -> Self {
        Self {
            omega0: 6.0,
            n_scales: 24,
            freq_min_hz: 1.0,
            freq_max_hz: 16.0,
        }
    }
}

impl CwtConfig {
    /// Scale (in samples) whose Morlet center lands on `f_hz`:
    /// `a = fs * omega0 / (2 pi f)`.
    pub fn scale_for(&self, f_hz: f64, fs: f64) -> f64 {
        fs * self.omega0 / (2.0 * std::f64::consts::PI * f_hz)
    }

    /// Logarithmic scale grid, ordered by ascending frequency.
    pub fn scales(&self, fs: f64) -> Vec<f64> {
        let n = self.n_scales.max(2);
        (0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                let f = self.freq_min_hz * (self.freq_max_hz / self.freq_min_hz).powf(t);
                self.scale_for(f, fs)
            })
            .collect()
    }

    pub fn pseudo_frequencies(&self, fs: f64) -> Vec<f64> {
        self.scales(fs)
            .iter()
            .map(|&a| fs * self.omega0 / (2.0 * std::f64::consts::PI * a))
            .collect()
    }
}

/// Episode classification settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// ERP band for the energy-ratio rule (theta + alpha).
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Minimum in-band energy fraction for an ERP label.
    pub band_ratio_threshold: f64,
    /// Peripheral corroboration window around a candidate, seconds.
    pub corroboration_s: f64,
    /// Minimum instantaneous-HR swing that counts as corroboration, BPM.
    pub hr_delta_bpm: f64,
    pub cwt: CwtConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            band_low_hz: 4.0,
            band_high_hz: 13.0,
            band_ratio_threshold: 0.6,
            corroboration_s: 2.0,
            hr_delta_bpm: 3.0,
            cwt: CwtConfig::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// CPD kernels
// ---------------------------------------------------------------------------

/// L1-around-mean segment cost: `C = sum_t ||y_t - mean||_1` with the mean
/// taken per column. Zero iff the slice is constant per column.
pub fn segment_cost<F: Float>(slice: ndarray::ArrayView2<F>) -> Result<F> {
    let (rows, cols) = slice.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("empty slice in segment cost".into()));
    }
    let inv_rows = F::one() / F::cast(rows as f64);
    let mut total = F::zero();
    for c in 0..cols {
        let col = slice.column(c);
        let mean = col.iter().copied().sum::<F>() * inv_rows;
        total += col.iter().map(|&v| (v - mean).abs()).sum::<F>();
    }
    Ok(total)
}

/// Cost gain of splitting `y[u..w)` at `v`:
/// `d = C(y[u..w)) - C(y[u..v)) - C(y[v..w))`.
pub fn discrepancy<F: Float>(
    y: ndarray::ArrayView2<F>,
    u: usize,
    v: usize,
    w: usize,
) -> Result<F> {
    if !(u < v && v < w && w <= y.nrows()) {
        return Err(Error::InvalidInput(format!(
            "discrepancy indices must satisfy u < v < w <= len, got ({u}, {v}, {w})"
        )));
    }
    let full = segment_cost(y.slice(ndarray::s![u..w, ..]))?;
    let left = segment_cost(y.slice(ndarray::s![u..v, ..]))?;
    let right = segment_cost(y.slice(ndarray::s![v..w, ..]))?;
    Ok(full - left - right)
}

/// One CPD candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub time_s: f64,
    pub score: f64,
}

/// Score every step-grid position with the discrepancy of its adjacent
/// windows and keep local maxima above `mean + k * std` of the trace.
/// Equal-score ties resolve to the earlier time.
pub fn sliding_window_cpd<F: Float>(
    fm: &FusedMatrix<F>,
    cfg: &CpdConfig,
) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    let w = (cfg.window_s * fm.fs).round() as usize;
    let step = ((cfg.step_s * fm.fs).round() as usize).max(1);
    let n = fm.n_rows();
    if w < 2 || n < 2 * w {
        return Err(Error::TooShort {
            needed: 2 * w.max(2),
            got: n,
        });
    }

    let mut grid = Vec::new();
    let mut scores = Vec::new();
    let mut v = w;
    while v + w <= n {
        let d = discrepancy(fm.data.view(), v - w, v, v + w)?.as_f64();
        grid.push(v);
        scores.push(d);
        v += step;
    }
    if scores.is_empty() {
        return Ok(vec![]);
    }

    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64;
    let threshold = mean + cfg.threshold_k * var.sqrt();

    let mut out = Vec::new();
    for i in 0..scores.len() {
        let s = scores[i];
        if s <= threshold {
            continue;
        }
        let left_ok = i == 0 || scores[i - 1] < s;
        let right_ok = i + 1 == scores.len() || scores[i + 1] <= s;
        if left_ok && right_ok {
            out.push(Candidate {
                time_s: grid[i] as f64 / fm.fs,
                score: s,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Windowed continuous wavelet transform
// ---------------------------------------------------------------------------

/// Windowed Morlet scalogram: per-channel complex coefficients over
/// `|scales| x |window samples|`, translations implicit per sample.
#[derive(Debug, Clone)]
pub struct Scalogram<F> {
    /// One coefficient matrix per analyzed channel.
    pub coefficients: Vec<ndarray::Array2<Complex<F>>>,
    /// Scales in samples, ordered by ascending pseudo-frequency.
    pub scales: Vec<f64>,
    pub pseudo_freq_hz: Vec<f64>,
    pub window_start_s: f64,
    pub fs: f64,
}

impl<F: Float> Scalogram<F> {
    /// Coefficient magnitudes aggregated over channels by the mean.
    pub fn mean_magnitude(&self) -> ndarray::Array2<F> {
        let (ns, nb) = self.coefficients[0].dim();
        let mut out = ndarray::Array2::<F>::zeros((ns, nb));
        let inv = F::one() / F::cast(self.coefficients.len() as f64);
        for ch in &self.coefficients {
            for ((i, j), v) in ch.indexed_iter() {
                out[[i, j]] += v.norm() * inv;
            }
        }
        out
    }

    /// Fraction of total scalogram energy carried by scales whose
    /// pseudo-frequency lies in `[lo_hz, hi_hz]`. Zero for an all-zero
    /// window.
    pub fn band_energy_ratio(&self, lo_hz: f64, hi_hz: f64) -> F {
        let mut band = F::zero();
        let mut total = F::zero();
        for ch in &self.coefficients {
            for (i, &f) in self.pseudo_freq_hz.iter().enumerate() {
                let row_energy: F = ch.row(i).iter().map(|c| c.norm_sqr()).sum();
                total += row_energy;
                if (lo_hz..=hi_hz).contains(&f) {
                    band += row_energy;
                }
            }
        }
        if total > F::zero() {
            band / total
        } else {
            F::zero()
        }
    }
}

/// Morlet CWT of one sample slice: coefficient
/// `(a, b) = |a|^{-1/2} sum_t x[t] conj(psi)((t - b)/a)` with
/// `psi(u) = pi^{-1/4} exp(i omega0 u) exp(-u^2/2)`, `b` running over every
/// sample of the slice.
pub fn cwt_signal<F: Float>(
    x: &[F],
    scales: &[f64],
    omega0: f64,
) -> ndarray::Array2<Complex<F>> {
    let n = x.len();
    let norm = std::f64::consts::PI.powf(-0.25);
    let mut out = ndarray::Array2::<Complex<F>>::zeros((scales.len(), n));
    for (si, &a) in scales.iter().enumerate() {
        let support = (5.0 * a).ceil() as i64;
        let inv_sqrt_a = F::cast(1.0 / a.abs().sqrt());
        for b in 0..n as i64 {
            let lo = (b - support).max(0);
            let hi = (b + support).min(n as i64 - 1);
            let mut acc = Complex::new(F::zero(), F::zero());
            for t in lo..=hi {
                let u = (t - b) as f64 / a;
                let env = norm * (-0.5 * u * u).exp();
                // conj(psi)(u) = env * exp(-i omega0 u)
                let phase = -omega0 * u;
                let w = Complex::new(F::cast(env * phase.cos()), F::cast(env * phase.sin()));
                acc += w * x[t as usize];
            }
            out[[si, b as usize]] = acc * inv_sqrt_a;
        }
    }
    out
}

/// Scalogram of the fused window `[t_i, t_i + w]`: the transform integrates
/// the time-shifted signal over the window only, per channel.
pub fn windowed_cwt<F: Float>(
    fm: &FusedMatrix<F>,
    t_i_s: f64,
    w_s: f64,
    cfg: &CwtConfig,
) -> Result<Scalogram<F>> {
    windowed_cwt_columns(fm, t_i_s, w_s, cfg, None)
}

/// Like [`windowed_cwt`] but restricted to a column subset.
pub fn windowed_cwt_columns<F: Float>(
    fm: &FusedMatrix<F>,
    t_i_s: f64,
    w_s: f64,
    cfg: &CwtConfig,
    columns: Option<&[usize]>,
) -> Result<Scalogram<F>> {
    let i0 = (t_i_s * fm.fs).round() as i64;
    let len = (w_s * fm.fs).round() as i64;
    if i0 < 0 || len < 1 || (i0 + len) as usize > fm.n_rows() {
        return Err(Error::InvalidInput(format!(
            "window [{t_i_s}, {} ] s outside the fused matrix",
            t_i_s + w_s
        )));
    }
    let (i0, len) = (i0 as usize, len as usize);
    let scales = cfg.scales(fm.fs);
    let selected: Vec<usize> = match columns {
        Some(cols) => cols.to_vec(),
        None => (0..fm.n_cols()).collect(),
    };
    if selected.is_empty() {
        return Err(Error::InvalidInput("no channels selected for CWT".into()));
    }
    let mut coefficients = Vec::with_capacity(selected.len());
    for &c in &selected {
        let window: Vec<F> = (i0..i0 + len).map(|r| fm.data[[r, c]]).collect();
        coefficients.push(cwt_signal(&window, &scales, cfg.omega0));
    }
    Ok(Scalogram {
        coefficients,
        pseudo_freq_hz: cfg.pseudo_frequencies(fm.fs),
        scales,
        window_start_s: t_i_s,
        fs: fm.fs,
    })
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeLabel {
    Erp,
    Artifact,
}

impl std::fmt::Display for EpisodeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EpisodeLabel::Erp => write!(f, "erp"),
            EpisodeLabel::Artifact => write!(f, "artifact"),
        }
    }
}

/// One detected segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode<F> {
    pub onset_s: f64,
    pub offset_s: f64,
    /// Peak CPD discrepancy inside the merged cluster.
    pub score: f64,
    pub label: EpisodeLabel,
    pub band_energy_ratio: F,
    /// Peripheral modalities whose events corroborate this episode.
    pub corroborating: Vec<Modality>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTotals {
    pub n_total: usize,
    pub n_erp: usize,
    pub n_artifact: usize,
}

/// Time-ordered detected episodes with the configuration snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeSet<F> {
    pub episodes: Vec<Episode<F>>,
    pub totals: EpisodeTotals,
    pub cpd: CpdConfig,
    pub classify: ClassifyConfig,
}

impl<F: Float> EpisodeSet<F> {
    pub fn from_episodes(mut episodes: Vec<Episode<F>>) -> Self {
        episodes.sort_by(|a, b| a.onset_s.partial_cmp(&b.onset_s).unwrap());
        let n_erp = episodes
            .iter()
            .filter(|e| e.label == EpisodeLabel::Erp)
            .count();
        let totals = EpisodeTotals {
            n_total: episodes.len(),
            n_erp,
            n_artifact: episodes.len() - n_erp,
        };
        Self {
            episodes,
            totals,
            cpd: CpdConfig::default(),
            classify: ClassifyConfig::default(),
        }
    }
}

/// Peripheral event streams available for corroboration.
#[derive(Debug, Clone, Default)]
pub struct PeripheralEvents {
    pub scr: Option<Vec<ScrEvent>>,
    pub beats: Option<PpgBeats>,
}

impl PeripheralEvents {
    fn scr_matches(&self, t: f64, window_s: f64) -> bool {
        self.scr.as_ref().is_some_and(|events| {
            events
                .iter()
                .any(|e| (e.onset_s - t).abs() <= window_s)
        })
    }

    /// True when the instantaneous heart rate swings by at least
    /// `delta_bpm` inside `t +- window_s`.
    fn hr_matches(&self, t: f64, window_s: f64, delta_bpm: f64) -> bool {
        let Some(beats) = &self.beats else {
            return false;
        };
        let lo = t - window_s;
        let hi = t + window_s;
        let mut min_hr = f64::INFINITY;
        let mut max_hr = f64::NEG_INFINITY;
        for (k, iv) in beats.intervals.iter().enumerate() {
            let start = beats.peak_times_s[k];
            let end = beats.peak_times_s[k + 1];
            if end < lo || start > hi {
                continue;
            }
            min_hr = min_hr.min(iv.hr_bpm);
            max_hr = max_hr.max(iv.hr_bpm);
        }
        min_hr.is_finite() && max_hr - min_hr >= delta_bpm
    }
}

/// Detect, classify and merge episodes over a fused matrix.
///
/// CPD candidates closer than `min_gap_s` merge into one episode (peak
/// score wins, earlier time breaking ties). Each episode is labeled ERP when
/// its windowed scalogram concentrates at least `band_ratio_threshold` of
/// its energy in the ERP band, computed over EEG columns when present, and,
/// if GSR or PPG participate in the fusion, at least one peripheral
/// corroboration holds. Deterministic for fixed input.
pub fn extract_episodes<F: Float>(
    fm: &FusedMatrix<F>,
    cpd: &CpdConfig,
    classify: &ClassifyConfig,
    peripheral: &PeripheralEvents,
) -> Result<EpisodeSet<F>> {
    let candidates = sliding_window_cpd(fm, cpd)?;
    let duration = fm.duration_s();
    let half_w = cpd.window_s / 2.0;

    // Merge candidates into clusters.
    let mut clusters: Vec<Vec<Candidate>> = Vec::new();
    for cand in candidates {
        match clusters.last_mut() {
            Some(cluster)
                if cand.time_s - cluster.last().unwrap().time_s <= cpd.min_gap_s =>
            {
                cluster.push(cand)
            }
            _ => clusters.push(vec![cand]),
        }
    }

    let eeg_columns = fm.columns_of(Modality::Eeg);
    let column_subset: Option<&[usize]> = if eeg_columns.is_empty() {
        None
    } else {
        Some(&eeg_columns)
    };
    let needs_corroboration = fm.modalities.contains(&Modality::Gsr)
        || fm.modalities.contains(&Modality::Ppg);

    let mut episodes = Vec::with_capacity(clusters.len());
    for cluster in clusters {
        let peak = cluster
            .iter()
            .copied()
            .max_by(|a, b| {
                (a.score, b.time_s)
                    .partial_cmp(&(b.score, a.time_s))
                    .unwrap()
            })
            .unwrap();

        let t_i = (peak.time_s - half_w).clamp(0.0, (duration - cpd.window_s).max(0.0));
        let scalogram =
            windowed_cwt_columns(fm, t_i, cpd.window_s, &classify.cwt, column_subset)?;
        let ratio = scalogram.band_energy_ratio(classify.band_low_hz, classify.band_high_hz);

        let mut corroborating = Vec::new();
        if peripheral.scr_matches(peak.time_s, classify.corroboration_s) {
            corroborating.push(Modality::Gsr);
        }
        if peripheral.hr_matches(peak.time_s, classify.corroboration_s, classify.hr_delta_bpm) {
            corroborating.push(Modality::Ppg);
        }

        let band_ok = ratio.as_f64() >= classify.band_ratio_threshold;
        let corroborated = !needs_corroboration || !corroborating.is_empty();
        let label = if band_ok && corroborated {
            EpisodeLabel::Erp
        } else {
            EpisodeLabel::Artifact
        };

        episodes.push(Episode {
            onset_s: (cluster.first().unwrap().time_s - half_w).max(0.0),
            offset_s: (cluster.last().unwrap().time_s + half_w).min(duration),
            score: peak.score,
            label,
            band_energy_ratio: ratio,
            corroborating,
        });
    }

    let mut set = EpisodeSet::from_episodes(episodes);
    set.cpd = cpd.clone();
    set.classify = classify.clone();
    Ok(set)
}

/// Frames touched by any episode: the union of
/// `[floor(onset * fps), ceil(offset * fps))` clipped to `[0, frame_count)`,
/// sorted and deduplicated.
pub fn episodes_to_frames<F: Float>(set: &EpisodeSet<F>, fps: f64, frame_count: u64) -> Vec<u64> {
    let mut frames = BTreeSet::new();
    for e in &set.episodes {
        let lo = (e.onset_s * fps).floor().max(0.0) as u64;
        let hi = (e.offset_s * fps).ceil().max(0.0) as u64;
        for f in lo..hi.min(frame_count) {
            frames.insert(f);
        }
    }
    frames.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Window grid search
// ---------------------------------------------------------------------------

/// One row of the window sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSearchRow {
    pub window_s: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub rows: Vec<GridSearchRow>,
    pub best_window_s: f64,
}

/// The 0.1..=1.0 s window grid in 0.05 s steps.
pub fn window_grid() -> Vec<f64> {
    (2..=20).map(|k| k as f64 * 0.05).collect()
}

/// Sweep the CPD window over the grid, scoring each setting by episode F1
/// against annotated attention intervals; ties keep the smaller window.
pub fn grid_search_window<F: Float>(
    fm: &FusedMatrix<F>,
    base_cpd: &CpdConfig,
    classify: &ClassifyConfig,
    peripheral: &PeripheralEvents,
    annotations: &[Annotation],
    tol_s: f64,
) -> Result<GridSearchResult> {
    let mut rows = Vec::new();
    let mut best: Option<GridSearchRow> = None;
    for window_s in window_grid() {
        let cfg = CpdConfig {
            window_s,
            step_s: base_cpd.step_s.min(window_s),
            ..base_cpd.clone()
        };
        let set = extract_episodes(fm, &cfg, classify, peripheral)?;
        let f = episode_f1(&set, annotations, tol_s)?;
        let row = GridSearchRow {
            window_s,
            f1: f.f1,
            precision: f.precision,
            recall: f.recall,
        };
        rows.push(row);
        if best.map_or(true, |b| row.f1 > b.f1) {
            best = Some(row);
        }
    }
    Ok(GridSearchResult {
        best_window_s: best.map(|b| b.window_s).unwrap_or(f64::NAN),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Export episodes as
/// `onset_s,offset_s,score,label,band_ratio,corroboration` (corroborating
/// modalities joined by `+`, or `none`).
pub fn write_episodes<F: Float>(set: &EpisodeSet<F>, path: &Path) -> Result<()> {
    let mut out = String::from("onset_s,offset_s,score,label,band_ratio,corroboration\n");
    for e in &set.episodes {
        let corr = if e.corroborating.is_empty() {
            "none".to_string()
        } else {
            e.corroborating
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join("+")
        };
        out.push_str(&format!(
            "{},{},{},{},{},{corr}\n",
            e.onset_s, e.offset_s, e.score, e.label, e.band_energy_ratio
        ));
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read back an episode CSV written by [`write_episodes`].
pub fn read_episodes<F: Float>(path: &Path) -> Result<EpisodeSet<F>> {
    let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut episodes = Vec::new();
    for (idx, line) in raw.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let err = |msg: String| Error::Csv {
            path: path.to_path_buf(),
            line: (idx + 1) as u64,
            msg,
        };
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| err(format!("malformed number {s:?}")))
        };
        let label = match fields[3] {
            "erp" => EpisodeLabel::Erp,
            "artifact" => EpisodeLabel::Artifact,
            other => return Err(err(format!("unknown label {other:?}"))),
        };
        let corroborating = match fields[5] {
            "none" | "" => vec![],
            joined => joined
                .split('+')
                .map(|m| match m {
                    "gsr" => Ok(Modality::Gsr),
                    "ppg" => Ok(Modality::Ppg),
                    "eeg" => Ok(Modality::Eeg),
                    other => Err(err(format!("unknown modality {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        episodes.push(Episode {
            onset_s: num(fields[0])?,
            offset_s: num(fields[1])?,
            score: num(fields[2])?,
            label,
            band_energy_ratio: F::cast(num(fields[4])?),
            corroborating,
        });
    }
    Ok(EpisodeSet::from_episodes(episodes))
}

/// Newline-delimited frame indices.
pub fn write_frames(frames: &[u64], path: &Path) -> Result<()> {
    let mut out = String::new();
    for f in frames {
        out.push_str(&format!("{f}\n"));
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use std::f64::consts::PI;

    fn fused(data: Array2<f64>, fs: f64) -> FusedMatrix<f64> {
        let n_cols = data.ncols();
        FusedMatrix {
            data,
            tags: (0..n_cols)
                .map(|i| crate::fusion::ColumnTag {
                    modality: Modality::Eeg,
                    name: format!("c{i}"),
                })
                .collect(),
            fs,
            modalities: [Modality::Eeg].into(),
            scaling_ranges: vec![(0.0, 1.0); n_cols],
        }
    }

    #[test]
    fn segment_cost_hand_values() {
        let constant = Array2::from_elem((6, 2), 0.4f64);
        assert!(segment_cost(constant.view()).unwrap().abs() < 1e-12);

        let step: Array2<f64> = array![[0.0], [0.0], [0.0], [0.0], [1.0], [1.0], [1.0], [1.0]];
        let c = segment_cost(step.view()).unwrap();
        assert!((c - 4.0).abs() < 1e-12);

        // Two identical columns double the cost.
        let two = ndarray::concatenate![ndarray::Axis(1), step.view(), step.view()];
        let c2 = segment_cost(two.view()).unwrap();
        assert!((c2 - 8.0).abs() < 1e-12);
    }

    #[test]
    fn discrepancy_hand_values() {
        let step: Array2<f64> = array![[0.0], [0.0], [0.0], [0.0], [1.0], [1.0], [1.0], [1.0]];
        let d = discrepancy(step.view(), 0, 4, 8).unwrap();
        assert!((d - 4.0).abs() < 1e-9);

        let constant = Array2::from_elem((8, 1), 0.3f64);
        let d0 = discrepancy(constant.view(), 0, 4, 8).unwrap();
        assert!(d0.abs() < 1e-12);

        // Off-center split: d = 4 - 0 - (2*(2/3) + 4*(1/3)) = 4 - 8/3.
        let d2 = discrepancy(step.view(), 0, 2, 8).unwrap();
        assert!((d2 - (4.0 - 8.0 / 3.0)).abs() < 1e-9, "d = {d2}");

        // The true step index maximizes the discrepancy (exhaustive scan).
        let best = (1..8)
            .max_by(|&a, &b| {
                discrepancy(step.view(), 0, a, 8)
                    .unwrap()
                    .partial_cmp(&discrepancy(step.view(), 0, b, 8).unwrap())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(best, 4);
    }

    #[test]
    fn discrepancy_rejects_bad_indices() {
        let m = Array2::<f64>::zeros((8, 1));
        assert!(discrepancy(m.view(), 0, 0, 8).is_err());
        assert!(discrepancy(m.view(), 0, 9, 10).is_err());
    }

    #[test]
    fn discrepancy_can_go_negative_with_mean_centering() {
        // The L1 cost around the segment *mean* is not subadditive: with the
        // median this split would be non-negative, but the mean-centered
        // definition gives d = 1 - 4/3 < 0. The detector treats such splits
        // as no-change (they fall below any positive threshold).
        let y: Array2<f64> = array![[0.5], [0.5], [1.0], [0.5], [0.5], [0.0]];
        let d = discrepancy(y.view(), 0, 3, 6).unwrap();
        assert!((d - (1.0 - 4.0 / 3.0)).abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn discrepancy_nonnegative_on_piecewise_constant_splits() {
        // For splits whose halves are constant the property does hold:
        // both sub-costs vanish and the full cost is >= 0.
        for (left, right) in [(0.0, 1.0), (0.3, 0.7), (1.0, 1.0), (0.9, 0.1)] {
            let mut data = Array2::<f64>::zeros((10, 2));
            for i in 0..5 {
                data[[i, 0]] = left;
                data[[i, 1]] = right;
            }
            for i in 5..10 {
                data[[i, 0]] = right;
                data[[i, 1]] = left;
            }
            let d = discrepancy(data.view(), 0, 5, 10).unwrap();
            assert!(d >= 0.0, "d = {d} for ({left}, {right})");
        }
    }

    #[test]
    fn cpd_constant_matrix_is_empty() {
        let fm = fused(Array2::from_elem((256, 3), 0.5), 32.0);
        let out = sliding_window_cpd(&fm, &CpdConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    fn step_session(n: usize, fs: f64, steps: &[f64]) -> FusedMatrix<f64> {
        let mut data = Array2::<f64>::zeros((n, 1));
        let mut rng = crate::rngutil::subrng(21, "cpd-step");
        for i in 0..n {
            let t = i as f64 / fs;
            let level = steps.iter().filter(|&&s| t >= s).count() as f64 * 0.5;
            data[[i, 0]] = level + 0.05 * crate::rngutil::standard_normal(&mut rng);
        }
        fused(data, fs)
    }

    #[test]
    fn cpd_finds_single_step() {
        let fs = 32.0;
        let fm = step_session((20.0 * fs) as usize, fs, &[10.0]);
        let out = sliding_window_cpd(&fm, &CpdConfig::default()).unwrap();
        assert!(!out.is_empty());
        // Exhaustive scan oracle: the best grid position must be the
        // candidate list's best score too.
        let best = out
            .iter()
            .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
            .unwrap();
        assert!(
            (best.time_s - 10.0).abs() <= CpdConfig::default().window_s,
            "best candidate at {}",
            best.time_s
        );
        for c in &out {
            assert!((c.time_s - 10.0).abs() <= 2.0, "spurious candidate at {}", c.time_s);
        }
    }

    #[test]
    fn cpd_finds_two_steps() {
        let fs = 32.0;
        let fm = step_session((20.0 * fs) as usize, fs, &[7.0, 12.0]);
        let out = sliding_window_cpd(&fm, &CpdConfig::default()).unwrap();
        let w = CpdConfig::default().window_s;
        assert!(out.iter().any(|c| (c.time_s - 7.0).abs() <= w));
        assert!(out.iter().any(|c| (c.time_s - 12.0).abs() <= w));
    }

    #[test]
    fn cpd_too_short_errors() {
        let fm = fused(Array2::zeros((16, 1)), 32.0);
        assert!(matches!(
            sliding_window_cpd(&fm, &CpdConfig::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn cwt_zero_window_is_zero() {
        let fm = fused(Array2::zeros((128, 2)), 32.0);
        let s = windowed_cwt(&fm, 1.0, 0.75, &CwtConfig::default()).unwrap();
        for ch in &s.coefficients {
            for c in ch.iter() {
                assert_eq!(c.norm(), 0.0);
            }
        }
        assert_eq!(s.band_energy_ratio(4.0, 13.0), 0.0);
    }

    #[test]
    fn cwt_scale_peak_matches_grid_oracle() {
        // 10 Hz sinusoid at fs 32: expected ridge at the grid scale nearest
        // fs * omega0 / (2 pi * 10) ~ 3.06 samples.
        let fs = 32.0;
        let cfg = CwtConfig::default();
        let n = 128;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin())
            .collect();
        let scales = cfg.scales(fs);
        let coef = cwt_signal(&x, &scales, cfg.omega0);
        // Total magnitude per scale, interior samples only (edges decay).
        let energy: Vec<f64> = (0..scales.len())
            .map(|s| (32..96).map(|b| coef[[s, b]].norm()).sum())
            .collect();
        let argmax = (0..scales.len())
            .max_by(|&a, &b| energy[a].partial_cmp(&energy[b]).unwrap())
            .unwrap();

        let target = fs * cfg.omega0 / (2.0 * PI * 10.0);
        assert!((target - 3.0558).abs() < 1e-3);
        let nearest = (0..scales.len())
            .min_by(|&a, &b| {
                (scales[a] - target)
                    .abs()
                    .partial_cmp(&(scales[b] - target).abs())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(argmax, nearest, "ridge at scale {}", scales[argmax]);
    }

    #[test]
    fn cwt_is_linear() {
        let fs = 32.0;
        let cfg = CwtConfig::default();
        let n = 64;
        let x: Vec<f64> = (0..n).map(|i| ((i * 13 + 5) % 17) as f64 / 17.0).collect();
        let scales = cfg.scales(fs);
        let a = 2.75;
        let cx = cwt_signal(&x, &scales, cfg.omega0);
        let scaled: Vec<f64> = x.iter().map(|v| v * a).collect();
        let cs = cwt_signal(&scaled, &scales, cfg.omega0);
        for (u, v) in cx.iter().zip(cs.iter()) {
            assert!((u * a - v).norm() < 1e-9);
        }
    }

    #[test]
    fn windowed_cwt_equals_cwt_of_extracted_window() {
        let fs = 32.0;
        let n = 256;
        let mut data = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            let t = i as f64 / fs;
            data[[i, 0]] = (2.0 * PI * 6.0 * t).sin() + 0.3 * (2.0 * PI * 1.5 * t).cos();
            data[[i, 1]] = (2.0 * PI * 9.0 * t).cos();
        }
        let fm = fused(data, fs);
        let cfg = CwtConfig::default();
        let t_i = 3.25;
        let w = 0.75;
        let s = windowed_cwt(&fm, t_i, w, &cfg).unwrap();

        let i0 = (t_i * fs) as usize;
        let len = (w * fs) as usize;
        for (ch, coef) in s.coefficients.iter().enumerate() {
            let window: Vec<f64> = (i0..i0 + len).map(|r| fm.data[[r, ch]]).collect();
            let full = cwt_signal(&window, &s.scales, cfg.omega0);
            for (a, b) in coef.iter().zip(full.iter()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn windowed_cwt_out_of_range_errors() {
        let fm = fused(Array2::zeros((64, 1)), 32.0);
        assert!(windowed_cwt(&fm, 1.8, 0.75, &CwtConfig::default()).is_err());
    }

    #[test]
    fn extract_constant_matrix_is_empty() {
        let fm = fused(Array2::from_elem((512, 3), 0.25), 32.0);
        let set = extract_episodes(
            &fm,
            &CpdConfig::default(),
            &ClassifyConfig::default(),
            &PeripheralEvents::default(),
        )
        .unwrap();
        assert_eq!(set.totals, EpisodeTotals::default());
    }

    /// EEG-only session with one event-related transient: a slow unipolar
    /// deflection (what the mean-shift CPD sees) carrying a theta/alpha
    /// oscillation (what the band-ratio classifier sees).
    #[test]
    fn single_burst_yields_one_erp_episode() {
        let fs = 32.0;
        let n = (60.0 * fs) as usize;
        let mut data = Array2::<f64>::zeros((n, 3));
        let mut rng = crate::rngutil::subrng(3, "episode-burst");
        for i in 0..n {
            let t = i as f64 / fs;
            let burst = if (30.0..30.3).contains(&t) {
                let u = (t - 30.15) / 0.075;
                let env = (-0.5 * u * u).exp();
                0.3 * env * (2.0 * PI * 8.0 * (t - 30.0)).sin() + 0.15 * env
            } else {
                0.0
            };
            for c in 0..3 {
                data[[i, c]] =
                    0.5 + 0.03 * crate::rngutil::standard_normal(&mut rng) + burst;
            }
        }
        let fm = fused(data, fs);
        let set = extract_episodes(
            &fm,
            &CpdConfig::default(),
            &ClassifyConfig::default(),
            &PeripheralEvents::default(),
        )
        .unwrap();
        assert_eq!(set.totals.n_total, 1, "episodes: {:?}", set.episodes);
        assert_eq!(set.episodes[0].label, EpisodeLabel::Erp);
        assert!(
            (set.episodes[0].onset_s - 30.0).abs() <= 0.75,
            "onset {}",
            set.episodes[0].onset_s
        );
        assert_eq!(set.totals.n_total, set.totals.n_erp + set.totals.n_artifact);
    }

    #[test]
    fn frames_mapping_hand_example() {
        let set = EpisodeSet::from_episodes(vec![Episode {
            onset_s: 10.0,
            offset_s: 10.75,
            score: 1.0,
            label: EpisodeLabel::Erp,
            band_energy_ratio: 0.8,
            corroborating: vec![],
        }]);
        let frames = episodes_to_frames(&set, 30.0, 1800);
        // floor(10*30) = 300 .. ceil(10.75*30) = 323, half-open.
        assert_eq!(frames.first(), Some(&300));
        assert_eq!(frames.last(), Some(&322));
        assert_eq!(frames.len(), 23);

        assert!(episodes_to_frames(&EpisodeSet::<f64>::from_episodes(vec![]), 30.0, 100).is_empty());

        // Overlapping episodes deduplicate.
        let set = EpisodeSet::from_episodes(vec![
            Episode {
                onset_s: 1.0,
                offset_s: 2.0,
                score: 1.0,
                label: EpisodeLabel::Erp,
                band_energy_ratio: 0.8,
                corroborating: vec![],
            },
            Episode {
                onset_s: 1.5,
                offset_s: 2.5,
                score: 1.0,
                label: EpisodeLabel::Artifact,
                band_energy_ratio: 0.2,
                corroborating: vec![],
            },
        ]);
        let frames = episodes_to_frames(&set, 10.0, 1000);
        let mut sorted = frames.clone();
        sorted.dedup();
        assert_eq!(frames, sorted);
        assert_eq!(frames, (10..25).collect::<Vec<u64>>());
    }

    #[test]
    fn episode_csv_roundtrip() {
        let set = EpisodeSet::from_episodes(vec![
            Episode {
                onset_s: 1.25,
                offset_s: 2.0,
                score: 3.5,
                label: EpisodeLabel::Erp,
                band_energy_ratio: 0.81,
                corroborating: vec![Modality::Gsr, Modality::Ppg],
            },
            Episode {
                onset_s: 5.0,
                offset_s: 5.75,
                score: 2.0,
                label: EpisodeLabel::Artifact,
                band_energy_ratio: 0.3,
                corroborating: vec![],
            },
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.csv");
        write_episodes(&set, &path).unwrap();
        let back: EpisodeSet<f64> = read_episodes(&path).unwrap();
        assert_eq!(set.episodes, back.episodes);
        assert_eq!(set.totals, back.totals);
    }

    #[test]
    fn config_validation() {
        let mut cfg = CpdConfig {
            window_s: 1.5,
            ..CpdConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.allow_window_override = true;
        assert!(cfg.validate().is_ok());
        let bad_step = CpdConfig {
            step_s: 2.0,
            ..CpdConfig::default()
        };
        assert!(bad_step.validate().is_err());
    }
}
