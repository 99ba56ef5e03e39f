//! PPG cleaning and systolic-peak detection with heart-rate estimation.
//!
//! Cleaning is a zero-phase Chebyshev-II band-pass; beats come from the
//! two-event-moving-average detector (squared clipped signal, a short
//! "peak" moving average compared against a long "beat" moving average plus
//! an offset), with one systolic peak per qualifying block.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dsp::{design_filter, filtfilt, FilterSpec};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::session::ChannelStream;

/// Band-pass defaults for PPG cleaning: Chebyshev-II, 4th order, 0.1-5 Hz,
/// 40 dB stopband.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpgFilterConfig {
    pub order: u32,
    pub low_hz: f64,
    pub high_hz: f64,
    pub stopband_atten_db: f64,
}

impl Default for PpgFilterConfig {
    fn default() -> Self {
        Self {
            order: 4,
            low_hz: 0.1,
            high_hz: 5.0,
            stopband_atten_db: 40.0,
        }
    }
}

/// Two-moving-average event detector constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakDetectorConfig {
    /// Short ("peak") moving-average window, milliseconds.
    pub ma_peak_ms: f64,
    /// Long ("beat") moving-average window, milliseconds.
    pub ma_beat_ms: f64,
    /// Threshold offset as a fraction of the mean squared signal.
    pub beta: f64,
    /// Minimum block width, milliseconds.
    pub min_block_ms: f64,
    /// Interbeat intervals outside this range are flagged and excluded from
    /// the mean heart rate. Bounds in seconds (30-180 BPM by default).
    pub ibi_min_s: f64,
    pub ibi_max_s: f64,
}

impl Default for PeakDetectorConfig {
    fn default() -> Self {
        Self {
            ma_peak_ms: 111.0,
            ma_beat_ms: 667.0,
            beta: 0.02,
            min_block_ms: 111.0,
            ibi_min_s: 1.0 / 3.0,
            ibi_max_s: 2.0,
        }
    }
}

/// One interbeat interval ending at `peak_times_s[i + 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterbeatInterval {
    pub ibi_s: f64,
    pub hr_bpm: f64,
    /// False when the interval falls outside the plausible range; such
    /// intervals are kept in the series but excluded from `mean_hr_bpm`.
    pub in_range: bool,
}

/// Detected systolic peaks and derived heart-rate series.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PpgBeats {
    /// Strictly ascending peak times on the session clock.
    pub peak_times_s: Vec<f64>,
    /// One entry per consecutive peak pair.
    pub intervals: Vec<InterbeatInterval>,
    /// Mean over in-range intervals; absent when none exist.
    pub mean_hr_bpm: Option<f64>,
}

impl PpgBeats {
    pub fn is_empty(&self) -> bool {
        self.peak_times_s.is_empty()
    }

    /// Instantaneous heart rate as a step function held between beats,
    /// sampled at `fs` over `len` samples starting at `t0`.
    pub fn instantaneous_hr_channel<F: Float>(
        &self,
        fs: f64,
        len: usize,
        t0: f64,
        name: &str,
        modality: crate::session::Modality,
    ) -> ChannelStream<F> {
        let fallback = self.mean_hr_bpm.unwrap_or(0.0);
        let mut samples = Vec::with_capacity(len);
        for i in 0..len {
            let t = t0 + i as f64 / fs;
            let hr = match self.peak_times_s.iter().rposition(|&p| p <= t) {
                Some(k) if k + 1 < self.peak_times_s.len() => self.intervals[k].hr_bpm,
                Some(_) => self
                    .intervals
                    .last()
                    .map(|iv| iv.hr_bpm)
                    .unwrap_or(fallback),
                None => self
                    .intervals
                    .first()
                    .map(|iv| iv.hr_bpm)
                    .unwrap_or(fallback),
            };
            samples.push(F::cast(hr));
        }
        ChannelStream {
            modality,
            name: name.to_string(),
            fs,
            units: "bpm".into(),
            t0,
            samples,
        }
    }
}

/// Zero-phase Chebyshev-II band-pass cleaning; same length and rate out.
pub fn clean_ppg<F: Float>(x: &ChannelStream<F>, cfg: &PpgFilterConfig) -> Result<ChannelStream<F>> {
    if x.fs < 16.0 {
        return Err(Error::InvalidInput(format!(
            "PPG cleaning needs fs >= 16 Hz, got {}",
            x.fs
        )));
    }
    let spec = FilterSpec::chebyshev2_bandpass(
        cfg.order,
        cfg.low_hz,
        cfg.high_hz,
        cfg.stopband_atten_db,
        x.fs,
    );
    let filter = design_filter::<F>(&spec)?;
    filtfilt(&filter, x)
}

/// Centered moving average with truncated windows at the edges.
fn moving_average<F: Float>(x: &[F], window: usize) -> Vec<F> {
    let n = x.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(F::zero());
    let mut acc = F::zero();
    for &v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / F::cast((hi - lo) as f64)
        })
        .collect()
}

fn odd_window(ms: f64, fs: f64) -> usize {
    let w = ((ms / 1000.0 * fs).round() as usize).max(1);
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Detect systolic peaks on a cleaned stream.
///
/// Scale-invariant (every term of the threshold is quadratic in the input)
/// and shift-equivariant away from the edges. Flat input yields no beats.
pub fn detect_systolic_peaks<F: Float>(
    x_clean: &ChannelStream<F>,
    cfg: &PeakDetectorConfig,
) -> Result<PpgBeats> {
    x_clean.validate()?;
    if x_clean.duration_s() < 5.0 {
        return Err(Error::TooShort {
            needed: (5.0 * x_clean.fs) as usize,
            got: x_clean.samples.len(),
        });
    }
    let fs = x_clean.fs;
    let n = x_clean.samples.len();

    // Clipped-squared signal.
    let z: Vec<F> = x_clean
        .samples
        .iter()
        .map(|&v| {
            let c = v.max(F::zero());
            c * c
        })
        .collect();
    let ma_peak = moving_average(&z, odd_window(cfg.ma_peak_ms, fs));
    let ma_beat = moving_average(&z, odd_window(cfg.ma_beat_ms, fs));
    let z_mean = crate::float::mean(&z);
    let offset = F::cast(cfg.beta) * z_mean;

    // Blocks of interest: MA_peak above MA_beat + offset, wide enough.
    let min_block = ((cfg.min_block_ms / 1000.0 * fs).round() as usize).max(1);
    let mut peaks_idx: Vec<usize> = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..=n {
        let above = i < n && ma_peak[i] > ma_beat[i] + offset;
        match (above, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_block {
                    // One systolic peak per block: argmax of the waveform.
                    let mut best = s;
                    for j in s..i {
                        if x_clean.samples[j] > x_clean.samples[best] {
                            best = j;
                        }
                    }
                    peaks_idx.push(best);
                }
                start = None;
            }
            _ => {}
        }
    }

    let peak_times_s: Vec<f64> = peaks_idx
        .iter()
        .map(|&i| x_clean.t0 + i as f64 / fs)
        .collect();
    let mut intervals = Vec::new();
    for w in peak_times_s.windows(2) {
        let ibi = w[1] - w[0];
        intervals.push(InterbeatInterval {
            ibi_s: ibi,
            hr_bpm: 60.0 / ibi,
            in_range: (cfg.ibi_min_s..=cfg.ibi_max_s).contains(&ibi),
        });
    }
    let valid: Vec<f64> = intervals
        .iter()
        .filter(|iv| iv.in_range)
        .map(|iv| iv.hr_bpm)
        .collect();
    let mean_hr_bpm = if valid.is_empty() {
        None
    } else {
        Some(valid.iter().sum::<f64>() / valid.len() as f64)
    };

    Ok(PpgBeats {
        peak_times_s,
        intervals,
        mean_hr_bpm,
    })
}

/// Export beats as `peak_time_s,ibi_s,hr_bpm` (first row has empty interval
/// fields).
pub fn write_beats(beats: &PpgBeats, path: &Path) -> Result<()> {
    let mut out = String::from("peak_time_s,ibi_s,hr_bpm\n");
    for (i, &t) in beats.peak_times_s.iter().enumerate() {
        if i == 0 {
            out.push_str(&format!("{t},,\n"));
        } else {
            let ibi = t - beats.peak_times_s[i - 1];
            out.push_str(&format!("{t},{ibi},{}\n", 60.0 / ibi));
        }
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read back a beat CSV written by [`write_beats`], reconstructing the
/// interval flags with the supplied detector bounds.
pub fn read_beats(path: &Path, cfg: &PeakDetectorConfig) -> Result<PpgBeats> {
    let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut peak_times_s = Vec::new();
    for (idx, line) in raw.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let first = line.split(',').next().unwrap_or_default();
        let t: f64 = first.parse().map_err(|_| Error::Csv {
            path: path.to_path_buf(),
            line: (idx + 1) as u64,
            msg: format!("malformed peak time {first:?}"),
        })?;
        peak_times_s.push(t);
    }
    let mut intervals = Vec::new();
    for w in peak_times_s.windows(2) {
        let ibi = w[1] - w[0];
        intervals.push(InterbeatInterval {
            ibi_s: ibi,
            hr_bpm: 60.0 / ibi,
            in_range: (cfg.ibi_min_s..=cfg.ibi_max_s).contains(&ibi),
        });
    }
    let valid: Vec<f64> = intervals
        .iter()
        .filter(|iv| iv.in_range)
        .map(|iv| iv.hr_bpm)
        .collect();
    let mean_hr_bpm = if valid.is_empty() {
        None
    } else {
        Some(valid.iter().sum::<f64>() / valid.len() as f64)
    };
    Ok(PpgBeats {
        peak_times_s,
        intervals,
        mean_hr_bpm,
    })
}
