//! Min-max normalization and incremental feature-level fusion.
//!
//! Preprocessed channels are stacked column-wise in fixed modality order
//! (EEG block, then GSR, then PPG) and each column is min-max scaled to
//! `[0, 1]` independently, so adding a modality never changes the columns of
//! the ones already present.

use ndarray::Array2;
use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::session::{ChannelStream, Modality};

/// Tag for one fused column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnTag {
    pub modality: Modality,
    pub name: String,
}

/// Time-aligned, min-max-normalized multichannel feature matrix.
#[derive(Debug, Clone)]
pub struct FusedMatrix<F> {
    /// `rows = time steps`, `cols = feature channels`; every entry in [0, 1].
    pub data: Array2<F>,
    pub tags: Vec<ColumnTag>,
    pub fs: f64,
    pub modalities: BTreeSet<Modality>,
    /// Per-column `(min, max)` observed before scaling; lets non-constant
    /// columns be un-scaled exactly.
    pub scaling_ranges: Vec<(F, F)>,
}

impl<F: Float> FusedMatrix<F> {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.data.nrows() as f64 / self.fs
    }

    /// Column indices carrying a given modality.
    pub fn columns_of(&self, m: Modality) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| t.modality == m)
            .map(|(i, _)| i)
            .collect()
    }

    /// Invert the min-max scaling of one (non-constant) column.
    pub fn unscale_column(&self, col: usize) -> Vec<F> {
        let (lo, hi) = self.scaling_ranges[col];
        self.data
            .column(col)
            .iter()
            .map(|&v| lo + v * (hi - lo))
            .collect()
    }
}

/// Min-max scale a stream into `[0, 1]`; constant streams map to all zeros.
pub fn minmax_scale<F: Float>(x: &ChannelStream<F>) -> ChannelStream<F> {
    let (scaled, _, _) = minmax_scale_samples(&x.samples);
    ChannelStream {
        samples: scaled,
        units: "a.u.".into(),
        ..x.clone()
    }
}

fn minmax_scale_samples<F: Float>(xs: &[F]) -> (Vec<F>, F, F) {
    let lo = xs.iter().copied().fold(F::infinity(), F::min);
    let hi = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if !(hi > lo) {
        return (vec![F::zero(); xs.len()], lo, hi);
    }
    let span = hi - lo;
    (xs.iter().map(|&v| (v - lo) / span).collect(), lo, hi)
}

/// Per-modality inputs for fusion, already preprocessed and resampled to the
/// common rate: reconstructed EEG channels, the GSR phasic component, and the
/// cleaned PPG waveform plus an instantaneous-HR channel.
#[derive(Debug, Clone, Default)]
pub struct FusionInput<F> {
    pub eeg: Vec<ChannelStream<F>>,
    pub gsr: Vec<ChannelStream<F>>,
    pub ppg: Vec<ChannelStream<F>>,
}

impl<F: Float> FusionInput<F> {
    fn block(&self, m: Modality) -> &[ChannelStream<F>] {
        match m {
            Modality::Eeg => &self.eeg,
            Modality::Gsr => &self.gsr,
            Modality::Ppg => &self.ppg,
        }
    }
}

/// Fixed incremental block order.
pub const FUSION_ORDER: [Modality; 3] = [Modality::Eeg, Modality::Gsr, Modality::Ppg];

/// Fuse the requested modalities at `common_fs`.
///
/// Columns are concatenated in `FUSION_ORDER` and min-max scaled
/// independently; removing a modality from `modality_set` leaves the
/// remaining columns bit-identical. Streams may differ in length by at most
/// one sample (the matrix is trimmed to the shortest).
pub fn fuse<F: Float>(
    input: &FusionInput<F>,
    modality_set: &BTreeSet<Modality>,
    common_fs: f64,
) -> Result<FusedMatrix<F>> {
    let mut channels: Vec<&ChannelStream<F>> = Vec::new();
    for m in FUSION_ORDER {
        if !modality_set.contains(&m) {
            continue;
        }
        let block = input.block(m);
        if block.is_empty() {
            return Err(Error::MissingModality(m.to_string()));
        }
        channels.extend(block.iter());
    }
    if channels.is_empty() {
        return Err(Error::InvalidInput("empty modality set".into()));
    }

    let mut n_rows = usize::MAX;
    let mut n_max = 0usize;
    for ch in &channels {
        ch.validate()?;
        if (ch.fs - common_fs).abs() > 1e-9 * common_fs {
            return Err(Error::InvalidInput(format!(
                "channel {:?} at {} Hz; fusion expects {} Hz",
                ch.name, ch.fs, common_fs
            )));
        }
        n_rows = n_rows.min(ch.samples.len());
        n_max = n_max.max(ch.samples.len());
    }
    if n_max - n_rows > 1 {
        return Err(Error::DurationMismatch(format!(
            "stream lengths range {n_rows}..{n_max} samples at {common_fs} Hz"
        )));
    }

    let mut data = Array2::<F>::zeros((n_rows, channels.len()));
    let mut tags = Vec::with_capacity(channels.len());
    let mut scaling_ranges = Vec::with_capacity(channels.len());
    for (c, ch) in channels.iter().enumerate() {
        let (scaled, lo, hi) = minmax_scale_samples(&ch.samples[..n_rows]);
        for (r, v) in scaled.into_iter().enumerate() {
            data[[r, c]] = v;
        }
        tags.push(ColumnTag {
            modality: ch.modality,
            name: ch.name.clone(),
        });
        scaling_ranges.push((lo, hi));
    }

    Ok(FusedMatrix {
        data,
        tags,
        fs: common_fs,
        modalities: modality_set.clone(),
        scaling_ranges,
    })
}

/// Write the matrix as CSV with a `modality:name` tagged header.
pub fn write_fused<F: Float>(fm: &FusedMatrix<F>, path: &Path) -> Result<()> {
    let mut out = String::from("time_s");
    for tag in &fm.tags {
        out.push_str(&format!(",{}:{}", tag.modality, tag.name));
    }
    out.push('\n');
    for r in 0..fm.n_rows() {
        out.push_str(&format!("{}", r as f64 / fm.fs));
        for c in 0..fm.n_cols() {
            out.push_str(&format!(",{}", fm.data[[r, c]]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a matrix written by [`write_fused`]. Scaling ranges are not stored
/// in the CSV; they come back as the (0, 1) identity.
pub fn read_fused<F: Float>(path: &Path, fs_hint: Option<f64>) -> Result<FusedMatrix<F>> {
    let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = raw.lines();
    let header = lines.next().ok_or_else(|| Error::Csv {
        path: path.to_path_buf(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let mut tags = Vec::new();
    for field in header.split(',').skip(1) {
        let (m, name) = field.split_once(':').ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("column {field:?} is not modality:name"),
        })?;
        let modality = match m {
            "eeg" => Modality::Eeg,
            "gsr" => Modality::Gsr,
            "ppg" => Modality::Ppg,
            _ => {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line: 1,
                    msg: format!("unknown modality {m:?}"),
                })
            }
        };
        tags.push(ColumnTag {
            modality,
            name: name.to_string(),
        });
    }

    let mut times = Vec::new();
    let mut rows: Vec<Vec<F>> = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let err = |msg: String| Error::Csv {
            path: path.to_path_buf(),
            line: (idx + 2) as u64,
            msg,
        };
        let t: f64 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed time".into()))?;
        times.push(t);
        let row: Vec<F> = fields
            .map(|s| s.parse::<f64>().map(F::cast))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err("malformed value".into()))?;
        if row.len() != tags.len() {
            return Err(err(format!(
                "expected {} values, got {}",
                tags.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: rows.len(),
        });
    }
    let fs = fs_hint.unwrap_or_else(|| 1.0 / (times[1] - times[0]));
    let n_rows = rows.len();
    let n_cols = tags.len();
    let mut data = Array2::<F>::zeros((n_rows, n_cols));
    for (r, row) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            data[[r, c]] = v;
        }
    }
    let modalities = tags.iter().map(|t| t.modality).collect();
    Ok(FusedMatrix {
        data,
        scaling_ranges: vec![(F::zero(), F::one()); n_cols],
        tags,
        fs,
        modalities,
    })
}
