//! Session loading, validation, marker-based alignment and persistence.
//!
//! A session on disk is a `session.json` manifest plus one CSV per device
//! group (`time_s,<ch1>,...,<chN>`) and an optional annotation CSV
//! (`start_s,end_s,label`). All paths in the manifest are relative to the
//! manifest's directory. The time column is validated against the declared
//! sampling rate (max jitter 10% of one sample period) and then discarded:
//! sample `i` of a channel lives at `t0 + i/fs` on the session clock.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::float::Float;

/// Sensing modality of a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eeg,
    Gsr,
    Ppg,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Eeg => write!(f, "eeg"),
            Modality::Gsr => write!(f, "gsr"),
            Modality::Ppg => write!(f, "ppg"),
        }
    }
}

/// Uniformly sampled real-valued time series.
///
/// Timestamps are implicit: sample `i` sits at `t0 + i/fs` seconds on the
/// session clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStream<F> {
    pub modality: Modality,
    pub name: String,
    /// Sampling rate in Hz, > 0.
    pub fs: f64,
    /// Physical unit label (uV, uS, a.u., bpm).
    pub units: String,
    /// Start offset in seconds relative to the session clock.
    pub t0: f64,
    pub samples: Vec<F>,
}

impl<F: Float> ChannelStream<F> {
    /// Duration covered by the samples, in seconds.
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Time of sample `i` on the session clock.
    pub fn time_of(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.fs
    }

    /// Basic invariants: positive rate, at least two samples, finite values.
    pub fn validate(&self) -> Result<()> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::InvalidInput(format!(
                "channel {:?}: fs must be > 0, got {}",
                self.name, self.fs
            )));
        }
        if self.samples.len() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: self.samples.len(),
            });
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "channel {:?}: non-finite sample at index {i}",
                self.name
            )));
        }
        Ok(())
    }
}

/// Synchronization marker observed on one device clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncMarker {
    /// Gesture label, e.g. "NOD" or "WAVE".
    pub label: String,
    pub time_s: f64,
    /// Device clock the marker was observed on; matched against channel
    /// modality tags ("eeg", "gsr", "ppg").
    pub stream: String,
}

/// Video metadata carried alongside a session (no decoding happens here).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub fps: f64,
    pub frame_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationLabel {
    Attention,
    Artifact,
}

impl fmt::Display for AnnotationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnotationLabel::Attention => write!(f, "attention"),
            AnnotationLabel::Artifact => write!(f, "artifact"),
        }
    }
}

/// Ground-truth interval on the session clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub start_s: f64,
    pub end_s: f64,
    pub label: AnnotationLabel,
}

/// Subject/session identifiers plus free-form metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub session: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

/// A full multimodal recording. Immutable after construction; safe to share
/// read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecording<F> {
    pub channels: Vec<ChannelStream<F>>,
    pub markers: Vec<SyncMarker>,
    pub video: Option<VideoMeta>,
    pub annotations: Option<Vec<Annotation>>,
    pub meta: SessionMeta,
}

impl<F: Float> SessionRecording<F> {
    /// Channels of one modality, in manifest order.
    pub fn channels_of(&self, m: Modality) -> Vec<&ChannelStream<F>> {
        self.channels.iter().filter(|c| c.modality == m).collect()
    }

    /// Modalities present in the recording.
    pub fn modalities(&self) -> BTreeSet<Modality> {
        self.channels.iter().map(|c| c.modality).collect()
    }
}

// ---------------------------------------------------------------------------
// Manifest schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestChannel {
    path: String,
    /// Column name inside the CSV referenced by `path`.
    column: String,
    modality: Modality,
    name: String,
    fs: f64,
    units: String,
    #[serde(default)]
    t0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default)]
    meta: SessionMeta,
    channels: Vec<ManifestChannel>,
    #[serde(default)]
    markers: Vec<SyncMarker>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video: Option<VideoMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Load and validate a session from its manifest.
pub fn load_session<F: Float>(manifest_path: &Path) -> Result<SessionRecording<F>> {
    let raw = std::fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| Error::Manifest {
        path: manifest_path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    if manifest.channels.is_empty() {
        return Err(Error::EmptySession);
    }
    let mut seen = BTreeSet::new();
    for ch in &manifest.channels {
        if !(ch.fs.is_finite() && ch.fs > 0.0) {
            return Err(Error::Manifest {
                path: manifest_path.to_path_buf(),
                msg: format!("channel {:?}: fs must be > 0, got {}", ch.name, ch.fs),
            });
        }
        if !seen.insert(ch.name.clone()) {
            return Err(Error::DuplicateChannel(ch.name.clone()));
        }
    }

    // Read each referenced CSV once and pull every requested column out of it.
    let mut tables: BTreeMap<String, CsvTable> = BTreeMap::new();
    for ch in &manifest.channels {
        if !tables.contains_key(&ch.path) {
            let table = read_channel_csv(&base.join(&ch.path))?;
            tables.insert(ch.path.clone(), table);
        }
    }

    let mut channels = Vec::with_capacity(manifest.channels.len());
    for ch in &manifest.channels {
        let table = &tables[&ch.path];
        let col: Vec<F> = table.column_cast(&ch.column).ok_or_else(|| Error::Csv {
            path: base.join(&ch.path),
            line: 1,
            msg: format!("missing column {:?}", ch.column),
        })?;
        table.validate_time(ch.fs, &base.join(&ch.path))?;
        let stream = ChannelStream {
            modality: ch.modality,
            name: ch.name.clone(),
            fs: ch.fs,
            units: ch.units.clone(),
            t0: ch.t0,
            samples: col,
        };
        stream.validate()?;
        // Anything shorter than two seconds is useless downstream.
        if (stream.samples.len() as f64) < 2.0 * ch.fs {
            return Err(Error::TooShort {
                needed: (2.0 * ch.fs).ceil() as usize,
                got: stream.samples.len(),
            });
        }
        channels.push(stream);
    }

    for m in &manifest.markers {
        if m.time_s < 0.0 {
            return Err(Error::Manifest {
                path: manifest_path.to_path_buf(),
                msg: format!("marker {:?} has negative time {}", m.label, m.time_s),
            });
        }
    }

    let annotations = match &manifest.annotations {
        Some(rel) => Some(read_annotations(&base.join(rel))?),
        None => None,
    };

    Ok(SessionRecording {
        channels,
        markers: manifest.markers,
        video: manifest.video,
        annotations,
        meta: manifest.meta,
    })
}

struct CsvTable {
    time: Vec<f64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl CsvTable {
    fn column_cast<F: Float>(&self, name: &str) -> Option<Vec<F>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].iter().map(|&v| F::cast(v)).collect())
    }

    fn validate_time(&self, fs: f64, path: &Path) -> Result<()> {
        let jitter = 0.1 / fs;
        let t0 = self.time.first().copied().unwrap_or(0.0);
        for (i, &t) in self.time.iter().enumerate() {
            let expected = t0 + i as f64 / fs;
            if (t - expected).abs() > jitter {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line: (i + 2) as u64,
                    msg: format!(
                        "time column jitter: got {t}, expected {expected} for fs {fs}"
                    ),
                });
            }
        }
        Ok(())
    }
}

fn read_channel_csv(path: &Path) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => Error::Csv {
                path: path.to_path_buf(),
                line: 0,
                msg: e.to_string(),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.get(0) != Some("time_s") {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            msg: "first column must be time_s".into(),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut time = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];

    for (row_idx, record) in reader.records().enumerate() {
        let line = (row_idx + 2) as u64;
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        if record.len() != names.len() + 1 {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {} fields, got {}", names.len() + 1, record.len()),
            });
        }
        for (i, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                line,
                msg: format!("malformed number {field:?} in column {i}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("non-finite sample {field:?} in column {i}"),
                });
            }
            if i == 0 {
                time.push(v);
            } else {
                columns[i - 1].push(v);
            }
        }
    }

    Ok(CsvTable {
        time,
        names,
        columns,
    })
}

fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = (row_idx + 2) as u64;
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        let err = |msg: String| Error::Csv {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let start_s: f64 = record
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed start_s".into()))?;
        let end_s: f64 = record
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed end_s".into()))?;
        let label = match record.get(2) {
            Some("attention") => AnnotationLabel::Attention,
            Some("artifact") => AnnotationLabel::Artifact,
            other => return Err(err(format!("unknown label {other:?}"))),
        };
        if end_s <= start_s {
            return Err(err(format!("degenerate interval [{start_s}, {end_s}]")));
        }
        out.push(Annotation {
            start_s,
            end_s,
            label,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// Trim all channels to the common `[latest start marker, earliest end
/// marker]` interval and rebase the session clock to zero.
///
/// Each device (matched by marker `stream` against channel modality tags)
/// must carry at least a start and an end marker; the earliest marker per
/// device is its start, the latest its end. Marker and annotation times are
/// rebased and clipped to the new interval. Aligning an already aligned
/// session is the identity.
pub fn align_streams<F: Float>(rec: &SessionRecording<F>) -> Result<SessionRecording<F>> {
    let devices: BTreeSet<String> = rec.channels.iter().map(|c| c.modality.to_string()).collect();

    let mut t_start = f64::NEG_INFINITY;
    let mut t_end = f64::INFINITY;
    for device in &devices {
        let times: Vec<f64> = rec
            .markers
            .iter()
            .filter(|m| &m.stream == device)
            .map(|m| m.time_s)
            .collect();
        if times.is_empty() {
            return Err(Error::MissingMarker {
                device: device.clone(),
                which: "start",
            });
        }
        if times.len() < 2 {
            return Err(Error::MissingMarker {
                device: device.clone(),
                which: "end",
            });
        }
        let start = times.iter().copied().fold(f64::INFINITY, f64::min);
        let end = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        t_start = t_start.max(start);
        t_end = t_end.min(end);
    }
    if !(t_end - t_start > 0.0) {
        return Err(Error::EmptyInterval {
            start_s: t_start,
            end_s: t_end,
        });
    }

    let span = t_end - t_start;
    let eps = 1e-9;
    let mut channels = Vec::with_capacity(rec.channels.len());
    for ch in &rec.channels {
        // Keep samples whose implicit timestamp falls inside [t_start, t_end].
        let first = ((t_start - ch.t0) * ch.fs - eps).ceil().max(0.0) as usize;
        let last_f = ((t_end - ch.t0) * ch.fs + eps).floor();
        let last = if last_f < 0.0 {
            0
        } else {
            ((last_f as usize) + 1).min(ch.samples.len())
        };
        if first >= last {
            return Err(Error::EmptyInterval {
                start_s: t_start,
                end_s: t_end,
            });
        }
        let t0 = (ch.t0 + first as f64 / ch.fs) - t_start;
        channels.push(ChannelStream {
            samples: ch.samples[first..last].to_vec(),
            // Sub-sample offset of the first retained sample; exactly 0 when
            // markers sit on the sample grid.
            t0: if t0.abs() < eps { 0.0 } else { t0 },
            ..ch.clone()
        });
    }

    let markers = rec
        .markers
        .iter()
        .map(|m| SyncMarker {
            time_s: (m.time_s - t_start).clamp(0.0, span),
            ..m.clone()
        })
        .collect();

    let annotations = rec.annotations.as_ref().map(|anns| {
        anns.iter()
            .filter_map(|a| {
                let start_s = (a.start_s - t_start).clamp(0.0, span);
                let end_s = (a.end_s - t_start).clamp(0.0, span);
                (end_s > start_s).then_some(Annotation {
                    start_s,
                    end_s,
                    label: a.label,
                })
            })
            .collect()
    });

    Ok(SessionRecording {
        channels,
        markers,
        annotations,
        video: rec.video,
        meta: rec.meta.clone(),
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Write a session to `dir` as a manifest plus per-modality CSVs; returns the
/// manifest path. `load_session(write_session(rec))` reproduces all samples
/// bit-exactly along with markers, annotations and metadata.
pub fn write_session<F: Float>(rec: &SessionRecording<F>, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    // Channels sharing (modality, fs, t0, len) go into one CSV file.
    let mut groups: Vec<(Modality, u64, u64, usize, Vec<usize>)> = Vec::new();
    for (idx, ch) in rec.channels.iter().enumerate() {
        let key = (ch.modality, ch.fs.to_bits(), ch.t0.to_bits(), ch.samples.len());
        match groups
            .iter_mut()
            .find(|(m, fsb, t0b, len, _)| (*m, *fsb, *t0b, *len) == key)
        {
            Some((_, _, _, _, members)) => members.push(idx),
            None => groups.push((key.0, key.1, key.2, key.3, vec![idx])),
        }
    }

    let mut manifest_channels = Vec::with_capacity(rec.channels.len());
    let mut per_modality_counter: BTreeMap<Modality, usize> = BTreeMap::new();
    for (modality, _, _, len, members) in &groups {
        let counter = per_modality_counter.entry(*modality).or_insert(0);
        let filename = if *counter == 0 {
            format!("{modality}.csv")
        } else {
            format!("{modality}_{counter}.csv")
        };
        *counter += 1;

        let path = dir.join(&filename);
        let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: std::io::Error::other(e.to_string()),
        })?;
        let first = &rec.channels[members[0]];
        let mut header = vec!["time_s".to_string()];
        header.extend(members.iter().map(|&i| rec.channels[i].name.clone()));
        writer.write_record(&header).map_err(|e| Error::Io {
            path: path.clone(),
            source: std::io::Error::other(e.to_string()),
        })?;
        for row in 0..*len {
            let mut record = Vec::with_capacity(members.len() + 1);
            record.push(format!("{}", first.t0 + row as f64 / first.fs));
            for &i in members {
                record.push(format!("{}", rec.channels[i].samples[row]));
            }
            writer.write_record(&record).map_err(|e| Error::Io {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
        }
        writer.flush().map_err(io_err(&path))?;

        for &i in members {
            let ch = &rec.channels[i];
            manifest_channels.push(ManifestChannel {
                path: filename.clone(),
                column: ch.name.clone(),
                modality: ch.modality,
                name: ch.name.clone(),
                fs: ch.fs,
                units: ch.units.clone(),
                t0: ch.t0,
            });
        }
    }

    let annotations_rel = match &rec.annotations {
        Some(anns) => {
            let rel = "annotations.csv";
            let path = dir.join(rel);
            let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
            writer
                .write_record(["start_s", "end_s", "label"])
                .map_err(|e| Error::Io {
                    path: path.clone(),
                    source: std::io::Error::other(e.to_string()),
                })?;
            for a in anns {
                writer
                    .write_record([
                        format!("{}", a.start_s),
                        format!("{}", a.end_s),
                        a.label.to_string(),
                    ])
                    .map_err(|e| Error::Io {
                        path: path.clone(),
                        source: std::io::Error::other(e.to_string()),
                    })?;
            }
            writer.flush().map_err(io_err(&path))?;
            Some(rel.to_string())
        }
        None => None,
    };

    let manifest = Manifest {
        meta: rec.meta.clone(),
        channels: manifest_channels,
        markers: rec.markers.clone(),
        video: rec.video,
        annotations: annotations_rel,
    };
    let manifest_path = dir.join("session.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}
