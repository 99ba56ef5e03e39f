//! Evaluation report emission: plot-ready CSV plus an ASCII summary table.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub configuration: String,
    pub value: f64,
    pub dispersion: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
}

impl EvalReport {
    pub fn push(&mut self, metric: &str, configuration: &str, value: f64, dispersion: Option<f64>) {
        self.rows.push(MetricRow {
            metric: metric.into(),
            configuration: configuration.into(),
            value,
            dispersion,
        });
    }

    /// `metric,configuration,value,dispersion` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,configuration,value,dispersion\n");
        for r in &self.rows {
            let disp = r.dispersion.map(|d| format!("{d}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.metric, r.configuration, r.value, disp
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self
            .rows
            .iter()
            .map(|r| r.metric.len() + r.configuration.len())
            .max()
            .unwrap_or(20)
            + 4;
        for r in &self.rows {
            let key = format!("{} [{}]", r.metric, r.configuration);
            match r.dispersion {
                Some(d) => out.push_str(&format!("{key:<width$} {:.4} ± {:.4}\n", r.value, d)),
                None => out.push_str(&format!("{key:<width$} {:.4}\n", r.value)),
            }
        }
        out
    }

    /// Write `<stem>.csv` and `<stem>.txt` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|source| Error::Io {
            path: csv.clone(),
            source,
        })?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_text()).map_err(|source| Error::Io {
            path: txt.clone(),
            source,
        })?;
        Ok(vec![csv, txt])
    }
}

/// One row of the modality-ablation profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub t_mean_s: f64,
    pub t_std_s: f64,
    pub n_p: f64,
    pub d_acc: f64,
}

/// Render the ablation rows as an ASCII table with columns
/// `Method | T_C (sec) | N_p | D_Acc`.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let label_w = rows
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(6)
        .max("Method".len());
    let mut out = String::new();
    out.push_str(&format!(
        "{:<label_w$} | {:>20} | {:>6} | {:>6}\n",
        "Method", "T_C (sec)", "N_p", "D_Acc"
    ));
    out.push_str(&format!(
        "{:-<label_w$}-+-{:->20}-+-{:->6}-+-{:->6}\n",
        "", "", "", ""
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<label_w$} | {:>11.3} ± {:>5.3} | {:>6.3} | {:>6.3}\n",
            r.label, r.t_mean_s, r.t_std_s, r.n_p, r.d_acc
        ));
    }
    out
}
