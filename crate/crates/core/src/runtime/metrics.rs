//! Episode records, training-progress smoothing and the metrics CSV.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::UpdateReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub seed: u64,
    pub length: usize,
    pub success: bool,
    pub intervened_steps: usize,
    pub unsafe_steps: usize,
    /// Environment steps taken by the run when this episode ended.
    pub env_step: u64,
}

impl EpisodeRecord {
    pub fn intervention_rate(&self) -> f64 {
        if self.length == 0 {
            0.0
        } else {
            self.intervened_steps as f64 / self.length as f64
        }
    }
}

/// Mean of the most recent `min(window, len)` flags; 0 for no flags.
pub fn rolling_success(flags: &[bool], window: usize) -> f64 {
    let start = flags.len().saturating_sub(window.max(1));
    let recent = &flags[start..];
    if recent.is_empty() {
        return 0.0;
    }
    recent.iter().filter(|&&f| f).count() as f64 / recent.len() as f64
}

/// First episode seeds the average with its own rate.
pub fn ema_intervention(prev: Option<f64>, rate: f64, k: f64) -> f64 {
    match prev {
        None => rate,
        Some(p) => (1.0 - k) * p + k * rate,
    }
}

/// Running success window and intervention EMA.
#[derive(Clone, Debug)]
pub struct ProgressTracker {
    window: usize,
    k: f64,
    recent: VecDeque<bool>,
    ema: Option<f64>,
}

impl ProgressTracker {
    pub fn new(window: usize, k: f64) -> Self {
        Self {
            window: window.max(1),
            k,
            recent: VecDeque::new(),
            ema: None,
        }
    }

    pub fn record(&mut self, ep: &EpisodeRecord) -> (f64, f64) {
        self.recent.push_back(ep.success);
        if self.recent.len() > self.window {
            self.recent.pop_front();
        }
        self.ema = Some(ema_intervention(self.ema, ep.intervention_rate(), self.k));
        (self.rolling_success(), self.ema.unwrap_or(0.0))
    }

    pub fn rolling_success(&self) -> f64 {
        let flags: Vec<bool> = self.recent.iter().copied().collect();
        rolling_success(&flags, self.window)
    }

    pub fn ema(&self) -> Option<f64> {
        self.ema
    }
}

pub const CSV_COLUMNS: [&str; 14] = [
    "step",
    "episode",
    "rolling_success",
    "interv_ema",
    "ep_len",
    "loss_critic",
    "loss_actor",
    "loss_online_gate",
    "loss_pref_gate",
    "loss_pref_actor",
    "mean_beta_online",
    "mean_beta_pref",
    "mean_A",
    "param_version",
];

/// One CSV row per finished episode. Learner fields come from the most
/// recent update and are `NaN` when that stage did not run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub rolling_success: f64,
    pub interv_ema: f64,
    pub ep_len: usize,
    pub loss_critic: f64,
    pub loss_actor: f64,
    pub loss_online_gate: f64,
    pub loss_pref_gate: f64,
    pub loss_pref_actor: f64,
    pub mean_beta_online: f64,
    pub mean_beta_pref: f64,
    pub mean_a: f64,
    pub param_version: u64,
}

impl MetricsRow {
    pub fn new(
        ep: &EpisodeRecord,
        rolling_success: f64,
        interv_ema: f64,
        report: Option<&UpdateReport>,
        param_version: u64,
    ) -> Self {
        let f = |g: fn(&UpdateReport) -> Option<f64>| report.and_then(g).unwrap_or(f64::NAN);
        Self {
            step: ep.env_step,
            episode: ep.episode,
            rolling_success,
            interv_ema,
            ep_len: ep.length,
            loss_critic: f(|r| r.loss_critic),
            loss_actor: f(|r| r.loss_actor.or(r.loss_bc)),
            loss_online_gate: f(|r| r.loss_online_gate),
            loss_pref_gate: f(|r| r.loss_pref_gate),
            loss_pref_actor: f(|r| r.loss_pref_actor),
            mean_beta_online: f(|r| r.mean_beta_online),
            mean_beta_pref: f(|r| r.mean_beta_pref),
            mean_a: f(|r| r.mean_advantage),
            param_version,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.episode,
            self.rolling_success,
            self.interv_ema,
            self.ep_len,
            self.loss_critic,
            self.loss_actor,
            self.loss_online_gate,
            self.loss_pref_gate,
            self.loss_pref_actor,
            self.mean_beta_online,
            self.mean_beta_pref,
            self.mean_a,
            self.param_version
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != CSV_COLUMNS.len() {
            return Err(Error::Schema(format!(
                "metrics row has {} fields, expected {}",
                f.len(),
                CSV_COLUMNS.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::Schema(format!("column {} is not a number: `{}`", CSV_COLUMNS[i], f[i])))
        };
        let int = |i: usize| -> Result<u64> {
            f[i].parse()
                .map_err(|_| Error::Schema(format!("column {} is not an integer: `{}`", CSV_COLUMNS[i], f[i])))
        };
        Ok(Self {
            step: int(0)?,
            episode: int(1)?,
            rolling_success: num(2)?,
            interv_ema: num(3)?,
            ep_len: int(4)? as usize,
            loss_critic: num(5)?,
            loss_actor: num(6)?,
            loss_online_gate: num(7)?,
            loss_pref_gate: num(8)?,
            loss_pref_actor: num(9)?,
            mean_beta_online: num(10)?,
            mean_beta_pref: num(11)?,
            mean_a: num(12)?,
            param_version: int(13)?,
        })
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", CSV_COLUMNS.join(",")).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_COLUMNS.join(",") => {}
        _ => return Err(Error::Schema(format!("{}: unexpected metrics header", path.display()))),
    }
    lines.map(MetricsRow::parse_csv).collect()
}
