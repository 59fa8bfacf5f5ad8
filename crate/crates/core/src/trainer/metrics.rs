use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Environment steps taken when the episode ended.
    pub env_steps: u64,
    pub length: usize,
    pub head: usize,
    pub head_kind: String,
    /// Rewarded treasure collections during the episode.
    pub treasures: usize,
    pub completed: bool,
    /// Undiscounted extrinsic return.
    pub episode_return: f64,
    /// `sum_t gamma^t r_t`, the selector's training signal.
    pub discounted_return: f64,
    /// Head probabilities when the head was drawn.
    pub probabilities: Vec<f64>,
    /// Per-head running means after the episode's selector update.
    pub mu: Vec<f64>,
}

/// One line of `losses.jsonl`, averaged over the round's iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub round: u64,
    pub env_steps: u64,
    pub critic_extrinsic: f64,
    pub critic_intrinsic: f64,
    pub policy_entropy: f64,
    pub policy_grad_norm: f64,
}

/// One line of `eval.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub env_steps: u64,
    pub mean_treasures: f64,
    pub std_treasures: f64,
    pub success_rate: f64,
}

/// Mean and population standard deviation; `(NaN, NaN)` for no data.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trailing mean over at most `window` values ending at each index.
pub fn running_mean(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Appends serialized records, one JSON object per line.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonlWriter {
            out: BufWriter::new(file),
            path,
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
        assert_eq!(running_mean(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
        assert!(running_mean(&[1.0; 200], 100).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        let rec = LossRecord {
            round: 1,
            env_steps: 100,
            critic_extrinsic: 0.5,
            critic_intrinsic: 0.25,
            policy_entropy: 1.6,
            policy_grad_norm: 0.1,
        };
        let mut w = JsonlWriter::create(&path).unwrap();
        w.write(&rec).unwrap();
        w.write(&rec).unwrap();
        w.flush().unwrap();
        let back: Vec<LossRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![rec.clone(), rec]);
    }
}
