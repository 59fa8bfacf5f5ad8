//! Run matrices over reward modes and seeds, their summary tables, and
//! plot-ready data files.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::MapSpec;
use crate::error::{Error, Result};
use crate::novelty::{RewardKind, VisitTable};
use crate::trainer::{mean_std, read_jsonl, running_mean, EpisodeRecord, EvalReport, RunConfig};

/// How a run's heads are set up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RewardMode {
    /// A single head trained on one reward kind.
    Fixed(RewardKind),
    /// Every kind of the default head set plus the learned selector.
    Multi,
    UniformSelector,
    NoEntropy,
    AllIndependent,
}

impl RewardMode {
    pub fn name(self) -> String {
        match self {
            RewardMode::Fixed(k) => k.name().to_string(),
            RewardMode::Multi => "multi".into(),
            RewardMode::UniformSelector => "uniform_selector".into(),
            RewardMode::NoEntropy => "no_entropy".into(),
            RewardMode::AllIndependent => "all_independent".into(),
        }
    }

    /// Rewrites heads and ablation flags of `config`.
    pub fn apply(self, config: &mut RunConfig) {
        config.ablation = Default::default();
        config.heads = RewardKind::HEAD_SET.to_vec();
        match self {
            RewardMode::Fixed(k) => config.heads = vec![k],
            RewardMode::Multi => {}
            RewardMode::UniformSelector => config.ablation.uniform_selector = true,
            RewardMode::NoEntropy => config.ablation.no_entropy = true,
            RewardMode::AllIndependent => config.ablation.all_independent_heads = true,
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "multi" => RewardMode::Multi,
            "uniform_selector" => RewardMode::UniformSelector,
            "no_entropy" => RewardMode::NoEntropy,
            "all_independent" => RewardMode::AllIndependent,
            other => RewardMode::Fixed(
                other
                    .parse()
                    .map_err(|_| Error::Usage(format!("unknown reward mode `{other}`")))?,
            ),
        })
    }
}

impl Serialize for RewardMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for RewardMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A named matrix of reward modes by seeds sharing one base configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub modes: Vec<RewardMode>,
    pub seeds: Vec<u64>,
    /// Greedy evaluation episodes per finished run; 0 skips evaluation.
    #[serde(default)]
    pub eval_episodes: usize,
    #[serde(default)]
    pub base: RunConfig,
}

/// One cell of the matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedRun {
    pub mode: RewardMode,
    pub seed: u64,
    pub dir: PathBuf,
    pub config: RunConfig,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name: must be a non-empty single path component");
        }
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required");
        }
        if self.modes.is_empty() {
            return bad("modes: at least one reward mode is required");
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds: duplicates would share an output directory");
        }
        if self.modes.iter().collect::<HashSet<_>>().len() != self.modes.len() {
            return bad("modes: duplicates would share an output directory");
        }
        for run in self.plan(Path::new(".")) {
            run.config
                .validate()
                .map_err(|e| Error::Config(format!("{}/seed{}: {e}", run.mode, run.seed)))?;
        }
        Ok(())
    }

    /// Every run with its directory under `root/<name>/<mode>/seed<k>`.
    pub fn plan(&self, root: &Path) -> Vec<PlannedRun> {
        let base_dir = root.join(&self.name);
        let mut out = Vec::with_capacity(self.modes.len() * self.seeds.len());
        for &mode in &self.modes {
            for &seed in &self.seeds {
                let mut config = self.base.clone();
                mode.apply(&mut config);
                config.seed = seed;
                out.push(PlannedRun {
                    mode,
                    seed,
                    dir: base_dir.join(mode.name()).join(format!("seed{seed}")),
                    config: config.resolved(),
                });
            }
        }
        out
    }
}

/// Score of one finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub mode: String,
    pub seed: u64,
    pub episodes: usize,
    /// Mean treasures over the last 100 training episodes.
    pub final_treasures: f64,
    /// Greedy evaluation mean, when `eval.json` exists.
    pub eval_treasures: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_treasures: f64,
    pub std_treasures: f64,
    pub eval_mean_treasures: Option<f64>,
    pub eval_std_treasures: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub name: String,
    pub modes: Vec<ModeSummary>,
    pub runs: Vec<RunScore>,
    /// `mode/seed` of every run without usable metrics.
    pub failures: Vec<String>,
}

impl SweepSummary {
    pub fn mode(&self, name: &str) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == name)
    }

    /// Rows of `mode,runs,failed,mean,std,eval_mean,eval_std`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record([
            "mode",
            "runs",
            "failed",
            "mean_treasures",
            "std_treasures",
            "eval_mean",
            "eval_std",
        ])
        .map_err(|e| csv_error(path, e))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.modes {
            w.write_record([
                m.mode.clone(),
                m.runs.to_string(),
                m.failed.to_string(),
                m.mean_treasures.to_string(),
                m.std_treasures.to_string(),
                opt(m.eval_mean_treasures),
                opt(m.eval_std_treasures),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Human-readable `mean ± std` table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<18} {:>6} {:>16} {:>16}\n",
            "mode", "runs", "treasures", "greedy eval"
        );
        for m in &self.modes {
            let eval = match (m.eval_mean_treasures, m.eval_std_treasures) {
                (Some(a), Some(b)) => format!("{a:.2} ± {b:.2}"),
                _ => "-".into(),
            };
            let runs = if m.failed > 0 {
                format!("{}+{}!", m.runs, m.failed)
            } else {
                m.runs.to_string()
            };
            s += &format!(
                "{:<18} {:>6} {:>16} {:>16}\n",
                m.mode,
                runs,
                format!("{:.2} ± {:.2}", m.mean_treasures, m.std_treasures),
                eval
            );
        }
        s
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub const EVAL_FILE: &str = "eval.json";
pub const FINAL_WINDOW: usize = 100;

/// Mean treasures of the last `FINAL_WINDOW` episodes of a finished run.
///
/// A run without `summary.json` aborted or is still going and does not count.
pub fn score_run(dir: &Path) -> Result<(usize, f64)> {
    if !dir.join("summary.json").exists() {
        return Err(Error::Usage(format!("{} did not finish", dir.display())));
    }
    let path = dir.join("metrics.jsonl");
    if !path.exists() {
        return Err(Error::Usage(format!("no metrics at {}", path.display())));
    }
    let episodes: Vec<EpisodeRecord> = read_jsonl(&path)?;
    if episodes.is_empty() {
        return Err(Error::Usage(format!(
            "{} holds no episodes",
            path.display()
        )));
    }
    let tail: Vec<f64> = episodes
        .iter()
        .rev()
        .take(FINAL_WINDOW)
        .map(|e| e.treasures as f64)
        .collect();
    Ok((episodes.len(), mean_std(&tail).0))
}

/// Summary computed only from the files under each planned run directory.
pub fn summarize(spec: &ExperimentSpec, root: &Path) -> Result<SweepSummary> {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut modes = Vec::new();
    for &mode in &spec.modes {
        let mut finals = Vec::new();
        let mut evals = Vec::new();
        let mut failed = 0;
        for run in spec.plan(root).into_iter().filter(|r| r.mode == mode) {
            match score_run(&run.dir) {
                Ok((episodes, score)) => {
                    let eval_path = run.dir.join(EVAL_FILE);
                    let eval = if eval_path.exists() {
                        let text = std::fs::read_to_string(&eval_path)
                            .map_err(|e| Error::io(&eval_path, e))?;
                        let report: EvalReport = serde_json::from_str(&text)?;
                        evals.push(report.mean_treasures);
                        Some(report.mean_treasures)
                    } else {
                        None
                    };
                    finals.push(score);
                    runs.push(RunScore {
                        mode: mode.name(),
                        seed: run.seed,
                        episodes,
                        final_treasures: score,
                        eval_treasures: eval,
                    });
                }
                Err(_) => {
                    failed += 1;
                    failures.push(format!("{mode}/seed{}", run.seed));
                }
            }
        }
        let (mean, std) = mean_std(&finals);
        let (em, es) = if evals.is_empty() {
            (None, None)
        } else {
            let (a, b) = mean_std(&evals);
            (Some(a), Some(b))
        };
        modes.push(ModeSummary {
            mode: mode.name(),
            runs: finals.len(),
            failed,
            mean_treasures: mean,
            std_treasures: std,
            eval_mean_treasures: em,
            eval_std_treasures: es,
        });
    }
    Ok(SweepSummary {
        name: spec.name.clone(),
        modes,
        runs,
        failures,
    })
}

/// Which plot-ready file set to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Curve,
    Heatmap,
    Selector,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curve" => Ok(PlotKind::Curve),
            "heatmap" => Ok(PlotKind::Heatmap),
            "selector" => Ok(PlotKind::Selector),
            other => Err(Error::Usage(format!(
                "unknown plot kind `{other}` (curve, heatmap, selector)"
            ))),
        }
    }
}

fn episodes_of(run_dir: &Path) -> Result<Vec<EpisodeRecord>> {
    let path = run_dir.join("metrics.jsonl");
    if !path.exists() {
        return Err(Error::Usage(format!("no metrics at {}", path.display())));
    }
    read_jsonl(&path)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

/// Writes the requested plot data into `run_dir`; returns the files written.
pub fn plot_data(run_dir: &Path, kind: PlotKind) -> Result<Vec<PathBuf>> {
    match kind {
        PlotKind::Curve => {
            let episodes = episodes_of(run_dir)?;
            let path = run_dir.join("curve.csv");
            let treasures: Vec<f64> = episodes.iter().map(|e| e.treasures as f64).collect();
            let returns: Vec<f64> = episodes.iter().map(|e| e.episode_return).collect();
            let (rt, rr) = (
                running_mean(&treasures, FINAL_WINDOW),
                running_mean(&returns, FINAL_WINDOW),
            );
            let mut w = writer(&path)?;
            w.write_record([
                "episode",
                "env_steps",
                "treasures",
                "mean_treasures",
                "return",
                "mean_return",
            ])
            .map_err(|e| csv_error(&path, e))?;
            for (k, e) in episodes.iter().enumerate() {
                w.write_record([
                    e.episode.to_string(),
                    e.env_steps.to_string(),
                    e.treasures.to_string(),
                    rt[k].to_string(),
                    e.episode_return.to_string(),
                    rr[k].to_string(),
                ])
                .map_err(|e| csv_error(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
        PlotKind::Selector => {
            let episodes = episodes_of(run_dir)?;
            let path = run_dir.join("selector.csv");
            let m = RunConfig::load(run_dir.join("config.toml"))?.heads.len();
            let mut w = writer(&path)?;
            let mut header = vec!["episode".to_string(), "env_steps".into(), "head".into()];
            header.extend((0..m).map(|j| format!("p{j}")));
            w.write_record(&header).map_err(|e| csv_error(&path, e))?;
            for e in &episodes {
                let mut row = vec![
                    e.episode.to_string(),
                    e.env_steps.to_string(),
                    e.head.to_string(),
                ];
                row.extend(e.probabilities.iter().map(f64::to_string));
                w.write_record(&row).map_err(|e| csv_error(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
        PlotKind::Heatmap => {
            // Metrics must exist even though only the counts are read.
            episodes_of(run_dir)?;
            let map_path = run_dir.join("map.txt");
            let map = MapSpec::from_file(&map_path)?;
            let visits_path = run_dir.join("visits.csv");
            let text =
                std::fs::read_to_string(&visits_path).map_err(|e| Error::io(&visits_path, e))?;
            let config = RunConfig::load(run_dir.join("config.toml"))?;
            let n = config.env.n_agents;
            let table = VisitTable::read_csv(&text, n, map.width, map.height, config.zeta)?;
            let mut written = Vec::with_capacity(n);
            for agent in 0..n {
                let path = run_dir.join(format!("heatmap_agent{agent}.csv"));
                let mut w = csv::WriterBuilder::new()
                    .has_headers(false)
                    .from_path(&path)
                    .map_err(|e| csv_error(&path, e))?;
                for row in table.grid(agent).chunks(map.width) {
                    w.write_record(row.iter().map(u64::to_string))
                        .map_err(|e| csv_error(&path, e))?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
            Ok(written)
        }
    }
}
