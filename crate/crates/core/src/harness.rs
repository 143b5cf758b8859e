//! Running experiments: CSV emission, θ snapshots, and multi-seed batches.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::metrics::{csv_header, MetricsRecorder, MetricsRow};
use crate::sim::{RunResult, SimError, Simulation, ThetaSnapshot};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("batch needs at least one seed")]
    NoSeeds,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Result of [`run_experiment`]: the engine's result plus what went to CSV.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub result: RunResult,
    pub rows: usize,
    pub last_row: Option<MetricsRow>,
    /// `(column name, final probability)` per tracked triple.
    pub final_probabilities: Vec<(String, f64)>,
}

/// Runs `cfg`, writing the CSV header and one row per sampling interval to
/// `csv`.
pub fn run_experiment(cfg: &ExperimentConfig, csv: &mut impl Write) -> Result<ExperimentReport, HarnessError> {
    let csv_path = cfg.output.csv.clone().unwrap_or_else(|| PathBuf::from("<csv>"));
    let mut sim = Simulation::new(cfg)?;
    let mut recorder = MetricsRecorder::new(cfg)?;
    writeln!(csv, "{}", csv_header(cfg)).map_err(io_err(&csv_path))?;

    let mut rows = 0;
    let mut last_row = None;
    let mut last_stats = None;
    for _ in 0..cfg.run.steps {
        let stats = sim.step()?;
        if let Some(row) = recorder.observe(&sim, &stats) {
            row.write_csv(csv).map_err(io_err(&csv_path))?;
            rows += 1;
            last_row = Some(row);
        }
        last_stats = Some(stats);
    }
    if let Some(stats) = last_stats {
        if let Some(row) = recorder.finish(&sim, &stats) {
            row.write_csv(csv).map_err(io_err(&csv_path))?;
            rows += 1;
            last_row = Some(row);
        }
    }
    csv.flush().map_err(io_err(&csv_path))?;

    let final_probabilities = cfg
        .run
        .tracked
        .iter()
        .map(|tp| {
            let (r, slot, y) = cfg.resolve_tracked(tp).expect("validated");
            (tp.column_name(), sim.probability(r, slot, y).expect("validated"))
        })
        .collect();
    Ok(ExperimentReport {
        result: crate::sim::RunResult {
            steps: sim.tick_index(),
            running_mean: sim.running_mean(),
            totals: sim.totals(),
            theta: sim.theta_snapshot(),
        },
        rows,
        last_row,
        final_probabilities,
    })
}

pub fn theta_json(theta: &ThetaSnapshot) -> String {
    serde_json::to_string_pretty(theta).expect("snapshot serializes")
}

/// Runs `cfg` writing the CSV and θ snapshot to the paths in `cfg.output`
/// (the CSV goes nowhere when unset).
pub fn run_experiment_to_files(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let report = match &cfg.output.csv {
        Some(path) => {
            create_parent(path)?;
            let file = File::create(path).map_err(io_err(path))?;
            run_experiment(cfg, &mut BufWriter::new(file))?
        }
        None => run_experiment(cfg, &mut io::sink())?,
    };
    if let Some(path) = &cfg.output.theta {
        create_parent(path)?;
        fs::write(path, theta_json(&report.result.theta)).map_err(io_err(path))?;
    }
    Ok(report)
}

fn create_parent(path: &Path) -> Result<(), HarnessError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

/// Which reward stream a convergence threshold is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardComponent {
    Underlying,
    Total,
}

/// "Converged" means the trailing `window`-tick mean of the chosen reward
/// component has reached `threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceCriterion {
    pub threshold: f64,
    pub window: u64,
    pub component: RewardComponent,
}

/// Trailing-window tracker of one reward component.
#[derive(Clone, Debug)]
pub struct WindowedReward {
    criterion: ConvergenceCriterion,
    ring: Vec<f64>,
    next: usize,
    filled: bool,
    sum: f64,
    first_hit: Option<u64>,
}

impl WindowedReward {
    pub fn new(criterion: ConvergenceCriterion) -> Self {
        assert!(criterion.window > 0);
        WindowedReward {
            criterion,
            ring: vec![0.0; criterion.window as usize],
            next: 0,
            filled: false,
            sum: 0.0,
            first_hit: None,
        }
    }

    pub fn push(&mut self, tick: u64, underlying: f64, total: f64) {
        let v = match self.criterion.component {
            RewardComponent::Underlying => underlying,
            RewardComponent::Total => total,
        };
        self.sum += v - self.ring[self.next];
        self.ring[self.next] = v;
        self.next = (self.next + 1) % self.ring.len();
        if self.next == 0 {
            self.filled = true;
            // re-sum once per window to keep rounding from accumulating
            self.sum = self.ring.iter().sum();
        }
        if self.first_hit.is_none() && self.filled && self.mean() >= self.criterion.threshold {
            self.first_hit = Some(tick + 1);
        }
    }

    /// Mean over the values seen, up to the last `window`.
    pub fn mean(&self) -> f64 {
        let n = if self.filled { self.ring.len() } else { self.next };
        if n == 0 {
            0.0
        } else {
            self.sum / n as f64
        }
    }

    /// Ticks elapsed when the threshold was first met.
    pub fn first_hit(&self) -> Option<u64> {
        self.first_hit
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub running_mean: f64,
    /// Mean of the criterion's reward component over the final window.
    pub final_window_mean: f64,
    pub ticks_to_threshold: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchSummary {
    pub name: String,
    pub criterion: ConvergenceCriterion,
    pub seeds: Vec<SeedSummary>,
    /// `None` when at least half the seeds never met the threshold.
    pub median_ticks_to_threshold: Option<f64>,
    pub mean_final_reward: f64,
}

/// Median with missing values ranked above every present one.
pub fn censored_median(values: &[Option<u64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<u64> = values.iter().map(|x| x.unwrap_or(u64::MAX)).collect();
    v.sort_unstable();
    let n = v.len();
    let (a, b) = if n % 2 == 1 {
        (v[n / 2], v[n / 2])
    } else {
        (v[n / 2 - 1], v[n / 2])
    };
    if b == u64::MAX {
        return None;
    }
    Some((a as f64 + b as f64) / 2.0)
}

/// One run per seed, in parallel. When `csv_dir` is set each run writes
/// `<name>-seed<seed>.csv` there.
pub fn batch(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    criterion: ConvergenceCriterion,
    csv_dir: Option<&Path>,
) -> Result<BatchSummary, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::NoSeeds);
    }
    let per_seed: Vec<SeedSummary> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = cfg.clone();
            cfg.run.seed = seed;
            let mut window = WindowedReward::new(criterion);
            let mut sim = Simulation::new(&cfg)?;
            let mut recorder = MetricsRecorder::new(&cfg)?;
            let mut writer = match csv_dir {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(io_err(dir))?;
                    let path = dir.join(format!("{}-seed{seed}.csv", cfg.name));
                    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
                    writeln!(w, "{}", csv_header(&cfg)).map_err(io_err(&path))?;
                    Some((w, path))
                }
                None => None,
            };
            let mut last = None;
            for _ in 0..cfg.run.steps {
                let stats = sim.step()?;
                window.push(stats.tick, stats.reward.underlying, stats.reward.total);
                if let Some(row) = recorder.observe(&sim, &stats) {
                    if let Some((w, path)) = writer.as_mut() {
                        row.write_csv(w).map_err(io_err(path))?;
                    }
                }
                last = Some(stats);
            }
            if let (Some((w, path)), Some(stats)) = (writer.as_mut(), last) {
                if let Some(row) = recorder.finish(&sim, &stats) {
                    row.write_csv(w).map_err(io_err(path))?;
                }
                w.flush().map_err(io_err(path))?;
            }
            Ok(SeedSummary {
                seed,
                running_mean: sim.running_mean(),
                final_window_mean: window.mean(),
                ticks_to_threshold: window.first_hit(),
            })
        })
        .collect::<Result<_, HarnessError>>()?;

    let hits: Vec<_> = per_seed.iter().map(|s| s.ticks_to_threshold).collect();
    let mean_final_reward = per_seed.iter().map(|s| s.final_window_mean).sum::<f64>() / per_seed.len() as f64;
    Ok(BatchSummary {
        name: cfg.name.clone(),
        criterion,
        median_ticks_to_threshold: censored_median(&hits),
        mean_final_reward,
        seeds: per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{preset, PresetName};

    #[test]
    fn median_handles_censoring() {
        assert_eq!(censored_median(&[Some(3), Some(1), Some(2)]), Some(2.0));
        assert_eq!(censored_median(&[Some(4), Some(1), Some(2), Some(3)]), Some(2.5));
        assert_eq!(censored_median(&[Some(5), None, Some(1)]), Some(5.0));
        assert_eq!(censored_median(&[None, None, Some(1)]), None);
        assert_eq!(censored_median(&[]), None);
    }

    #[test]
    fn windowed_reward_hits() {
        let crit = ConvergenceCriterion {
            threshold: -2.0,
            window: 4,
            component: RewardComponent::Underlying,
        };
        let mut w = WindowedReward::new(crit);
        for (t, r) in [-8.0, -4.0, -1.0, -1.0, -1.0, -1.0].into_iter().enumerate() {
            w.push(t as u64, r, r - 100.0);
        }
        // windows: [-8,-4,-1,-1] mean -3.5; [-4,-1,-1,-1] -1.75 at tick 4
        assert_eq!(w.first_hit(), Some(5));
        assert_eq!(w.mean(), -1.0);
    }

    #[test]
    fn empty_seed_list_rejected() {
        let crit = ConvergenceCriterion {
            threshold: 0.0,
            window: 10,
            component: RewardComponent::Total,
        };
        assert!(matches!(
            batch(&preset(PresetName::Triangle), &[], crit, None),
            Err(HarnessError::NoSeeds)
        ));
    }

    #[test]
    fn single_seed_batch_matches_run() {
        let mut cfg = preset(PresetName::Contention);
        cfg.run.steps = 5_000;
        cfg.run.seed = 17;
        let crit = ConvergenceCriterion {
            threshold: -30.0,
            window: 100,
            component: RewardComponent::Total,
        };
        let summary = batch(&cfg, &[17], crit, None).unwrap();
        let report = run_experiment(&cfg, &mut io::sink()).unwrap();
        assert_eq!(summary.seeds.len(), 1);
        assert_eq!(summary.seeds[0].running_mean, report.result.running_mean);
        assert_eq!(summary.mean_final_reward, summary.seeds[0].final_window_mean);
        assert_eq!(
            summary.median_ticks_to_threshold,
            summary.seeds[0].ticks_to_threshold.map(|t| t as f64)
        );
    }

    #[test]
    fn row_count_is_ceiling() {
        for (steps, every) in [(100, 100), (150, 100), (100, 7), (1, 100)] {
            let mut cfg = preset(PresetName::Triangle);
            cfg.run.steps = steps;
            cfg.run.sample_every = every;
            let mut out = Vec::new();
            let report = run_experiment(&cfg, &mut out).unwrap();
            let expected = steps.div_ceil(every) as usize;
            assert_eq!(report.rows, expected);
            assert_eq!(String::from_utf8(out).unwrap().lines().count(), expected + 1);
        }
    }
}
