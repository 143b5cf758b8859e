//! Sampled metrics rows and their CSV encoding.
//!
//! Each row summarises one sampling interval of `sample_every` ticks (the
//! last interval may be shorter). The reward columns are interval means;
//! `reward_ma` is the mean of the last `ma_window` rows' `reward_total`;
//! `running_mean` is the mean reward over every tick so far; probabilities
//! are read at the end of the interval; the counters are cumulative.
//!
//! Header: `tick,reward_total,reward_underlying,reward_shaping,reward_ma,running_mean,<prob columns>,delivered,dropped,cycles`

use std::collections::VecDeque;
use std::io::{self, Write};

use crate::config::ExperimentConfig;
use crate::net::NodeId;
use crate::sim::{SimError, Simulation, TickStats};

pub const LEADING_COLUMNS: [&str; 6] = [
    "tick",
    "reward_total",
    "reward_underlying",
    "reward_shaping",
    "reward_ma",
    "running_mean",
];
pub const TRAILING_COLUMNS: [&str; 3] = ["delivered", "dropped", "cycles"];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub tick: u64,
    pub reward_total: f64,
    pub reward_underlying: f64,
    pub reward_shaping: f64,
    pub reward_ma: f64,
    pub running_mean: f64,
    pub probabilities: Vec<f64>,
    pub delivered: u64,
    pub dropped: u64,
    pub cycles: u64,
}

impl MetricsRow {
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        write!(
            w,
            "{},{},{},{},{},{}",
            self.tick,
            self.reward_total,
            self.reward_underlying,
            self.reward_shaping,
            self.reward_ma,
            self.running_mean
        )?;
        for p in &self.probabilities {
            write!(w, ",{p}")?;
        }
        writeln!(w, ",{},{},{}", self.delivered, self.dropped, self.cycles)
    }
}

pub fn csv_header(cfg: &ExperimentConfig) -> String {
    LEADING_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(cfg.run.tracked.iter().map(|t| t.column_name()))
        .chain(TRAILING_COLUMNS.iter().map(|s| s.to_string()))
        .collect::<Vec<_>>()
        .join(",")
}

/// Sliding mean over the last `window` values. The mean is recomputed by
/// summing the window oldest-first, so anyone re-summing the same values in
/// the same order gets the same bits.
#[derive(Clone, Debug)]
pub struct MovingAverage {
    window: usize,
    values: VecDeque<f64>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "moving-average window must be positive");
        MovingAverage {
            window,
            values: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, v: f64) -> f64 {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(v);
        self.mean()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct IntervalSums {
    ticks: u64,
    total: f64,
    underlying: f64,
    shaping: f64,
}

/// Turns the per-tick stream into [`MetricsRow`]s.
#[derive(Clone, Debug)]
pub struct MetricsRecorder {
    sample_every: u64,
    tracked: Vec<(NodeId, usize, NodeId)>,
    ma: MovingAverage,
    acc: IntervalSums,
}

impl MetricsRecorder {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, SimError> {
        let tracked = cfg
            .run
            .tracked
            .iter()
            .map(|tp| {
                cfg.resolve_tracked(tp).map_err(|m| {
                    SimError::Config(crate::config::ConfigError::Invalid {
                        location: "run.tracked".into(),
                        message: m,
                    })
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(MetricsRecorder {
            sample_every: cfg.run.effective_sample_every(),
            tracked,
            ma: MovingAverage::new(cfg.run.ma_window),
            acc: IntervalSums::default(),
        })
    }

    /// Feeds one tick; returns a row when the tick closes an interval.
    pub fn observe(&mut self, sim: &Simulation, stats: &TickStats) -> Option<MetricsRow> {
        self.acc.ticks += 1;
        self.acc.total += stats.reward.total;
        self.acc.underlying += stats.reward.underlying;
        self.acc.shaping += stats.reward.shaping;
        if (stats.tick + 1).is_multiple_of(self.sample_every) {
            Some(self.emit(sim, stats))
        } else {
            None
        }
    }

    /// Closes a trailing partial interval, if any.
    pub fn finish(&mut self, sim: &Simulation, last: &TickStats) -> Option<MetricsRow> {
        (self.acc.ticks > 0).then(|| self.emit(sim, last))
    }

    fn emit(&mut self, sim: &Simulation, stats: &TickStats) -> MetricsRow {
        let n = self.acc.ticks as f64;
        let reward_total = self.acc.total / n;
        let row = MetricsRow {
            tick: stats.tick,
            reward_total,
            reward_underlying: self.acc.underlying / n,
            reward_shaping: self.acc.shaping / n,
            reward_ma: self.ma.push(reward_total),
            running_mean: sim.running_mean(),
            probabilities: self
                .tracked
                .iter()
                .map(|&(r, slot, y)| sim.probability(r, slot, y).expect("tracked entry resolved"))
                .collect(),
            delivered: stats.totals.delivered,
            dropped: stats.totals.dropped,
            cycles: stats.totals.cycles,
        };
        self.acc = IntervalSums::default();
        row
    }
}
