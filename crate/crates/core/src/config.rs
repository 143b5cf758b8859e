//! Experiment configuration and its JSON file format.
//!
//! A config file has the top-level keys `network`, `traffic`, `learner`,
//! `shaping`, `run` and `output`; see `docs/config.md` for the schema. Files
//! are resolved into an [`ExperimentConfig`] whose topology and traffic use
//! dense node indices.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::LearnerConfig;
use crate::net::{validate_topology, CostModel, Link, NodeCost, NodeId, Topology, TrafficSpec};
use crate::shaping::ShapingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{location}: {source}")]
    Parse {
        location: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        location: location.into(),
        message: message.into(),
    }
}

/// A `(router, link, destination)` probability to log, by label. `link` is the
/// link's label, or the label of its target node when the link has none.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackedProbability {
    pub router: String,
    pub link: String,
    pub destination: String,
}

impl TrackedProbability {
    pub fn new(router: &str, link: &str, destination: &str) -> Self {
        TrackedProbability {
            router: router.into(),
            link: link.into(),
            destination: destination.into(),
        }
    }

    /// CSV column name, `p[<router>-><link>|dest=<node>]`.
    pub fn column_name(&self) -> String {
        format!("p[{}->{}|dest={}]", self.router, self.link, self.destination)
    }
}

pub const DEFAULT_SAMPLE_EVERY: u64 = 100;
pub const DEFAULT_MA_WINDOW: usize = 1000;

fn default_sample_every() -> u64 {
    DEFAULT_SAMPLE_EVERY
}

fn default_ma_window() -> usize {
    DEFAULT_MA_WINDOW
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub steps: u64,
    pub seed: u64,
    /// One metrics row per this many ticks.
    #[serde(default = "default_sample_every")]
    pub sample_every: u64,
    /// Moving-average window, in metrics rows.
    #[serde(default = "default_ma_window")]
    pub ma_window: usize,
    /// Emit a row for every tick, overriding `sample_every`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub per_tick: bool,
    #[serde(default)]
    pub tracked: Vec<TrackedProbability>,
}

impl RunSettings {
    pub fn new(steps: u64, seed: u64) -> Self {
        RunSettings {
            steps,
            seed,
            sample_every: DEFAULT_SAMPLE_EVERY,
            ma_window: DEFAULT_MA_WINDOW,
            per_tick: false,
            tracked: Vec::new(),
        }
    }

    pub fn effective_sample_every(&self) -> u64 {
        if self.per_tick {
            1
        } else {
            self.sample_every
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<PathBuf>,
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub topology: Topology,
    pub traffic: TrafficSpec,
    pub learner: LearnerConfig,
    pub shaping: ShapingConfig,
    pub run: RunSettings,
    pub output: OutputSettings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let report = validate_topology(&self.topology, &self.traffic);
        if !report.is_ok() {
            return Err(invalid("network", report.to_string()));
        }
        self.learner
            .validate()
            .map_err(|e| invalid("learner", e.to_string()))?;
        self.shaping
            .validate()
            .map_err(|e| invalid("shaping", e.to_string()))?;
        if self.run.steps == 0 {
            return Err(invalid("run.steps", "must be at least 1"));
        }
        if self.run.sample_every == 0 {
            return Err(invalid("run.sample_every", "must be at least 1"));
        }
        if self.run.ma_window == 0 {
            return Err(invalid("run.ma_window", "must be at least 1"));
        }
        for (i, tp) in self.run.tracked.iter().enumerate() {
            self.resolve_tracked(tp)
                .map_err(|m| invalid(format!("run.tracked[{i}]"), m))?;
        }
        Ok(())
    }

    /// Resolves a tracked triple to `(router, slot, destination)`.
    pub fn resolve_tracked(&self, tp: &TrackedProbability) -> Result<(NodeId, usize, NodeId), String> {
        let t = &self.topology;
        let router = t.node_by_label(&tp.router).map_err(|e| e.to_string())?;
        let dest = t.node_by_label(&tp.destination).map_err(|e| e.to_string())?;
        let slot = t
            .slot_by_name(router, &tp.link)
            .ok_or_else(|| format!("router {} has no outgoing link {:?}", tp.router, tp.link))?;
        if router == dest {
            return Err(format!("router {} does not route packets for itself", tp.router));
        }
        let reach = t.reachable_from(router).map_err(|e| e.to_string())?;
        if !reach[dest.0] {
            return Err(format!("{} is unreachable from {}", tp.destination, tp.router));
        }
        Ok((router, slot, dest))
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = serde_json::from_str(s).map_err(|e| ConfigError::Parse {
            location: "config".into(),
            source: e,
        })?;
        let cfg = file.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ConfigFile::from(self)).expect("config serializes")
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    ExperimentConfig::from_json_str(&text).map_err(|e| match e {
        ConfigError::Parse { source, .. } => ConfigError::Parse {
            location: path.display().to_string(),
            source,
        },
        ConfigError::Invalid { location, message } => ConfigError::Invalid {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

// ---- file representation ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    name: String,
    network: NetworkSection,
    traffic: TrafficSection,
    learner: LearnerConfig,
    #[serde(default)]
    shaping: ShapingConfig,
    run: RunSettings,
    #[serde(default)]
    output: OutputSettings,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    nodes: Vec<String>,
    cost_model: CostModel,
    links: Vec<LinkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_costs: Option<BTreeMap<String, NodeCost>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSpec {
    from: String,
    to: String,
    delay: u32,
    #[serde(default)]
    capacity: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    /// Expands to two directed links sharing delay and capacity.
    #[serde(default, skip_serializing_if = "is_false")]
    bidirectional: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficSection {
    sources: Vec<SourceSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceSpec {
    node: String,
    rate: u32,
    destinations: Destinations,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Destinations {
    /// `"uniform"`: every other node with equal weight.
    Named(String),
    Weights(BTreeMap<String, f64>),
}

impl ConfigFile {
    fn resolve(self) -> Result<ExperimentConfig, ConfigError> {
        let labels = self.network.nodes;
        let index = |label: &str, loc: &str| -> Result<NodeId, ConfigError> {
            labels
                .iter()
                .position(|l| l == label)
                .map(NodeId)
                .ok_or_else(|| invalid(loc, format!("unknown node {label:?}")))
        };

        let mut links = Vec::new();
        for (i, spec) in self.network.links.iter().enumerate() {
            let loc = format!("network.links[{i}]");
            let from = index(&spec.from, &loc)?;
            let to = index(&spec.to, &loc)?;
            let forward = Link {
                from,
                to,
                delay: spec.delay,
                capacity: spec.capacity,
                label: spec.label.clone(),
            };
            if spec.bidirectional {
                let back = Link {
                    from: to,
                    to: from,
                    ..forward.clone()
                };
                links.push(forward);
                links.push(back);
            } else {
                links.push(forward);
            }
        }

        let node_costs = match self.network.node_costs {
            None => None,
            Some(map) => {
                let mut costs: Vec<Option<NodeCost>> = vec![None; labels.len()];
                for (label, cost) in map {
                    costs[index(&label, "network.node_costs")?.0] = Some(cost);
                }
                if let Some(missing) = costs.iter().position(Option::is_none) {
                    return Err(invalid(
                        "network.node_costs",
                        format!("node {}: missing node cost", labels[missing]),
                    ));
                }
                Some(costs.into_iter().map(Option::unwrap).collect())
            }
        };

        let n = labels.len();
        let mut traffic = TrafficSpec::silent(n);
        for (i, src) in self.traffic.sources.iter().enumerate() {
            let loc = format!("traffic.sources[{i}]");
            let s = index(&src.node, &loc)?;
            traffic.rates[s.0] = src.rate;
            match &src.destinations {
                Destinations::Named(name) if name == "uniform" => {
                    for d in 0..n {
                        traffic.destinations[s.0][d] = if d == s.0 {
                            0.0
                        } else {
                            1.0 / (n - 1) as f64
                        };
                    }
                }
                Destinations::Named(other) => {
                    return Err(invalid(loc, format!("unknown destination distribution {other:?}")))
                }
                Destinations::Weights(w) => {
                    for (label, &weight) in w {
                        traffic.destinations[s.0][index(label, &loc)?.0] = weight;
                    }
                }
            }
        }

        Ok(ExperimentConfig {
            name: self.name,
            topology: Topology::new(labels, links, node_costs, self.network.cost_model),
            traffic,
            learner: self.learner,
            shaping: self.shaping,
            run: self.run,
            output: self.output,
        })
    }
}

impl From<&ExperimentConfig> for ConfigFile {
    fn from(cfg: &ExperimentConfig) -> Self {
        let t = &cfg.topology;
        let links = t
            .links()
            .iter()
            .map(|l| LinkSpec {
                from: t.label(l.from).to_string(),
                to: t.label(l.to).to_string(),
                delay: l.delay,
                capacity: l.capacity,
                label: l.label.clone(),
                bidirectional: false,
            })
            .collect();
        let node_costs = t.node_costs().map(|costs| {
            costs
                .iter()
                .enumerate()
                .map(|(i, c)| (t.labels()[i].clone(), *c))
                .collect()
        });
        let sources = t
            .nodes()
            .filter(|n| cfg.traffic.rates[n.0] > 0)
            .map(|n| SourceSpec {
                node: t.label(n).to_string(),
                rate: cfg.traffic.rates[n.0],
                destinations: Destinations::Weights(
                    cfg.traffic.destinations[n.0]
                        .iter()
                        .enumerate()
                        .filter(|(_, &w)| w != 0.0)
                        .map(|(d, &w)| (t.labels()[d].clone(), w))
                        .collect(),
                ),
            })
            .collect();
        ConfigFile {
            name: cfg.name.clone(),
            network: NetworkSection {
                nodes: t.labels().to_vec(),
                cost_model: t.cost_model(),
                links,
                node_costs,
            },
            traffic: TrafficSection { sources },
            learner: cfg.learner,
            shaping: cfg.shaping,
            run: cfg.run.clone(),
            output: cfg.output.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{preset, PresetName};

    const TRIANGLE_FILE: &str = r#"{
        "name": "triangle",
        "network": {
            "nodes": ["A", "B", "C"],
            "cost_model": "link_delay",
            "links": [
                {"from": "A", "to": "B", "delay": 1, "bidirectional": true},
                {"from": "A", "to": "C", "delay": 3, "bidirectional": true},
                {"from": "B", "to": "C", "delay": 1, "bidirectional": true}
            ]
        },
        "traffic": {"sources": [
            {"node": "A", "rate": 1, "destinations": "uniform"},
            {"node": "B", "rate": 1, "destinations": "uniform"},
            {"node": "C", "rate": 1, "destinations": "uniform"}
        ]},
        "learner": {"beta": 0.99, "gamma": 1e-5},
        "run": {"steps": 1000000, "seed": 1,
                "tracked": [{"router": "A", "link": "B", "destination": "C"}]}
    }"#;

    #[test]
    fn presets_round_trip() {
        for name in PresetName::ALL {
            let cfg = preset(name);
            let text = cfg.to_json_string();
            let back = ExperimentConfig::from_json_str(&text).unwrap();
            assert_eq!(back, cfg, "{name:?}");
        }
    }

    #[test]
    fn hand_written_file_matches_preset() {
        let cfg = ExperimentConfig::from_json_str(TRIANGLE_FILE).unwrap();
        let p = preset(PresetName::Triangle);
        assert_eq!(cfg.topology, p.topology);
        assert_eq!(cfg.traffic, p.traffic);
        assert_eq!(cfg.learner, p.learner);
        assert_eq!(cfg.run.tracked, p.run.tracked);
    }

    #[test]
    fn beta_one_rejected() {
        let text = TRIANGLE_FILE.replace("\"beta\": 0.99", "\"beta\": 1.0");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        match err {
            ConfigError::Invalid { location, message } => {
                assert_eq!(location, "learner");
                assert!(message.contains("beta"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn negative_delay_rejected() {
        let text = TRIANGLE_FILE.replace("\"delay\": 3", "\"delay\": -3");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        assert!(err.to_string().contains("line"));

        let text = TRIANGLE_FILE.replace("\"delay\": 3", "\"delay\": 0");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().contains("delay must be at least 1"), "{err}");
    }

    #[test]
    fn unknown_labels_and_tracked_entries() {
        let text = TRIANGLE_FILE.replace("\"to\": \"C\", \"delay\": 3", "\"to\": \"Q\", \"delay\": 3");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().starts_with("network.links[1]"), "{err}");

        let text = TRIANGLE_FILE.replace("\"link\": \"B\"", "\"link\": \"Z\"");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().starts_with("run.tracked[0]"), "{err}");
    }

    #[test]
    fn zero_steps_rejected() {
        let text = TRIANGLE_FILE.replace("\"steps\": 1000000", "\"steps\": 0");
        assert!(ExperimentConfig::from_json_str(&text).is_err());
    }

    #[test]
    fn load_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{ not json").unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("bad.json"));
        let err = load_config(dir.path().join("missing.json")).unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));

        let good = dir.path().join("tri.json");
        fs::write(&good, TRIANGLE_FILE).unwrap();
        assert_eq!(load_config(&good).unwrap().name, "triangle");
    }

    #[test]
    fn tracked_column_name() {
        assert_eq!(
            TrackedProbability::new("A", "B", "C").column_name(),
            "p[A->B|dest=C]"
        );
    }
}
