//! The four reference experiments as ready-made configs.

use std::fmt;
use std::str::FromStr;

use crate::config::{ExperimentConfig, OutputSettings, RunSettings, TrackedProbability};
use crate::learner::LearnerConfig;
use crate::net::{CostModel, Link, NodeCost, NodeId, Topology, TrafficSpec};
use crate::shaping::ShapingConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PresetName {
    Triangle,
    Contention,
    SixNode,
    Braess1,
}

impl PresetName {
    pub const ALL: [PresetName; 4] = [
        PresetName::Triangle,
        PresetName::Contention,
        PresetName::SixNode,
        PresetName::Braess1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Triangle => "triangle",
            PresetName::Contention => "contention",
            PresetName::SixNode => "six_node",
            PresetName::Braess1 => "braess1",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("unknown preset {0:?} (expected triangle, contention, six_node or braess1)")]
pub struct UnknownPreset(pub String);

impl FromStr for PresetName {
    type Err = UnknownPreset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s || p.as_str().replace('_', "-") == s)
            .ok_or_else(|| UnknownPreset(s.to_string()))
    }
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn both_ways(a: usize, b: usize, delay: u32) -> [Link; 2] {
    [Link::new(NodeId(a), NodeId(b), delay), Link::new(NodeId(b), NodeId(a), delay)]
}

/// A, B, C with AB = BC = 1 and AC = 3, all links in both directions; one
/// packet per node per tick to a uniformly chosen other node.
pub fn triangle_network() -> (Topology, TrafficSpec) {
    let links = [both_ways(0, 1, 1), both_ways(0, 2, 3), both_ways(1, 2, 1)].concat();
    let t = Topology::new(labels(&["A", "B", "C"]), links, None, CostModel::LinkDelay);
    (t, TrafficSpec::uniform(3, 1))
}

/// Two one-way links from A to B: `top` (delay 1, capacity 1) and `bottom`
/// (delay 6, capacity 2). A sends two packets per tick to B.
pub fn contention_network() -> (Topology, TrafficSpec) {
    let links = vec![
        Link::new(NodeId(0), NodeId(1), 1).with_capacity(1).with_label("top"),
        Link::new(NodeId(0), NodeId(1), 6).with_capacity(2).with_label("bottom"),
    ];
    let t = Topology::new(labels(&["A", "B"]), links, None, CostModel::LinkDelay);
    (t, TrafficSpec::single(2, NodeId(0), NodeId(1), 2))
}

/// Complete directed graph on A..F, delay 1, unlimited capacity; one packet
/// per node per tick to a uniformly chosen other node.
pub fn six_node_network() -> (Topology, TrafficSpec) {
    let mut links = Vec::new();
    for a in 0..6 {
        for b in (0..6).filter(|&b| b != a) {
            links.push(Link::new(NodeId(a), NodeId(b), 1));
        }
    }
    let t = Topology::new(
        labels(&["A", "B", "C", "D", "E", "F"]),
        links,
        None,
        CostModel::LinkDelay,
    );
    (t, TrafficSpec::uniform(6, 1))
}

const BRAESS_LABELS: [&str; 7] = ["A", "B", "C", "D", "E", "F", "G"];

fn braess_costs() -> Vec<NodeCost> {
    vec![
        NodeCost::ZERO,            // A
        NodeCost::ZERO,            // B
        NodeCost::new(50.0, 1.0),  // C
        NodeCost::new(0.0, 10.0),  // D
        NodeCost::new(0.0, 10.0),  // E
        NodeCost::new(50.0, 1.0),  // F
        NodeCost::new(10.0, 1.0),  // G
    ]
}

fn braess_link(from: &str, to: &str) -> Link {
    let idx = |l: &str| NodeId(BRAESS_LABELS.iter().position(|x| *x == l).expect("label"));
    Link::new(idx(from), idx(to), 1)
}

/// Node-flow network with paths ACDB and AEFB; six packets per tick from A
/// to B. G is present but unconnected.
pub fn braess0_network() -> (Topology, TrafficSpec) {
    let links = ["AC", "AE", "CD", "DB", "EF", "FB"]
        .iter()
        .map(|s| braess_link(&s[..1], &s[1..]))
        .collect();
    let t = Topology::new(labels(&BRAESS_LABELS), links, Some(braess_costs()), CostModel::NodeFlow);
    (t, TrafficSpec::single(7, NodeId(0), NodeId(1), 6))
}

/// [`braess0_network`] plus the links EG and GD, opening the path AEGDB.
pub fn braess1_network() -> (Topology, TrafficSpec) {
    let links = ["AC", "AE", "CD", "DB", "EF", "EG", "FB", "GD"]
        .iter()
        .map(|s| braess_link(&s[..1], &s[1..]))
        .collect();
    let t = Topology::new(labels(&BRAESS_LABELS), links, Some(braess_costs()), CostModel::NodeFlow);
    (t, TrafficSpec::single(7, NodeId(0), NodeId(1), 6))
}

pub fn preset(name: PresetName) -> ExperimentConfig {
    let ((topology, traffic), learner, shaping, steps, tracked) = match name {
        PresetName::Triangle => (
            triangle_network(),
            LearnerConfig::new(0.99, 1e-5),
            ShapingConfig::default(),
            1_000_000,
            vec![TrackedProbability::new("A", "B", "C")],
        ),
        PresetName::Contention => (
            contention_network(),
            LearnerConfig::new(0.99, 1e-7),
            ShapingConfig {
                drop_penalty: 21.0,
                ..Default::default()
            },
            2_000_000,
            vec![TrackedProbability::new("A", "top", "B")],
        ),
        PresetName::SixNode => (
            six_node_network(),
            LearnerConfig::new(0.9, 1e-6),
            ShapingConfig {
                cycle_penalty: -100.0,
                history_length: 2,
                drop_penalty: 0.0,
            },
            4_000_000,
            vec![],
        ),
        PresetName::Braess1 => (
            braess1_network(),
            LearnerConfig::new(0.99, 1e-5),
            ShapingConfig::default(),
            2_000_000,
            vec![
                TrackedProbability::new("A", "C", "B"),
                TrackedProbability::new("E", "F", "B"),
            ],
        ),
    };
    let mut run = RunSettings::new(steps, 1);
    run.tracked = tracked;
    ExperimentConfig {
        name: name.as_str().to_string(),
        topology,
        traffic,
        learner,
        shaping,
        run,
        output: OutputSettings::default(),
    }
}
