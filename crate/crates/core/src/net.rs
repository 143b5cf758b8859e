//! Network topologies, link and node-cost properties, and traffic generation
//! parameters.
//!
//! A [`Topology`] is an immutable directed graph. The order in which links are
//! declared is significant: [`Topology::outgoing_links`] returns a router's
//! links in declaration order, and that order fixes the column order of every
//! parameter table, eligibility trace and action distribution for the router.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense node index in `0..N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A directed link. `capacity: None` means unlimited.
#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    /// Ticks between placement on the link and arrival at `to`.
    pub delay: u32,
    /// Maximum number of packets that may be placed on the link in one tick.
    pub capacity: Option<u32>,
    /// Optional name, needed to tell apart parallel links between the same pair.
    pub label: Option<String>,
}

impl Link {
    pub fn new(from: NodeId, to: NodeId, delay: u32) -> Self {
        Link {
            from,
            to,
            delay,
            capacity: None,
            label: None,
        }
    }

    pub fn with_capacity(mut self, capacity: u32) -> Self {
        self.capacity = Some(capacity);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

/// Affine per-packet node cost `base + per_flow * x`, where `x` is the number
/// of packets passing through the node in the current tick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub base: f64,
    pub per_flow: f64,
}

impl NodeCost {
    pub const ZERO: NodeCost = NodeCost {
        base: 0.0,
        per_flow: 0.0,
    };

    pub fn new(base: f64, per_flow: f64) -> Self {
        NodeCost { base, per_flow }
    }

    pub fn cost(&self, flow: f64) -> f64 {
        self.base + self.per_flow * flow
    }
}

/// How packets accrue cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Packets queue on links; cost is trip time in ticks.
    LinkDelay,
    /// Packets traverse whole paths within a tick; cost is accrued at nodes
    /// as a function of the per-tick node flow.
    NodeFlow,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown node label {0:?}")]
    UnknownLabel(String),
    #[error("node {to} is unreachable from node {from}")]
    Unreachable { from: NodeId, to: NodeId },
    #[error("operation requires the {0:?} cost model")]
    WrongCostModel(CostModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    labels: Vec<String>,
    links: Vec<Link>,
    node_costs: Option<Vec<NodeCost>>,
    cost_model: CostModel,
    outgoing: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology. Structural problems (dangling links, missing costs,
    /// etc.) are not rejected here; run [`validate_topology`] for that.
    pub fn new(
        labels: Vec<String>,
        links: Vec<Link>,
        node_costs: Option<Vec<NodeCost>>,
        cost_model: CostModel,
    ) -> Self {
        let mut outgoing = vec![Vec::new(); labels.len()];
        for (i, link) in links.iter().enumerate() {
            if let Some(slots) = outgoing.get_mut(link.from.0) {
                if link.to.0 < labels.len() {
                    slots.push(i);
                }
            }
        }
        Topology {
            labels,
            links,
            node_costs,
            cost_model,
            outgoing,
        }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.labels.len()).map(NodeId)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, n: NodeId) -> &str {
        &self.labels[n.0]
    }

    pub fn node_by_label(&self, label: &str) -> Result<NodeId, NetError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(NodeId)
            .ok_or_else(|| NetError::UnknownLabel(label.to_string()))
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, index: usize) -> &Link {
        &self.links[index]
    }

    pub fn node_costs(&self) -> Option<&[NodeCost]> {
        self.node_costs.as_deref()
    }

    pub fn node_cost(&self, n: NodeId) -> NodeCost {
        self.node_costs
            .as_ref()
            .and_then(|c| c.get(n.0).copied())
            .unwrap_or(NodeCost::ZERO)
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost_model
    }

    fn check(&self, n: NodeId) -> Result<(), NetError> {
        if n.0 < self.labels.len() {
            Ok(())
        } else {
            Err(NetError::UnknownNode(n))
        }
    }

    /// Indices (into [`Topology::links`]) of the links leaving `n`, in
    /// declaration order. Position in this list is the link's slot.
    pub fn outgoing_link_indices(&self, n: NodeId) -> Result<&[usize], NetError> {
        self.check(n)?;
        Ok(&self.outgoing[n.0])
    }

    /// Links leaving `n`, in declaration order.
    pub fn outgoing_links(&self, n: NodeId) -> Result<Vec<&Link>, NetError> {
        Ok(self
            .outgoing_link_indices(n)?
            .iter()
            .map(|&i| &self.links[i])
            .collect())
    }

    /// Display name of a link: its label if set, otherwise the target's label.
    pub fn link_name(&self, index: usize) -> &str {
        let link = &self.links[index];
        link.label.as_deref().unwrap_or(&self.labels[link.to.0])
    }

    /// Slot of the outgoing link of `router` named `name` (see [`Topology::link_name`]).
    pub fn slot_by_name(&self, router: NodeId, name: &str) -> Option<usize> {
        self.outgoing.get(router.0)?
            .iter()
            .position(|&i| self.link_name(i) == name)
    }

    /// Nodes reachable from `from` (excluding `from` itself unless it lies on a cycle).
    pub fn reachable_from(&self, from: NodeId) -> Result<Vec<bool>, NetError> {
        self.check(from)?;
        let mut seen = vec![false; self.labels.len()];
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            for &i in &self.outgoing[n.0] {
                let to = self.links[i].to;
                if !seen[to.0] {
                    seen[to.0] = true;
                    queue.push_back(to);
                }
            }
        }
        Ok(seen)
    }

    /// Minimal total link delay over all directed paths from `from` to `to`.
    pub fn shortest_path_delay(&self, from: NodeId, to: NodeId) -> Result<u64, NetError> {
        if self.cost_model != CostModel::LinkDelay {
            return Err(NetError::WrongCostModel(CostModel::LinkDelay));
        }
        self.check(from)?;
        self.check(to)?;
        let mut dist = vec![u64::MAX; self.labels.len()];
        dist[from.0] = 0;
        let mut heap = BinaryHeap::from([Reverse((0u64, from.0))]);
        while let Some(Reverse((d, n))) = heap.pop() {
            if n == to.0 {
                return Ok(d);
            }
            if d > dist[n] {
                continue;
            }
            for &i in &self.outgoing[n] {
                let link = &self.links[i];
                let next = d + u64::from(link.delay);
                if next < dist[link.to.0] {
                    dist[link.to.0] = next;
                    heap.push(Reverse((next, link.to.0)));
                }
            }
        }
        Err(NetError::Unreachable { from, to })
    }
}

/// Per-source packet generation: `rates[n]` packets per tick at node `n`, each
/// with a destination drawn from `destinations[n]` (a probability vector over
/// nodes).
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficSpec {
    pub rates: Vec<u32>,
    pub destinations: Vec<Vec<f64>>,
}

impl TrafficSpec {
    /// No traffic anywhere.
    pub fn silent(nodes: usize) -> Self {
        TrafficSpec {
            rates: vec![0; nodes],
            destinations: vec![vec![0.0; nodes]; nodes],
        }
    }

    /// Every node emits `rate` packets per tick, destinations uniform over the
    /// other nodes.
    pub fn uniform(nodes: usize, rate: u32) -> Self {
        let mut spec = TrafficSpec::silent(nodes);
        for src in 0..nodes {
            spec.rates[src] = rate;
            for dst in 0..nodes {
                if dst != src {
                    spec.destinations[src][dst] = 1.0 / (nodes - 1) as f64;
                }
            }
        }
        spec
    }

    /// A single source sending `rate` packets per tick to one destination.
    pub fn single(nodes: usize, source: NodeId, destination: NodeId, rate: u32) -> Self {
        let mut spec = TrafficSpec::silent(nodes);
        spec.rates[source.0] = rate;
        spec.destinations[source.0][destination.0] = 1.0;
        spec
    }

    /// Destinations `src` can send to (non-zero weight), with `rate > 0`.
    pub fn targets(&self, src: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let active = self.rates.get(src.0).copied().unwrap_or(0) > 0;
        self.destinations
            .get(src.0)
            .into_iter()
            .flatten()
            .enumerate()
            .filter(move |(_, &w)| active && w > 0.0)
            .map(|(i, _)| NodeId(i))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DanglingLink { link: usize },
    SelfLoop { link: usize },
    ZeroDelay { link: usize },
    ZeroCapacity { link: usize },
    DuplicateLabel { label: String },
    NoOutgoingLinks { node: String },
    MissingNodeCost { node: String },
    UnexpectedNodeCosts,
    NegativeNodeCost { node: String },
    BadDistribution { node: String, reason: String },
    UnreachableDestination { from: String, to: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingLink { link } => write!(f, "link {link}: dangling link (unknown endpoint)"),
            Violation::SelfLoop { link } => write!(f, "link {link}: self-loop"),
            Violation::ZeroDelay { link } => write!(f, "link {link}: delay must be at least 1"),
            Violation::ZeroCapacity { link } => write!(f, "link {link}: capacity must be at least 1"),
            Violation::DuplicateLabel { label } => write!(f, "duplicate node label {label:?}"),
            Violation::NoOutgoingLinks { node } => {
                write!(f, "node {node}: has traffic to route but no outgoing links")
            }
            Violation::MissingNodeCost { node } => write!(f, "node {node}: missing node cost"),
            Violation::UnexpectedNodeCosts => {
                write!(f, "node costs given for a link-delay topology")
            }
            Violation::NegativeNodeCost { node } => {
                write!(f, "node {node}: node cost coefficients must be non-negative")
            }
            Violation::BadDistribution { node, reason } => {
                write!(f, "node {node}: bad destination distribution ({reason})")
            }
            Violation::UnreachableDestination { from, to } => {
                write!(f, "unreachable destination {to} from {from}")
            }
        }
    }
}

/// Outcome of [`validate_topology`]; empty means valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

pub fn validate_topology(t: &Topology, traffic: &TrafficSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let n = t.node_count();
    let name = |i: usize| t.labels.get(i).cloned().unwrap_or_else(|| format!("#{i}"));

    let mut seen = HashSet::new();
    for label in &t.labels {
        if !seen.insert(label) {
            violations.push(Violation::DuplicateLabel {
                label: label.clone(),
            });
        }
    }

    for (i, link) in t.links.iter().enumerate() {
        if link.from.0 >= n || link.to.0 >= n {
            violations.push(Violation::DanglingLink { link: i });
            continue;
        }
        if link.from == link.to {
            violations.push(Violation::SelfLoop { link: i });
        }
        if link.delay == 0 {
            violations.push(Violation::ZeroDelay { link: i });
        }
        if link.capacity == Some(0) {
            violations.push(Violation::ZeroCapacity { link: i });
        }
    }

    match (t.cost_model, &t.node_costs) {
        (CostModel::LinkDelay, Some(_)) => violations.push(Violation::UnexpectedNodeCosts),
        (CostModel::LinkDelay, None) => {}
        (CostModel::NodeFlow, costs) => {
            for i in 0..n {
                match costs.as_ref().and_then(|c| c.get(i)) {
                    None => violations.push(Violation::MissingNodeCost { node: name(i) }),
                    Some(c) if !(c.base >= 0.0 && c.per_flow >= 0.0) => {
                        violations.push(Violation::NegativeNodeCost { node: name(i) })
                    }
                    Some(_) => {}
                }
            }
        }
    }

    if traffic.rates.len() != n || traffic.destinations.len() != n {
        violations.push(Violation::BadDistribution {
            node: "*".into(),
            reason: format!("traffic spec covers {} nodes, topology has {n}", traffic.rates.len()),
        });
        return ValidationReport { violations };
    }

    // Nodes that may have to route a packet: sources, and everything reachable
    // from a source on the way to one of its destinations.
    let mut routing_needed: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for src in 0..n {
        let dist = &traffic.destinations[src];
        if dist.len() != n {
            violations.push(Violation::BadDistribution {
                node: name(src),
                reason: format!("expected {n} weights, got {}", dist.len()),
            });
            continue;
        }
        if traffic.rates[src] == 0 {
            continue;
        }
        if dist.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            violations.push(Violation::BadDistribution {
                node: name(src),
                reason: "weights must be finite and non-negative".into(),
            });
            continue;
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            violations.push(Violation::BadDistribution {
                node: name(src),
                reason: format!("weights sum to {sum}"),
            });
        }
        if dist[src] != 0.0 {
            violations.push(Violation::BadDistribution {
                node: name(src),
                reason: "non-zero weight on the source itself".into(),
            });
        }
        let reach = t.reachable_from(NodeId(src)).expect("src in range");
        for dst in 0..n {
            if dst == src || dist[dst] <= 0.0 {
                continue;
            }
            if !reach[dst] {
                violations.push(Violation::UnreachableDestination {
                    from: name(src),
                    to: name(dst),
                });
            }
            routing_needed[src].insert(dst);
            // Any node reachable from src might see a packet for dst.
            for (mid, &r) in reach.iter().enumerate() {
                if r && mid != dst {
                    routing_needed[mid].insert(dst);
                }
            }
        }
    }

    for (node, dests) in routing_needed.iter().enumerate() {
        if !dests.is_empty() && t.outgoing[node].is_empty() {
            violations.push(Violation::NoOutgoingLinks { node: name(node) });
        }
    }

    ValidationReport { violations }
}
