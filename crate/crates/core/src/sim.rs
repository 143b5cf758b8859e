//! The discrete-time simulation loop.
//!
//! Two engine modes share the learner plumbing:
//!
//! * link-delay mode: packets sit on links for `delay` ticks; reward is the
//!   negated sum of trip times of packets delivered this tick;
//! * node-flow mode: every packet generated in a tick walks its whole path
//!   within the tick; reward is the negated sum of node costs, each node
//!   charged at that tick's flow through it.
//!
//! Every router sees the same global reward each tick.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::learner::{apply_reward, begin_tick_accumulate, EligibilityTrace, LearnerConfig, LearnerError, RewardTiming, RunningAverageReward};
use crate::net::{CostModel, NodeId, Topology, TrafficSpec};
use crate::policy::{gradient_from_probs, softmax_into, ParamTable, PolicyError};
use crate::rng::{inverse_cdf, RandomStream};
use crate::shaping::{detect_cycle, shaping_reward, ShapingConfig, VisitHistory};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("operation requires the {0:?} cost model")]
    WrongCostModel(CostModel),
    #[error("node {node} must route a packet but has no outgoing links")]
    NoRoute { node: NodeId },
    #[error("packet {packet} visited more than {limit} nodes in one tick")]
    PathTooLong { packet: u64, limit: usize },
    #[error("invariant violated at tick {tick}: {what}")]
    Invariant { tick: u64, what: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub birth_tick: u64,
    pub history: VisitHistory,
}

impl Packet {
    pub fn new(id: u64, source: NodeId, destination: NodeId, birth_tick: u64, history_length: usize) -> Self {
        Packet {
            id,
            source,
            destination,
            birth_tick,
            history: VisitHistory::starting_at(history_length, source),
        }
    }

    pub fn trip_time(&self, arrival_tick: u64) -> u64 {
        arrival_tick - self.birth_tick
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InTransit {
    pub packet: Packet,
    /// Index into the topology's link list.
    pub link: usize,
    pub remaining: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TickReward {
    pub underlying: f64,
    pub shaping: f64,
    pub total: f64,
}

impl TickReward {
    pub fn new(underlying: f64, shaping: f64) -> Self {
        TickReward {
            underlying,
            shaping,
            total: underlying + shaping,
        }
    }
}

/// Cumulative packet counts since tick 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub cycles: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TickStats {
    pub tick: u64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub cycles_detected: u64,
    pub in_flight: u64,
    pub reward: TickReward,
    pub totals: Totals,
}

impl TickStats {
    /// `generated == delivered + dropped + in_flight`, cumulatively.
    pub fn conserves_packets(&self) -> bool {
        self.totals.generated == self.totals.delivered + self.totals.dropped + self.in_flight
    }
}

/// Router label -> destination label -> logits in link-slot order.
pub type ThetaSnapshot = BTreeMap<String, BTreeMap<String, Vec<f64>>>;

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub steps: u64,
    pub running_mean: f64,
    pub totals: Totals,
    pub theta: ThetaSnapshot,
}

#[derive(Clone, Debug)]
struct Router {
    table: ParamTable,
    trace: EligibilityTrace,
    /// Link indices, in slot order.
    links: Vec<usize>,
    /// Destinations of this tick's decisions, and their row gradients
    /// (flattened, `links.len()` per decision).
    pending_dest: Vec<NodeId>,
    pending_grad: Vec<f64>,
}

impl Router {
    fn learn(&mut self, cfg: &LearnerConfig, step: f64, reward: f64) -> Result<(), LearnerError> {
        let width = self.links.len();
        let grads = self
            .pending_dest
            .iter()
            .copied()
            .zip(self.pending_grad.chunks_exact(width));
        match cfg.reward_timing {
            RewardTiming::AfterDecisions => {
                begin_tick_accumulate(&mut self.trace, cfg, grads)?;
                apply_reward(&mut self.table, &self.trace, step, reward)?;
            }
            RewardTiming::BeforeDecisions => {
                apply_reward(&mut self.table, &self.trace, step, reward)?;
                begin_tick_accumulate(&mut self.trace, cfg, grads)?;
            }
        }
        self.pending_dest.clear();
        self.pending_grad.clear();
        Ok(())
    }
}

/// One simulation instance. Strictly single-threaded and a deterministic
/// function of its config and seed.
#[derive(Clone, Debug)]
pub struct Simulation {
    topology: Topology,
    traffic: TrafficSpec,
    learner: LearnerConfig,
    shaping: ShapingConfig,
    learning: bool,
    tick: u64,
    routers: Vec<Option<Router>>,
    in_transit: Vec<InTransit>,
    rng: RandomStream,
    next_packet_id: u64,
    totals: Totals,
    running: RunningAverageReward,
    to_route: Vec<(NodeId, Packet)>,
    placements: Vec<u32>,
    flows: Vec<u32>,
    paths: Vec<Vec<NodeId>>,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let t = &cfg.topology;
        let routers = t
            .nodes()
            .map(|n| {
                ParamTable::for_router(t, n).map(|table| Router {
                    trace: EligibilityTrace::shaped_like(&table),
                    links: t.outgoing_link_indices(n).expect("node exists").to_vec(),
                    table,
                    pending_dest: Vec::new(),
                    pending_grad: Vec::new(),
                })
            })
            .collect();
        Ok(Simulation {
            topology: t.clone(),
            traffic: cfg.traffic.clone(),
            learner: cfg.learner,
            shaping: cfg.shaping,
            learning: true,
            tick: 0,
            routers,
            in_transit: Vec::new(),
            rng: RandomStream::seeded(cfg.run.seed),
            next_packet_id: 0,
            totals: Totals::default(),
            running: RunningAverageReward::default(),
            to_route: Vec::new(),
            placements: vec![0; t.links().len()],
            flows: vec![0; t.node_count()],
            paths: Vec::new(),
        })
    }

    /// Index of the next tick to execute.
    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    pub fn running_mean(&self) -> f64 {
        self.running.mean()
    }

    pub fn in_transit(&self) -> &[InTransit] {
        &self.in_transit
    }

    /// Stops (or resumes) parameter and trace updates; routing continues.
    pub fn set_learning(&mut self, on: bool) {
        self.learning = on;
    }

    pub fn table(&self, router: NodeId) -> Option<&ParamTable> {
        self.routers.get(router.0)?.as_ref().map(|r| &r.table)
    }

    pub fn table_mut(&mut self, router: NodeId) -> Option<&mut ParamTable> {
        self.routers.get_mut(router.0)?.as_mut().map(|r| &mut r.table)
    }

    pub fn trace(&self, router: NodeId) -> Option<&EligibilityTrace> {
        self.routers.get(router.0)?.as_ref().map(|r| &r.trace)
    }

    /// Current probability that `router` sends a packet for `destination` on
    /// link slot `slot`.
    pub fn probability(&self, router: NodeId, slot: usize, destination: NodeId) -> Result<f64, SimError> {
        let r = self
            .routers
            .get(router.0)
            .and_then(Option::as_ref)
            .ok_or(SimError::NoRoute { node: router })?;
        let row = r.table.row(destination)?;
        if slot >= row.len() {
            return Err(PolicyError::InvalidSlot {
                slot,
                links: row.len(),
            }
            .into());
        }
        let mut probs = [0.0; 64];
        let probs = &mut probs[..row.len()];
        softmax_into(row, probs);
        Ok(probs[slot])
    }

    pub fn theta_snapshot(&self) -> ThetaSnapshot {
        let t = &self.topology;
        self.routers
            .iter()
            .flatten()
            .map(|r| {
                let rows = r
                    .table
                    .destinations()
                    .iter()
                    .map(|&y| (t.label(y).to_string(), r.table.row(y).expect("row exists").to_vec()))
                    .collect();
                (t.label(r.table.router()).to_string(), rows)
            })
            .collect()
    }

    /// Runs one tick in the topology's engine mode.
    pub fn step(&mut self) -> Result<TickStats, SimError> {
        match self.topology.cost_model() {
            CostModel::LinkDelay => self.tick_link_delay(),
            CostModel::NodeFlow => self.tick_node_flow(),
        }
    }

    fn new_packet(&mut self, source: NodeId) -> Packet {
        let weights = &self.traffic.destinations[source.0];
        let dest = NodeId(inverse_cdf(weights, self.rng.uniform()));
        let p = Packet::new(self.next_packet_id, source, dest, self.tick, self.shaping.history_length);
        self.next_packet_id += 1;
        p
    }

    /// Samples a link for `dest` at `node` and records the decision's
    /// gradient. Returns the chosen link index.
    fn decide(&mut self, node: NodeId, dest: NodeId) -> Result<usize, SimError> {
        let router = self.routers[node.0].as_mut().ok_or(SimError::NoRoute { node })?;
        let width = router.links.len();
        let row = router.table.row(dest)?;
        let start = router.pending_grad.len();
        router.pending_grad.resize(start + width, 0.0);
        let probs = &mut router.pending_grad[start..];
        softmax_into(row, probs);
        let slot = inverse_cdf(probs, self.rng.uniform());
        gradient_from_probs(probs, slot);
        router.pending_dest.push(dest);
        Ok(router.links[slot])
    }

    fn finish_tick(&mut self, mut stats: TickStats) -> Result<TickStats, SimError> {
        let reward = TickReward::new(
            stats.reward.underlying,
            shaping_reward(stats.cycles_detected, stats.dropped, &self.shaping),
        );
        if reward.total != reward.underlying + reward.shaping {
            return Err(self.invariant("reward components do not sum"));
        }
        stats.reward = reward;

        let step = self.learner.step_size(self.tick);
        for router in self.routers.iter_mut().flatten() {
            if self.learning {
                router.learn(&self.learner, step, reward.total)?;
            } else {
                router.pending_dest.clear();
                router.pending_grad.clear();
            }
        }
        self.running.observe(reward.total);

        self.totals.generated += stats.generated;
        self.totals.delivered += stats.delivered;
        self.totals.dropped += stats.dropped;
        self.totals.cycles += stats.cycles_detected;
        stats.in_flight = self.in_transit.len() as u64;
        stats.totals = self.totals;
        if !stats.conserves_packets() {
            return Err(self.invariant("generated != delivered + dropped + in_flight"));
        }
        self.tick += 1;
        Ok(stats)
    }

    fn invariant(&self, what: &str) -> SimError {
        SimError::Invariant {
            tick: self.tick,
            what: what.to_string(),
        }
    }

    /// Link-delay tick. Phases, in order: advance in-transit packets; deliver
    /// arrivals at their destination; generate new traffic; route every
    /// packet needing a decision (by node id, then packet id), dropping
    /// placements beyond link capacity; learn from the tick's reward.
    pub fn tick_link_delay(&mut self) -> Result<TickStats, SimError> {
        if self.topology.cost_model() != CostModel::LinkDelay {
            return Err(SimError::WrongCostModel(CostModel::LinkDelay));
        }
        let now = self.tick;
        let mut stats = TickStats {
            tick: now,
            ..Default::default()
        };
        let mut underlying = 0.0;
        let mut to_route = std::mem::take(&mut self.to_route);

        // 1-2. advance and deliver
        let mut still = Vec::with_capacity(self.in_transit.len());
        for mut it in self.in_transit.drain(..) {
            it.remaining -= 1;
            if it.remaining > 0 {
                still.push(it);
                continue;
            }
            let at = self.topology.link(it.link).to;
            let mut packet = it.packet;
            if at == packet.destination {
                stats.delivered += 1;
                underlying -= packet.trip_time(now) as f64;
            } else {
                if detect_cycle(&mut packet, at) {
                    stats.cycles_detected += 1;
                }
                to_route.push((at, packet));
            }
        }
        self.in_transit = still;

        // 3. generate
        for src in 0..self.topology.node_count() {
            for _ in 0..self.traffic.rates[src] {
                let p = self.new_packet(NodeId(src));
                to_route.push((NodeId(src), p));
                stats.generated += 1;
            }
        }

        // 4. route
        to_route.sort_by_key(|(node, p)| (*node, p.id));
        self.placements.iter_mut().for_each(|c| *c = 0);
        for (node, packet) in to_route.drain(..) {
            let link = self.decide(node, packet.destination)?;
            let l = self.topology.link(link);
            let placed = &mut self.placements[link];
            if l.capacity.is_some_and(|cap| *placed >= cap) {
                stats.dropped += 1;
                continue;
            }
            *placed += 1;
            self.in_transit.push(InTransit {
                packet,
                link,
                remaining: l.delay,
            });
        }
        self.to_route = to_route;

        // 5-6. learn and report
        stats.reward.underlying = underlying;
        self.finish_tick(stats)
    }

    /// Node-flow tick: every packet generated this tick walks source to
    /// destination, one sampled decision per hop; each node then charges
    /// every packet through it `cost(x)`, `x` being the node's flow this tick.
    pub fn tick_node_flow(&mut self) -> Result<TickStats, SimError> {
        if self.topology.cost_model() != CostModel::NodeFlow {
            return Err(SimError::WrongCostModel(CostModel::NodeFlow));
        }
        let now = self.tick;
        let mut stats = TickStats {
            tick: now,
            ..Default::default()
        };
        let limit = self.topology.node_count();

        let mut packets = Vec::new();
        for src in 0..self.topology.node_count() {
            for _ in 0..self.traffic.rates[src] {
                packets.push(self.new_packet(NodeId(src)));
                stats.generated += 1;
            }
        }

        let mut paths = std::mem::take(&mut self.paths);
        paths.resize_with(packets.len(), Vec::new);
        for (packet, path) in packets.iter_mut().zip(paths.iter_mut()) {
            path.clear();
            path.push(packet.source);
            let mut at = packet.source;
            while at != packet.destination {
                let link = self.decide(at, packet.destination)?;
                at = self.topology.link(link).to;
                if detect_cycle(packet, at) {
                    stats.cycles_detected += 1;
                }
                path.push(at);
                if path.len() > limit {
                    return Err(SimError::PathTooLong {
                        packet: packet.id,
                        limit,
                    });
                }
            }
        }

        self.flows.iter_mut().for_each(|f| *f = 0);
        for path in &paths[..packets.len()] {
            for n in path {
                self.flows[n.0] += 1;
            }
        }
        let mut total_cost = 0.0;
        for path in &paths[..packets.len()] {
            for n in path {
                total_cost += self.topology.node_cost(*n).cost(f64::from(self.flows[n.0]));
            }
        }
        self.paths = paths;

        stats.delivered = packets.len() as u64;
        stats.reward.underlying = -total_cost;
        self.finish_tick(stats)
    }
}

/// Runs `cfg.run.steps` ticks, handing each tick's stats to `observe`.
pub fn run<F>(cfg: &ExperimentConfig, mut observe: F) -> Result<RunResult, SimError>
where
    F: FnMut(&Simulation, &TickStats),
{
    let mut sim = Simulation::new(cfg)?;
    for _ in 0..cfg.run.steps {
        let stats = sim.step()?;
        observe(&sim, &stats);
    }
    Ok(RunResult {
        steps: sim.tick_index(),
        running_mean: sim.running_mean(),
        totals: sim.totals(),
        theta: sim.theta_snapshot(),
    })
}
