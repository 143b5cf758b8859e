//! Reward shaping: penalties for routing cycles and dropped packets, added to
//! the underlying trip-time / node-cost reward.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::NodeId;
use crate::sim::Packet;

#[derive(Debug, Error, PartialEq)]
pub enum ShapingError {
    #[error("cycle penalty must be <= 0, got {0}")]
    PositiveCyclePenalty(f64),
    #[error("drop penalty must be >= 0, got {0}")]
    NegativeDropPenalty(f64),
    #[error("history length must be at least 1")]
    EmptyHistory,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapingConfig {
    /// Added once per detected cycle (non-positive).
    pub cycle_penalty: f64,
    /// Number of recently visited nodes a packet remembers.
    pub history_length: usize,
    /// Subtracted once per dropped packet (non-negative).
    pub drop_penalty: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            cycle_penalty: 0.0,
            history_length: 2,
            drop_penalty: 0.0,
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<(), ShapingError> {
        if !(self.cycle_penalty <= 0.0) {
            return Err(ShapingError::PositiveCyclePenalty(self.cycle_penalty));
        }
        if !(self.drop_penalty >= 0.0) {
            return Err(ShapingError::NegativeDropPenalty(self.drop_penalty));
        }
        if self.history_length == 0 {
            return Err(ShapingError::EmptyHistory);
        }
        Ok(())
    }
}

/// Bounded FIFO of the last `H` nodes a packet visited, oldest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisitHistory {
    nodes: VecDeque<NodeId>,
    limit: usize,
}

impl VisitHistory {
    pub fn new(limit: usize) -> Self {
        VisitHistory {
            nodes: VecDeque::with_capacity(limit),
            limit,
        }
    }

    pub fn starting_at(limit: usize, origin: NodeId) -> Self {
        let mut h = VisitHistory::new(limit);
        h.push(origin);
        h
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.nodes.contains(&n)
    }

    pub fn push(&mut self, n: NodeId) {
        if self.nodes.len() == self.limit {
            self.nodes.pop_front();
        }
        self.nodes.push_back(n);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }
}

/// True iff `arriving_at` is among the packet's remembered nodes. The node is
/// then pushed onto the history either way; the history is never reset.
pub fn detect_cycle(p: &mut Packet, arriving_at: NodeId) -> bool {
    let seen = p.history.contains(arriving_at);
    p.history.push(arriving_at);
    seen
}

pub fn shaping_reward(cycles: u64, drops: u64, cfg: &ShapingConfig) -> f64 {
    cycles as f64 * cfg.cycle_penalty - drops as f64 * cfg.drop_penalty
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: NodeId = NodeId(0);
    const B: NodeId = NodeId(1);
    const C: NodeId = NodeId(2);

    fn packet_with_history(h: &[NodeId]) -> Packet {
        let mut p = Packet::new(0, h[0], NodeId(9), 0, 2);
        for &n in &h[1..] {
            p.history.push(n);
        }
        p
    }

    #[test]
    fn detection_examples() {
        let mut p = packet_with_history(&[A, B]);
        assert!(!detect_cycle(&mut p, C));

        let mut p = packet_with_history(&[A, B]);
        assert!(detect_cycle(&mut p, A));
        assert_eq!(p.history.iter().collect::<Vec<_>>(), [B, A]);
    }

    #[test]
    fn three_cycle_evades_window_of_two() {
        let mut p = Packet::new(0, A, NodeId(9), 0, 2);
        assert!(!detect_cycle(&mut p, B));
        assert!(!detect_cycle(&mut p, C));
        assert_eq!(p.history.iter().collect::<Vec<_>>(), [B, C]);
        assert!(!detect_cycle(&mut p, A));
    }

    #[test]
    fn history_keeps_running_after_detection() {
        let mut p = Packet::new(0, A, NodeId(9), 0, 2);
        assert!(!detect_cycle(&mut p, B));
        assert!(detect_cycle(&mut p, A));
        assert!(detect_cycle(&mut p, B));
        assert_eq!(p.history.len(), 2);
    }

    #[test]
    fn distinct_first_hops_never_fire() {
        for h in 1..6 {
            let mut p = Packet::new(0, NodeId(0), NodeId(99), 0, h);
            for n in 1..=h {
                assert!(!detect_cycle(&mut p, NodeId(n)));
                assert!(p.history.len() <= h);
            }
        }
    }

    #[test]
    fn shaping_examples() {
        let cycles = ShapingConfig {
            cycle_penalty: -100.0,
            ..Default::default()
        };
        assert_eq!(shaping_reward(2, 0, &cycles), -200.0);
        let drops = ShapingConfig {
            drop_penalty: 21.0,
            ..Default::default()
        };
        assert_eq!(shaping_reward(0, 1, &drops), -21.0);
        assert_eq!(shaping_reward(0, 0, &ShapingConfig::default()), 0.0);
    }

    #[test]
    fn shaping_is_linear() {
        let cfg = ShapingConfig {
            cycle_penalty: -100.0,
            history_length: 2,
            drop_penalty: 21.0,
        };
        for c in 0..5u64 {
            for d in 0..5u64 {
                let r = shaping_reward(c, d, &cfg);
                assert_eq!(r, shaping_reward(c, 0, &cfg) + shaping_reward(0, d, &cfg));
                assert_eq!(shaping_reward(2 * c, 2 * d, &cfg), 2.0 * r);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(ShapingConfig::default().validate().is_ok());
        let bad = ShapingConfig {
            cycle_penalty: 5.0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ShapingError::PositiveCyclePenalty(5.0)));
        let bad = ShapingConfig {
            drop_penalty: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ShapingConfig {
            history_length: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ShapingError::EmptyHistory));
    }
}
