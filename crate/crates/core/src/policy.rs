//! Per-router Gibbs (softmax) routing policy and its log-likelihood gradient.

use thiserror::Error;

use crate::net::{NodeId, Topology};
use crate::rng::{inverse_cdf, RandomStream};

/// Probabilities are floored here before any logarithm is taken.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("router {router} has no parameter row for destination {destination}")]
    MissingRow { router: NodeId, destination: NodeId },
    #[error("link slot {slot} out of range for a router with {links} outgoing links")]
    InvalidSlot { slot: usize, links: usize },
    #[error("gradient has {got} components, expected {expected}")]
    ShapeMismatch { got: usize, expected: usize },
}

/// Logits `theta[y][u]` of one router, one row per destination `y` and one
/// column per outgoing link slot `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTable {
    router: NodeId,
    links: usize,
    row_of: Vec<Option<usize>>,
    destinations: Vec<NodeId>,
    theta: Vec<f64>,
}

impl ParamTable {
    /// All-zero (uniform routing) table with a row for each of `destinations`.
    pub fn zeros(
        router: NodeId,
        links: usize,
        node_count: usize,
        destinations: impl IntoIterator<Item = NodeId>,
    ) -> Self {
        let mut row_of = vec![None; node_count];
        let mut dests = Vec::new();
        for y in destinations {
            if y != router && row_of[y.0].is_none() {
                row_of[y.0] = Some(dests.len());
                dests.push(y);
            }
        }
        ParamTable {
            router,
            links,
            row_of,
            theta: vec![0.0; dests.len() * links],
            destinations: dests,
        }
    }

    /// Zero table for `router` in `t`, with rows for every node reachable from
    /// it. `None` when the router has no outgoing links.
    pub fn for_router(t: &Topology, router: NodeId) -> Option<Self> {
        let links = t.outgoing_link_indices(router).ok()?.len();
        if links == 0 {
            return None;
        }
        let reach = t.reachable_from(router).ok()?;
        let dests = reach
            .iter()
            .enumerate()
            .filter(|&(_, &r)| r)
            .map(|(i, _)| NodeId(i));
        Some(ParamTable::zeros(router, links, t.node_count(), dests))
    }

    pub fn router(&self) -> NodeId {
        self.router
    }

    pub fn link_count(&self) -> usize {
        self.links
    }

    pub fn destinations(&self) -> &[NodeId] {
        &self.destinations
    }

    pub fn row_index(&self, y: NodeId) -> Result<usize, PolicyError> {
        self.row_of
            .get(y.0)
            .copied()
            .flatten()
            .ok_or(PolicyError::MissingRow {
                router: self.router,
                destination: y,
            })
    }

    pub fn row(&self, y: NodeId) -> Result<&[f64], PolicyError> {
        let r = self.row_index(y)?;
        Ok(&self.theta[r * self.links..(r + 1) * self.links])
    }

    pub fn row_mut(&mut self, y: NodeId) -> Result<&mut [f64], PolicyError> {
        let r = self.row_index(y)?;
        Ok(&mut self.theta[r * self.links..(r + 1) * self.links])
    }

    /// Flat row-major view, rows in [`ParamTable::destinations`] order.
    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn ln_prob(&self, slot: usize) -> f64 {
        self.probs[slot].max(PROB_FLOOR).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoutingDecision {
    pub router: NodeId,
    pub destination: NodeId,
    pub slot: usize,
    pub tick: u64,
}

/// Softmax of `logits` into `out`, using max-subtraction.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn action_probabilities(p: &ParamTable, y: NodeId) -> Result<ActionDistribution, PolicyError> {
    let row = p.row(y)?;
    let mut probs = vec![0.0; row.len()];
    softmax_into(row, &mut probs);
    Ok(ActionDistribution { probs })
}

/// Draws a link slot for a packet bound for `y`, consuming exactly one
/// uniform from `rng`.
pub fn sample_link(
    p: &ParamTable,
    y: NodeId,
    rng: &mut RandomStream,
    tick: u64,
) -> Result<RoutingDecision, PolicyError> {
    let dist = action_probabilities(p, y)?;
    let slot = inverse_cdf(&dist.probs, rng.uniform());
    Ok(RoutingDecision {
        router: p.router,
        destination: y,
        slot,
        tick,
    })
}

/// `grad ln mu_{u_t}(y)` restricted to row `y`: component `u` is
/// `[u == u_t] - mu_u(y)`. All other rows have zero gradient.
pub fn log_policy_gradient(p: &ParamTable, y: NodeId, chosen: usize) -> Result<Vec<f64>, PolicyError> {
    if chosen >= p.links {
        return Err(PolicyError::InvalidSlot {
            slot: chosen,
            links: p.links,
        });
    }
    let mut g = action_probabilities(p, y)?.probs;
    gradient_from_probs(&mut g, chosen);
    Ok(g)
}

/// Turns a probability vector into the log-policy gradient for `chosen`, in place.
pub(crate) fn gradient_from_probs(probs: &mut [f64], chosen: usize) {
    for (u, g) in probs.iter_mut().enumerate() {
        *g = if u == chosen { 1.0 - *g } else { -*g };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(row: &[f64]) -> ParamTable {
        let mut t = ParamTable::zeros(NodeId(0), row.len(), 2, [NodeId(1)]);
        t.row_mut(NodeId(1)).unwrap().copy_from_slice(row);
        t
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn probabilities_examples() {
        let y = NodeId(1);
        assert_close(&action_probabilities(&table(&[0.0, 0.0]), y).unwrap().probs, &[0.5, 0.5], 1e-15);
        assert_close(
            &action_probabilities(&table(&[3f64.ln(), 0.0]), y).unwrap().probs,
            &[0.75, 0.25],
            1e-15,
        );
        let third = 1.0 / 3.0;
        assert_close(
            &action_probabilities(&table(&[5.0, 5.0, 5.0]), y).unwrap().probs,
            &[third, third, third],
            1e-15,
        );
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let d = action_probabilities(&table(&[1000.0, -1000.0, 999.0]), NodeId(1)).unwrap();
        assert!(d.probs.iter().all(|p| p.is_finite()));
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.ln_prob(1).is_finite());
    }

    #[test]
    fn missing_row() {
        let t = table(&[0.0, 0.0]);
        assert_eq!(
            action_probabilities(&t, NodeId(0)).unwrap_err(),
            PolicyError::MissingRow {
                router: NodeId(0),
                destination: NodeId(0)
            }
        );
        assert!(action_probabilities(&t, NodeId(5)).is_err());
    }

    #[test]
    fn sampling_examples() {
        let y = NodeId(1);
        for seed in 0..20 {
            let mut rng = RandomStream::seeded(seed);
            let d = sample_link(&table(&[30.0, -30.0]), y, &mut rng, 3).unwrap();
            assert_eq!(d.slot, 0);
            assert_eq!(d.tick, 3);
            assert_eq!(d.router, NodeId(0));
        }
        let probs = action_probabilities(&table(&[0.0, 0.0]), y).unwrap().probs;
        assert_eq!(inverse_cdf(&probs, 0.75), 1);
    }

    #[test]
    fn sampling_consumes_one_draw() {
        let t = table(&[0.3, -0.2, 1.0]);
        let mut a = RandomStream::seeded(11);
        let mut b = RandomStream::seeded(11);
        sample_link(&t, NodeId(1), &mut a, 0).unwrap();
        b.uniform();
        assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
    }

    #[test]
    fn empirical_frequency_matches() {
        let t = table(&[3f64.ln(), 0.0]);
        let mut rng = RandomStream::seeded(2024);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_link(&t, NodeId(1), &mut rng, 0).unwrap().slot == 0)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.01, "{freq}");
    }

    #[test]
    fn empirical_frequencies_within_three_sigma() {
        let t = table(&[0.4, -1.3, 0.9, 0.0]);
        let probs = action_probabilities(&t, NodeId(1)).unwrap().probs;
        let mut rng = RandomStream::seeded(99);
        let n = 200_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_link(&t, NodeId(1), &mut rng, 0).unwrap().slot] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let freq = *c as f64 / n as f64;
            assert!((freq - p).abs() <= 3.0 * sigma, "{freq} vs {p}");
        }
    }

    #[test]
    fn gradient_examples() {
        let y = NodeId(1);
        assert_close(&log_policy_gradient(&table(&[0.0, 0.0]), y, 0).unwrap(), &[0.5, -0.5], 1e-15);
        assert_close(
            &log_policy_gradient(&table(&[3f64.ln(), 0.0]), y, 1).unwrap(),
            &[-0.75, 0.75],
            1e-15,
        );
        assert_eq!(
            log_policy_gradient(&table(&[0.0, 0.0]), y, 2).unwrap_err(),
            PolicyError::InvalidSlot { slot: 2, links: 2 }
        );
    }

    #[test]
    fn single_link_router_has_zero_gradient() {
        let g = log_policy_gradient(&table(&[4.2]), NodeId(1), 0).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn rows_exclude_self() {
        let t = ParamTable::zeros(NodeId(1), 2, 3, [NodeId(0), NodeId(1), NodeId(2)]);
        assert_eq!(t.destinations(), &[NodeId(0), NodeId(2)]);
        assert!(t.row(NodeId(1)).is_err());
    }

    fn ln_mu(row: &[f64], slot: usize) -> f64 {
        // Independent evaluation: log-sum-exp written out directly.
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row[slot] - lse
    }

    proptest! {
        #[test]
        fn normalization(row in prop::collection::vec(-50.0f64..50.0, 1..9)) {
            let p = action_probabilities(&table(&row), NodeId(1)).unwrap().probs;
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
        }

        #[test]
        fn shift_invariance(row in prop::collection::vec(-50.0f64..50.0, 1..9), c in -100.0f64..100.0) {
            let a = action_probabilities(&table(&row), NodeId(1)).unwrap().probs;
            let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
            let b = action_probabilities(&table(&shifted), NodeId(1)).unwrap().probs;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn gradient_sums_to_zero(row in prop::collection::vec(-50.0f64..50.0, 1..9), pick in 0usize..8) {
            let slot = pick % row.len();
            let g = log_policy_gradient(&table(&row), NodeId(1), slot).unwrap();
            prop_assert!(g.iter().sum::<f64>().abs() <= 1e-12);
        }

        #[test]
        fn gradient_matches_finite_differences(row in prop::collection::vec(-5.0f64..5.0, 1..9), pick in 0usize..8) {
            let slot = pick % row.len();
            let g = log_policy_gradient(&table(&row), NodeId(1), slot).unwrap();
            let h = 1e-5;
            for u in 0..row.len() {
                let mut plus = row.clone();
                plus[u] += h;
                let mut minus = row.clone();
                minus[u] -= h;
                let fd = (ln_mu(&plus, slot) - ln_mu(&minus, slot)) / (2.0 * h);
                prop_assert!((fd - g[u]).abs() <= 1e-6, "u={} fd={} g={}", u, fd, g[u]);
            }
        }
    }
}
