//! Exact baselines for the reference experiments: closed forms and full
//! enumerations, no sampling.

use thiserror::Error;

use crate::net::{CostModel, NetError, NodeId, Topology, TrafficSpec};
use crate::presets;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("path {0:?} does not follow links of the topology")]
    BadPath(Vec<String>),
    #[error("topology must use the {0:?} cost model")]
    WrongCostModel(CostModel),
    #[error("no packets in flow assignment")]
    NoPackets,
    #[error(transparent)]
    Net(#[from] NetError),
}

fn check_probability(p: f64) -> Result<(), OracleError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(OracleError::BadProbability(p))
    }
}

/// Trip time over the capacity-1 top link.
const TOP_TRIP: f64 = 1.0;
/// Trip time over the bottom link.
const BOTTOM_TRIP: f64 = 6.0;

/// One of the three per-tick outcomes when two packets independently pick the
/// top link with probability `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContentionOutcome {
    pub top_count: u8,
    pub probability: f64,
    pub reward: f64,
}

pub fn contention_outcomes(p: f64, d: f64) -> Result<[ContentionOutcome; 3], OracleError> {
    check_probability(p)?;
    let q = 1.0 - p;
    Ok([
        ContentionOutcome {
            top_count: 0,
            probability: q * q,
            reward: -2.0 * BOTTOM_TRIP,
        },
        ContentionOutcome {
            top_count: 1,
            probability: 2.0 * p * q,
            reward: -(TOP_TRIP + BOTTOM_TRIP),
        },
        // one gets through, the other is dropped
        ContentionOutcome {
            top_count: 2,
            probability: p * p,
            reward: -TOP_TRIP - d,
        },
    ])
}

/// Expected per-tick reward of the contention network when each packet takes
/// the top link with probability `p` and a drop costs `d`.
pub fn contention_expected_reward(p: f64, d: f64) -> Result<f64, OracleError> {
    Ok(contention_outcomes(p, d)?
        .iter()
        .map(|o| o.probability * o.reward)
        .sum())
}

/// The same expectation as [`contention_expected_reward`], as the quadratic
/// `(1 - d) p^2 + 10 p - 12`.
pub fn contention_expected_reward_closed_form(p: f64, d: f64) -> Result<f64, OracleError> {
    check_probability(p)?;
    let (a, b, c) = contention_coefficients(d);
    Ok(a * p * p + b * p + c)
}

fn contention_coefficients(d: f64) -> (f64, f64, f64) {
    (
        TOP_TRIP - d,
        4.0 * BOTTOM_TRIP - 2.0 * (TOP_TRIP + BOTTOM_TRIP),
        -2.0 * BOTTOM_TRIP,
    )
}

/// Maximiser over `[0, 1]` of [`contention_expected_reward`].
pub fn contention_optimal_p(d: f64) -> f64 {
    let (a, b, _) = contention_coefficients(d);
    if a >= 0.0 {
        // convex or linear with positive slope; f(1) = -1 - d >= -2 > f(0) = -12
        return 1.0;
    }
    (-b / (2.0 * a)).clamp(0.0, 1.0)
}

/// Parses a path written as concatenated single-letter labels, e.g. "ACDB".
pub fn path_from_labels(t: &Topology, path: &str) -> Result<Vec<NodeId>, OracleError> {
    path.chars()
        .map(|c| Ok(t.node_by_label(&c.to_string())?))
        .collect()
}

/// Average per-packet cost when `count` packets take each `path`, with every
/// node charging `base + per_flow * x` at its total flow `x`.
pub fn braess_cost_for_flows(t: &Topology, flows: &[(Vec<NodeId>, u64)]) -> Result<f64, OracleError> {
    if t.cost_model() != CostModel::NodeFlow {
        return Err(OracleError::WrongCostModel(CostModel::NodeFlow));
    }
    let mut flow = vec![0u64; t.node_count()];
    let mut packets = 0;
    for (path, count) in flows {
        let follows_links = path.windows(2).all(|w| {
            t.outgoing_links(w[0])
                .map(|ls| ls.iter().any(|l| l.to == w[1]))
                .unwrap_or(false)
        });
        if path.is_empty() || path.iter().any(|n| n.0 >= t.node_count()) || !follows_links {
            return Err(OracleError::BadPath(
                path.iter()
                    .map(|n| t.labels().get(n.0).cloned().unwrap_or_else(|| n.to_string()))
                    .collect(),
            ));
        }
        for n in path {
            flow[n.0] += count;
        }
        packets += count;
    }
    if packets == 0 {
        return Err(OracleError::NoPackets);
    }
    let total: f64 = flows
        .iter()
        .map(|(path, count)| {
            let per_packet: f64 = path
                .iter()
                .map(|n| t.node_cost(*n).cost(flow[n.0] as f64))
                .sum();
            *count as f64 * per_packet
        })
        .sum();
    Ok(total / packets as f64)
}

fn binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    let mut coeff = 1.0;
    for i in 0..k {
        coeff = coeff * (n - i) as f64 / (i + 1) as f64;
    }
    coeff * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

const BRAESS_PACKETS: u64 = 6;

/// Expected per-packet cost on the augmented Braess network when each of the
/// six packets independently goes left (ACDB) with probability `p_left` and,
/// at E, continues to F with probability `p_ef` (else EGDB).
pub fn braess_expected_cost(p_left: f64, p_ef: f64) -> Result<f64, OracleError> {
    check_probability(p_left)?;
    check_probability(p_ef)?;
    let (t, _) = presets::braess1_network();
    let left = path_from_labels(&t, "ACDB")?;
    let via_f = path_from_labels(&t, "AEFB")?;
    let via_g = path_from_labels(&t, "AEGDB")?;
    let mut expected = 0.0;
    for l in 0..=BRAESS_PACKETS {
        let pl = binomial_pmf(BRAESS_PACKETS, l, p_left);
        if pl == 0.0 {
            continue;
        }
        let right = BRAESS_PACKETS - l;
        for f in 0..=right {
            let pf = binomial_pmf(right, f, p_ef);
            if pf == 0.0 {
                continue;
            }
            let flows = [
                (left.clone(), l),
                (via_f.clone(), f),
                (via_g.clone(), right - f),
            ];
            expected += pl * pf * braess_cost_for_flows(&t, &flows)?;
        }
    }
    Ok(expected)
}

/// Best achievable average reward per tick in a link-delay network without
/// contention: every packet takes a shortest path.
pub fn optimal_link_delay_reward(t: &Topology, traffic: &TrafficSpec) -> Result<f64, OracleError> {
    let mut reward = 0.0;
    for src in t.nodes() {
        let rate = f64::from(traffic.rates[src.0]);
        if rate == 0.0 {
            continue;
        }
        for (dst, &w) in traffic.destinations[src.0].iter().enumerate() {
            if w > 0.0 {
                reward -= rate * w * t.shortest_path_delay(src, NodeId(dst))? as f64;
            }
        }
    }
    Ok(reward)
}

/// [`optimal_link_delay_reward`] for the triangle preset.
pub fn triangle_optimal_average_reward() -> f64 {
    let (t, traffic) = presets::triangle_network();
    optimal_link_delay_reward(&t, &traffic).expect("triangle preset is connected")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Link;

    fn grid_best(d: f64, step: f64) -> (f64, f64) {
        let n = (1.0 / step).round() as usize;
        (0..=n)
            .map(|i| {
                let p = i as f64 * step;
                (p, contention_expected_reward(p, d).unwrap())
            })
            .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    #[test]
    fn contention_examples() {
        assert_eq!(contention_expected_reward(1.0, 21.0).unwrap(), -22.0);
        for d in [0.0, 1.0, 21.0, 1e6] {
            assert_eq!(contention_expected_reward(0.0, d).unwrap(), -12.0);
        }
        assert_eq!(contention_expected_reward(0.25, 21.0).unwrap(), -10.75);
        assert_eq!(
            contention_expected_reward(1.5, 21.0),
            Err(OracleError::BadProbability(1.5))
        );
        assert!(contention_expected_reward(-0.1, 21.0).is_err());
    }

    #[test]
    fn outcome_probabilities_sum_to_one() {
        for p in [0.0, 0.1, 0.25, 0.5, 0.9, 1.0] {
            let s: f64 = contention_outcomes(p, 21.0).unwrap().iter().map(|o| o.probability).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_at_paper_penalty() {
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let closed = -20.0 * p * p + 10.0 * p - 12.0;
            assert!((contention_expected_reward(p, 21.0).unwrap() - closed).abs() < 1e-12);
            assert!((contention_expected_reward_closed_form(p, 21.0).unwrap() - closed).abs() < 1e-12);
        }
        assert!(contention_expected_reward_closed_form(1.5, 21.0).is_err());
    }

    #[test]
    fn optimal_p_against_grid() {
        assert_eq!(contention_optimal_p(21.0), 0.25);
        for d in [0.0, 1.0, 3.0, 6.0, 7.5, 21.0, 100.0, 1e4] {
            let p = contention_optimal_p(d);
            let best = contention_expected_reward(p, d).unwrap();
            let (gp, gv) = grid_best(d, 1e-4);
            assert!(best >= gv - 1e-12, "d={d}: {p} -> {best}, grid {gp} -> {gv}");
            assert!((p - gp).abs() <= 1e-4, "d={d}");
        }
        // large penalty drives the optimum towards, not onto, zero
        let p = contention_optimal_p(1e4);
        assert!(p > 0.0 && p < 1e-3);
    }

    #[test]
    fn braess_flows_examples() {
        let (b0, _) = presets::braess0_network();
        let acdb = path_from_labels(&b0, "ACDB").unwrap();
        let aefb = path_from_labels(&b0, "AEFB").unwrap();
        assert_eq!(braess_cost_for_flows(&b0, &[(acdb.clone(), 6), (aefb.clone(), 0)]).unwrap(), 116.0);
        assert_eq!(braess_cost_for_flows(&b0, &[(acdb.clone(), 3), (aefb.clone(), 3)]).unwrap(), 83.0);
        assert_eq!(braess_cost_for_flows(&b0, &[(aefb.clone(), 6)]).unwrap(), 116.0);

        let (b1, _) = presets::braess1_network();
        let flows: Vec<_> = ["ACDB", "AEFB", "AEGDB"]
            .iter()
            .map(|p| (path_from_labels(&b1, p).unwrap(), 2))
            .collect();
        assert_eq!(braess_cost_for_flows(&b1, &flows).unwrap(), 92.0);

        let bad = path_from_labels(&b0, "AEGDB").unwrap();
        assert!(matches!(
            braess_cost_for_flows(&b0, &[(bad, 1)]),
            Err(OracleError::BadPath(_))
        ));
        assert_eq!(braess_cost_for_flows(&b0, &[(acdb, 0)]), Err(OracleError::NoPackets));
    }

    #[test]
    fn braess_expected_examples() {
        assert!((braess_expected_cost(0.5, 1.0).unwrap() - 88.5).abs() < 1e-12);
        for p_ef in [0.0, 0.3, 1.0] {
            assert!((braess_expected_cost(1.0, p_ef).unwrap() - 116.0).abs() < 1e-12);
        }
        assert!(braess_expected_cost(0.5, 1.2).is_err());
    }

    #[test]
    fn braess_closed_form_with_full_right_branch() {
        // With every right packet on EF the cost is 50 + 11 E[L^2 + R^2] / 6.
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            let el2 = 6.0 * p * (1.0 - p) + 36.0 * p * p;
            let q = 1.0 - p;
            let er2 = 6.0 * p * q + 36.0 * q * q;
            let closed = 50.0 + 11.0 * (el2 + er2) / 6.0;
            assert!((braess_expected_cost(p, 1.0).unwrap() - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn braess_degenerate_probabilities_match_flows() {
        let (b1, _) = presets::braess1_network();
        let path = |s| path_from_labels(&b1, s).unwrap();
        for (pl, pef, flows) in [
            (1.0, 1.0, vec![(path("ACDB"), 6)]),
            (0.0, 1.0, vec![(path("AEFB"), 6)]),
            (0.0, 0.0, vec![(path("AEGDB"), 6)]),
        ] {
            assert_eq!(
                braess_expected_cost(pl, pef).unwrap(),
                braess_cost_for_flows(&b1, &flows).unwrap()
            );
        }
    }

    #[test]
    fn independent_choices_cannot_reach_the_deterministic_split() {
        let mut best = f64::INFINITY;
        for i in 0..=100 {
            for j in 0..=100 {
                let c = braess_expected_cost(i as f64 / 100.0, j as f64 / 100.0).unwrap();
                best = best.min(c);
            }
        }
        assert!(best > 83.0);
        assert!((best - 88.5).abs() < 1e-9, "{best}");
    }

    #[test]
    fn triangle_optimum() {
        assert_eq!(triangle_optimal_average_reward(), -4.0);

        let (t, traffic) = presets::triangle_network();
        let fast: Vec<Link> = t
            .links()
            .iter()
            .map(|l| Link { delay: 1, ..l.clone() })
            .collect();
        let t1 = Topology::new(t.labels().to_vec(), fast, None, CostModel::LinkDelay);
        assert_eq!(optimal_link_delay_reward(&t1, &traffic).unwrap(), -3.0);

        // relabelling nodes (rotate A->B->C->A) leaves the optimum unchanged
        let rotated: Vec<Link> = t
            .links()
            .iter()
            .map(|l| Link {
                from: NodeId((l.from.0 + 1) % 3),
                to: NodeId((l.to.0 + 1) % 3),
                ..l.clone()
            })
            .collect();
        let tr = Topology::new(t.labels().to_vec(), rotated, None, CostModel::LinkDelay);
        assert_eq!(optimal_link_delay_reward(&tr, &traffic).unwrap(), -4.0);
    }

    #[test]
    fn six_node_optimum() {
        let (t, traffic) = presets::six_node_network();
        assert!((optimal_link_delay_reward(&t, &traffic).unwrap() + 6.0).abs() < 1e-12);
    }
}
