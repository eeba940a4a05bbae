//! Solution scoring and an independent end-to-end rule checker.
//!
//! Nothing here reuses the environment's incremental bookkeeping: both the
//! reward and the verdict are recomputed by replaying the node sequence.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DEPOT_HORIZON, FEAS_EPS};
use crate::error::{Error, Result};
use crate::instances::{BackhaulMode, Instance};

/// One decoded solution: the node sequence (initial depot first), the
/// log-probability of every decoded step, and the reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Customer node forced as the first move, if any.
    pub start: Option<usize>,
    pub nodes: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub reward: f64,
}

impl Trajectory {
    pub fn objective(&self) -> f64 {
        -self.reward
    }
}

/// Serialized rollout of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub instance_id: String,
    pub starts: Vec<Option<usize>>,
    pub sequences: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
}

impl TrajectoryFile {
    pub fn new(instance_id: impl Into<String>, trajectories: &[Trajectory]) -> Self {
        TrajectoryFile {
            instance_id: instance_id.into(),
            starts: trajectories.iter().map(|t| t.start).collect(),
            sequences: trajectories.iter().map(|t| t.nodes.clone()).collect(),
            rewards: trajectories.iter().map(|t| t.reward).collect(),
        }
    }
}

/// Total length of a node sequence. Depot-to-depot hand-overs cost nothing;
/// a closed route also pays the leg from its last customer back to the last
/// depot in the sequence.
pub fn route_length(nodes: &[usize], inst: &Instance) -> f64 {
    let nd = inst.n_depots();
    let mut total = 0.0;
    for w in nodes.windows(2) {
        if w[0] < nd && w[1] < nd {
            continue;
        }
        total += inst.distance(w[0], w[1]);
    }
    if !inst.variant.open {
        if let (Some(&last), Some(&depot)) = (nodes.last(), nodes.iter().rev().find(|&&v| v < nd))
        {
            if last >= nd {
                total += inst.distance(last, depot);
            }
        }
    }
    total
}

/// Negative route length of each complete trajectory.
pub fn finalize_reward(trajectories: &[Trajectory], inst: &Instance) -> Result<Vec<f64>> {
    trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut seen = vec![false; inst.n_nodes()];
            for &v in &t.nodes {
                if v >= inst.n_nodes() {
                    return Err(Error::invalid(format!("trajectory {i}: node {v} out of range")));
                }
                seen[v] = true;
            }
            if t.nodes.first().map_or(true, |&v| v >= inst.n_depots()) {
                return Err(Error::invalid(format!("trajectory {i} does not start at a depot")));
            }
            if seen[inst.n_depots()..].iter().any(|&s| !s) {
                return Err(Error::invalid(format!("trajectory {i} is incomplete")));
            }
            Ok(-route_length(&t.nodes, inst))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    StartsAtDepot,
    KnownNode,
    VisitedExactlyOnce,
    AllCustomersServed,
    Capacity,
    LinehaulBeforeBackhaul,
    TimeWindow,
    DurationLimit,
    ReturnToStartDepot,
    SingleDepot,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::StartsAtDepot => "starts at a depot",
            Rule::KnownNode => "known node",
            Rule::VisitedExactlyOnce => "visited exactly once",
            Rule::AllCustomersServed => "all customers served",
            Rule::Capacity => "capacity",
            Rule::LinehaulBeforeBackhaul => "linehaul before backhaul",
            Rule::TimeWindow => "time window",
            Rule::DurationLimit => "duration limit",
            Rule::ReturnToStartDepot => "return to start depot",
            Rule::SingleDepot => "single depot",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    /// Position in the node sequence where the rule broke.
    pub step: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

struct Route {
    depot: usize,
    linehaul: f64,
    backhaul: f64,
    time: f64,
    length: f64,
    last: usize,
}

impl Route {
    fn at(depot: usize) -> Self {
        Route {
            depot,
            linehaul: 0.0,
            backhaul: 0.0,
            time: 0.0,
            length: 0.0,
            last: depot,
        }
    }
}

/// Replays `nodes` and reports every broken routing rule.
pub fn validate_solution(nodes: &[usize], inst: &Instance) -> Verdict {
    let mut violations = Vec::new();
    let mut flag = |rule, step, detail: String| violations.push(Violation { rule, step, detail });
    let nd = inst.n_depots();
    let nn = inst.n_nodes();
    let v = inst.variant;
    let q = inst.capacity + FEAS_EPS;
    let limit = inst.duration_limit + FEAS_EPS;

    let Some(&first) = nodes.first() else {
        flag(Rule::StartsAtDepot, 0, "empty sequence".into());
        return Verdict { valid: false, violations };
    };
    if first >= nd {
        flag(Rule::StartsAtDepot, 0, format!("sequence starts at node {first}"));
        return Verdict { valid: false, violations };
    }

    let mut seen = vec![0usize; nn];
    let mut backhaul_served = false;
    let mut route = Route::at(first);

    let close = |route: &Route, step: usize, flag: &mut dyn FnMut(Rule, usize, String)| {
        if !v.open {
            let back = inst.distance(route.last, route.depot);
            if route.length + back > limit {
                flag(
                    Rule::DurationLimit,
                    step,
                    format!("closed sub-route length {:.6}", route.length + back),
                );
            }
            if route.time + back > DEPOT_HORIZON + FEAS_EPS {
                flag(Rule::TimeWindow, step, "returns after the depot horizon".into());
            }
        }
    };

    for (step, &node) in nodes.iter().enumerate().skip(1) {
        if node >= nn {
            flag(Rule::KnownNode, step, format!("node {node} out of range"));
            continue;
        }
        if let Some(c) = inst.customer(node) {
            seen[node] += 1;
            if seen[node] > 1 {
                flag(Rule::VisitedExactlyOnce, step, format!("node {node} revisited"));
            }
            let leg = inst.distance(route.last, node);
            let arrival = route.time + leg;
            if arrival > c.tl + FEAS_EPS {
                flag(
                    Rule::TimeWindow,
                    step,
                    format!("arrives at {arrival:.6} after late time {:.6}", c.tl),
                );
            }
            route.time = arrival.max(c.te) + c.ts;
            route.length += leg;
            route.linehaul += c.dl;
            route.backhaul += c.db;
            route.last = node;
            if v.open && route.length > limit {
                flag(Rule::DurationLimit, step, format!("open sub-route length {:.6}", route.length));
            }
            let over = match v.backhaul_mode() {
                BackhaulMode::None | BackhaulMode::Strict => {
                    route.linehaul > q || route.backhaul > q
                }
                BackhaulMode::Mixed => route.linehaul + route.backhaul > q,
            };
            if over {
                flag(
                    Rule::Capacity,
                    step,
                    format!("load {:.6}/{:.6} over capacity", route.linehaul, route.backhaul),
                );
            }
            if v.backhaul {
                if c.db > 0.0 {
                    backhaul_served = true;
                } else if backhaul_served {
                    flag(
                        Rule::LinehaulBeforeBackhaul,
                        step,
                        format!("linehaul node {node} after a backhaul"),
                    );
                }
            }
        } else {
            if route.last >= nd {
                close(&route, step, &mut flag);
                if !v.open && v.multi_depot && node != route.depot {
                    flag(
                        Rule::ReturnToStartDepot,
                        step,
                        format!("sub-route from depot {} ends at depot {node}", route.depot),
                    );
                }
            } else if node != route.last && !v.multi_depot {
                flag(Rule::SingleDepot, step, format!("moved between depots {} and {node}", route.last));
            }
            route = Route::at(node);
        }
    }
    if route.last >= nd {
        close(&route, nodes.len(), &mut flag);
    }
    for node in nd..nn {
        if seen[node] == 0 {
            flag(Rule::AllCustomersServed, nodes.len(), format!("node {node} never visited"));
        }
    }
    Verdict {
        valid: violations.is_empty(),
        violations,
    }
}
