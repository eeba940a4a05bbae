//! Exact solver for small instances: depth-first branch and bound over the
//! environment's own action space.

use std::collections::HashMap;

use crate::env::{validate_solution, RoutingEnv, TrajectoryState};
use crate::error::{Error, Result};
use crate::instances::Instance;

pub const ORACLE_MAX_CUSTOMERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub objective: f64,
    pub nodes: Vec<usize>,
    /// Search nodes expanded.
    pub expanded: u64,
}

struct Search<'e, 'i> {
    env: &'e RoutingEnv<'i>,
    /// Cheapest way into each customer from any other node.
    min_in: Vec<f64>,
    best: f64,
    best_nodes: Vec<usize>,
    /// Best prefix cost seen at a sub-route boundary: (visited set, depot, switched).
    boundary: HashMap<(u32, usize, bool), f64>,
    expanded: u64,
}

impl Search<'_, '_> {
    fn bound(&self, s: &TrajectoryState) -> f64 {
        let nd = self.env.instance().n_depots();
        let rest: f64 = s.visited[nd..]
            .iter()
            .zip(&self.min_in)
            .filter(|(v, _)| !**v)
            .map(|(_, m)| m)
            .sum();
        s.total_distance + rest
    }

    fn visit(&mut self, s: TrajectoryState) {
        self.expanded += 1;
        if s.done {
            if !s.stranded && s.total_distance < self.best {
                self.best = s.total_distance;
                self.best_nodes = s.sequence.clone();
            }
            return;
        }
        if self.bound(&s) >= self.best - 1e-12 {
            return;
        }
        let inst = self.env.instance();
        let nd = inst.n_depots();
        if s.at_depot(nd) {
            let key = (visited_bits(&s, nd), s.current, s.switched);
            match self.boundary.get(&key) {
                Some(&seen) if seen <= s.total_distance + 1e-12 => return,
                _ => {
                    self.boundary.insert(key, s.total_distance);
                }
            }
        }
        let dist = self.env.distances();
        let mut moves: Vec<usize> = self
            .env
            .feasible(&s)
            .iter()
            .enumerate()
            .filter_map(|(v, &ok)| ok.then_some(v))
            .collect();
        moves.sort_by(|&a, &b| dist.get(s.current, a).total_cmp(&dist.get(s.current, b)));
        for v in moves {
            let mut next = s.clone();
            self.env
                .apply(&mut next, v)
                .expect("moves come from the feasibility mask");
            self.visit(next);
        }
    }
}

fn visited_bits(s: &TrajectoryState, nd: usize) -> u32 {
    s.visited[nd..]
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &v)| acc | ((v as u32) << i))
}

/// Optimal objective and tour of an instance with at most
/// [`ORACLE_MAX_CUSTOMERS`] customers.
pub fn oracle_optimal(inst: &Instance) -> Result<OracleSolution> {
    let n = inst.n_customers();
    if n > ORACLE_MAX_CUSTOMERS {
        return Err(Error::Capability(format!(
            "exact oracle handles at most {ORACLE_MAX_CUSTOMERS} customers (got {n}); \
             use a trained policy or a baseline heuristic instead"
        )));
    }
    let env = RoutingEnv::new(inst);
    let nd = inst.n_depots();
    let min_in = (nd..inst.n_nodes())
        .map(|c| {
            (0..inst.n_nodes())
                .filter(|&u| u != c)
                .map(|u| inst.distance(u, c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut search = Search {
        env: &env,
        min_in,
        best: f64::INFINITY,
        best_nodes: Vec::new(),
        boundary: HashMap::new(),
        expanded: 0,
    };
    search.visit(env.free_start(0));
    if !search.best.is_finite() {
        return Err(Error::Validation("instance has no feasible solution".into()));
    }
    let verdict = validate_solution(&search.best_nodes, inst);
    if !verdict.valid {
        return Err(Error::Validation(format!(
            "oracle tour failed validation: {:?}",
            verdict.violations
        )));
    }
    Ok(OracleSolution {
        objective: search.best,
        nodes: search.best_nodes,
        expanded: search.expanded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate, Customer, VariantSpec, HORIZON_INF};

    fn single(variant: &str) -> Instance {
        Instance {
            variant: variant.parse().unwrap(),
            depots: vec![[0.0, 0.0]],
            customers: vec![Customer::at(0.3, 0.4, 0.1)],
            capacity: 1.0,
            duration_limit: HORIZON_INF,
        }
    }

    #[test]
    fn out_and_back() {
        assert!((oracle_optimal(&single("CVRP")).unwrap().objective - 1.0).abs() < 1e-12);
        assert!((oracle_optimal(&single("OVRP")).unwrap().objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_large_is_a_capability_error() {
        let inst = generate(VariantSpec::CVRP, 11, 0).unwrap();
        assert!(matches!(oracle_optimal(&inst), Err(Error::Capability(_))));
    }

    #[test]
    fn matches_plain_enumeration_on_tiny_cvrp() {
        // Every customer order with every choice of route breaks.
        let inst = generate(VariantSpec::CVRP, 5, 17).unwrap();
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (1..=5).collect();
        permute(&mut perm, 0, &mut |p| {
            for breaks in 0u32..(1 << 4) {
                let mut nodes = vec![0, p[0]];
                for i in 1..5 {
                    if breaks & (1 << (i - 1)) != 0 {
                        nodes.push(0);
                    }
                    nodes.push(p[i]);
                }
                if validate_solution(&nodes, &inst).valid {
                    best = best.min(crate::env::route_length(&nodes, &inst));
                }
            }
        });
        let got = oracle_optimal(&inst).unwrap();
        assert!((got.objective - best).abs() < 1e-9, "{} vs {best}", got.objective);
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }
}
