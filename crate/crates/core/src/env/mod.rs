//! The multi-task routing MDP: per-trajectory state, feasibility masks and
//! transitions.
//!
//! Node indices follow [`Instance`]: depots first, then customers. Every
//! sub-route starts at its trajectory's active depot. Travel time equals
//! distance. Visiting a depot after a customer closes the sub-route and resets
//! load, elapsed time and sub-route length. On multi-depot tasks a vehicle
//! waiting at a depot with an empty sub-route may hand over to another depot
//! (a zero-length switch), at most once between sub-routes.

mod solution;

pub use solution::{
    finalize_reward, route_length, validate_solution, Rule, Trajectory, TrajectoryFile, Verdict,
    Violation,
};

use crate::error::{Error, Result};
use crate::instances::{BackhaulMode, DistanceMatrix, Instance, HORIZON_INF};

/// Comparison slack for capacity, time and length checks.
pub const FEAS_EPS: f64 = 1e-9;

/// Latest time a closed route may return to its depot.
pub const DEPOT_HORIZON: f64 = HORIZON_INF;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub current: usize,
    pub start_depot: usize,
    /// Linehaul delivered on the current sub-route.
    pub used_linehaul: f64,
    /// Backhaul collected on the current sub-route.
    pub used_backhaul: f64,
    pub time: f64,
    /// Length of the current sub-route so far (from its depot).
    pub subroute_distance: f64,
    pub total_distance: f64,
    /// Indexed by node; depots are never marked.
    pub visited: Vec<bool>,
    pub linehaul_open: usize,
    pub customers_visited: usize,
    pub subroute_customers: usize,
    /// Arrived at the current depot through a depot switch.
    pub switched: bool,
    /// Customer node this trajectory must visit first.
    pub forced_first: Option<usize>,
    pub step_index: usize,
    /// Node sequence, starting with the initial depot. A closed route's final
    /// return is implied, not stored.
    pub sequence: Vec<usize>,
    pub done: bool,
    /// Terminated without visiting every customer (no feasible move left).
    pub stranded: bool,
}

impl TrajectoryState {
    pub fn at_depot(&self, n_depots: usize) -> bool {
        self.current < n_depots
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: TrajectoryState,
    pub leg_length: f64,
    /// Closing leg appended when a closed route finishes.
    pub return_leg: f64,
    pub finished: bool,
}

pub struct RoutingEnv<'a> {
    inst: &'a Instance,
    dist: DistanceMatrix,
    backhaul: BackhaulMode,
}

impl<'a> RoutingEnv<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        RoutingEnv {
            inst,
            dist: inst.distance_matrix(),
            backhaul: inst.variant.backhaul_mode(),
        }
    }

    pub fn instance(&self) -> &Instance {
        self.inst
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.dist
    }

    /// A trajectory parked at `depot` with nothing forced.
    pub fn free_start(&self, depot: usize) -> TrajectoryState {
        let inst = self.inst;
        TrajectoryState {
            current: depot,
            start_depot: depot,
            used_linehaul: 0.0,
            used_backhaul: 0.0,
            time: 0.0,
            subroute_distance: 0.0,
            total_distance: 0.0,
            visited: vec![false; inst.n_nodes()],
            linehaul_open: inst.customers.iter().filter(|c| c.dl > 0.0).count(),
            customers_visited: 0,
            subroute_customers: 0,
            switched: false,
            forced_first: None,
            step_index: 0,
            sequence: vec![depot],
            done: false,
            stranded: false,
        }
    }

    /// One trajectory per start customer: trajectory `i` starts at depot
    /// `i mod |depots|` and is committed to customer `i` as its first move,
    /// unless that move is infeasible (a backhaul customer under strict
    /// backhaul ordering), in which case its first move is free.
    pub fn reset(&self, n_trajectories: usize) -> Result<Vec<TrajectoryState>> {
        let n = self.inst.n_customers();
        if n_trajectories == 0 || n_trajectories > n {
            return Err(Error::invalid(format!(
                "need 1..={n} trajectories, got {n_trajectories}"
            )));
        }
        let nd = self.inst.n_depots();
        Ok((0..n_trajectories)
            .map(|i| {
                let mut s = self.free_start(i % nd);
                let node = self.inst.customer_node(i);
                if self.customer_feasible(&s, node) {
                    s.forced_first = Some(node);
                }
                s
            })
            .collect())
    }

    fn customer_feasible(&self, s: &TrajectoryState, v: usize) -> bool {
        if s.visited[v] {
            return false;
        }
        let c = self.inst.customer(v).expect("customer node");
        let q = self.inst.capacity + FEAS_EPS;
        let cap_ok = match self.backhaul {
            BackhaulMode::None => s.used_linehaul + c.dl <= q,
            BackhaulMode::Strict => {
                if c.is_backhaul() {
                    s.linehaul_open == 0 && s.used_backhaul + c.db <= q
                } else {
                    s.used_linehaul + c.dl <= q
                }
            }
            BackhaulMode::Mixed => s.used_linehaul + s.used_backhaul + c.dl + c.db <= q,
        };
        if !cap_ok {
            return false;
        }
        let leg = self.dist.get(s.current, v);
        let back = self.dist.get(v, s.start_depot);
        let arrival = s.time + leg;
        if arrival.max(c.te) > c.tl + FEAS_EPS {
            return false;
        }
        let open = self.inst.variant.open;
        if !open && arrival.max(c.te) + c.ts + back > DEPOT_HORIZON + FEAS_EPS {
            return false;
        }
        let budget = self.inst.duration_limit + FEAS_EPS;
        if open {
            s.subroute_distance + leg <= budget
        } else {
            s.subroute_distance + leg + back <= budget
        }
    }

    /// Feasible next nodes for one trajectory. All-false only for finished
    /// trajectories or a stranded vehicle.
    pub fn feasible(&self, s: &TrajectoryState) -> Vec<bool> {
        let inst = self.inst;
        let nd = inst.n_depots();
        let mut mask = vec![false; inst.n_nodes()];
        if s.done {
            return mask;
        }
        if s.step_index == 0 {
            if let Some(f) = s.forced_first {
                mask[f] = true;
                return mask;
            }
        }
        for v in nd..inst.n_nodes() {
            mask[v] = self.customer_feasible(s, v);
        }
        if s.at_depot(nd) {
            if !s.switched {
                for d in 0..nd {
                    mask[d] = d != s.current;
                }
            }
        } else {
            mask[s.start_depot] = true;
        }
        mask
    }

    pub fn feasible_mask(&self, states: &[TrajectoryState]) -> Vec<Vec<bool>> {
        states.iter().map(|s| self.feasible(s)).collect()
    }

    /// Applies `action` in place. Returns (leg length, closing leg).
    pub fn apply(&self, s: &mut TrajectoryState, action: usize) -> Result<(f64, f64)> {
        if s.done {
            return Err(Error::ContractViolation(
                "step on a finished trajectory".into(),
            ));
        }
        let mask = self.feasible(s);
        if !mask.get(action).copied().unwrap_or(false) {
            return Err(Error::ContractViolation(format!(
                "action {action} is masked at step {} (node {})",
                s.step_index, s.current
            )));
        }
        let inst = self.inst;
        let nd = inst.n_depots();
        let from_depot = s.at_depot(nd);
        let mut leg = self.dist.get(s.current, action);
        if let Some(c) = inst.customer(action) {
            s.time = (s.time + leg).max(c.te) + c.ts;
            s.used_linehaul += c.dl;
            s.used_backhaul += c.db;
            s.subroute_distance += leg;
            s.visited[action] = true;
            s.customers_visited += 1;
            s.subroute_customers += 1;
            if c.dl > 0.0 {
                s.linehaul_open -= 1;
            }
            s.switched = false;
        } else {
            if from_depot {
                leg = 0.0;
                s.switched = true;
            } else {
                s.switched = false;
            }
            s.start_depot = action;
            s.used_linehaul = 0.0;
            s.used_backhaul = 0.0;
            s.time = 0.0;
            s.subroute_distance = 0.0;
            s.subroute_customers = 0;
        }
        s.total_distance += leg;
        s.current = action;
        s.step_index += 1;
        s.sequence.push(action);

        let mut closing = 0.0;
        if s.customers_visited == inst.n_customers() {
            s.done = true;
            if !inst.variant.open && !s.at_depot(nd) {
                closing = self.dist.get(s.current, s.start_depot);
                s.total_distance += closing;
            }
        } else if !self.feasible(s).iter().any(|&m| m) {
            s.done = true;
            s.stranded = true;
        }
        Ok((leg, closing))
    }

    pub fn step(&self, states: &[TrajectoryState], actions: &[usize]) -> Result<Vec<StepOutcome>> {
        if states.len() != actions.len() {
            return Err(Error::invalid("one action per trajectory required"));
        }
        states
            .iter()
            .zip(actions)
            .map(|(s, &a)| {
                let mut next = s.clone();
                let (leg, ret) = self.apply(&mut next, a)?;
                Ok(StepOutcome {
                    finished: next.done,
                    next_state: next,
                    leg_length: leg,
                    return_leg: ret,
                })
            })
            .collect()
    }

    /// Remaining capacity for the next customer of the kind the trajectory
    /// may serve next.
    pub fn remaining_capacity(&self, s: &TrajectoryState) -> f64 {
        let q = self.inst.capacity;
        match self.backhaul {
            BackhaulMode::None => q - s.used_linehaul,
            BackhaulMode::Strict if s.linehaul_open > 0 => q - s.used_linehaul,
            BackhaulMode::Strict => q - s.used_backhaul,
            BackhaulMode::Mixed => q - s.used_linehaul - s.used_backhaul,
        }
    }

    pub fn into_trajectory(&self, s: &TrajectoryState, log_probs: Vec<f64>) -> Trajectory {
        Trajectory {
            start: s.forced_first,
            nodes: s.sequence.clone(),
            log_probs,
            reward: -s.total_distance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{Customer, VariantSpec};

    fn line_instance(variant: &str, customers: Vec<Customer>) -> Instance {
        Instance {
            variant: variant.parse().unwrap(),
            depots: vec![[0.0, 0.0]],
            customers,
            capacity: 1.0,
            duration_limit: HORIZON_INF,
        }
    }

    #[test]
    fn reset_forces_start_customers() {
        let inst = crate::instances::generate(VariantSpec::CVRP, 5, 1).unwrap();
        let env = RoutingEnv::new(&inst);
        let states = env.reset(5).unwrap();
        assert_eq!(states.len(), 5);
        assert_eq!(states[2].forced_first, Some(inst.customer_node(2)));
        let mask = env.feasible(&states[2]);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 1);
        assert!(mask[inst.customer_node(2)]);
        assert_eq!(env.reset(5).unwrap(), states);
        assert!(env.reset(6).is_err());
    }

    #[test]
    fn multi_depot_round_robin() {
        let inst = crate::instances::generate("MDVRP".parse().unwrap(), 7, 2).unwrap();
        let env = RoutingEnv::new(&inst);
        let starts: Vec<usize> = env.reset(7).unwrap().iter().map(|s| s.start_depot).collect();
        assert_eq!(starts, vec![0, 1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn capacity_masks_heavy_customer() {
        let inst = line_instance(
            "CVRP",
            vec![Customer::at(0.1, 0.0, 0.9), Customer::at(0.2, 0.0, 0.2)],
        );
        let env = RoutingEnv::new(&inst);
        let mut s = env.free_start(0);
        env.apply(&mut s, 1).unwrap();
        assert!((env.remaining_capacity(&s) - 0.1).abs() < 1e-12);
        let m = env.feasible(&s);
        assert!(!m[2]);
        assert!(m[0], "only the depot is left");
    }

    #[test]
    fn backhaul_waits_for_linehaul() {
        let mut back = Customer::at(0.5, 0.0, 0.0);
        back.db = 0.1;
        let inst = line_instance(
            "VRPB",
            vec![Customer::at(0.1, 0.0, 0.1), back, Customer::at(0.3, 0.0, 0.1)],
        );
        let env = RoutingEnv::new(&inst);
        let mut s = env.free_start(0);
        env.apply(&mut s, 1).unwrap();
        assert!(!env.feasible(&s)[2]);
        env.apply(&mut s, 3).unwrap();
        assert!(env.feasible(&s)[2]);
    }

    #[test]
    fn leg_and_waiting() {
        let mut c = Customer::at(0.3, 0.4, 0.1);
        c.te = 1.0;
        c.tl = 3.0;
        let inst = line_instance("VRPTW", vec![c]);
        let env = RoutingEnv::new(&inst);
        let out = env.step(&[env.free_start(0)], &[1]).unwrap();
        assert!((out[0].leg_length - 0.5).abs() < 1e-15);
        assert_eq!(out[0].next_state.time, 1.0);
        assert!(out[0].finished);
        assert!((out[0].return_leg - 0.5).abs() < 1e-15);
        assert!((out[0].next_state.total_distance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn early_arrival_waits_until_window_opens() {
        let mut a = Customer::at(0.6, 0.0, 0.1);
        a.te = 1.0;
        a.tl = 3.0;
        let mut b = Customer::at(0.6, 0.1, 0.1);
        b.tl = 1.05;
        let inst = line_instance("VRPTW", vec![a, b]);
        let env = RoutingEnv::new(&inst);
        let mut s = env.free_start(0);
        env.apply(&mut s, 1).unwrap();
        assert_eq!(s.time, 1.0);
        // 1.0 + 0.1 > 1.05
        assert!(!env.feasible(&s)[2]);
    }

    #[test]
    fn masked_action_is_a_contract_violation() {
        let inst = line_instance("CVRP", vec![Customer::at(0.1, 0.0, 0.1)]);
        let env = RoutingEnv::new(&inst);
        let err = env.step(&[env.free_start(0)], &[0]).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn open_route_skips_final_return() {
        let inst = line_instance("OVRP", vec![Customer::at(0.3, 0.4, 0.1)]);
        let env = RoutingEnv::new(&inst);
        let out = env.step(&[env.free_start(0)], &[1]).unwrap();
        assert_eq!(out[0].return_leg, 0.0);
        assert!((out[0].next_state.total_distance - 0.5).abs() < 1e-15);
    }

    #[test]
    fn depot_switch_is_free_and_single() {
        let mut inst = line_instance("MDVRP", vec![Customer::at(0.5, 0.5, 0.1)]);
        inst.depots = vec![[0.0, 0.0], [1.0, 1.0]];
        let env = RoutingEnv::new(&inst);
        let mut s = env.free_start(0);
        let m = env.feasible(&s);
        assert_eq!(m, vec![false, true, true]);
        let (leg, _) = env.apply(&mut s, 1).unwrap();
        assert_eq!(leg, 0.0);
        assert_eq!(env.feasible(&s), vec![false, false, true]);
    }
}
