#![allow(dead_code)]

use mtvrp::env::{RoutingEnv, TrajectoryState};
use mtvrp::instances::{BackhaulMode, Instance};
use rand::seq::SliceRandom;
use rand::Rng;

const EPS: f64 = 1e-9;

/// Feasible next nodes recomputed from scratch from the node sequence alone.
/// Shares no bookkeeping with the environment.
pub fn reference_mask(inst: &Instance, seq: &[usize], forced: Option<usize>) -> Vec<bool> {
    let nd = inst.n_depots();
    let nn = inst.n_nodes();
    let mut mask = vec![false; nn];
    let visited: Vec<bool> = (0..nn).map(|v| v >= nd && seq.contains(&v)).collect();
    if (nd..nn).all(|v| visited[v]) {
        return mask;
    }
    if seq.len() == 1 {
        if let Some(f) = forced {
            mask[f] = true;
            return mask;
        }
    }
    let k = seq.iter().rposition(|&v| v < nd).expect("sequence starts at a depot");
    let start = seq[k];
    let sub = &seq[k + 1..];
    let cur = *seq.last().unwrap();

    let (mut lin, mut back, mut time, mut len, mut pos) = (0.0, 0.0, 0.0, 0.0, start);
    for &c in sub {
        let cust = inst.customer(c).unwrap();
        let d = inst.distance(pos, c);
        lin += cust.dl;
        back += cust.db;
        time = f64::max(time + d, cust.te) + cust.ts;
        len += d;
        pos = c;
    }
    let open_linehaul = (nd..nn)
        .filter(|&v| !visited[v] && inst.customer(v).unwrap().dl > 0.0)
        .count();
    let q = inst.capacity;
    for v in nd..nn {
        if visited[v] {
            continue;
        }
        let c = inst.customer(v).unwrap();
        let cap = match inst.variant.backhaul_mode() {
            BackhaulMode::None => lin + c.dl <= q + EPS,
            BackhaulMode::Strict if c.db > 0.0 => open_linehaul == 0 && back + c.db <= q + EPS,
            BackhaulMode::Strict => lin + c.dl <= q + EPS,
            BackhaulMode::Mixed => lin + back + c.dl + c.db <= q + EPS,
        };
        let d = inst.distance(cur, v);
        let ret = inst.distance(v, start);
        let service_start = f64::max(time + d, c.te);
        let tw = service_start <= c.tl + EPS;
        let horizon = inst.variant.open || service_start + c.ts + ret <= 1e6 + EPS;
        let dur = if inst.variant.open {
            len + d <= inst.duration_limit + EPS
        } else {
            len + d + ret <= inst.duration_limit + EPS
        };
        mask[v] = cap && tw && horizon && dur;
    }
    if cur < nd {
        let switched = seq.len() >= 2 && seq[seq.len() - 2] < nd;
        if !switched {
            for d in 0..nd {
                mask[d] = d != cur;
            }
        }
    } else {
        mask[start] = true;
    }
    mask
}

/// Random walk over feasible actions; returns every visited state.
pub fn random_states<R: Rng>(env: &RoutingEnv<'_>, start: TrajectoryState, rng: &mut R) -> Vec<TrajectoryState> {
    let mut s = start;
    let mut out = vec![s.clone()];
    while !s.done {
        let moves: Vec<usize> = env
            .feasible(&s)
            .iter()
            .enumerate()
            .filter_map(|(v, &ok)| ok.then_some(v))
            .collect();
        let &a = moves.choose(rng).expect("live state has a move");
        env.apply(&mut s, a).unwrap();
        out.push(s.clone());
    }
    out
}

/// Sum of travelled legs, written out independently of the library.
pub fn leg_sum(inst: &Instance, nodes: &[usize]) -> f64 {
    let nd = inst.n_depots();
    let mut total = 0.0;
    let mut depot = nodes[0];
    for i in 1..nodes.len() {
        let (a, b) = (nodes[i - 1], nodes[i]);
        if b < nd {
            depot = b;
        }
        if !(a < nd && b < nd) {
            total += inst.distance(a, b);
        }
    }
    let last = *nodes.last().unwrap();
    if !inst.variant.open && last >= nd {
        total += inst.distance(last, depot);
    }
    total
}
