//! Solves small instances of several tasks exactly and compares the optimum
//! with a single random feasible rollout.
//!
//! cargo run --release --example exact_oracle -- [n]

use std::time::Instant;

use mtvrp::eval::{oracle_optimal, random_policy_objective};
use mtvrp::instances::generate;

fn main() -> mtvrp::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(8, |a| a.parse().expect("n"));
    for name in ["CVRP", "OVRP", "VRPB", "VRPL", "VRPTW", "OVRPBLTW", "VRPMB", "MDVRPTW"] {
        let inst = generate(name.parse()?, n, 3)?;
        let t = Instant::now();
        let opt = oracle_optimal(&inst)?;
        let random = random_policy_objective(&inst, 0)?;
        println!(
            "{name:<9} optimum {:.4}  random {:.4}  expanded {:>8}  {:.3}s  {:?}",
            opt.objective,
            random,
            opt.expanded,
            t.elapsed().as_secs_f64(),
            opt.nodes
        );
    }
    Ok(())
}
