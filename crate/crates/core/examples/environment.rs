//! Steps the routing environment by hand: multi-start reset, feasibility
//! masks, a greedy nearest-feasible walk, rewards and the solution checker.
//!
//! cargo run --release --example environment -- [VARIANT] [n]

use mtvrp::env::{finalize_reward, validate_solution, RoutingEnv};
use mtvrp::instances::{generate, VariantSpec};

fn main() -> mtvrp::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: VariantSpec = args.next().unwrap_or_else(|| "VRPBLTW".into()).parse()?;
    let n: usize = args.next().map_or(8, |a| a.parse().expect("n"));
    let inst = generate(variant, n, 42)?;
    let env = RoutingEnv::new(&inst);
    println!("{} with {n} customers, {} depot(s)", variant.name(), inst.n_depots());

    let mut trajectories = Vec::new();
    for mut s in env.reset(n)? {
        while !s.done {
            let mask = env.feasible(&s);
            // nearest feasible node, depots last
            let next = (0..mask.len())
                .filter(|&v| mask[v])
                .min_by(|&a, &b| {
                    let key = |v: usize| (inst.is_depot(v), env.distances().get(s.current, v));
                    key(a).partial_cmp(&key(b)).unwrap()
                })
                .expect("live trajectories always have a move");
            env.apply(&mut s, next)?;
        }
        trajectories.push(env.into_trajectory(&s, Vec::new()));
    }

    let rewards = finalize_reward(&trajectories, &inst)?;
    for (t, r) in trajectories.iter().zip(&rewards) {
        let verdict = validate_solution(&t.nodes, &inst);
        println!(
            "start {:>2?}  length {:.4}  valid {}  {:?}",
            t.start, -r, verdict.valid, t.nodes
        );
    }

    // a deliberately broken solution
    let mut broken = trajectories[0].nodes.clone();
    broken.push(broken[1]);
    for v in validate_solution(&broken, &inst).violations {
        println!("broken solution: step {} {} ({})", v.step, v.rule, v.detail);
    }
    Ok(())
}
