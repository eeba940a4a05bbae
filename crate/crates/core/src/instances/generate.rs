use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Customer, Instance, VariantSpec, HORIZON_INF};
use crate::error::{Error, Result};

/// Number of depots drawn for multi-depot tasks.
pub const MD_DEPOT_COUNT: usize = 3;

const DURATION_LIMIT: f64 = 3.0;
const BACKHAUL_FRACTION: f64 = 0.2;
const EARLY_RANGE: (f64, f64) = (0.0126, 4.25);
const SERVICE_RANGE: (f64, f64) = (0.0, 0.15);
const WINDOW_RANGE: (f64, f64) = (1.8, 2.0);

/// Divisor that maps raw integer demands onto a unit-capacity vehicle.
pub fn demand_scale(n: usize) -> f64 {
    30.0 + n as f64 / 5.0
}

/// Samples a random instance of `variant` with `n` customers.
///
/// Coordinates are uniform in the unit square, raw demands are integers in
/// `[1, 10)` divided by [`demand_scale`]. Under a backhaul regime a seeded
/// shuffle picks `ceil(0.2 n)` customers to carry backhaul demand instead of
/// linehaul demand. The seed fixes the entire draw sequence.
pub fn generate(variant: VariantSpec, n: usize, seed: u64) -> Result<Instance> {
    if n == 0 {
        return Err(Error::invalid("instance needs at least one customer"));
    }
    if variant.backhaul && variant.mixed_backhaul {
        return Err(Error::invalid("variant sets both B and MB"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_depots = if variant.multi_depot { MD_DEPOT_COUNT } else { 1 };
    let depots = (0..n_depots)
        .map(|_| [rng.gen::<f64>(), rng.gen::<f64>()])
        .collect();

    let scale = demand_scale(n);
    let mut customers: Vec<Customer> = (0..n)
        .map(|_| {
            let x = rng.gen::<f64>();
            let y = rng.gen::<f64>();
            let raw: u32 = rng.gen_range(1..10);
            Customer::at(x, y, raw as f64 / scale)
        })
        .collect();

    if variant.has_backhaul() {
        let n_back = (BACKHAUL_FRACTION * n as f64).ceil() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..n_back] {
            let c = &mut customers[i];
            c.db = c.dl;
            c.dl = 0.0;
        }
    }

    if variant.time_windows {
        for c in customers.iter_mut() {
            let te = rng.gen_range(EARLY_RANGE.0..=EARLY_RANGE.1);
            let ts = rng.gen_range(SERVICE_RANGE.0..SERVICE_RANGE.1);
            let w = rng.gen_range(WINDOW_RANGE.0..WINDOW_RANGE.1);
            c.te = te;
            c.ts = ts;
            c.tl = te + w;
        }
    }

    Ok(Instance {
        variant,
        depots,
        customers,
        capacity: 1.0,
        duration_limit: if variant.duration_limited {
            DURATION_LIMIT
        } else {
            HORIZON_INF
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demand_scale_arithmetic() {
        assert_eq!(demand_scale(50), 40.0);
        assert_eq!(5.0 / demand_scale(50), 0.125);
    }

    #[test]
    fn zero_customers_rejected() {
        assert!(matches!(
            generate(VariantSpec::CVRP, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn backhaul_split_is_exact() {
        let inst = generate("VRPB".parse().unwrap(), 10, 3).unwrap();
        let back = inst.customers.iter().filter(|c| c.db > 0.0).count();
        let line = inst.customers.iter().filter(|c| c.dl > 0.0).count();
        assert_eq!((back, line), (2, 8));
        inst.check().unwrap();
    }

    #[test]
    fn padding_defaults_without_constraints() {
        let inst = generate(VariantSpec::CVRP, 20, 9).unwrap();
        assert_eq!(inst.duration_limit, HORIZON_INF);
        assert_eq!(inst.depots.len(), 1);
        for c in &inst.customers {
            assert_eq!((c.te, c.tl, c.ts, c.db), (0.0, HORIZON_INF, 0.0, 0.0));
        }
    }

    #[test]
    fn multi_depot_and_limits() {
        let inst = generate("MDVRPLTW".parse().unwrap(), 12, 4).unwrap();
        assert_eq!(inst.depots.len(), MD_DEPOT_COUNT);
        assert_eq!(inst.duration_limit, 3.0);
        for c in &inst.customers {
            assert!(c.te >= 0.0126 && c.te <= 4.25);
            assert!(c.tl - c.te >= 1.8 && c.tl - c.te < 2.0);
            assert!(c.ts >= 0.0 && c.ts < 0.15);
        }
    }
}
