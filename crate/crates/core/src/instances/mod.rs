//! Task variants, synthetic instance generation, and instance file formats.

mod generate;
mod io;
mod solomon;
mod variant;

pub use generate::{demand_scale, generate, MD_DEPOT_COUNT};
pub use io::{
    dataset_from_jsonl, dataset_to_jsonl, instance_from_json, instance_to_json, load_instances,
    INSTANCE_FORMAT_VERSION,
};
pub use solomon::{parse_solomon, SolomonFile, SolomonRow};
pub use variant::{variant_from_name, BackhaulMode, VariantSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stand-in for "no limit" on late times and route length.
pub const HORIZON_INF: f64 = 1.0e6;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub x: f64,
    pub y: f64,
    /// Linehaul (delivery) demand, normalized by capacity.
    pub dl: f64,
    /// Backhaul (pickup) demand, normalized by capacity.
    pub db: f64,
    /// Earliest service start.
    pub te: f64,
    /// Latest service start.
    pub tl: f64,
    /// Service duration.
    pub ts: f64,
}

impl Customer {
    /// A customer with padding defaults for every optional constraint.
    pub fn at(x: f64, y: f64, linehaul: f64) -> Self {
        Customer {
            x,
            y,
            dl: linehaul,
            db: 0.0,
            te: 0.0,
            tl: HORIZON_INF,
            ts: 0.0,
        }
    }

    pub fn is_backhaul(&self) -> bool {
        self.db > 0.0
    }

    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

/// A routing instance. Depots occupy node indices `0..depots.len()`, customers
/// follow in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub variant: VariantSpec,
    pub depots: Vec<Point>,
    pub customers: Vec<Customer>,
    pub capacity: f64,
    pub duration_limit: f64,
}

impl Instance {
    pub fn n_customers(&self) -> usize {
        self.customers.len()
    }

    pub fn n_depots(&self) -> usize {
        self.depots.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.depots.len() + self.customers.len()
    }

    pub fn is_depot(&self, node: usize) -> bool {
        node < self.depots.len()
    }

    /// Node index of customer `i` (0-based among customers).
    pub fn customer_node(&self, i: usize) -> usize {
        self.depots.len() + i
    }

    /// The customer at a node index, if that node is a customer.
    pub fn customer(&self, node: usize) -> Option<&Customer> {
        node.checked_sub(self.depots.len())
            .and_then(|i| self.customers.get(i))
    }

    pub fn coords(&self, node: usize) -> Point {
        match self.customer(node) {
            Some(c) => c.point(),
            None => self.depots[node],
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let [ax, ay] = self.coords(a);
        let [bx, by] = self.coords(b);
        (ax - bx).hypot(ay - by)
    }

    /// Full node-to-node Euclidean distance matrix, row-major.
    pub fn distance_matrix(&self) -> DistanceMatrix {
        let n = self.n_nodes();
        let pts: Vec<Point> = (0..n).map(|i| self.coords(i)).collect();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, data: d }
    }

    /// Checks the structural invariants every consumer relies on.
    pub fn check(&self) -> Result<()> {
        let v = self.variant;
        if v.backhaul && v.mixed_backhaul {
            return Err(Error::invalid("variant sets both B and MB"));
        }
        if self.depots.is_empty() {
            return Err(Error::invalid("instance has no depot"));
        }
        if self.depots.len() > 1 && !v.multi_depot {
            return Err(Error::invalid("several depots on a single-depot variant"));
        }
        if !(self.capacity > 0.0) {
            return Err(Error::invalid("capacity must be positive"));
        }
        for (i, c) in self.customers.iter().enumerate() {
            if c.dl < 0.0 || c.db < 0.0 {
                return Err(Error::invalid(format!("customer {i} has a negative demand")));
            }
            if c.te > c.tl {
                return Err(Error::invalid(format!("customer {i} has an empty time window")));
            }
            if v.has_backhaul() && (c.dl > 0.0) == (c.db > 0.0) {
                return Err(Error::invalid(format!(
                    "customer {i} must carry exactly one of linehaul/backhaul demand"
                )));
            }
            if !v.has_backhaul() && c.db != 0.0 {
                return Err(Error::invalid(format!(
                    "customer {i} has backhaul demand on a variant without backhauls"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n..(a + 1) * self.n]
    }
}
