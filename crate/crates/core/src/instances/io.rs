//! Versioned JSON instance documents.
//!
//! ```json
//! {"version":1,"variant":"VRPTW","n":2,"depots":[[x,y]],
//!  "customers":[{"x":..,"y":..,"dl":..,"db":..,"te":..,"tl":..,"ts":..}],
//!  "capacity":1.0,"duration_limit":1e6}
//! ```
//!
//! Every float is written with 17 significant digits so documents round-trip
//! bit-for-bit.

use std::fmt::Write as _;

use serde::Deserialize;

use super::{Customer, Instance, Point, VariantSpec};
use crate::error::{Error, Result};

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

fn float(out: &mut String, v: f64) {
    // `{:.16e}` prints one leading digit and 16 decimals.
    let _ = write!(out, "{v:.16e}");
}

pub fn instance_to_json(inst: &Instance) -> String {
    let mut s = String::with_capacity(128 + inst.n_customers() * 160);
    let _ = write!(
        s,
        "{{\"version\":{},\"variant\":\"{}\",\"n\":{},\"depots\":[",
        INSTANCE_FORMAT_VERSION,
        inst.variant.name(),
        inst.n_customers()
    );
    for (i, d) in inst.depots.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push('[');
        float(&mut s, d[0]);
        s.push(',');
        float(&mut s, d[1]);
        s.push(']');
    }
    s.push_str("],\"customers\":[");
    for (i, c) in inst.customers.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let fields = [
            ("x", c.x),
            ("y", c.y),
            ("dl", c.dl),
            ("db", c.db),
            ("te", c.te),
            ("tl", c.tl),
            ("ts", c.ts),
        ];
        s.push('{');
        for (k, (name, v)) in fields.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "\"{name}\":");
            float(&mut s, *v);
        }
        s.push('}');
    }
    s.push_str("],\"capacity\":");
    float(&mut s, inst.capacity);
    s.push_str(",\"duration_limit\":");
    float(&mut s, inst.duration_limit);
    s.push('}');
    s
}

#[derive(Deserialize)]
struct Doc {
    version: u32,
    variant: VariantSpec,
    n: usize,
    depots: Vec<Point>,
    customers: Vec<Customer>,
    capacity: f64,
    duration_limit: f64,
}

pub fn instance_from_json(text: &str) -> Result<Instance> {
    let doc: Doc = serde_json::from_str(text)?;
    if doc.version != INSTANCE_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported instance format version {}",
            doc.version
        )));
    }
    if doc.n != doc.customers.len() {
        return Err(Error::invalid(format!(
            "header says n={} but {} customers are listed",
            doc.n,
            doc.customers.len()
        )));
    }
    let inst = Instance {
        variant: doc.variant,
        depots: doc.depots,
        customers: doc.customers,
        capacity: doc.capacity,
        duration_limit: doc.duration_limit,
    };
    inst.check()?;
    Ok(inst)
}

/// One instance document per line.
pub fn dataset_to_jsonl(instances: &[Instance]) -> String {
    let mut s = String::new();
    for inst in instances {
        s.push_str(&instance_to_json(inst));
        s.push('\n');
    }
    s
}

/// Reads a JSON-lines dataset; blank lines are skipped.
pub fn dataset_from_jsonl(text: &str) -> Result<Vec<Instance>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| instance_from_json(l).map_err(|e| Error::parse(i + 1, e.to_string())))
        .collect()
}

/// Loads a JSON-lines dataset, or a single Solomon-format file.
pub fn load_instances(text: &str) -> Result<Vec<Instance>> {
    if text.trim_start().starts_with('{') {
        dataset_from_jsonl(text)
    } else {
        Ok(vec![super::parse_solomon(text)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::generate;
    use proptest::prelude::*;

    #[test]
    fn seventeen_significant_digits() {
        let mut s = String::new();
        float(&mut s, 0.1);
        assert_eq!(s, "1.0000000000000001e-1");
    }

    #[test]
    fn rejects_count_mismatch() {
        let inst = generate(VariantSpec::CVRP, 3, 1).unwrap();
        let text = instance_to_json(&inst).replace("\"n\":3", "\"n\":4");
        assert!(instance_from_json(&text).is_err());
    }

    #[test]
    fn dataset_round_trip_and_line_numbers() {
        let insts: Vec<Instance> = (0..3)
            .map(|s| generate(VariantSpec::catalog()[s as usize * 7], 4, s).unwrap())
            .collect();
        let text = dataset_to_jsonl(&insts);
        assert_eq!(dataset_from_jsonl(&text).unwrap(), insts);
        assert_eq!(load_instances(&text).unwrap(), insts);
        let broken = format!("{text}\n{{\"version\":1}}\n");
        match dataset_from_jsonl(&broken) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn json_round_trip_is_exact(seed in any::<u64>(), n in 1usize..12, vi in 0usize..48) {
            let variant = VariantSpec::catalog()[vi];
            let inst = generate(variant, n, seed).unwrap();
            let back = instance_from_json(&instance_to_json(&inst)).unwrap();
            prop_assert_eq!(back, inst);
        }
    }
}
