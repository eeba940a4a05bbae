//! Solomon / Homberger VRPTW benchmark files.
//!
//! ```text
//! R101
//!
//! VEHICLE
//! NUMBER     CAPACITY
//!   25         200
//!
//! CUSTOMER
//! CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE   TIME
//!
//!     0      35         35          0          0        230          0
//!     1      41         49         10        161        171         10
//! ```
//!
//! Row 0 is the depot. Converting to an [`Instance`] divides coordinates,
//! ready/due times and service times by one common factor (the largest
//! coordinate in the file) so that travel time still equals distance, and
//! divides demands by the vehicle capacity.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::{Customer, Instance, VariantSpec, HORIZON_INF};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolomonRow {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub demand: f64,
    pub ready: f64,
    pub due: f64,
    pub service: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolomonFile {
    pub name: String,
    pub vehicles: u32,
    pub capacity: f64,
    /// Depot first, then customers in file order.
    pub rows: Vec<SolomonRow>,
}

fn numbers(line: &str, line_no: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::parse(line_no, format!("non-numeric field {tok:?}")))
        })
        .collect()
}

impl SolomonFile {
    pub fn parse(text: &str) -> Result<Self> {
        // (1-based line number, trimmed content) of non-blank lines
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .peekable();

        let (_, name) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty benchmark file"))?;
        let name = name.to_string();

        let mut seek = |section: &str| -> Result<usize> {
            for (no, l) in lines.by_ref() {
                if l.eq_ignore_ascii_case(section) {
                    return Ok(no);
                }
            }
            Err(Error::parse(0, format!("missing {section} section")))
        };
        let vehicle_line = seek("VEHICLE")?;
        let mut lines = lines;
        let (hdr_no, hdr) = lines
            .next()
            .ok_or_else(|| Error::parse(vehicle_line, "VEHICLE section is empty"))?;
        if !(hdr.contains("NUMBER") && hdr.contains("CAPACITY")) {
            return Err(Error::parse(hdr_no, "expected NUMBER / CAPACITY header"));
        }
        let (vals_no, vals) = lines
            .next()
            .ok_or_else(|| Error::parse(hdr_no, "missing vehicle values"))?;
        let v = numbers(vals, vals_no)?;
        if v.len() != 2 {
            return Err(Error::parse(vals_no, "expected vehicle NUMBER and CAPACITY"));
        }
        if !(v[1] > 0.0) {
            return Err(Error::parse(vals_no, "vehicle capacity must be positive"));
        }
        let (vehicles, capacity) = (v[0] as u32, v[1]);

        match lines.next() {
            Some((_, l)) if l.eq_ignore_ascii_case("CUSTOMER") => {}
            Some((no, l)) => {
                return Err(Error::parse(no, format!("expected CUSTOMER section, found {l:?}")))
            }
            None => return Err(Error::parse(vals_no, "missing CUSTOMER section")),
        }
        // Column header, possibly wrapped onto several lines.
        while let Some((_, l)) = lines.peek() {
            if l.chars().next().is_some_and(|c| c.is_ascii_digit()) {
                break;
            }
            lines.next();
        }

        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (no, l) in lines {
            let f = numbers(l, no)?;
            if f.len() != 7 {
                return Err(Error::parse(
                    no,
                    format!("expected 7 customer fields, found {}", f.len()),
                ));
            }
            let id = f[0] as u32;
            if f[0] < 0.0 || f[0].fract() != 0.0 {
                return Err(Error::parse(no, format!("bad customer id {}", f[0])));
            }
            if !seen.insert(id) {
                return Err(Error::parse(no, format!("duplicate customer id {id}")));
            }
            if f[4] > f[5] {
                return Err(Error::parse(no, "ready time after due date"));
            }
            rows.push(SolomonRow {
                id,
                x: f[1],
                y: f[2],
                demand: f[3],
                ready: f[4],
                due: f[5],
                service: f[6],
            });
        }
        if rows.len() < 2 {
            return Err(Error::parse(
                0,
                "customer table needs a depot row and at least one customer",
            ));
        }
        Ok(SolomonFile {
            name,
            vehicles,
            capacity,
            rows,
        })
    }

    pub fn n_customers(&self) -> usize {
        self.rows.len() - 1
    }

    /// Common divisor applied to coordinates and times.
    pub fn scale(&self) -> f64 {
        let m = self
            .rows
            .iter()
            .flat_map(|r| [r.x.abs(), r.y.abs()])
            .fold(0.0, f64::max);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }

    pub fn to_instance(&self) -> Instance {
        let s = self.scale();
        let depot = &self.rows[0];
        Instance {
            variant: "VRPTW".parse().expect("static label"),
            depots: vec![[depot.x / s, depot.y / s]],
            customers: self.rows[1..]
                .iter()
                .map(|r| Customer {
                    x: r.x / s,
                    y: r.y / s,
                    dl: r.demand / self.capacity,
                    db: 0.0,
                    te: r.ready / s,
                    tl: r.due / s,
                    ts: r.service / s,
                })
                .collect(),
            capacity: 1.0,
            duration_limit: HORIZON_INF,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}\n\nVEHICLE\nNUMBER     CAPACITY", self.name);
        let _ = writeln!(s, "{:>5} {:>12}\n", self.vehicles, self.capacity);
        s.push_str("CUSTOMER\n");
        s.push_str(
            "CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE   TIME\n\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
                r.id, r.x, r.y, r.demand, r.ready, r.due, r.service
            );
        }
        s
    }
}

impl VariantSpec {
    pub fn vrptw() -> Self {
        VariantSpec {
            time_windows: true,
            ..VariantSpec::CVRP
        }
    }
}

/// Parses a Solomon-layout file straight into a scaled VRPTW [`Instance`].
pub fn parse_solomon(text: &str) -> Result<Instance> {
    Ok(SolomonFile::parse(text)?.to_instance())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "TINY3

VEHICLE
NUMBER     CAPACITY
  2         20

CUSTOMER
CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE   TIME

    0      0         0          0          0        100          0
    1      3         4         10          0         50          1
    2      6         8          5         10         60          2
    3     10         0          5          0         90          0
";

    #[test]
    fn parses_fields() {
        let f = SolomonFile::parse(TINY).unwrap();
        assert_eq!(f.name, "TINY3");
        assert_eq!((f.vehicles, f.capacity), (2, 20.0));
        assert_eq!(f.n_customers(), 3);
        assert_eq!(
            f.rows[2],
            SolomonRow { id: 2, x: 6.0, y: 8.0, demand: 5.0, ready: 10.0, due: 60.0, service: 2.0 }
        );
        let inst = f.to_instance();
        assert_eq!(f.scale(), 10.0);
        assert_eq!(inst.depots, vec![[0.0, 0.0]]);
        assert_eq!(inst.customers[0].dl, 0.5);
        assert_eq!(inst.customers[1].te, 1.0);
        assert!(inst.variant.time_windows);
        inst.check().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let f = SolomonFile::parse(TINY).unwrap();
        assert_eq!(SolomonFile::parse(&f.to_text()).unwrap(), f);
    }

    #[test]
    fn empty_table_is_an_error() {
        let text = TINY.split("    0 ").next().unwrap();
        assert!(matches!(SolomonFile::parse(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = TINY.replace("    2      6 ", "    2      x ");
        match SolomonFile::parse(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 12),
            other => panic!("{other:?}"),
        }
        let dup = TINY.replace("    3     10", "    2     10");
        match SolomonFile::parse(&dup) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 13);
                assert!(message.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
        assert!(SolomonFile::parse("X\n\nCUSTOMER\n").is_err());
    }
}
