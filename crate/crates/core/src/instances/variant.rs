use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Which side constraints a routing task activates on top of plain CVRP.
///
/// Names follow the usual concatenation: an optional `MD` prefix, an optional
/// `O`, the literal `VRP`, then optional `B` or `MB`, `L` and `TW` suffixes.
/// The task with nothing switched on is spelled `CVRP`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct VariantSpec {
    pub open: bool,
    pub duration_limited: bool,
    pub backhaul: bool,
    pub mixed_backhaul: bool,
    pub time_windows: bool,
    pub multi_depot: bool,
}

/// Backhaul regime of a variant. `B` and `MB` are mutually exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackhaulMode {
    None,
    /// All linehaul deliveries precede every backhaul pickup.
    Strict,
    /// Linehaul and backhaul customers may interleave.
    Mixed,
}

impl VariantSpec {
    pub const CVRP: VariantSpec = VariantSpec {
        open: false,
        duration_limited: false,
        backhaul: false,
        mixed_backhaul: false,
        time_windows: false,
        multi_depot: false,
    };

    pub fn new(
        open: bool,
        duration_limited: bool,
        backhaul: BackhaulMode,
        time_windows: bool,
        multi_depot: bool,
    ) -> Self {
        VariantSpec {
            open,
            duration_limited,
            backhaul: backhaul == BackhaulMode::Strict,
            mixed_backhaul: backhaul == BackhaulMode::Mixed,
            time_windows,
            multi_depot,
        }
    }

    pub fn backhaul_mode(&self) -> BackhaulMode {
        match (self.backhaul, self.mixed_backhaul) {
            (false, false) => BackhaulMode::None,
            (true, false) => BackhaulMode::Strict,
            (false, true) => BackhaulMode::Mixed,
            (true, true) => panic!("variant sets both B and MB"),
        }
    }

    pub fn has_backhaul(&self) -> bool {
        self.backhaul || self.mixed_backhaul
    }

    /// The 16 training tasks: every combination of O, L, B and TW.
    pub fn in_distribution() -> Vec<VariantSpec> {
        Self::catalog()
            .into_iter()
            .filter(|v| !v.mixed_backhaul && !v.multi_depot)
            .collect()
    }

    /// All 48 tasks: {none, B, MB} x O x L x TW x MD.
    pub fn catalog() -> Vec<VariantSpec> {
        let mut out = Vec::with_capacity(48);
        for multi_depot in [false, true] {
            for backhaul in [BackhaulMode::None, BackhaulMode::Strict, BackhaulMode::Mixed] {
                for open in [false, true] {
                    for duration_limited in [false, true] {
                        for time_windows in [false, true] {
                            out.push(VariantSpec::new(
                                open,
                                duration_limited,
                                backhaul,
                                time_windows,
                                multi_depot,
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    /// Named variant sets accepted on the command line.
    pub fn set_by_name(name: &str) -> Result<Vec<VariantSpec>> {
        match name {
            "in16" => Ok(Self::in_distribution()),
            "all48" => Ok(Self::catalog()),
            other => other.split(',').map(|n| n.trim().parse()).collect(),
        }
    }

    pub fn name(&self) -> String {
        let mut s = String::new();
        if self.multi_depot {
            s.push_str("MD");
        }
        if self.open {
            s.push('O');
        }
        if s.is_empty()
            && !self.has_backhaul()
            && !self.duration_limited
            && !self.time_windows
        {
            return "CVRP".to_string();
        }
        s.push_str("VRP");
        match self.backhaul_mode() {
            BackhaulMode::None => {}
            BackhaulMode::Strict => s.push('B'),
            BackhaulMode::Mixed => s.push_str("MB"),
        }
        if self.duration_limited {
            s.push('L');
        }
        if self.time_windows {
            s.push_str("TW");
        }
        s
    }
}

/// Parses a task label such as `OVRPBLTW` or `MDOVRPMBLTW`.
pub fn variant_from_name(name: &str) -> Result<VariantSpec> {
    if name == "CVRP" {
        return Ok(VariantSpec::CVRP);
    }
    let err = |fragment: &str| {
        Error::parse(
            0,
            format!("unrecognized task fragment {fragment:?} in {name:?}"),
        )
    };
    let mut rest = name;
    let mut v = VariantSpec::default();
    if let Some(r) = rest.strip_prefix("MD") {
        v.multi_depot = true;
        rest = r;
    }
    if let Some(r) = rest.strip_prefix('O') {
        v.open = true;
        rest = r;
    }
    rest = rest.strip_prefix("VRP").ok_or_else(|| err(rest))?;
    if let Some(r) = rest.strip_prefix("MB") {
        v.mixed_backhaul = true;
        rest = r;
    } else if let Some(r) = rest.strip_prefix('B') {
        v.backhaul = true;
        rest = r;
    }
    if let Some(r) = rest.strip_prefix('L') {
        v.duration_limited = true;
        rest = r;
    }
    if let Some(r) = rest.strip_prefix("TW") {
        v.time_windows = true;
        rest = r;
    }
    if !rest.is_empty() {
        return Err(err(rest));
    }
    // "VRP" alone is not a label; the base task is spelled CVRP.
    if v == VariantSpec::CVRP {
        return Err(err(name));
    }
    Ok(v)
}

impl FromStr for VariantSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        variant_from_name(s)
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for VariantSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for VariantSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cvrp_has_no_flags() {
        assert_eq!(variant_from_name("CVRP").unwrap(), VariantSpec::default());
    }

    #[test]
    fn parses_compound_labels() {
        let v = variant_from_name("OVRPBLTW").unwrap();
        assert!(v.open && v.backhaul && v.duration_limited && v.time_windows);
        assert!(!v.mixed_backhaul && !v.multi_depot);

        let v = variant_from_name("MDOVRPMBLTW").unwrap();
        assert!(v.multi_depot && v.open && v.mixed_backhaul && v.duration_limited && v.time_windows);
        assert!(!v.backhaul);
    }

    #[test]
    fn rejects_unknown_fragments() {
        let err = variant_from_name("OVRPXTW").unwrap_err().to_string();
        assert!(err.contains("XTW"), "{err}");
        assert!(variant_from_name("VRP").is_err());
        assert!(variant_from_name("OVRPTWL").is_err());
        assert!(variant_from_name("").is_err());
    }

    #[test]
    fn catalog_names_round_trip() {
        let all = VariantSpec::catalog();
        assert_eq!(all.len(), 48);
        let mut names: Vec<String> = all.iter().map(|v| v.name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 48);
        for v in all {
            assert_eq!(variant_from_name(&v.name()).unwrap(), v);
        }
    }

    #[test]
    fn in_distribution_set() {
        let ind = VariantSpec::in_distribution();
        assert_eq!(ind.len(), 16);
        assert!(ind.iter().all(|v| !v.mixed_backhaul && !v.multi_depot));
        assert!(ind.contains(&"OVRPBLTW".parse().unwrap()));
    }
}
