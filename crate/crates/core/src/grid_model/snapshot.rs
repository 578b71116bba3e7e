use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BusId = u32;
pub type RegionId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub region_id: RegionId,
    #[serde(rename = "voltage_kV")]
    pub voltage_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: u32,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub resistance_pu: f64,
    pub reactance_pu: f64,
    #[serde(rename = "thermal_limit_MW")]
    pub thermal_limit_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: u32,
    pub bus: BusId,
    pub fuel: String,
    #[serde(rename = "p_min_MW")]
    pub p_min_mw: f64,
    #[serde(rename = "p_max_MW")]
    pub p_max_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: u32,
    pub bus: BusId,
    #[serde(rename = "nominal_MW")]
    pub nominal_mw: f64,
}

/// A single static description of a transmission network: topology, limits
/// and one representative operating point (the load nominal values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub regions: Vec<Region>,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

impl NetworkSnapshot {
    /// Checks every structural invariant, naming the first offending record.
    pub fn validate(&self) -> Result<()> {
        let regions: BTreeSet<RegionId> = self.regions.iter().map(|r| r.id).collect();
        if regions.len() != self.regions.len() {
            return Err(Error::Invalid("duplicate region id".into()));
        }

        let mut buses = BTreeMap::new();
        for bus in &self.buses {
            if buses.insert(bus.id, bus).is_some() {
                return Err(Error::Invalid(format!("duplicate bus id {}", bus.id)));
            }
            if !regions.contains(&bus.region_id) {
                return Err(Error::Invalid(format!(
                    "bus {} references unknown region {}",
                    bus.id, bus.region_id
                )));
            }
            if !(bus.voltage_kv.is_finite() && bus.voltage_kv > 0.0) {
                return Err(Error::Invalid(format!(
                    "bus {} has non-positive voltage {}",
                    bus.id, bus.voltage_kv
                )));
            }
        }

        let mut seen = BTreeSet::new();
        for br in &self.branches {
            if !seen.insert(br.id) {
                return Err(Error::Invalid(format!("duplicate branch id {}", br.id)));
            }
            for end in [br.from_bus, br.to_bus] {
                if !buses.contains_key(&end) {
                    return Err(Error::Invalid(format!(
                        "branch {} references unknown bus {}",
                        br.id, end
                    )));
                }
            }
            if br.from_bus == br.to_bus {
                return Err(Error::Invalid(format!("branch {} is a self-loop", br.id)));
            }
            if !(br.resistance_pu >= 0.0) || !br.resistance_pu.is_finite() {
                return Err(Error::Invalid(format!(
                    "branch {} has negative resistance {}",
                    br.id, br.resistance_pu
                )));
            }
            if !(br.reactance_pu > 0.0) || !br.reactance_pu.is_finite() {
                return Err(Error::Invalid(format!(
                    "branch {} has non-positive reactance {}",
                    br.id, br.reactance_pu
                )));
            }
            if !(br.thermal_limit_mw > 0.0) {
                return Err(Error::Invalid(format!(
                    "branch {} has non-positive thermal limit {}",
                    br.id, br.thermal_limit_mw
                )));
            }
        }

        seen.clear();
        for g in &self.generators {
            if !seen.insert(g.id) {
                return Err(Error::Invalid(format!("duplicate generator id {}", g.id)));
            }
            if !buses.contains_key(&g.bus) {
                return Err(Error::Invalid(format!(
                    "generator {} references unknown bus {}",
                    g.id, g.bus
                )));
            }
            if !(g.p_min_mw <= g.p_max_mw) || !g.p_max_mw.is_finite() {
                return Err(Error::Invalid(format!(
                    "generator {} has p_min {} > p_max {}",
                    g.id, g.p_min_mw, g.p_max_mw
                )));
            }
        }

        seen.clear();
        for l in &self.loads {
            if !seen.insert(l.id) {
                return Err(Error::Invalid(format!("duplicate load id {}", l.id)));
            }
            if !buses.contains_key(&l.bus) {
                return Err(Error::Invalid(format!(
                    "load {} references unknown bus {}",
                    l.id, l.bus
                )));
            }
            if !(l.nominal_mw >= 0.0) || !l.nominal_mw.is_finite() {
                return Err(Error::Invalid(format!(
                    "load {} has negative nominal value {}",
                    l.id, l.nominal_mw
                )));
            }
        }
        Ok(())
    }

    /// Sorts every record list by id.
    pub fn canonicalize(&mut self) {
        self.regions.sort_by_key(|r| r.id);
        self.buses.sort_by_key(|b| b.id);
        self.branches.sort_by_key(|b| b.id);
        self.generators.sort_by_key(|g| g.id);
        self.loads.sort_by_key(|l| l.id);
    }

    pub fn region_ids(&self) -> Vec<RegionId> {
        let mut ids: Vec<_> = self.regions.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn bus_regions(&self) -> BTreeMap<BusId, RegionId> {
        self.buses.iter().map(|b| (b.id, b.region_id)).collect()
    }

    /// Generators whose fuel matches `fuel` (case-insensitive).
    pub fn generators_with_fuel<'a>(&'a self, fuel: &'a str) -> impl Iterator<Item = &'a Generator> + 'a {
        self.generators
            .iter()
            .filter(move |g| g.fuel.eq_ignore_ascii_case(fuel))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut snapshot: NetworkSnapshot = serde_json::from_str(text)
            .map_err(|e| Error::parse("snapshot", Some(e.line()), e))?;
        for g in &mut snapshot.generators {
            g.fuel = g.fuel.to_ascii_lowercase();
        }
        snapshot.validate()?;
        Ok(snapshot)
    }

    /// Canonical JSON: records sorted by id, pretty-printed, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.canonicalize();
        let mut text = serde_json::to_string_pretty(&copy).expect("snapshot serializes");
        text.push('\n');
        text
    }
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<NetworkSnapshot> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NetworkSnapshot::from_json(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::parse(path.display().to_string(), line, message),
        other => other,
    })
}

pub fn write_snapshot(snapshot: &NetworkSnapshot, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, snapshot.to_canonical_json()).map_err(|e| Error::io(path, e))
}
