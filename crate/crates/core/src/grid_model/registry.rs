use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::snapshot::RegionId;
use crate::error::{Error, Result};

/// One candidate substation location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoEntry {
    pub location_id: String,
    pub lat: f64,
    pub lon: f64,
    pub region_id: RegionId,
    pub voltage_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeoRegistry {
    pub entries: Vec<GeoEntry>,
}

impl GeoRegistry {
    pub fn new(entries: Vec<GeoEntry>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for e in &entries {
            if !ids.insert(e.location_id.as_str()) {
                return Err(Error::Invalid(format!("duplicate location id '{}'", e.location_id)));
            }
            if !(-90.0..=90.0).contains(&e.lat) {
                return Err(Error::Invalid(format!(
                    "location '{}' latitude {} outside [-90, 90]",
                    e.location_id, e.lat
                )));
            }
            if !(-180.0..=180.0).contains(&e.lon) {
                return Err(Error::Invalid(format!(
                    "location '{}' longitude {} outside [-180, 180]",
                    e.location_id, e.lon
                )));
            }
            if !(e.voltage_kv > 0.0) {
                return Err(Error::Invalid(format!(
                    "location '{}' has non-positive voltage {}",
                    e.location_id, e.voltage_kv
                )));
            }
        }
        Ok(GeoRegistry { entries })
    }

    pub fn find(&self, location_id: &str) -> Option<&GeoEntry> {
        self.entries.iter().find(|e| e.location_id == location_id)
    }
}

pub fn parse_geo_registry(text: &str, context: &str) -> Result<GeoRegistry> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for row in reader.deserialize::<GeoEntry>() {
        entries.push(row.map_err(|e| Error::parse(context, e.position().map(|p| p.line() as usize), e))?);
    }
    GeoRegistry::new(entries)
}

pub fn load_geo_registry(path: impl AsRef<Path>) -> Result<GeoRegistry> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_geo_registry(&text, &path.display().to_string())
}

pub fn write_geo_registry(registry: &GeoRegistry, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(["location_id", "lat", "lon", "region_id", "voltage_kv"])
        .map_err(|e| Error::parse("registry", None, e))?;
    for e in &registry.entries {
        w.write_record([
            e.location_id.clone(),
            e.lat.to_string(),
            e.lon.to_string(),
            e.region_id.to_string(),
            e.voltage_kv.to_string(),
        ])
        .map_err(|e| Error::parse("registry", None, e))?;
    }
    w.flush().map_err(|e| Error::io("registry", e))
}
