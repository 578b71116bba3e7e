use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use super::problem::AssignmentProblem;
use super::search::Assignment;
use crate::error::{Error, Result};
use crate::grid_model::BusId;

/// Where one substation ended up.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PlacedSubstation {
    pub substation_id: BusId,
    pub location_id: String,
    pub lat: f64,
    pub lon: f64,
}

pub fn placements(p: &AssignmentProblem, a: &Assignment) -> Vec<PlacedSubstation> {
    a.location_of
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let (lat, lon) = p.coordinates.get(j).copied().unwrap_or((f64::NAN, f64::NAN));
            PlacedSubstation {
                substation_id: p.substation_ids[i],
                location_id: p.location_ids[j].clone(),
                lat,
                lon,
            }
        })
        .collect()
}

pub fn write_assignment_csv(rows: &[PlacedSubstation], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "substation_id,location_id,lat,lon")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.substation_id, r.location_id, r.lat, r.lon)?;
    }
    Ok(())
}

pub fn read_assignment_csv(path: impl AsRef<Path>) -> Result<BTreeMap<BusId, PlacedSubstation>> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(&ctx, None, e))?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<PlacedSubstation>() {
        let row = row.map_err(|e| Error::parse(&ctx, e.position().map(|p| p.line() as usize), e))?;
        if !(-90.0..=90.0).contains(&row.lat) || !(-180.0..=180.0).contains(&row.lon) {
            return Err(Error::Invalid(format!(
                "substation {} has coordinates out of range",
                row.substation_id
            )));
        }
        out.insert(row.substation_id, row);
    }
    Ok(out)
}
