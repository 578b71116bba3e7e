use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::distance::{haversine_km, VoltageClasses};
use crate::error::{Error, Result};
use crate::grid_model::{BusId, GeoEntry, GeoRegistry, NetworkSnapshot, RegionId};

/// Resistance-implied line lengths keyed by the ordered bus pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedLengths {
    pub km: BTreeMap<(BusId, BusId), f64>,
}

fn ordered(a: BusId, b: BusId) -> (BusId, BusId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Line lengths taken proportional to resistance. Parallel branches collapse
/// to their smallest resistance.
pub fn implied_lengths(s: &NetworkSnapshot, km_per_ohm: f64) -> Result<ImpliedLengths> {
    if !(km_per_ohm > 0.0) || !km_per_ohm.is_finite() {
        return Err(Error::Invalid(format!("km_per_ohm must be positive, got {km_per_ohm}")));
    }
    let mut km: BTreeMap<(BusId, BusId), f64> = BTreeMap::new();
    for br in &s.branches {
        let len = km_per_ohm * br.resistance_pu;
        km.entry(ordered(br.from_bus, br.to_bus))
            .and_modify(|v| *v = v.min(len))
            .or_insert(len);
    }
    Ok(ImpliedLengths { km })
}

/// Least-squares scale through the origin between resistances and the
/// great-circle lengths of branches whose both ends have a known location.
/// Returns `None` when no branch qualifies.
pub fn calibrate_km_per_ohm(
    s: &NetworkSnapshot,
    registry: &GeoRegistry,
    known: &BTreeMap<BusId, String>,
) -> Option<f64> {
    let coords = |bus: BusId| {
        let id = known.get(&bus)?;
        registry.find(id).map(|e| (e.lat, e.lon))
    };
    let (mut rd, mut rr) = (0.0, 0.0);
    for br in &s.branches {
        if let (Some(a), Some(b)) = (coords(br.from_bus), coords(br.to_bus)) {
            let d = haversine_km(a, b);
            rd += br.resistance_pu * d;
            rr += br.resistance_pu * br.resistance_pu;
        }
    }
    (rr > 0.0).then(|| rd / rr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length_km: f64,
}

/// A quadratic assignment instance: place substations on compatible, distinct
/// locations so that geographic distances match implied line lengths.
#[derive(Debug, Clone)]
pub struct AssignmentProblem {
    pub substation_ids: Vec<BusId>,
    pub location_ids: Vec<String>,
    /// Candidate coordinates (lat, lon), when the instance came from a registry.
    pub coordinates: Vec<(f64, f64)>,
    /// `compatible[i]` lists candidate indices for substation `i`, ascending.
    pub compatible: Vec<Vec<usize>>,
    pub distances: DMatrix<f64>,
    pub edges: Vec<Edge>,
    pub(crate) adjacency: Vec<Vec<(usize, f64)>>,
}

impl AssignmentProblem {
    /// Generic constructor over an explicit distance matrix.
    pub fn from_matrix(
        compatible: Vec<Vec<usize>>,
        distances: DMatrix<f64>,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        let n = compatible.len();
        let m = distances.nrows();
        if distances.ncols() != m {
            return Err(Error::Invalid("distance matrix is not square".into()));
        }
        for i in 0..m {
            if distances[(i, i)] != 0.0 {
                return Err(Error::Invalid(format!("distance diagonal entry {i} is not zero")));
            }
            for j in 0..i {
                let (a, b) = (distances[(i, j)], distances[(j, i)]);
                if a != b || !(a >= 0.0) {
                    return Err(Error::Invalid(format!(
                        "distance entries ({i},{j}) are not symmetric and nonnegative"
                    )));
                }
            }
        }
        let mut compatible = compatible;
        for (i, set) in compatible.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(Error::Invalid(format!("substation {i} has no compatible location")));
            }
            if set.iter().any(|&j| j >= m) {
                return Err(Error::Invalid(format!("substation {i} references a missing location")));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for e in &edges {
            if e.a >= n || e.b >= n || e.a == e.b {
                return Err(Error::Invalid(format!("edge ({}, {}) is not a valid pair", e.a, e.b)));
            }
            let key = (e.a.min(e.b), e.a.max(e.b));
            merged
                .entry(key)
                .and_modify(|l| *l = l.min(e.length_km))
                .or_insert(e.length_km);
        }
        let edges: Vec<Edge> = merged
            .into_iter()
            .map(|((a, b), length_km)| Edge { a, b, length_km })
            .collect();
        for e in &edges {
            adjacency[e.a].push((e.b, e.length_km));
            adjacency[e.b].push((e.a, e.length_km));
        }
        Ok(AssignmentProblem {
            substation_ids: (0..n as BusId).collect(),
            location_ids: (0..m).map(|j| j.to_string()).collect(),
            coordinates: Vec::new(),
            compatible,
            distances,
            edges,
            adjacency,
        })
    }

    pub fn len(&self) -> usize {
        self.compatible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compatible.is_empty()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn is_compatible(&self, i: usize, j: usize) -> bool {
        self.compatible[i].binary_search(&j).is_ok()
    }

    /// Sum over connected pairs of squared length mismatch, in km².
    pub fn objective(&self, location_of: &[usize]) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let d = self.distances[(location_of[e.a], location_of[e.b])] - e.length_km;
                d * d
            })
            .sum()
    }

    /// Checks compatibility and injectivity of a full assignment.
    pub fn check(&self, location_of: &[usize]) -> Result<()> {
        if location_of.len() != self.len() {
            return Err(Error::Invalid("assignment length does not match instance".into()));
        }
        let mut used = vec![false; self.distances.nrows()];
        for (i, &j) in location_of.iter().enumerate() {
            if !self.is_compatible(i, j) {
                return Err(Error::Invalid(format!(
                    "substation {} placed on incompatible location {}",
                    self.substation_ids[i], self.location_ids[j]
                )));
            }
            if std::mem::replace(&mut used[j], true) {
                return Err(Error::Invalid(format!(
                    "location {} used twice",
                    self.location_ids[j]
                )));
            }
        }
        Ok(())
    }
}

/// Builds the instance for a snapshot and registry: every bus is a
/// substation, compatible with registry entries of the same region and
/// voltage class.
pub fn build_problem(
    s: &NetworkSnapshot,
    registry: &GeoRegistry,
    classes: &VoltageClasses,
    km_per_ohm: f64,
) -> Result<AssignmentProblem> {
    let lengths = implied_lengths(s, km_per_ohm)?;
    let mut buses: Vec<_> = s.buses.iter().collect();
    buses.sort_by_key(|b| b.id);

    let mut by_class: BTreeMap<(RegionId, usize), Vec<usize>> = BTreeMap::new();
    for (k, e) in registry.entries.iter().enumerate() {
        by_class
            .entry((e.region_id, classes.class_of(e.voltage_kv)))
            .or_default()
            .push(k);
    }

    // Candidates are the registry entries compatible with at least one bus.
    let mut candidate_of_entry: BTreeMap<usize, usize> = BTreeMap::new();
    let mut candidates: Vec<&GeoEntry> = Vec::new();
    let mut compatible = Vec::with_capacity(buses.len());
    for bus in &buses {
        let entries = by_class
            .get(&(bus.region_id, classes.class_of(bus.voltage_kv)))
            .ok_or(Error::EmptyCompatibility {
                bus: bus.id,
                region: bus.region_id,
                voltage_kv: bus.voltage_kv,
            })?;
        let set = entries
            .iter()
            .map(|&k| {
                *candidate_of_entry.entry(k).or_insert_with(|| {
                    candidates.push(&registry.entries[k]);
                    candidates.len() - 1
                })
            })
            .collect();
        compatible.push(set);
    }

    let m = candidates.len();
    let coordinates: Vec<(f64, f64)> = candidates.iter().map(|e| (e.lat, e.lon)).collect();
    let mut distances = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..i {
            let d = haversine_km(coordinates[i], coordinates[j]);
            distances[(i, j)] = d;
            distances[(j, i)] = d;
        }
    }

    let index: BTreeMap<BusId, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let edges = lengths
        .km
        .iter()
        .map(|(&(a, b), &length_km)| Edge {
            a: index[&a],
            b: index[&b],
            length_km,
        })
        .collect();

    let mut p = AssignmentProblem::from_matrix(compatible, distances, edges)?;
    p.substation_ids = buses.iter().map(|b| b.id).collect();
    p.location_ids = candidates.iter().map(|e| e.location_id.clone()).collect();
    p.coordinates = coordinates;
    Ok(p)
}
