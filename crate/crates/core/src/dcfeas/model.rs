use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid_model::{BusId, NetworkSnapshot, RegionId};

#[derive(Debug, Clone)]
pub(crate) struct Line {
    pub id: u32,
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
    /// Derated limit in MW.
    pub limit: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Unit {
    pub id: u32,
    pub bus: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Demand {
    pub id: u32,
    pub bus: usize,
    pub region: RegionId,
}

/// One connected component. Bus, line, unit and demand lists hold global
/// indices; `local` maps a global bus index to its position in `buses`.
#[derive(Debug, Clone)]
pub(crate) struct Island {
    pub buses: Vec<usize>,
    pub lines: Vec<usize>,
    pub units: Vec<usize>,
    pub demands: Vec<usize>,
    pub local: BTreeMap<usize, usize>,
    /// Angle sensitivity `X`: angles = X · injections, zero row and column at
    /// the reference (first) bus. Local indices.
    pub angle_map: DMatrix<f64>,
    /// Flow sensitivity, lines × local buses.
    pub ptdf: DMatrix<f64>,
}

/// Dispatch limits for one period, index-aligned with
/// [`DCModel::generator_ids`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorBounds {
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
}

impl GeneratorBounds {
    /// Replaces the limits of one generator.
    pub fn set(&mut self, model: &DCModel, generator: u32, p_min: f64, p_max: f64) -> Result<()> {
        let k = model
            .generator_index(generator)
            .ok_or_else(|| Error::Invalid(format!("unknown generator {generator}")))?;
        if !(p_min <= p_max) {
            return Err(Error::Invalid(format!("generator {generator} bounds {p_min} > {p_max}")));
        }
        self.p_min[k] = p_min;
        self.p_max[k] = p_max;
        Ok(())
    }
}

/// Linearized (DC) network: susceptances from reactances, thermal limits
/// scaled by the derate, and the snapshot's generator and load placement.
/// The reference bus of each island is its lowest bus id.
#[derive(Debug, Clone)]
pub struct DCModel {
    pub derate: f64,
    pub(crate) bus_ids: Vec<BusId>,
    pub(crate) lines: Vec<Line>,
    pub(crate) units: Vec<Unit>,
    pub(crate) demands: Vec<Demand>,
    pub(crate) islands: Vec<Island>,
    default_bounds: GeneratorBounds,
}

impl DCModel {
    /// Builds the model of a connected network.
    pub fn new(s: &NetworkSnapshot, derate: f64) -> Result<Self> {
        let m = Self::with_islands(s, derate)?;
        if m.islands.len() > 1 {
            return Err(Error::Disconnected {
                islands: m.islands.len(),
            });
        }
        Ok(m)
    }

    /// Builds one sub-model per connected component.
    pub fn with_islands(s: &NetworkSnapshot, derate: f64) -> Result<Self> {
        if !(derate > 0.0 && derate <= 1.0) {
            return Err(Error::Invalid(format!("derate must be in (0, 1], got {derate}")));
        }
        s.validate()?;
        let mut bus_ids: Vec<BusId> = s.buses.iter().map(|b| b.id).collect();
        bus_ids.sort_unstable();
        let index: BTreeMap<BusId, usize> = bus_ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let regions = s.bus_regions();

        let mut branches: Vec<_> = s.branches.iter().collect();
        branches.sort_by_key(|b| b.id);
        let lines: Vec<Line> = branches
            .iter()
            .map(|b| Line {
                id: b.id,
                from: index[&b.from_bus],
                to: index[&b.to_bus],
                susceptance: 1.0 / b.reactance_pu,
                limit: derate * b.thermal_limit_mw,
            })
            .collect();

        let mut gens: Vec<_> = s.generators.iter().collect();
        gens.sort_by_key(|g| g.id);
        let units = gens.iter().map(|g| Unit { id: g.id, bus: index[&g.bus] }).collect();
        let default_bounds = GeneratorBounds {
            p_min: gens.iter().map(|g| g.p_min_mw).collect(),
            p_max: gens.iter().map(|g| g.p_max_mw).collect(),
        };

        let mut loads: Vec<_> = s.loads.iter().collect();
        loads.sort_by_key(|l| l.id);
        let demands = loads
            .iter()
            .map(|l| Demand {
                id: l.id,
                bus: index[&l.bus],
                region: regions[&l.bus],
            })
            .collect();

        let mut model = DCModel {
            derate,
            bus_ids,
            lines,
            units,
            demands,
            islands: Vec::new(),
            default_bounds,
        };
        model.islands = model.split_islands()?;
        if model.islands.len() > 1 {
            log::warn!("network has {} islands, each is handled separately", model.islands.len());
        }
        Ok(model)
    }

    fn split_islands(&self) -> Result<Vec<Island>> {
        let n = self.bus_ids.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut label = vec![usize::MAX; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let k = groups.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            label[start] = k;
            while let Some(v) = stack.pop() {
                members.push(v);
                for &w in &adj[v] {
                    if label[w] == usize::MAX {
                        label[w] = k;
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            groups.push(members);
        }

        groups
            .into_iter()
            .enumerate()
            .map(|(k, buses)| {
                let local: BTreeMap<usize, usize> = buses.iter().enumerate().map(|(i, &b)| (b, i)).collect();
                let lines: Vec<usize> = (0..self.lines.len()).filter(|&i| label[self.lines[i].from] == k).collect();
                let units = (0..self.units.len()).filter(|&i| label[self.units[i].bus] == k).collect();
                let demands = (0..self.demands.len()).filter(|&i| label[self.demands[i].bus] == k).collect();
                let (angle_map, ptdf) = self.sensitivities(&buses, &local, &lines)?;
                Ok(Island {
                    buses,
                    lines,
                    units,
                    demands,
                    local,
                    angle_map,
                    ptdf,
                })
            })
            .collect()
    }

    fn sensitivities(
        &self,
        buses: &[usize],
        local: &BTreeMap<usize, usize>,
        lines: &[usize],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = buses.len();
        let mut b = DMatrix::zeros(n, n);
        for &li in lines {
            let l = &self.lines[li];
            let (f, t) = (local[&l.from], local[&l.to]);
            b[(f, f)] += l.susceptance;
            b[(t, t)] += l.susceptance;
            b[(f, t)] -= l.susceptance;
            b[(t, f)] -= l.susceptance;
        }
        let mut x = DMatrix::zeros(n, n);
        if n > 1 {
            let reduced = b.view((1, 1), (n - 1, n - 1)).clone_owned();
            let inv = reduced
                .lu()
                .try_inverse()
                .ok_or_else(|| Error::Solver("reduced susceptance matrix is singular".into()))?;
            x.view_mut((1, 1), (n - 1, n - 1)).copy_from(&inv);
        }
        let ptdf = DMatrix::from_fn(lines.len(), n, |r, c| {
            let l = &self.lines[lines[r]];
            l.susceptance * (x[(local[&l.from], c)] - x[(local[&l.to], c)])
        });
        Ok((x, ptdf))
    }

    pub fn bus_ids(&self) -> &[BusId] {
        &self.bus_ids
    }

    pub fn generator_ids(&self) -> Vec<u32> {
        self.units.iter().map(|u| u.id).collect()
    }

    pub fn load_ids(&self) -> Vec<u32> {
        self.demands.iter().map(|d| d.id).collect()
    }

    pub fn load_regions(&self) -> Vec<RegionId> {
        self.demands.iter().map(|d| d.region).collect()
    }

    pub fn branch_ids(&self) -> Vec<u32> {
        self.lines.iter().map(|l| l.id).collect()
    }

    /// Derated limits, index-aligned with [`Self::branch_ids`].
    pub fn branch_limits(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.limit).collect()
    }

    pub fn generator_index(&self, id: u32) -> Option<usize> {
        self.units.binary_search_by_key(&id, |u| u.id).ok()
    }

    pub fn load_index(&self, id: u32) -> Option<usize> {
        self.demands.binary_search_by_key(&id, |d| d.id).ok()
    }

    pub fn island_count(&self) -> usize {
        self.islands.len()
    }

    /// Reference bus id of every island.
    pub fn reference_buses(&self) -> Vec<BusId> {
        self.islands.iter().map(|i| self.bus_ids[i.buses[0]]).collect()
    }

    pub fn regions(&self) -> BTreeSet<RegionId> {
        self.demands.iter().map(|d| d.region).collect()
    }

    /// Snapshot dispatch limits.
    pub fn default_bounds(&self) -> GeneratorBounds {
        self.default_bounds.clone()
    }

    pub(crate) fn check_lengths(&self, bounds: &GeneratorBounds, loads: &[f64]) -> Result<()> {
        if bounds.p_min.len() != self.units.len() || bounds.p_max.len() != self.units.len() {
            return Err(Error::Invalid(format!(
                "bounds cover {} generators, model has {}",
                bounds.p_min.len(),
                self.units.len()
            )));
        }
        if loads.len() != self.demands.len() {
            return Err(Error::Invalid(format!(
                "{} load values for {} loads",
                loads.len(),
                self.demands.len()
            )));
        }
        if let Some(i) = loads.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "load {} has invalid value {}",
                self.demands[i].id, loads[i]
            )));
        }
        Ok(())
    }

    /// Net injection per bus (generation minus load).
    pub fn injections(&self, dispatch: &[f64], loads: &[f64]) -> Vec<f64> {
        let mut inj = vec![0.0; self.bus_ids.len()];
        for (u, g) in self.units.iter().zip(dispatch) {
            inj[u.bus] += g;
        }
        for (d, l) in self.demands.iter().zip(loads) {
            inj[d.bus] -= l;
        }
        inj
    }

    /// Branch flows from bus injections through the PTDF.
    pub fn ptdf_flows(&self, injections: &[f64]) -> Vec<f64> {
        let mut flows = vec![0.0; self.lines.len()];
        for isl in &self.islands {
            for (r, &li) in isl.lines.iter().enumerate() {
                flows[li] = isl.buses.iter().enumerate().map(|(c, &b)| isl.ptdf[(r, c)] * injections[b]).sum();
            }
        }
        flows
    }

    /// Bus angles (zero at each reference bus) and the flows they imply.
    pub fn angles_and_flows(&self, injections: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut theta = vec![0.0; self.bus_ids.len()];
        for isl in &self.islands {
            for (r, &b) in isl.buses.iter().enumerate() {
                theta[b] = isl.buses.iter().enumerate().map(|(c, &k)| isl.angle_map[(r, c)] * injections[k]).sum();
            }
        }
        let flows = self.lines.iter().map(|l| l.susceptance * (theta[l.from] - theta[l.to])).collect();
        (theta, flows)
    }
}
