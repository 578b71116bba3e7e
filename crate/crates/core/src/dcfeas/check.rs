use serde::Serialize;

use super::model::{DCModel, GeneratorBounds, Island};
use super::qp::{Outcome, Program};
use crate::error::{Error, Result};

/// Total constraint violation (MW) accepted as feasible.
pub const VIOLATION_TOLERANCE: f64 = 1e-6;

/// A dispatch that serves the load, with the angles and flows it implies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    /// Index-aligned with [`DCModel::generator_ids`].
    pub dispatch: Vec<f64>,
    /// Index-aligned with [`DCModel::bus_ids`]; zero at reference buses.
    pub angles: Vec<f64>,
    /// Index-aligned with [`DCModel::branch_ids`].
    pub flows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overload {
    pub branch_id: u32,
    pub flow_mw: f64,
    pub limit_mw: f64,
}

/// Why no dispatch exists.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Island load lies outside the summed dispatch range.
    Capacity {
        island: usize,
        load_mw: f64,
        min_mw: f64,
        max_mw: f64,
    },
    /// Even the dispatch minimizing total overload leaves these branches above
    /// their derated limits.
    Flow {
        island: usize,
        total_violation_mw: f64,
        overloads: Vec<Overload>,
    },
}

impl std::fmt::Display for Certificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Certificate::Capacity { island, load_mw, min_mw, max_mw } => write!(
                f,
                "island {island}: load {load_mw} MW outside dispatch range [{min_mw}, {max_mw}] MW"
            ),
            Certificate::Flow { island, total_violation_mw, overloads } => {
                write!(f, "island {island}: {total_violation_mw} MW unavoidable overload on branches")?;
                for o in overloads {
                    write!(f, " {} ({} / {} MW)", o.branch_id, o.flow_mw, o.limit_mw)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Feasibility {
    Feasible(Witness),
    Infeasible(Certificate),
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }
}

/// Decides whether some dispatch within `bounds` serves `loads` (one value
/// per model load) without exceeding any derated branch limit.
///
/// Uses the PTDF form: a linear program minimizes the total overload over
/// the dispatch, and the load is feasible when that minimum is within
/// [`VIOLATION_TOLERANCE`]. The witness angles come from the B-θ form and
/// are cross-checked against the PTDF flows.
pub fn feasibility_check(model: &DCModel, bounds: &GeneratorBounds, loads: &[f64]) -> Result<Feasibility> {
    model.check_lengths(bounds, loads)?;
    let mut dispatch = vec![0.0; model.units.len()];
    for (k, isl) in model.islands.iter().enumerate() {
        match island_dispatch(model, isl, k, bounds, loads)? {
            Ok(g) => {
                for (&u, v) in isl.units.iter().zip(g) {
                    dispatch[u] = v;
                }
            }
            Err(cert) => return Ok(Feasibility::Infeasible(cert)),
        }
    }
    let inj = model.injections(&dispatch, loads);
    let flows = model.ptdf_flows(&inj);
    let (angles, angle_flows) = model.angles_and_flows(&inj);
    let scale = 1.0 + inj.iter().map(|v| v.abs()).sum::<f64>();
    if let Some(b) = (0..flows.len()).find(|&b| (flows[b] - angle_flows[b]).abs() > 1e-9 * scale) {
        return Err(Error::Solver(format!(
            "PTDF and angle flows disagree on branch {}: {} vs {}",
            model.lines[b].id, flows[b], angle_flows[b]
        )));
    }
    Ok(Feasibility::Feasible(Witness { dispatch, angles, flows }))
}

fn overloads(model: &DCModel, isl: &Island, flows: &[f64], tol: f64) -> Vec<Overload> {
    isl.lines
        .iter()
        .zip(flows)
        .filter(|(&li, f)| f.abs() > model.lines[li].limit + tol)
        .map(|(&li, &f)| Overload {
            branch_id: model.lines[li].id,
            flow_mw: f,
            limit_mw: model.lines[li].limit,
        })
        .collect()
}

fn island_dispatch(
    model: &DCModel,
    isl: &Island,
    k: usize,
    bounds: &GeneratorBounds,
    loads: &[f64],
) -> Result<std::result::Result<Vec<f64>, Certificate>> {
    let load: f64 = isl.demands.iter().map(|&d| loads[d]).sum();
    let lo: f64 = isl.units.iter().map(|&u| bounds.p_min[u]).sum();
    let hi: f64 = isl.units.iter().map(|&u| bounds.p_max[u]).sum();
    if load > hi + VIOLATION_TOLERANCE || load < lo - VIOLATION_TOLERANCE {
        return Ok(Err(Certificate::Capacity {
            island: k,
            load_mw: load,
            min_mw: lo,
            max_mw: hi,
        }));
    }

    // Flow from loads alone; generator columns of the PTDF give the rest.
    let mut load_inj = vec![0.0; isl.buses.len()];
    for &d in &isl.demands {
        load_inj[isl.local[&model.demands[d].bus]] -= loads[d];
    }
    let base: Vec<f64> = (0..isl.lines.len())
        .map(|r| (0..isl.buses.len()).map(|c| isl.ptdf[(r, c)] * load_inj[c]).sum())
        .collect();
    let gen_col: Vec<usize> = isl.units.iter().map(|&u| isl.local[&model.units[u].bus]).collect();
    let flows_of = |g: &[f64]| -> Vec<f64> {
        (0..isl.lines.len())
            .map(|r| base[r] + gen_col.iter().zip(g).map(|(&c, v)| isl.ptdf[(r, c)] * v).sum::<f64>())
            .collect()
    };

    let (ng, nl) = (isl.units.len(), isl.lines.len());
    if ng == 0 || nl == 0 {
        // No dispatch choice or no branch to overload; balance decides alone.
        let g = if ng == 0 { Vec::new() } else { proportional_dispatch(isl, bounds, load) };
        return Ok(Ok(g));
    }

    // Variables: dispatch g, then per-line overload v.
    let mut lp = Program::new(ng + nl);
    for r in 0..nl {
        lp.q[ng + r] = 1.0;
    }
    lp.eq.push((0..ng).map(|j| (j, 1.0)), load);
    for (j, &u) in isl.units.iter().enumerate() {
        lp.le.push([(j, 1.0)], bounds.p_max[u]);
        lp.le.push([(j, -1.0)], -bounds.p_min[u]);
    }
    for (r, &li) in isl.lines.iter().enumerate() {
        let limit = model.lines[li].limit;
        let row: Vec<(usize, f64)> = gen_col.iter().enumerate().map(|(j, &c)| (j, isl.ptdf[(r, c)])).collect();
        lp.le.push(row.iter().copied().chain([(ng + r, -1.0)]), limit - base[r]);
        lp.le.push(row.iter().map(|&(j, v)| (j, -v)).chain([(ng + r, -1.0)]), limit + base[r]);
        lp.le.push([(ng + r, -1.0)], 0.0);
    }
    let x = match lp.solve(1e-9, 200) {
        Outcome::Solved(x) => x,
        Outcome::Infeasible => {
            return Err(Error::Solver("overload program reported infeasible".into()));
        }
        Outcome::Failed(status) => return Err(Error::Solver(format!("{status:?} in feasibility check"))),
    };

    // Project the solver's dispatch back onto the bounds and the balance so
    // the verdict rests on exact arithmetic, not on solver tolerances.
    let g = repair_dispatch(isl, bounds, &x[..ng], load);
    let flows = flows_of(&g);
    let violation: f64 = isl
        .lines
        .iter()
        .zip(&flows)
        .map(|(&li, f)| (f.abs() - model.lines[li].limit).max(0.0))
        .sum();
    if violation <= VIOLATION_TOLERANCE {
        Ok(Ok(g))
    } else {
        Ok(Err(Certificate::Flow {
            island: k,
            total_violation_mw: violation,
            overloads: overloads(model, isl, &flows, 0.0),
        }))
    }
}

fn proportional_dispatch(isl: &Island, bounds: &GeneratorBounds, load: f64) -> Vec<f64> {
    let lo: f64 = isl.units.iter().map(|&u| bounds.p_min[u]).sum();
    let hi: f64 = isl.units.iter().map(|&u| bounds.p_max[u]).sum();
    let frac = if hi > lo { ((load - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    isl.units
        .iter()
        .map(|&u| bounds.p_min[u] + frac * (bounds.p_max[u] - bounds.p_min[u]))
        .collect()
}

/// Clamps to bounds and spreads any balance mismatch over units with room.
fn repair_dispatch(isl: &Island, bounds: &GeneratorBounds, g: &[f64], load: f64) -> Vec<f64> {
    let mut g: Vec<f64> = isl
        .units
        .iter()
        .zip(g)
        .map(|(&u, &v)| v.clamp(bounds.p_min[u], bounds.p_max[u]))
        .collect();
    for _ in 0..4 {
        let gap = load - g.iter().sum::<f64>();
        if gap == 0.0 {
            break;
        }
        let room: Vec<f64> = isl
            .units
            .iter()
            .zip(&g)
            .map(|(&u, &v)| if gap > 0.0 { bounds.p_max[u] - v } else { v - bounds.p_min[u] })
            .collect();
        let total: f64 = room.iter().sum();
        if total <= 0.0 {
            break;
        }
        for (v, r) in g.iter_mut().zip(&room) {
            *v += gap * r / total;
        }
    }
    g
}
