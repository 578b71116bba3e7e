use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::check::{feasibility_check, Feasibility};
use super::model::{DCModel, GeneratorBounds, Island};
use super::qp::{Outcome, Program};
use crate::disagg::{ComponentSeries, Lineage};
use crate::error::{Error, Result};
use crate::grid_model::{RegionId, RegionalSeries};

/// How excursions outside the `[min(L̂, L⁰), max(L̂, L⁰)]` box are charged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlackPenalty {
    /// `Σ s²`, the default.
    Quadratic,
    /// `weight · Σ s`, for comparison with LP-only pipelines. Not the same
    /// optimum as the quadratic form.
    Linear { weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestoreOptions {
    pub slack: SlackPenalty,
    /// Solver feasibility and gap tolerance.
    pub tolerance: f64,
    pub max_iter: u32,
    /// Re-run the feasibility check on every restored load.
    pub verify: bool,
}

impl Default for RestoreOptions {
    fn default() -> Self {
        RestoreOptions {
            slack: SlackPenalty::Quadratic,
            tolerance: 1e-8,
            max_iter: 200,
            verify: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestoreStatus {
    /// The input was already feasible and regionally exact.
    Unchanged,
    Restored,
}

impl RestoreStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RestoreStatus::Unchanged => "unchanged",
            RestoreStatus::Restored => "restored",
        }
    }
}

/// Restored loads in model load order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestorationResult {
    pub loads: Vec<f64>,
    /// Box excursion of each load.
    pub slack: Vec<f64>,
    pub deltas: Vec<f64>,
    pub objective: f64,
    pub status: RestoreStatus,
}

/// `‖L̄ − L̂‖₁` plus the slack penalty at the smallest slack that admits
/// `l_bar`. Returns the objective and that slack.
pub fn objective_value(l_hat: &[f64], l0: &[f64], l_bar: &[f64], penalty: SlackPenalty) -> (f64, Vec<f64>) {
    let slack: Vec<f64> = (0..l_bar.len())
        .map(|i| {
            let (lo, hi) = (l_hat[i].min(l0[i]), l_hat[i].max(l0[i]));
            (lo - l_bar[i]).max(l_bar[i] - hi).max(0.0)
        })
        .collect();
    let l1: f64 = l_bar.iter().zip(l_hat).map(|(a, b)| (a - b).abs()).sum();
    let pen = match penalty {
        SlackPenalty::Quadratic => slack.iter().map(|s| s * s).sum::<f64>(),
        SlackPenalty::Linear { weight } => weight * slack.iter().sum::<f64>(),
    };
    (l1 + pen, slack)
}

fn regionally_exact(model: &DCModel, loads: &[f64], totals: &BTreeMap<RegionId, f64>) -> bool {
    let mut sums: BTreeMap<RegionId, f64> = BTreeMap::new();
    for (d, v) in model.demands.iter().zip(loads) {
        *sums.entry(d.region).or_default() += v;
    }
    sums.iter().all(|(r, s)| {
        let t = totals[r];
        (s - t).abs() <= 1e-9 * t.abs().max(1.0)
    })
}

/// Finds the load closest to `l_hat` (L1 distance plus slack penalty) that
/// meets the regional `totals` and admits a DC-feasible dispatch within
/// `bounds`. All vectors are in model load order.
pub fn restore(
    model: &DCModel,
    bounds: &GeneratorBounds,
    l_hat: &[f64],
    l0: &[f64],
    totals: &BTreeMap<RegionId, f64>,
    opts: &RestoreOptions,
) -> Result<RestorationResult> {
    model.check_lengths(bounds, l_hat)?;
    model.check_lengths(bounds, l0)?;
    for r in model.regions() {
        match totals.get(&r) {
            Some(t) if *t >= 0.0 && t.is_finite() => {}
            Some(t) => return Err(Error::Invalid(format!("region {r} total {t} is negative or not finite"))),
            None => return Err(Error::Invalid(format!("no regional total for region {r}"))),
        }
    }
    if let Some((r, t)) = totals.iter().find(|(r, t)| **t > 0.0 && !model.regions().contains(r)) {
        return Err(Error::Invalid(format!("region {r} has total {t} MW but no loads")));
    }

    if regionally_exact(model, l_hat, totals) && feasibility_check(model, bounds, l_hat)?.is_feasible() {
        return Ok(RestorationResult {
            loads: l_hat.to_vec(),
            slack: vec![0.0; l_hat.len()],
            deltas: vec![0.0; l_hat.len()],
            objective: 0.0,
            status: RestoreStatus::Unchanged,
        });
    }

    let island_totals = apportion(model, l_hat, totals);
    for (k, (isl, t)) in model.islands.iter().zip(&island_totals).enumerate() {
        let load: f64 = t.values().sum();
        let hi: f64 = isl.units.iter().map(|&u| bounds.p_max[u]).sum();
        let lo: f64 = isl.units.iter().map(|&u| bounds.p_min[u]).sum();
        if load > hi * (1.0 + 1e-12) || load < lo * (1.0 - 1e-12) {
            return Err(Error::Infeasible(format!(
                "island {k}: regional load {load} MW outside dispatch range [{lo}, {hi}] MW"
            )));
        }
    }

    // A second pass with slightly tightened limits absorbs solver tolerance
    // if the first answer fails the exact check.
    let mut last_failure = None;
    for tighten in [0.0, 1e-5] {
        let mut l_bar = vec![0.0; l_hat.len()];
        for (k, isl) in model.islands.iter().enumerate() {
            let part = solve_island(model, isl, k, bounds, l_hat, l0, &island_totals[k], opts, tighten)?;
            for (&d, v) in isl.demands.iter().zip(part) {
                l_bar[d] = v;
            }
        }
        if opts.verify {
            if let Feasibility::Infeasible(cert) = feasibility_check(model, bounds, &l_bar)? {
                log::debug!("restored load failed the check ({cert}), tightening");
                last_failure = Some(cert);
                continue;
            }
        }
        let (objective, slack) = objective_value(l_hat, l0, &l_bar, opts.slack);
        let deltas = l_bar.iter().zip(l_hat).map(|(a, b)| a - b).collect();
        return Ok(RestorationResult {
            loads: l_bar,
            slack,
            deltas,
            objective,
            status: RestoreStatus::Restored,
        });
    }
    Err(Error::Solver(format!(
        "restored load fails the feasibility check: {}",
        last_failure.expect("loop ran")
    )))
}

/// Splits each regional total across islands by the island's share of `l_hat`.
fn apportion(model: &DCModel, l_hat: &[f64], totals: &BTreeMap<RegionId, f64>) -> Vec<BTreeMap<RegionId, f64>> {
    let mut region_sum: BTreeMap<RegionId, (f64, usize)> = BTreeMap::new();
    for (d, v) in model.demands.iter().zip(l_hat) {
        let e = region_sum.entry(d.region).or_default();
        e.0 += v;
        e.1 += 1;
    }
    model
        .islands
        .iter()
        .map(|isl| {
            let mut part: BTreeMap<RegionId, (f64, usize)> = BTreeMap::new();
            for &d in &isl.demands {
                let e = part.entry(model.demands[d].region).or_default();
                e.0 += l_hat[d];
                e.1 += 1;
            }
            part.into_iter()
                .map(|(r, (s, n))| {
                    let (all, count) = region_sum[&r];
                    let share = if all > 0.0 { s / all } else { n as f64 / count as f64 };
                    (r, totals[&r] * share)
                })
                .collect()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn solve_island(
    model: &DCModel,
    isl: &Island,
    k: usize,
    bounds: &GeneratorBounds,
    l_hat: &[f64],
    l0: &[f64],
    totals: &BTreeMap<RegionId, f64>,
    opts: &RestoreOptions,
    tighten: f64,
) -> Result<Vec<f64>> {
    let (nl, ng, nb) = (isl.demands.len(), isl.units.len(), isl.buses.len());
    if nl == 0 {
        return Ok(Vec::new());
    }
    // Variable layout: L̄, d⁺, d⁻, s, g, θ (reference angle omitted).
    let (lb, dp, dm, sl, gv, th) = (0, nl, 2 * nl, 3 * nl, 4 * nl, 4 * nl + ng);
    let theta = |c: usize| if c == 0 { None } else { Some(th + c - 1) };
    let mut qp = Program::new(th + nb - 1);

    for i in 0..nl {
        qp.q[dp + i] = 1.0;
        qp.q[dm + i] = 1.0;
        match opts.slack {
            SlackPenalty::Quadratic => qp.p_diag.push((sl + i, 2.0)),
            SlackPenalty::Linear { weight } => qp.q[sl + i] = weight,
        }
    }

    for (i, &d) in isl.demands.iter().enumerate() {
        qp.eq.push([(lb + i, 1.0), (dp + i, -1.0), (dm + i, 1.0)], l_hat[d]);
    }
    for (&r, &t) in totals {
        let members = isl
            .demands
            .iter()
            .enumerate()
            .filter(|(_, &d)| model.demands[d].region == r)
            .map(|(i, _)| (lb + i, 1.0));
        qp.eq.push(members, t);
    }

    let mut balance: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
    for (j, &u) in isl.units.iter().enumerate() {
        balance[isl.local[&model.units[u].bus]].push((gv + j, 1.0));
    }
    for (i, &d) in isl.demands.iter().enumerate() {
        balance[isl.local[&model.demands[d].bus]].push((lb + i, -1.0));
    }
    let mut flow_rows = Vec::with_capacity(isl.lines.len());
    for &li in &isl.lines {
        let l = &model.lines[li];
        let (f, t) = (isl.local[&l.from], isl.local[&l.to]);
        let mut row = Vec::new();
        if let Some(v) = theta(f) {
            row.push((v, l.susceptance));
        }
        if let Some(v) = theta(t) {
            row.push((v, -l.susceptance));
        }
        // Flow f→t leaves bus f and enters bus t.
        for &(v, c) in &row {
            balance[f].push((v, -c));
            balance[t].push((v, c));
        }
        flow_rows.push((row, (l.limit - tighten).max(0.0)));
    }
    for row in balance {
        qp.eq.push(row, 0.0);
    }

    for (row, limit) in &flow_rows {
        qp.le.push(row.iter().copied(), *limit);
        qp.le.push(row.iter().map(|&(v, c)| (v, -c)), *limit);
    }
    for (j, &u) in isl.units.iter().enumerate() {
        qp.le.push([(gv + j, 1.0)], bounds.p_max[u]);
        qp.le.push([(gv + j, -1.0)], -bounds.p_min[u]);
    }
    for (i, &d) in isl.demands.iter().enumerate() {
        let (lo, hi) = (l_hat[d].min(l0[d]), l_hat[d].max(l0[d]));
        qp.le.push([(lb + i, 1.0), (sl + i, -1.0)], hi);
        qp.le.push([(lb + i, -1.0), (sl + i, -1.0)], -lo);
        for base in [lb, dp, dm, sl] {
            qp.le.push([(base + i, -1.0)], 0.0);
        }
    }

    let x = match qp.solve(opts.tolerance, opts.max_iter) {
        Outcome::Solved(x) => x,
        Outcome::Infeasible => {
            return Err(Error::Infeasible(format!(
                "island {k}: no DC-feasible load meets the regional totals"
            )))
        }
        Outcome::Failed(status) => return Err(Error::Solver(format!("island {k}: {status:?}"))),
    };

    // Clip solver noise and rescale each region to its exact total.
    let mut l_bar: Vec<f64> = x[lb..lb + nl].iter().map(|v| v.max(0.0)).collect();
    for (&r, &t) in totals {
        let idx: Vec<usize> = (0..nl).filter(|&i| model.demands[isl.demands[i]].region == r).collect();
        let sum: f64 = idx.iter().map(|&i| l_bar[i]).sum();
        if sum > 0.0 {
            for &i in &idx {
                l_bar[i] *= t / sum;
            }
        } else if t > 0.0 {
            for &i in &idx {
                l_bar[i] = t / idx.len() as f64;
            }
        }
    }
    Ok(l_bar)
}

/// Per-period summary of a horizon restoration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodReport {
    pub period: usize,
    pub objective: f64,
    pub l1_change_mw: f64,
    pub max_single_change_mw: f64,
    pub status: RestoreStatus,
}

/// Restores every period of `series` independently on a pool of
/// `parallelism` threads (0 for the default). `totals` must share the
/// series' granularity; `bounds_for` gives the dispatch limits per period.
pub fn restore_horizon<F>(
    model: &DCModel,
    series: &ComponentSeries,
    totals: &RegionalSeries,
    l0: &[f64],
    bounds_for: F,
    opts: &RestoreOptions,
    parallelism: usize,
) -> Result<(ComponentSeries, Vec<PeriodReport>)>
where
    F: Fn(usize) -> Result<GeneratorBounds> + Sync,
{
    if series.periods() != totals.periods() || series.period_minutes != totals.period_minutes {
        return Err(Error::Invalid(format!(
            "component series has {} periods of {} min, regional totals {} of {} min",
            series.periods(),
            series.period_minutes,
            totals.periods(),
            totals.period_minutes
        )));
    }
    let n = model.demands.len();
    if series.component_ids.len() != n {
        return Err(Error::Invalid(format!(
            "series has {} components, model has {} loads",
            series.component_ids.len(),
            n
        )));
    }
    let rows: Vec<usize> = series
        .component_ids
        .iter()
        .map(|&id| model.load_index(id).ok_or_else(|| Error::Invalid(format!("component {id} is not a model load"))))
        .collect::<Result<_>>()?;
    let mut row_of = vec![usize::MAX; n];
    for (row, &k) in rows.iter().enumerate() {
        row_of[k] = row;
    }
    if row_of.contains(&usize::MAX) {
        return Err(Error::Invalid("series lists a load twice".into()));
    }

    let solve = |t: usize| -> Result<RestorationResult> {
        let l_hat: Vec<f64> = (0..n).map(|k| series.values[(row_of[k], t)]).collect();
        let period_totals: BTreeMap<RegionId, f64> =
            totals.regions.iter().enumerate().map(|(r, &id)| (id, totals.values[(r, t)])).collect();
        restore(model, &bounds_for(t)?, &l_hat, l0, &period_totals, opts)
    };
    let run = || -> Vec<Result<RestorationResult>> { (0..series.periods()).into_par_iter().map(solve).collect() };
    let results = if parallelism == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::Invalid(format!("cannot build worker pool: {e}")))?
            .install(run)
    };

    let mut out = ComponentSeries {
        lineage: Lineage::Restored,
        ..series.clone()
    };
    let mut reports = Vec::with_capacity(results.len());
    for (t, r) in results.into_iter().enumerate() {
        let r = r.map_err(|e| Error::Period {
            period: t,
            source: Box::new(e),
        })?;
        for k in 0..n {
            out.values[(row_of[k], t)] = r.loads[k];
        }
        reports.push(PeriodReport {
            period: t,
            objective: r.objective,
            l1_change_mw: r.deltas.iter().map(|d| d.abs()).sum(),
            max_single_change_mw: r.deltas.iter().fold(0.0, |m, d| m.max(d.abs())),
            status: r.status,
        });
    }
    Ok((out, reports))
}

pub fn write_report_csv(reports: &[PeriodReport], mut out: impl Write) -> Result<()> {
    let io = |e| Error::io("restoration report", e);
    writeln!(out, "period,objective,l1_change_mw,max_single_change_mw,status").map_err(io)?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.period,
            r.objective,
            r.l1_change_mw,
            r.max_single_change_mw,
            r.status.as_str()
        )
        .map_err(io)?;
    }
    Ok(())
}
