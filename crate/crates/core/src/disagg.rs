//! Splitting regional totals into component series.
//!
//! Each region's total is shared among its components in proportion to
//! `p ∘ y`, the nominal shares modulated by the volatility multipliers, and
//! renormalized so the region still adds up exactly. A fixed-ratio baseline
//! with independent multiplicative noise is provided for comparison.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use nalgebra::DMatrix;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_model::{format_timestamp, parse_timestamp, ContributionVector, Quantity, RegionId, RegionalSeries};
use crate::seeds;
use crate::stsample::VolatilityPanel;

/// Smallest admissible `pᵀy` before the normalization is refused.
pub const DENOMINATOR_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lineage {
    Disaggregated,
    Restored,
    Baseline,
}

impl Lineage {
    pub fn as_str(self) -> &'static str {
        match self {
            Lineage::Disaggregated => "disaggregated",
            Lineage::Restored => "restored",
            Lineage::Baseline => "baseline",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "disaggregated" => Some(Lineage::Disaggregated),
            "restored" => Some(Lineage::Restored),
            "baseline" => Some(Lineage::Baseline),
            _ => None,
        }
    }
}

/// Component values in MW, one row per component, one column per period.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSeries {
    pub quantity: Quantity,
    pub lineage: Lineage,
    pub component_ids: Vec<u32>,
    /// Region of each row.
    pub regions: Vec<RegionId>,
    pub start: DateTime<Utc>,
    pub period_minutes: u32,
    pub values: DMatrix<f64>,
}

impl ComponentSeries {
    pub fn periods(&self) -> usize {
        self.values.ncols()
    }

    pub fn timestamp(&self, period: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(self.period_minutes as i64 * period as i64)
    }

    /// Per-region sums, rows in ascending region order.
    pub fn regional_totals(&self) -> (Vec<RegionId>, DMatrix<f64>) {
        let mut ids: Vec<RegionId> = self.regions.clone();
        ids.sort_unstable();
        ids.dedup();
        let mut totals = DMatrix::zeros(ids.len(), self.periods());
        for (row, r) in self.regions.iter().enumerate() {
            let k = ids.binary_search(r).expect("region listed");
            let mut dst = totals.row_mut(k);
            dst += self.values.row(row);
        }
        (ids, totals)
    }
}

/// Disaggregates `series` with shares `p` and multipliers `panel`, whose rows
/// follow `p.component_order()`.
pub fn disaggregate(
    series: &RegionalSeries,
    p: &ContributionVector,
    panel: &VolatilityPanel,
) -> Result<ComponentSeries> {
    let y = &panel.values;
    let n = p.len();
    let t_len = series.periods();
    if y.nrows() != n || y.ncols() != t_len {
        return Err(Error::Invalid(format!(
            "panel is {}x{} but {} components over {} periods are needed",
            y.nrows(),
            y.ncols(),
            n,
            t_len
        )));
    }
    let mut values = DMatrix::zeros(n, t_len);
    let mut regions = Vec::with_capacity(n);
    let mut component_ids = Vec::with_capacity(n);
    let mut row = 0;
    for shares in &p.regions {
        let r = series.region_index(shares.region).ok_or_else(|| {
            Error::Invalid(format!("region {} has no {} series", shares.region, series.quantity))
        })?;
        let m = shares.shares.len();
        for t in 0..t_len {
            let total = series.values[(r, t)];
            let denom: f64 = (0..m).map(|k| shares.shares[k] * y[(row + k, t)]).sum();
            if !(denom >= DENOMINATOR_GUARD) {
                return Err(Error::DenominatorUnderflow {
                    region: shares.region,
                    period: t,
                    value: denom,
                });
            }
            for k in 0..m {
                values[(row + k, t)] = total * shares.shares[k] * y[(row + k, t)] / denom;
            }
        }
        regions.extend(std::iter::repeat_n(shares.region, m));
        component_ids.extend_from_slice(&shares.component_ids);
        row += m;
    }
    Ok(ComponentSeries {
        quantity: series.quantity,
        lineage: Lineage::Disaggregated,
        component_ids,
        regions,
        start: series.start,
        period_minutes: series.period_minutes,
        values,
    })
}

fn interpolate_columns(values: &DMatrix<f64>, factor: usize) -> DMatrix<f64> {
    let t = values.ncols();
    if t == 0 {
        return values.clone();
    }
    let out_len = factor * (t - 1) + 1;
    let k = factor as f64;
    DMatrix::from_fn(values.nrows(), out_len, |i, c| {
        let (s, j) = (c / factor, c % factor);
        if j == 0 {
            values[(i, s)]
        } else {
            (values[(i, s)] * (k - j as f64) + values[(i, s + 1)] * j as f64) / k
        }
    })
}

fn refinement_factor(source: u32, target: u32) -> Result<usize> {
    if target == 0 || source % target != 0 {
        return Err(Error::Invalid(format!(
            "target granularity {target} min does not divide source granularity {source} min"
        )));
    }
    Ok((source / target) as usize)
}

/// Linear interpolation to a finer granularity. `T` source points become
/// `k(T − 1) + 1` points with `k = source / target`.
pub fn interpolate(series: &ComponentSeries, target_minutes: u32) -> Result<ComponentSeries> {
    let factor = refinement_factor(series.period_minutes, target_minutes)?;
    Ok(ComponentSeries {
        values: interpolate_columns(&series.values, factor),
        period_minutes: target_minutes,
        ..series.clone()
    })
}

pub fn interpolate_regional(series: &RegionalSeries, target_minutes: u32) -> Result<RegionalSeries> {
    let factor = refinement_factor(series.period_minutes, target_minutes)?;
    RegionalSeries::new(
        series.quantity,
        series.regions.clone(),
        series.start,
        target_minutes,
        interpolate_columns(&series.values, factor),
    )
}

/// Fixed-ratio split with independent log-normal noise of mean one and
/// standard deviation `noise_std`. `totals` is indexed by period and
/// `ratios` by component. The result is not renormalized.
pub fn baseline_uniform(
    quantity: Quantity,
    totals: &[f64],
    start: DateTime<Utc>,
    period_minutes: u32,
    ratios: &[(u32, RegionId, f64)],
    noise_std: f64,
    seed: u64,
) -> Result<ComponentSeries> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Invalid(format!("noise std must be nonnegative, got {noise_std}")));
    }
    let s2 = (1.0 + noise_std * noise_std).ln();
    let noise = LogNormal::new(-s2 / 2.0, s2.sqrt()).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = seeds::rng(seed);
    let mut values = DMatrix::zeros(ratios.len(), totals.len());
    for (t, &total) in totals.iter().enumerate() {
        for (i, &(_, _, ratio)) in ratios.iter().enumerate() {
            let m = if noise_std == 0.0 { 1.0 } else { noise.sample(&mut rng) };
            values[(i, t)] = total * ratio * m;
        }
    }
    Ok(ComponentSeries {
        quantity,
        lineage: Lineage::Baseline,
        component_ids: ratios.iter().map(|r| r.0).collect(),
        regions: ratios.iter().map(|r| r.1).collect(),
        start,
        period_minutes,
        values,
    })
}

/// Writes series in long format `component_id,timestamp,quantity,value_mw,lineage`.
pub fn write_component_csv<'a>(
    series: impl IntoIterator<Item = &'a ComponentSeries>,
    mut out: impl Write,
) -> Result<()> {
    let io = |e| Error::io("component csv", e);
    writeln!(out, "component_id,timestamp,quantity,value_mw,lineage").map_err(io)?;
    for s in series {
        for (row, id) in s.component_ids.iter().enumerate() {
            for t in 0..s.periods() {
                writeln!(
                    out,
                    "{id},{},{},{},{}",
                    format_timestamp(s.timestamp(t)),
                    s.quantity,
                    s.values[(row, t)],
                    s.lineage.as_str()
                )
                .map_err(io)?;
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct LongRow {
    component_id: u32,
    timestamp: String,
    quantity: String,
    value_mw: f64,
    lineage: String,
}

/// Reads a long-format file back. Regions are looked up in `component_region`.
/// Each (quantity, lineage) pair becomes one series; every component must
/// cover the same evenly spaced timestamps.
pub fn parse_component_csv(
    text: &str,
    context: &str,
    component_region: &BTreeMap<u32, RegionId>,
) -> Result<Vec<ComponentSeries>> {
    type Key = (Quantity, Lineage);
    let mut cells: BTreeMap<Key, BTreeMap<u32, BTreeMap<DateTime<Utc>, f64>>> = BTreeMap::new();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    for record in reader.deserialize::<LongRow>() {
        let row = record.map_err(|e| Error::parse(context, e.position().map(|p| p.line() as usize), &e))?;
        let bad = |msg: String| Error::parse(context, None, msg);
        let q: Quantity = row.quantity.parse().map_err(|_| bad(format!("unknown quantity '{}'", row.quantity)))?;
        let lineage = Lineage::parse(&row.lineage).ok_or_else(|| bad(format!("unknown lineage '{}'", row.lineage)))?;
        let ts = parse_timestamp(&row.timestamp).ok_or_else(|| bad(format!("bad timestamp '{}'", row.timestamp)))?;
        if !row.value_mw.is_finite() {
            return Err(bad(format!("component {} at {} has non-finite value", row.component_id, row.timestamp)));
        }
        let prev = cells
            .entry((q, lineage))
            .or_default()
            .entry(row.component_id)
            .or_default()
            .insert(ts, row.value_mw);
        if prev.is_some() {
            return Err(bad(format!("duplicate value for component {} at {}", row.component_id, row.timestamp)));
        }
    }

    let mut out = Vec::new();
    for ((quantity, lineage), by_component) in cells {
        let stamps: Vec<DateTime<Utc>> = by_component.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
        let period_minutes = match stamps.as_slice() {
            [a, b, ..] => (*b - *a).num_minutes(),
            _ => 30,
        };
        if period_minutes <= 0 || stamps.windows(2).any(|w| (w[1] - w[0]).num_minutes() != period_minutes) {
            return Err(Error::parse(context, None, format!("{quantity} timestamps are not evenly spaced")));
        }
        let mut ids = Vec::new();
        let mut regions = Vec::new();
        let mut values = DMatrix::zeros(by_component.len(), stamps.len());
        for (row, (id, series)) in by_component.iter().enumerate() {
            if series.keys().ne(stamps.iter()) {
                return Err(Error::parse(context, None, format!("component {id} does not cover the common timestamps")));
            }
            let region = component_region
                .get(id)
                .ok_or_else(|| Error::parse(context, None, format!("unknown component {id}")))?;
            ids.push(*id);
            regions.push(*region);
            for (t, v) in series.values().enumerate() {
                values[(row, t)] = *v;
            }
        }
        out.push(ComponentSeries {
            quantity,
            lineage,
            component_ids: ids,
            regions,
            start: stamps.first().copied().unwrap_or_default(),
            period_minutes: period_minutes as u32,
            values,
        });
    }
    Ok(out)
}

pub fn load_component_csv(path: impl AsRef<Path>, component_region: &BTreeMap<u32, RegionId>) -> Result<Vec<ComponentSeries>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_component_csv(&text, &path.display().to_string(), component_region)
}
