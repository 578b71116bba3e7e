use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::snapshot::RegionId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Load,
    Wind,
    Solar,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Load, Quantity::Wind, Quantity::Solar];

    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Load => "load",
            Quantity::Wind => "wind",
            Quantity::Solar => "solar",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "load" => Ok(Quantity::Load),
            "wind" => Ok(Quantity::Wind),
            "solar" => Ok(Quantity::Solar),
            other => Err(Error::parse("quantity", None, format!("unknown quantity '{other}'"))),
        }
    }
}

/// Formats a timestamp the way every CSV artifact writes it.
pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

/// Dense regional ground truth `L_r^t`, regions × periods, in MW.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalSeries {
    pub quantity: Quantity,
    pub regions: Vec<RegionId>,
    pub start: DateTime<Utc>,
    pub period_minutes: u32,
    pub values: DMatrix<f64>,
}

impl RegionalSeries {
    pub fn new(
        quantity: Quantity,
        regions: Vec<RegionId>,
        start: DateTime<Utc>,
        period_minutes: u32,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        if values.nrows() != regions.len() {
            return Err(Error::Invalid(format!(
                "{} regions but {} value rows",
                regions.len(),
                values.nrows()
            )));
        }
        if period_minutes == 0 {
            return Err(Error::Invalid("period length must be positive".into()));
        }
        if let Some((idx, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            let (r, t) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::Invalid(format!(
                "{quantity} value {v} for region {} at period {t} is negative or not finite",
                regions[r]
            )));
        }
        Ok(RegionalSeries {
            quantity,
            regions,
            start,
            period_minutes,
            values,
        })
    }

    pub fn periods(&self) -> usize {
        self.values.ncols()
    }

    pub fn timestamp(&self, period: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(self.period_minutes as i64 * period as i64)
    }

    pub fn region_index(&self, region: RegionId) -> Option<usize> {
        self.regions.iter().position(|&r| r == region)
    }

    /// Sum over regions for every period.
    pub fn national_total(&self) -> Vec<f64> {
        self.values.column_iter().map(|c| c.sum()).collect()
    }
}

/// Every quantity found in one regional history file.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalHistory {
    pub series: BTreeMap<Quantity, RegionalSeries>,
}

impl RegionalHistory {
    pub fn get(&self, q: Quantity) -> Option<&RegionalSeries> {
        self.series.get(&q)
    }
}

#[derive(Debug, Deserialize)]
struct HistoryRow {
    timestamp: String,
    region_id: String,
    quantity: String,
    value_mw: String,
}

/// Reads `key=value` directives from leading `#` lines.
pub(crate) fn header_directives(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .take_while(|l| l.trim_start().starts_with('#'))
        .filter_map(|l| {
            let body = l.trim_start().trim_start_matches('#');
            let (k, v) = body.split_once('=').or_else(|| body.split_once(':'))?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Parses a regional history CSV. The first line must declare the period
/// length, e.g. `# period_minutes=30`. When `known_regions` is given, the
/// grid is expected to cover exactly those regions.
pub fn parse_regional_history(
    text: &str,
    context: &str,
    known_regions: Option<&[RegionId]>,
) -> Result<RegionalHistory> {
    let directives = header_directives(text);
    let period_minutes: u32 = directives
        .get("period_minutes")
        .ok_or_else(|| Error::parse(context, Some(1), "missing '# period_minutes=<n>' header line"))?
        .parse()
        .map_err(|e| Error::parse(context, Some(1), format!("bad period_minutes: {e}")))?;
    if period_minutes == 0 {
        return Err(Error::parse(context, Some(1), "period_minutes must be positive"));
    }

    let known: Option<BTreeSet<RegionId>> = known_regions.map(|r| r.iter().copied().collect());
    let mut cells: BTreeMap<(Quantity, RegionId, DateTime<Utc>), f64> = BTreeMap::new();
    let mut stamps = BTreeSet::new();
    let mut regions = BTreeSet::new();

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(context, None, e))?
        .clone();
    for record in reader.records() {
        let record = record.map_err(|e| {
            Error::parse(context, e.position().map(|p| p.line() as usize), e)
        })?;
        let line = record.position().map(|p| p.line() as usize);
        let row: HistoryRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(context, line, e))?;
        let ts = parse_timestamp(&row.timestamp)
            .ok_or_else(|| Error::parse(context, line, format!("bad timestamp '{}'", row.timestamp)))?;
        let region: RegionId = row
            .region_id
            .parse()
            .map_err(|_| Error::parse(context, line, format!("bad region id '{}'", row.region_id)))?;
        if let Some(k) = &known {
            if !k.contains(&region) {
                return Err(Error::Invalid(format!("unknown region id {region} in {context}")));
            }
        }
        let quantity: Quantity = row.quantity.parse()?;
        let value: f64 = row.value_mw.parse().map_err(|_| {
            Error::parse(context, line, format!("non-numeric value '{}'", row.value_mw))
        })?;
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Invalid(format!(
                "{quantity} value {value} at {} region {region} is negative or not finite",
                row.timestamp
            )));
        }
        if cells.insert((quantity, region, ts), value).is_some() {
            return Err(Error::Invalid(format!(
                "duplicate row for {} region {region} {quantity}",
                row.timestamp
            )));
        }
        stamps.insert(ts);
        regions.insert(region);
    }

    let stamps: Vec<_> = stamps.into_iter().collect();
    let Some(&start) = stamps.first() else {
        return Err(Error::parse(context, None, "no data rows"));
    };
    let step = Duration::minutes(period_minutes as i64);
    for pair in stamps.windows(2) {
        if pair[1] - pair[0] != step {
            if (pair[1] - pair[0]) > step && ((pair[1] - pair[0]).num_seconds() % step.num_seconds() == 0) {
                return Err(Error::MissingPeriod {
                    timestamp: format_timestamp(pair[0] + step),
                });
            }
            return Err(Error::Invalid(format!(
                "timestamps {} and {} are not {period_minutes} minutes apart",
                format_timestamp(pair[0]),
                format_timestamp(pair[1])
            )));
        }
    }

    let regions: Vec<RegionId> = match known_regions {
        Some(k) => {
            let mut k = k.to_vec();
            k.sort_unstable();
            k
        }
        None => regions.into_iter().collect(),
    };
    let quantities: BTreeSet<Quantity> = cells.keys().map(|k| k.0).collect();
    let mut series = BTreeMap::new();
    for q in quantities {
        let mut values = DMatrix::zeros(regions.len(), stamps.len());
        for (ri, &r) in regions.iter().enumerate() {
            for (ti, &t) in stamps.iter().enumerate() {
                let v = cells.get(&(q, r, t)).ok_or_else(|| {
                    Error::Invalid(format!(
                        "missing {q} value for region {r} at {}",
                        format_timestamp(t)
                    ))
                })?;
                values[(ri, ti)] = *v;
            }
        }
        series.insert(q, RegionalSeries::new(q, regions.clone(), start, period_minutes, values)?);
    }
    Ok(RegionalHistory { series })
}

pub fn load_regional_history(
    path: impl AsRef<Path>,
    known_regions: Option<&[RegionId]>,
) -> Result<RegionalHistory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_regional_history(&text, &path.display().to_string(), known_regions)
}

/// Writes one or more series (sharing a time grid) in the history format.
pub fn write_regional_history<'a>(
    series: impl IntoIterator<Item = &'a RegionalSeries>,
    mut out: impl Write,
) -> std::io::Result<()> {
    let series: Vec<_> = series.into_iter().collect();
    let Some(first) = series.first() else {
        return Ok(());
    };
    writeln!(out, "# period_minutes={}", first.period_minutes)?;
    writeln!(out, "timestamp,region_id,quantity,value_mw")?;
    for t in 0..first.periods() {
        let ts = format_timestamp(first.timestamp(t));
        for s in &series {
            for (ri, r) in s.regions.iter().enumerate() {
                writeln!(out, "{ts},{r},{},{}", s.quantity, s.values[(ri, t)])?;
            }
        }
    }
    Ok(())
}
