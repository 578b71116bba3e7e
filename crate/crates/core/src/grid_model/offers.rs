use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

const REQUIRED: [&str; 6] = [
    "participant_id",
    "hour",
    "fuel",
    "price_usd_per_mw",
    "max_mw",
    "min_mw",
];

/// One hourly bid of an anonymized market participant. Columns beyond the
/// required six (commitment data such as minimum up time) are kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfferRecord {
    pub participant_id: String,
    pub hour: u32,
    pub fuel: String,
    pub price_usd_per_mw: f64,
    pub max_mw: f64,
    pub min_mw: f64,
    pub extra: BTreeMap<String, String>,
}

pub fn parse_offers(text: &str, context: &str) -> Result<Vec<OfferRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(context, Some(1), e))?.clone();
    let mut index = BTreeMap::new();
    for name in REQUIRED {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(context, Some(1), format!("missing column '{name}'")))?;
        index.insert(name, pos);
    }
    let extra_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !REQUIRED.contains(h))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(context, e.position().map(|p| p.line() as usize), e))?;
        let line = record.position().map(|p| p.line() as usize);
        let field = |name: &str| record.get(index[name]).unwrap_or("");
        let number = |name: &str| -> Result<f64> {
            field(name)
                .parse::<f64>()
                .map_err(|_| Error::parse(context, line, format!("non-numeric {name} '{}'", field(name))))
        };
        let participant_id = field("participant_id").to_string();
        if participant_id.is_empty() {
            return Err(Error::parse(context, line, "empty participant_id"));
        }
        let hour: u32 = field("hour")
            .parse()
            .map_err(|_| Error::parse(context, line, format!("bad hour '{}'", field("hour"))))?;
        let offer = OfferRecord {
            fuel: field("fuel").to_ascii_lowercase(),
            price_usd_per_mw: number("price_usd_per_mw")?,
            max_mw: number("max_mw")?,
            min_mw: number("min_mw")?,
            extra: extra_cols
                .iter()
                .filter_map(|(i, h)| record.get(*i).map(|v| (h.clone(), v.to_string())))
                .collect(),
            participant_id,
            hour,
        };
        if !offer.price_usd_per_mw.is_finite() {
            return Err(Error::Invalid(format!(
                "participant {} hour {} has non-finite price",
                offer.participant_id, hour
            )));
        }
        if !(offer.min_mw >= 0.0 && offer.min_mw <= offer.max_mw && offer.max_mw.is_finite()) {
            return Err(Error::Invalid(format!(
                "participant {} hour {} has limits min {} max {}",
                offer.participant_id, hour, offer.min_mw, offer.max_mw
            )));
        }
        if !seen.insert((offer.participant_id.clone(), hour)) {
            return Err(Error::Invalid(format!(
                "duplicate offer for participant {} hour {hour}",
                offer.participant_id
            )));
        }
        out.push(offer);
    }
    Ok(out)
}

pub fn load_offers(path: impl AsRef<Path>) -> Result<Vec<OfferRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_offers(&text, &path.display().to_string())
}

pub fn write_offers(offers: &[OfferRecord], out: impl std::io::Write) -> Result<()> {
    let extra: BTreeSet<&String> = offers.iter().flat_map(|o| o.extra.keys()).collect();
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let mut header: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    header.extend(extra.iter().map(|s| s.to_string()));
    let wrap = |e: csv::Error| Error::parse("offers", None, e);
    w.write_record(&header).map_err(wrap)?;
    for o in offers {
        let mut row = vec![
            o.participant_id.clone(),
            o.hour.to_string(),
            o.fuel.clone(),
            o.price_usd_per_mw.to_string(),
            o.max_mw.to_string(),
            o.min_mw.to_string(),
        ];
        row.extend(extra.iter().map(|k| o.extra.get(*k).cloned().unwrap_or_default()));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("offers", e))
}
