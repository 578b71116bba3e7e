//! Mapping of anonymized market participants onto snapshot generators.
//!
//! Each participant gets a fuel (declared in the offer file) and a capacity
//! (its largest observed bid quantity). Every snapshot generator is then
//! paired with the same-fuel participant of nearest capacity; participants
//! may serve many generators. Generators inherit their participant's hourly
//! prices unchanged and its quantities rescaled by the capacity ratio.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_model::{NetworkSnapshot, OfferRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub fuel: String,
    pub capacity_mw: f64,
    /// Opaque commitment attributes, copied to every mapped generator.
    pub attributes: BTreeMap<String, String>,
}

pub fn infer_participants(offers: &[OfferRecord]) -> Result<Vec<Participant>> {
    let mut by_id: BTreeMap<&str, Participant> = BTreeMap::new();
    for o in offers {
        match by_id.get_mut(o.participant_id.as_str()) {
            Some(p) => {
                if p.fuel != o.fuel {
                    return Err(Error::Invalid(format!(
                        "participant {} declares conflicting fuels '{}' and '{}'",
                        o.participant_id, p.fuel, o.fuel
                    )));
                }
                p.capacity_mw = p.capacity_mw.max(o.max_mw);
                for (k, v) in &o.extra {
                    p.attributes.entry(k.clone()).or_insert_with(|| v.clone());
                }
            }
            None => {
                by_id.insert(
                    &o.participant_id,
                    Participant {
                        id: o.participant_id.clone(),
                        fuel: o.fuel.clone(),
                        capacity_mw: o.max_mw,
                        attributes: o.extra.clone(),
                    },
                );
            }
        }
    }
    Ok(by_id.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchPolicy {
    /// Generator fuel -> participant fuel used when no participant has the
    /// generator's own fuel.
    pub substitutions: BTreeMap<String, String>,
    /// Fuels that do not bid (renewables by default).
    pub skip_fuels: BTreeSet<String>,
    /// Only allow participants whose capacity does not exceed the generator's
    /// maximum output.
    pub require_capacity_cover: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            substitutions: BTreeMap::new(),
            skip_fuels: ["wind", "solar"].into_iter().map(String::from).collect(),
            require_capacity_cover: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidMatch {
    pub generator_id: u32,
    pub participant_id: String,
    /// Generator capacity over participant capacity.
    pub scale_ratio: f64,
    /// Set when a substitution rule supplied the participant.
    pub substituted_from: Option<String>,
}

/// Pairs every bidding generator with the nearest-capacity participant of
/// the same fuel. Ties go to the lexicographically smallest participant id.
pub fn match_generators(
    participants: &[Participant],
    snapshot: &NetworkSnapshot,
    policy: &MatchPolicy,
) -> Result<Vec<BidMatch>> {
    let mut by_fuel: BTreeMap<&str, Vec<&Participant>> = BTreeMap::new();
    for p in participants.iter().filter(|p| p.capacity_mw > 0.0) {
        by_fuel.entry(p.fuel.as_str()).or_default().push(p);
    }
    for list in by_fuel.values_mut() {
        list.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let mut generators: Vec<_> = snapshot
        .generators
        .iter()
        .filter(|g| !policy.skip_fuels.contains(&g.fuel))
        .collect();
    generators.sort_by_key(|g| g.id);

    let mut out = Vec::with_capacity(generators.len());
    for g in generators {
        let (pool, substituted_from) = match by_fuel.get(g.fuel.as_str()) {
            Some(pool) => (pool, None),
            None => {
                let sub = policy.substitutions.get(&g.fuel).and_then(|f| by_fuel.get(f.as_str()));
                match sub {
                    Some(pool) => {
                        log::info!(
                            "generator {} ({}) matched through substitution to '{}'",
                            g.id,
                            g.fuel,
                            policy.substitutions[&g.fuel]
                        );
                        (pool, Some(g.fuel.clone()))
                    }
                    None => {
                        return Err(Error::UnmatchedFuel {
                            generator: g.id,
                            fuel: g.fuel.clone(),
                        })
                    }
                }
            }
        };
        let chosen = pool
            .iter()
            .filter(|p| !policy.require_capacity_cover || p.capacity_mw <= g.p_max_mw)
            .min_by(|a, b| {
                let da = (g.p_max_mw - a.capacity_mw).abs();
                let db = (g.p_max_mw - b.capacity_mw).abs();
                da.total_cmp(&db).then_with(|| a.id.cmp(&b.id))
            })
            .ok_or_else(|| Error::UnmatchedFuel {
                generator: g.id,
                fuel: format!("{} (no participant within {} MW)", g.fuel, g.p_max_mw),
            })?;
        out.push(BidMatch {
            generator_id: g.id,
            participant_id: chosen.id.clone(),
            scale_ratio: g.p_max_mw / chosen.capacity_mw,
            substituted_from,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOffer {
    pub generator_id: u32,
    pub hour: u32,
    pub price_usd_per_mw: f64,
    pub max_mw: f64,
    pub min_mw: f64,
}

/// Hourly offers for every matched generator over hours `0..horizon_hours`.
pub fn offer_series(
    matches: &[BidMatch],
    offers: &[OfferRecord],
    horizon_hours: u32,
) -> Result<Vec<GeneratorOffer>> {
    let index: BTreeMap<(&str, u32), &OfferRecord> = offers
        .iter()
        .map(|o| ((o.participant_id.as_str(), o.hour), o))
        .collect();
    let mut out = Vec::with_capacity(matches.len() * horizon_hours as usize);
    for m in matches {
        for hour in 0..horizon_hours {
            let o = index
                .get(&(m.participant_id.as_str(), hour))
                .ok_or_else(|| Error::HorizonGap {
                    participant: m.participant_id.clone(),
                    hour,
                })?;
            out.push(GeneratorOffer {
                generator_id: m.generator_id,
                hour,
                price_usd_per_mw: o.price_usd_per_mw,
                max_mw: o.max_mw * m.scale_ratio,
                min_mw: o.min_mw * m.scale_ratio,
            });
        }
    }
    Ok(out)
}

pub fn write_matches_csv(matches: &[BidMatch], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "generator_id,participant_id,scale_ratio")?;
    for m in matches {
        writeln!(out, "{},{},{}", m.generator_id, m.participant_id, m.scale_ratio)?;
    }
    Ok(())
}

pub fn write_offer_series_csv(series: &[GeneratorOffer], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "generator_id,hour,price_usd_per_mw,max_mw,min_mw")?;
    for o in series {
        writeln!(
            out,
            "{},{},{},{},{}",
            o.generator_id, o.hour, o.price_usd_per_mw, o.max_mw, o.min_mw
        )?;
    }
    Ok(())
}
