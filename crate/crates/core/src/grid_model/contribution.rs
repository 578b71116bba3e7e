use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::snapshot::{NetworkSnapshot, RegionId};
use crate::error::{Error, Result};

/// What to do with a region whose components all carry zero weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroWeightPolicy {
    #[default]
    Error,
    Uniform,
}

/// Shares of one region's components, index-aligned with `component_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionShares {
    pub region: RegionId,
    pub component_ids: Vec<u32>,
    pub shares: Vec<f64>,
}

/// Per-region contribution vectors `p_r`. Regions are sorted by id and the
/// components of each region by component id; that order is the row order of
/// every panel and component series built from this vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    pub regions: Vec<RegionShares>,
}

impl ContributionVector {
    /// Builds shares from raw weights. Regions listed in `regions` with no
    /// components are omitted unless `require_every_region` is set.
    pub fn from_weights(
        regions: &[RegionId],
        components: impl IntoIterator<Item = (u32, RegionId, f64)>,
        policy: ZeroWeightPolicy,
        require_every_region: bool,
    ) -> Result<Self> {
        let mut grouped: BTreeMap<RegionId, Vec<(u32, f64)>> =
            regions.iter().map(|&r| (r, Vec::new())).collect();
        for (id, region, weight) in components {
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(Error::Invalid(format!(
                    "component {id} has invalid weight {weight}"
                )));
            }
            grouped
                .get_mut(&region)
                .ok_or_else(|| Error::Invalid(format!("component {id} in unknown region {region}")))?
                .push((id, weight));
        }

        let mut out = Vec::with_capacity(grouped.len());
        for (region, mut members) in grouped {
            if members.is_empty() {
                if require_every_region {
                    return Err(Error::DegenerateRegion { region });
                }
                continue;
            }
            members.sort_by_key(|&(id, _)| id);
            let total: f64 = members.iter().map(|&(_, w)| w).sum();
            let shares = if total > 0.0 {
                members.iter().map(|&(_, w)| w / total).collect()
            } else {
                match policy {
                    ZeroWeightPolicy::Error => return Err(Error::DegenerateRegion { region }),
                    ZeroWeightPolicy::Uniform => {
                        log::warn!("region {region} has zero total weight, using uniform shares");
                        vec![1.0 / members.len() as f64; members.len()]
                    }
                }
            };
            out.push(RegionShares {
                region,
                component_ids: members.into_iter().map(|(id, _)| id).collect(),
                shares,
            });
        }
        Ok(ContributionVector { regions: out })
    }

    /// Total number of components across regions.
    pub fn len(&self) -> usize {
        self.regions.iter().map(|r| r.shares.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn region(&self, region: RegionId) -> Option<&RegionShares> {
        self.regions.iter().find(|r| r.region == region)
    }

    /// Flattened `(region, component_id)` row order.
    pub fn component_order(&self) -> Vec<(RegionId, u32)> {
        self.regions
            .iter()
            .flat_map(|r| r.component_ids.iter().map(move |&id| (r.region, id)))
            .collect()
    }

    /// Row ranges of each region inside the flattened order.
    pub fn row_ranges(&self) -> Vec<(RegionId, std::ops::Range<usize>)> {
        let mut start = 0;
        self.regions
            .iter()
            .map(|r| {
                let range = start..start + r.shares.len();
                start = range.end;
                (r.region, range)
            })
            .collect()
    }
}

/// Load contribution vectors from the snapshot nominal values.
pub fn contribution_vectors(s: &NetworkSnapshot, policy: ZeroWeightPolicy) -> Result<ContributionVector> {
    let bus_region = s.bus_regions();
    ContributionVector::from_weights(
        &s.region_ids(),
        s.loads.iter().map(|l| (l.id, bus_region[&l.bus], l.nominal_mw)),
        policy,
        true,
    )
}

/// Contribution vectors for generators of one fuel, weighted by capacity.
/// Regions without such generators are omitted.
pub fn capacity_contribution_vectors(
    s: &NetworkSnapshot,
    fuel: &str,
    policy: ZeroWeightPolicy,
) -> Result<ContributionVector> {
    let bus_region = s.bus_regions();
    ContributionVector::from_weights(
        &s.region_ids(),
        s.generators_with_fuel(fuel)
            .map(|g| (g.id, bus_region[&g.bus], g.p_max_mw)),
        policy,
        false,
    )
}
