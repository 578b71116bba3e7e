//! Network snapshots, geolocation registries, regional histories and offer
//! files, plus the per-region contribution vectors derived from a snapshot.

mod contribution;
mod offers;
mod registry;
mod series;
mod snapshot;

pub use contribution::{
    capacity_contribution_vectors, contribution_vectors, ContributionVector, RegionShares,
    ZeroWeightPolicy,
};
pub use offers::{load_offers, parse_offers, write_offers, OfferRecord};
pub use registry::{load_geo_registry, parse_geo_registry, write_geo_registry, GeoEntry, GeoRegistry};
pub use series::{
    format_timestamp, load_regional_history, parse_regional_history, parse_timestamp,
    write_regional_history, Quantity, RegionalHistory, RegionalSeries,
};
pub use snapshot::{
    load_snapshot, write_snapshot, Branch, Bus, BusId, Generator, Load, NetworkSnapshot, Region,
    RegionId,
};
