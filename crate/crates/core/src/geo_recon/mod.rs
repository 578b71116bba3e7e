//! Placement of snapshot substations on candidate geolocations.
//!
//! Each substation must land on a distinct registry location of its region
//! and voltage class, and the placement should make great-circle distances
//! between connected substations match the line lengths implied by branch
//! resistance. The exact quadratic assignment problem is intractable at
//! national scale, so [`local_search`] runs an iterated first-improvement
//! search over relocate and swap moves; [`brute_force`] is the exhaustive
//! reference used on small instances.

mod distance;
mod exact;
mod io;
mod problem;
mod search;

pub use distance::{haversine_km, VoltageClasses};
pub use exact::{brute_force, BRUTE_FORCE_CAP};
pub use io::{placements, read_assignment_csv, write_assignment_csv, PlacedSubstation};
pub use problem::{
    build_problem, calibrate_km_per_ohm, implied_lengths, AssignmentProblem, Edge, ImpliedLengths,
};
pub use search::{greedy, local_search, local_search_multistart, Assignment, SearchBudget, SearchReport};
