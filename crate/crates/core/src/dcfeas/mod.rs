//! DC feasibility checking and load restoration.
//!
//! A disaggregated load can be impossible to serve: a load pocket behind a
//! weak line may exceed what the line carries. [`restore`] moves the least
//! load (in L1 distance, plus a quadratic penalty for leaving the box
//! spanned by the disaggregated and nominal values) so that each region
//! keeps its total and some dispatch meets nodal balance, generator bounds
//! and derated branch limits. [`feasibility_check`] independently decides
//! feasibility with the PTDF form and returns a witness or a certificate.

mod check;
mod model;
mod qp;
mod restore;

pub use check::{feasibility_check, Certificate, Feasibility, Overload, Witness, VIOLATION_TOLERANCE};
pub use model::{DCModel, GeneratorBounds};
pub use restore::{
    objective_value, restore, restore_horizon, write_report_csv, PeriodReport, RestorationResult,
    RestoreOptions, RestoreStatus, SlackPenalty,
};
