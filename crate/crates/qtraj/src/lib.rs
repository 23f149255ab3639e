//! Quantum trajectory engine for systems monitored by simultaneous
//! diffusive (homodyne) and counting (photodetection) measurements.
//!
//! The crate provides:
//!
//! * a quantum Ito calculus over measurement increments and the closed-form
//!   joint-realizability test for mixed diffusive/counting record
//!   combinations, cross-checked against a symbolic product-table oracle
//!   ([`ito`], [`commute`]);
//! * scattering/coupling/Hamiltonian network composition: concatenation,
//!   series connection and beam splitters ([`network`]);
//! * conditional-state propagation for a system whose output is split
//!   between a homodyne detector and a photon counter: a density-matrix
//!   filter, a reflectivity-aware pure-state filter, a comparison filter
//!   without the reflectivity scalings and an unnormalized form
//!   ([`filter`]);
//! * Monte-Carlo ensemble orchestration with analytic reference laws,
//!   paired-filter bias comparison, record replay and CSV/JSON output
//!   ([`ensemble`]).

pub mod commute;
pub mod ensemble;
pub mod error;
pub mod filter;
pub mod hilbert;
pub mod ito;
pub mod network;

pub use commute::{check_self_commutative, cross_validate, CommutativityReport, MeasurementSpec};
pub use ensemble::{
    analytic_mean_number, analytic_number_distribution, compare_filters, filter_from_records,
    run_ensemble, simulate_records, ComparisonReport, EnsembleSummary, SimulationConfig,
};
pub use error::{QtrajError, Result};
pub use filter::{FilterKind, FilterSetup};
pub use hilbert::{CMatrix, CVector, Tolerances};
pub use ito::ItoExpression;
pub use network::SlhModel;
