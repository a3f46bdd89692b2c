//! Doubly periodic 2D incompressible Navier–Stokes with the refactorized
//! semi-implicit DLN step and a Fourier pseudo-spectral discretization.

pub mod case;
pub mod field;
pub mod grid;
pub mod io;
pub mod norms;
pub mod operators;
pub mod run;
pub mod step;

pub use case::{exact_fields, manufactured_forcing, time_diameter_ok, CaseKind, ManufacturedCase};
pub use field::{leray_project, PressureField, VelocityField};
pub use grid::Grid2D;
pub use io::{read_snapshot, write_snapshot, Snapshot, SnapshotMeta};
pub use norms::{bochner_l2_beta, bochner_sup, discrete_norm, h_minus1_norm, NormKind};
pub use operators::{advection_apply, trilinear_b};
pub use run::{
    run_constant_steps, stability_monitor, NseRun, NseRunConfig, NseRunLedger, NseStepRecord, NseStepper,
    StabilityReport,
};
pub use step::{
    energy_budget, nse_semi_implicit_step, recover_pressure, EnergyBudget, ForcingSampling, NsePath,
    NseSolverConfig, NseStepOutput, NseWindow,
};
