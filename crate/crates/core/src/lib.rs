//! Dahlquist–Liniger–Nevanlinna (DLN) one-leg two-step integrators.
//!
//! The crate holds the variable-step coefficient family, an ODE driver,
//! two adaptive step controllers and a doubly periodic 2D Navier–Stokes
//! solver built on the refactorized semi-implicit scheme.

pub mod adaptive;
pub mod coefficients;
pub mod error;
pub mod ivp;
pub mod krylov;
pub mod nse2d;

pub use adaptive::{
    adapt_loop_lte, adapt_loop_nd, ab2_like_predict, controller_next_step, dissipation_pair, lte_coefficients,
    lte_estimate, AdaptiveAbort, AdaptiveRun, ControllerConfig, DlnStepper, EstimatorKind, History4, LedgerRow,
    LteCoefficients, OdeStepper, RowFlag, RunLedger,
};
pub use coefficients::{
    g_norm_sq, g_stability_residual, one_leg_coefficients, refactor_coefficients, step_variability,
    GNormWeights, OneLegCoefficients, RefactorCoefficients, StepPair, Theta,
};
pub use error::{DlnError, Result};
pub use ivp::{
    dln_step_direct, dln_step_refactorized, dln_step_semi_implicit, integrate_fixed, IvpProblem,
    StageMethod, StageSolveConfig, StateWindow, StepOutcome, StepPath, Trajectory,
};
pub use krylov::{gmres, GmresConfig, GmresOutcome, KrylovVector};
