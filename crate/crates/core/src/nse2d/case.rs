use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::field::{PressureField, VelocityField};
use super::grid::Grid2D;
use crate::error::{DlnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    TaylorGreenDecay,
    TaylorGreenGrowth,
}

/// Taylor–Green vortex with amplitude `exp(-+ 2 omega^2 pi^2 t / tau)`.
///
/// `nu` defaults to `1 / tau`; the forcing is whatever makes the exact
/// fields solve the momentum equation with that viscosity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedCase {
    pub kind: CaseKind,
    pub omega: f64,
    pub tau: f64,
    pub nu: f64,
}

impl ManufacturedCase {
    pub fn new(kind: CaseKind, omega: f64, tau: f64) -> Result<Self> {
        if !(omega > 0.0 && tau > 0.0) {
            return Err(DlnError::InvalidConfig("omega and tau must be positive".into()));
        }
        Ok(ManufacturedCase {
            kind,
            omega,
            tau,
            nu: 1.0 / tau,
        })
    }

    pub fn decay(tau: f64) -> Self {
        Self::new(CaseKind::TaylorGreenDecay, 1.0, tau).expect("positive tau")
    }

    pub fn growth(tau: f64) -> Self {
        Self::new(CaseKind::TaylorGreenGrowth, 1.0, tau).expect("positive tau")
    }

    pub fn with_viscosity(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    /// The fields are periodic on `[0, L]^2` when `omega L / 2` is an integer.
    pub fn check_domain(&self, grid: &Grid2D) -> Result<()> {
        let m = self.omega * grid.side_length() / 2.0;
        if (m - m.round()).abs() > 1e-12 || m.round() < 1.0 {
            return Err(DlnError::InvalidGrid(format!(
                "omega = {} is not periodic on a side of {}",
                self.omega,
                grid.side_length()
            )));
        }
        if 3.0 * 2.0 * m >= grid.n() as f64 {
            return Err(DlnError::InvalidGrid("grid too coarse for the pressure mode".into()));
        }
        Ok(())
    }

    fn a(&self) -> f64 {
        self.omega * PI
    }

    /// Time rate `lambda` of the velocity amplitude `exp(lambda t)`.
    pub fn rate(&self) -> f64 {
        let s = 2.0 * self.a().powi(2) / self.tau;
        match self.kind {
            CaseKind::TaylorGreenDecay => -s,
            CaseKind::TaylorGreenGrowth => s,
        }
    }

    pub fn amplitude(&self, t: f64) -> f64 {
        (self.rate() * t).exp()
    }

    pub fn velocity_at(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        let (a, g) = (self.a(), self.amplitude(t));
        (-(a * x).cos() * (a * y).sin() * g, (a * x).sin() * (a * y).cos() * g)
    }

    pub fn pressure_at(&self, x: f64, y: f64, t: f64) -> f64 {
        let a = self.a();
        -0.25 * ((2.0 * a * x).cos() + (2.0 * a * y).cos()) * self.amplitude(t).powi(2)
    }

    /// `u_t + u . grad u - nu lap u + grad p`, term by term.
    pub fn forcing_at(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        let (a, g) = (self.a(), self.amplitude(t));
        let dg = self.rate() * g;
        let (cx, sx, cy, sy) = ((a * x).cos(), (a * x).sin(), (a * y).cos(), (a * y).sin());
        let (u1, u2) = (-cx * sy, sx * cy);
        // derivatives of the spatial profile
        let (u1x, u1y) = (a * sx * sy, -a * cx * cy);
        let (u2x, u2y) = (a * cx * cy, -a * sx * sy);
        let lap = -2.0 * a * a;
        let px = 0.5 * a * (2.0 * a * x).sin() * g * g;
        let py = 0.5 * a * (2.0 * a * y).sin() * g * g;
        let adv1 = g * g * (u1 * u1x + u2 * u1y);
        let adv2 = g * g * (u1 * u2x + u2 * u2y);
        (
            dg * u1 + adv1 - self.nu * lap * g * u1 + px,
            dg * u2 + adv2 - self.nu * lap * g * u2 + py,
        )
    }

    pub fn kinetic_energy(&self, t: f64, side_length: f64) -> f64 {
        // each component squared integrates to L^2 / 4
        0.25 * side_length * side_length * self.amplitude(t).powi(2)
    }
}

/// Exact velocity and pressure sampled on the grid.
pub fn exact_fields(case: &ManufacturedCase, grid: &Arc<Grid2D>, t: f64) -> (VelocityField, PressureField) {
    (
        VelocityField::from_fn(grid, |x, y| case.velocity_at(x, y, t)),
        PressureField::from_fn(grid, |x, y| case.pressure_at(x, y, t)),
    )
}

pub fn manufactured_forcing(case: &ManufacturedCase, grid: &Arc<Grid2D>, t: f64) -> VelocityField {
    VelocityField::from_fn(grid, |x, y| case.forcing_at(x, y, t))
}

/// Step-size guard `k_max <= h^(1/4)`; logged, never enforced.
pub fn time_diameter_ok(k_max: f64, grid: &Grid2D) -> bool {
    let ok = k_max <= grid.spacing().powf(0.25);
    if !ok {
        log::warn!("k_max = {k_max} exceeds h^(1/4) = {:.4}", grid.spacing().powf(0.25));
    }
    ok
}
