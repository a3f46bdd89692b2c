use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::case::ManufacturedCase;
use super::field::{leray_project, PressureField, VelocityField};
use super::operators::advection_apply;
use crate::coefficients::{one_leg_coefficients, OneLegCoefficients, RefactorCoefficients, StepPair, Theta};
use crate::error::{DlnError, Result};
use crate::krylov::{gmres, GmresConfig};

/// How the forcing enters a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingSampling {
    /// `sum beta_l f(t_{n-1+l})`
    #[default]
    BetaCombination,
    /// `f(t_{n,beta})`
    AtBroadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NsePath {
    /// Pre-filter, one backward-Euler stage for `u_{n,beta}`, post-filter.
    #[default]
    Refactorized,
    /// Solve the one-leg system for `u_{n+1}` directly.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct NseSolverConfig {
    pub gmres: GmresConfig,
    pub path: NsePath,
    pub forcing: ForcingSampling,
}

/// The two most recent velocities.
#[derive(Debug, Clone, Copy)]
pub struct NseWindow<'a> {
    pub t_prev: f64,
    pub t_curr: f64,
    pub u_prev: &'a VelocityField,
    pub u_curr: &'a VelocityField,
}

impl NseWindow<'_> {
    pub fn pair(&self, k_n: f64) -> Result<StepPair> {
        StepPair::new(k_n, self.t_curr - self.t_prev)
    }
}

#[derive(Debug, Clone)]
pub struct NseStepOutput {
    pub u_next: VelocityField,
    pub u_beta: VelocityField,
    pub p_beta: PressureField,
    pub t_beta: f64,
    pub coeffs: OneLegCoefficients,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Forcing used by a step under the chosen sampling rule.
pub fn sample_forcing(
    forcing: &dyn Fn(f64) -> VelocityField,
    sampling: ForcingSampling,
    coeffs: &OneLegCoefficients,
    t_prev: f64,
    t_curr: f64,
    t_next: f64,
) -> VelocityField {
    match sampling {
        ForcingSampling::AtBroadcast => forcing(coeffs.broadcast(t_prev, t_curr, t_next)),
        ForcingSampling::BetaCombination => {
            let [b0, b1, b2] = coeffs.beta;
            let (f0, f1, f2) = (forcing(t_prev), forcing(t_curr), forcing(t_next));
            VelocityField::lincomb(&[(b0, &f0), (b1, &f1), (b2, &f2)])
        }
    }
}

/// Convenience wrapper sampling a manufactured case.
pub fn case_forcing(
    case: &ManufacturedCase,
    sampling: ForcingSampling,
    coeffs: &OneLegCoefficients,
    grid: &std::sync::Arc<super::grid::Grid2D>,
    times: [f64; 3],
) -> VelocityField {
    let f = |t: f64| super::case::manufactured_forcing(case, grid, t);
    sample_forcing(&f, sampling, coeffs, times[0], times[1], times[2])
}

/// Second-order extrapolation of the broadcast velocity from `u_n`, `u_{n-1}`.
pub fn extrapolate(window: &NseWindow<'_>, coeffs: &OneLegCoefficients, ratio: f64) -> VelocityField {
    let [b0, b1, b2] = coeffs.beta;
    VelocityField::lincomb(&[
        (b2 * (1.0 + ratio) + b1, window.u_curr),
        (b0 - b2 * ratio, window.u_prev),
    ])
}

fn stokes_like(w: &VelocityField, mass: f64, visc: f64) -> VelocityField {
    let g = w.grid().clone();
    w.map_modes(|idx, u, v| {
        let s = mass + visc * g.k_sq(idx);
        (u * s, v * s)
    })
}

/// Pressure from the gradient part of `f - A(u~) u_beta`.
pub fn recover_pressure(u_tilde: &VelocityField, u_beta: &VelocityField, forcing: &VelocityField) -> PressureField {
    let grid = u_beta.grid().clone();
    let mut h = forcing.clone();
    h.add_scaled(-1.0, &advection_apply(u_tilde, u_beta));
    let coeffs: Vec<Complex64> = (0..grid.len())
        .map(|idx| {
            let (kx, ky) = grid.wavevector(idx);
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                let div = h.spectral(0)[idx] * kx + h.spectral(1)[idx] * ky;
                Complex64::new(0.0, -1.0) * div / k2
            }
        })
        .collect();
    PressureField::from_spectral(&grid, coeffs).expect("grid sizes match")
}

/// One semi-implicit DLN step for the periodic Navier–Stokes equations.
///
/// `forcing` is the already sampled `f_{n,beta}`.
pub fn nse_semi_implicit_step(
    window: &NseWindow<'_>,
    theta: Theta,
    k_n: f64,
    nu: f64,
    forcing: &VelocityField,
    cfg: &NseSolverConfig,
) -> Result<NseStepOutput> {
    window.u_prev.check_grid(window.u_curr)?;
    window.u_curr.check_grid(forcing)?;
    let pair = window.pair(k_n)?;
    let coeffs = one_leg_coefficients(theta, pair);
    let t_next = window.t_curr + k_n;
    let t_beta = coeffs.broadcast(window.t_prev, window.t_curr, t_next);
    let u_tilde = extrapolate(window, &coeffs, pair.ratio());
    let pf = leray_project(forcing);
    let [a0, a1, a2] = coeffs.alpha;
    let [b0, b1, b2] = coeffs.beta;

    let (u_next, u_beta, iterations, rel_residual) = match cfg.path {
        NsePath::Refactorized => {
            let r = RefactorCoefficients::from_one_leg(&coeffs);
            let k_be = r.b * coeffs.khat;
            let mut rhs = VelocityField::lincomb(&[(r.a1, window.u_curr), (r.a0, window.u_prev)]);
            rhs.add_scaled(k_be, &pf);
            let apply = |w: &VelocityField| {
                let mut out = stokes_like(w, 1.0, k_be * nu);
                out.add_scaled(k_be, &leray_project(&advection_apply(&u_tilde, w)));
                out
            };
            let precond = |w: &VelocityField| {
                let g = w.grid().clone();
                w.map_modes(|idx, u, v| {
                    let s = 1.0 / (1.0 + k_be * nu * g.k_sq(idx));
                    (u * s, v * s)
                })
            };
            let out = gmres(apply, precond, &rhs, u_tilde.clone(), &cfg.gmres)?;
            let w = out.x;
            let u_next = VelocityField::lincomb(&[(r.c2, &w), (r.c1, window.u_curr), (r.c0, window.u_prev)]);
            (u_next, w, out.iterations, out.rel_residual)
        }
        NsePath::Direct => {
            let mass = a2 / coeffs.khat;
            let partial = VelocityField::lincomb(&[(b1, window.u_curr), (b0, window.u_prev)]);
            let mut rhs = VelocityField::lincomb(&[
                (-a1 / coeffs.khat, window.u_curr),
                (-a0 / coeffs.khat, window.u_prev),
            ]);
            rhs.add_scaled(-1.0, &stokes_like(&partial, 0.0, nu));
            rhs.add_scaled(-1.0, &leray_project(&advection_apply(&u_tilde, &partial)));
            rhs.add_scaled(1.0, &pf);
            let apply = |w: &VelocityField| {
                let mut out = stokes_like(w, mass, nu * b2);
                out.add_scaled(b2, &leray_project(&advection_apply(&u_tilde, w)));
                out
            };
            let precond = |w: &VelocityField| {
                let g = w.grid().clone();
                w.map_modes(|idx, u, v| {
                    let s = 1.0 / (mass + nu * b2 * g.k_sq(idx));
                    (u * s, v * s)
                })
            };
            let guess = VelocityField::lincomb(&[(1.0 + pair.ratio(), window.u_curr), (-pair.ratio(), window.u_prev)]);
            let out = gmres(apply, precond, &rhs, guess, &cfg.gmres)?;
            let u_next = out.x;
            let u_beta = VelocityField::lincomb(&[(b2, &u_next), (1.0, &partial)]);
            (u_next, u_beta, out.iterations, out.rel_residual)
        }
    };
    if !u_next.all_finite() {
        return Err(DlnError::NonFiniteField { t: t_next });
    }
    let p_beta = recover_pressure(&u_tilde, &u_beta, forcing);
    Ok(NseStepOutput {
        u_next,
        u_beta,
        p_beta,
        t_beta,
        coeffs,
        iterations,
        rel_residual,
    })
}

/// Terms of the per-step energy identity
/// `G_new - G_old + ||sum gamma u||^2 + nu khat ||grad u_beta||^2 = khat (f, u_beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBudget {
    pub g_old: f64,
    pub g_new: f64,
    pub numerical_dissipation: f64,
    pub viscous_dissipation: f64,
    pub work: f64,
}

impl EnergyBudget {
    pub fn residual(&self) -> f64 {
        self.g_new - self.g_old + self.numerical_dissipation + self.viscous_dissipation - self.work
    }

    /// Residual relative to the largest term.
    pub fn relative_residual(&self) -> f64 {
        let scale = [self.g_old, self.g_new, self.numerical_dissipation, self.viscous_dissipation, self.work.abs()]
            .into_iter()
            .fold(f64::MIN_POSITIVE, f64::max);
        self.residual().abs() / scale
    }
}

pub fn energy_budget(
    theta: Theta,
    coeffs: &OneLegCoefficients,
    states: [&VelocityField; 3],
    nu: f64,
    forcing: &VelocityField,
) -> EnergyBudget {
    let w = theta.weights();
    let sq = states.map(|u| u.inner(u));
    let [g0, g1, g2] = coeffs.gamma;
    let [b0, b1, b2] = coeffs.beta;
    let gamma_combo = VelocityField::lincomb(&[(g0, states[0]), (g1, states[1]), (g2, states[2])]);
    let u_beta = VelocityField::lincomb(&[(b0, states[0]), (b1, states[1]), (b2, states[2])]);
    EnergyBudget {
        g_old: w.apply(sq[1], sq[0]),
        g_new: w.apply(sq[2], sq[1]),
        numerical_dissipation: gamma_combo.inner(&gamma_combo),
        viscous_dissipation: nu * coeffs.khat * u_beta.h1_semi_sq(),
        work: coeffs.khat * forcing.inner(&u_beta),
    }
}
