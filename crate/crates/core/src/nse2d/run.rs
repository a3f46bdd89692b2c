use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::case::{exact_fields, manufactured_forcing, ManufacturedCase};
use super::field::VelocityField;
use super::grid::Grid2D;
use super::norms::{h_minus1_norm, BochnerL2Beta, BochnerSup};
use super::step::{energy_budget, nse_semi_implicit_step, sample_forcing, NseSolverConfig, NseWindow};
use crate::adaptive::DlnStepper;
use crate::coefficients::Theta;
use crate::error::{DlnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NseRunConfig {
    pub theta: Theta,
    pub n: usize,
    pub side_length: f64,
    pub case: ManufacturedCase,
    pub k: f64,
    pub t_end: f64,
    #[serde(default)]
    pub solver: NseSolverConfig,
}

impl NseRunConfig {
    pub fn steps(&self) -> Result<usize> {
        if !(self.k > 0.0 && self.t_end > 0.0) {
            return Err(DlnError::InvalidConfig("k and t_end must be positive".into()));
        }
        let n = (self.t_end / self.k).round();
        if (n * self.k - self.t_end).abs() > 1e-9 * self.t_end || n < 2.0 {
            return Err(DlnError::InvalidConfig(format!(
                "t_end = {} is not a multiple (>= 2) of k = {}",
                self.t_end, self.k
            )));
        }
        Ok(n as usize)
    }
}

/// Diagnostics of one accepted step `n -> n+1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NseStepRecord {
    pub step: usize,
    /// `t_{n+1}`
    pub t: f64,
    pub k_n: f64,
    pub k_nm1: f64,
    pub khat: f64,
    pub t_beta: f64,
    pub energy: f64,
    #[serde(rename = "E_ND")]
    pub e_nd: f64,
    #[serde(rename = "E_VD")]
    pub e_vd: f64,
    /// `G(u_{n+1}, u_n)`
    pub g_energy: f64,
    /// `||sum gamma u||^2`
    pub gamma_sq: f64,
    /// `nu khat ||grad u_beta||^2`
    pub viscous_term: f64,
    pub identity_residual: f64,
    /// `max |div u_{n+1}| / ||u_{n+1}||`
    pub divergence: f64,
    pub gmres_iterations: usize,
    /// `||f(t_beta)||_{-1}^2`
    pub f_dual_sq: f64,
    /// `||f_used - f(t_beta)||_{-1}^2`
    pub f_defect_dual_sq: f64,
    pub u_err_l2: f64,
    pub u_err_h1: f64,
    pub p_err_l2: f64,
    pub stability_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NseRunLedger {
    pub nu: f64,
    pub theta: Theta,
    /// `G(u_1, u_0)`
    pub initial_g: f64,
    pub rows: Vec<NseStepRecord>,
}

impl NseRunLedger {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| DlnError::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn max_identity_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.identity_residual).fold(0.0, f64::max)
    }

    pub fn max_divergence(&self) -> f64 {
        self.rows.iter().map(|r| r.divergence).fold(0.0, f64::max)
    }
}

/// Left and right sides of the long-time energy bound after each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub gamma_sq: Vec<f64>,
    /// `G_{n+1} + sum (||sum gamma u||^2 + nu khat ||grad u_beta||^2)`, constant when `f = 0`.
    pub budget: Vec<f64>,
}

impl StabilityReport {
    pub fn margins(&self) -> impl Iterator<Item = f64> + '_ {
        self.lhs.iter().zip(&self.rhs).map(|(l, r)| r - l)
    }

    pub fn min_margin(&self) -> f64 {
        self.margins().fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self) -> bool {
        self.margins().all(|m| m >= 0.0)
    }

    /// Budget never grows by more than `rel_tol` of its size.
    pub fn budget_nonincreasing(&self, rel_tol: f64) -> bool {
        self.budget
            .windows(2)
            .all(|w| w[1] <= w[0] + rel_tol * w[0].abs().max(f64::MIN_POSITIVE))
    }

    pub fn gamma_column_zero(&self) -> bool {
        self.gamma_sq.iter().all(|&g| g == 0.0)
    }
}

/// Evaluate the energy bound with constant one:
///
/// `G_{N+1} + sum ||sum gamma u||^2 + nu/2 sum khat ||grad u_beta||^2
///   <= 1/nu sum (k_n + k_{n-1}) (||f(t_beta)||_{-1}^2 + ||f_used - f(t_beta)||_{-1}^2) + G_1`.
pub fn stability_monitor(ledger: &NseRunLedger) -> StabilityReport {
    let mut report = StabilityReport {
        lhs: Vec::with_capacity(ledger.rows.len()),
        rhs: Vec::with_capacity(ledger.rows.len()),
        gamma_sq: Vec::with_capacity(ledger.rows.len()),
        budget: Vec::with_capacity(ledger.rows.len()),
    };
    let (mut diss, mut half_visc, mut full_visc, mut forcing) = (0.0, 0.0, 0.0, 0.0);
    for row in &ledger.rows {
        diss += row.gamma_sq;
        half_visc += 0.5 * row.viscous_term;
        full_visc += row.viscous_term;
        forcing += (row.k_n + row.k_nm1) * (row.f_dual_sq + row.f_defect_dual_sq) / ledger.nu;
        report.lhs.push(row.g_energy + diss + half_visc);
        report.rhs.push(forcing + ledger.initial_g);
        report.gamma_sq.push(row.gamma_sq);
        report.budget.push(row.g_energy + diss + full_visc);
    }
    report
}

#[derive(Debug, Clone)]
pub struct NseRun {
    pub ledger: NseRunLedger,
    pub stability: StabilityReport,
    /// `max_n ||u(t_n) - u_n||`
    pub u_linf_l2: f64,
    /// `max_n ||grad (u(t_n) - u_n)||`
    pub u_linf_h1: f64,
    /// `(sum (k_n + k_{n-1}) ||p(t_beta) - p_beta||^2)^(1/2)`
    pub p_l2_beta: f64,
    pub final_u: VelocityField,
}

fn dual_sq(f: &VelocityField) -> Result<f64> {
    Ok(h_minus1_norm(f)?.powi(2))
}

/// Constant-step run from exact `u_0`, `u_1`.
pub fn run_constant_steps(config: &NseRunConfig) -> Result<NseRun> {
    let grid = Grid2D::new(config.n, config.side_length)?;
    config.case.check_domain(&grid)?;
    let n_steps = config.steps()?;
    let case = config.case;
    let nu = case.nu;
    let theta = config.theta;
    let k = config.k;
    let forcing_fn = |t: f64| manufactured_forcing(&case, &grid, t);

    let (u0, _) = exact_fields(&case, &grid, 0.0);
    let (u1, _) = exact_fields(&case, &grid, k);
    let initial_g = theta.weights().apply(u1.inner(&u1), u0.inner(&u0));
    let mut ledger = NseRunLedger {
        nu,
        theta,
        initial_g,
        rows: Vec::with_capacity(n_steps),
    };
    let (mut u_sup, mut h1_sup, mut p_acc) = (BochnerSup::default(), BochnerSup::default(), BochnerL2Beta::default());
    let (mut prev, mut curr) = (u0, u1);
    for step in 1..n_steps {
        let t_prev = (step - 1) as f64 * k;
        let t_curr = step as f64 * k;
        let t_next = (step + 1) as f64 * k;
        let window = NseWindow {
            t_prev,
            t_curr,
            u_prev: &prev,
            u_curr: &curr,
        };
        let coeffs = crate::coefficients::one_leg_coefficients(theta, window.pair(k)?);
        let f_used = sample_forcing(&forcing_fn, config.solver.forcing, &coeffs, t_prev, t_curr, t_next);
        let out = nse_semi_implicit_step(&window, theta, k, nu, &f_used, &config.solver)
            .map_err(|e| DlnError::StepFailed {
                step,
                source: Box::new(e),
            })?;
        let budget = energy_budget(theta, &out.coeffs, [&prev, &curr, &out.u_next], nu, &f_used);
        let f_beta = forcing_fn(out.t_beta);
        let mut defect = f_used.clone();
        defect.add_scaled(-1.0, &f_beta);

        let (u_exact, _) = exact_fields(&case, &grid, t_next);
        let mut du = out.u_next.clone();
        du.add_scaled(-1.0, &u_exact);
        let (_, p_exact) = exact_fields(&case, &grid, out.t_beta);
        let dp = out.p_beta.difference(&p_exact)?;
        let u_norm = out.u_next.l2_norm();

        let record = NseStepRecord {
            step,
            t: t_next,
            k_n: k,
            k_nm1: k,
            khat: out.coeffs.khat,
            t_beta: out.t_beta,
            energy: 0.5 * u_norm * u_norm,
            e_nd: budget.numerical_dissipation / out.coeffs.khat,
            e_vd: budget.viscous_dissipation / out.coeffs.khat,
            g_energy: budget.g_new,
            gamma_sq: budget.numerical_dissipation,
            viscous_term: budget.viscous_dissipation,
            identity_residual: budget.relative_residual(),
            divergence: if u_norm > 0.0 { out.u_next.max_divergence() / u_norm } else { 0.0 },
            gmres_iterations: out.iterations,
            f_dual_sq: dual_sq(&f_beta)?,
            f_defect_dual_sq: dual_sq(&defect)?,
            u_err_l2: du.l2_norm(),
            u_err_h1: du.h1_semi_sq().sqrt(),
            p_err_l2: dp.l2_norm(),
            stability_margin: f64::NAN,
        };
        u_sup.push(record.u_err_l2);
        h1_sup.push(record.u_err_h1);
        p_acc.push(k, k, record.p_err_l2);
        ledger.rows.push(record);
        prev = std::mem::replace(&mut curr, out.u_next);
    }
    let stability = stability_monitor(&ledger);
    for (row, m) in ledger.rows.iter_mut().zip(stability.margins()) {
        row.stability_margin = m;
    }
    Ok(NseRun {
        ledger,
        stability,
        u_linf_l2: u_sup.value(),
        u_linf_h1: h1_sup.value(),
        p_l2_beta: p_acc.value(),
        final_u: curr,
    })
}

/// Adaptive-loop adapter for the periodic solver.
pub struct NseStepper {
    pub grid: Arc<Grid2D>,
    pub case: ManufacturedCase,
    pub theta: Theta,
    pub solver: NseSolverConfig,
    /// Largest relative energy-identity residual over all attempted steps.
    pub max_identity_residual: f64,
    pub max_divergence: f64,
    pub gmres_iterations: usize,
}

impl NseStepper {
    pub fn new(case: ManufacturedCase, n: usize, side_length: f64, theta: Theta, solver: NseSolverConfig) -> Result<Self> {
        let grid = Grid2D::new(n, side_length)?;
        case.check_domain(&grid)?;
        Ok(NseStepper {
            grid,
            case,
            theta,
            solver,
            max_identity_residual: 0.0,
            max_divergence: 0.0,
            gmres_iterations: 0,
        })
    }

    pub fn initial_state(&self) -> VelocityField {
        exact_fields(&self.case, &self.grid, 0.0).0
    }

    /// `1/2 ||u(t)||^2` of the exact solution on this grid.
    pub fn exact_energy(&self, t: f64) -> f64 {
        self.case.kinetic_energy(t, self.grid.side_length())
    }
}

impl DlnStepper for NseStepper {
    type State = VelocityField;

    fn theta(&self) -> Theta {
        self.theta
    }

    fn startup(&mut self, t0: f64, _y0: &VelocityField, k0: f64) -> Result<VelocityField> {
        Ok(exact_fields(&self.case, &self.grid, t0 + k0).0)
    }

    fn step(
        &mut self,
        t_prev: f64,
        y_prev: &VelocityField,
        t_curr: f64,
        y_curr: &VelocityField,
        k_n: f64,
    ) -> Result<VelocityField> {
        let window = NseWindow {
            t_prev,
            t_curr,
            u_prev: y_prev,
            u_curr: y_curr,
        };
        let coeffs = crate::coefficients::one_leg_coefficients(self.theta, window.pair(k_n)?);
        let (case, grid) = (self.case, self.grid.clone());
        let forcing_fn = |t: f64| manufactured_forcing(&case, &grid, t);
        let f_used = sample_forcing(&forcing_fn, self.solver.forcing, &coeffs, t_prev, t_curr, t_curr + k_n);
        let out = nse_semi_implicit_step(&window, self.theta, k_n, case.nu, &f_used, &self.solver)?;
        let budget = energy_budget(self.theta, &out.coeffs, [y_prev, y_curr, &out.u_next], case.nu, &f_used);
        self.max_identity_residual = self.max_identity_residual.max(budget.relative_residual());
        let norm = out.u_next.l2_norm();
        if norm > 0.0 {
            self.max_divergence = self.max_divergence.max(out.u_next.max_divergence() / norm);
        }
        self.gmres_iterations += out.iterations;
        Ok(out.u_next)
    }

    fn combine(&self, terms: &[(f64, &VelocityField)]) -> VelocityField {
        VelocityField::lincomb(terms)
    }

    fn norm(&self, y: &VelocityField) -> f64 {
        y.l2_norm()
    }

    fn grad_seminorm_sq(&self, y: &VelocityField) -> f64 {
        y.h1_semi_sq()
    }

    fn viscosity(&self) -> f64 {
        self.case.nu
    }
}
