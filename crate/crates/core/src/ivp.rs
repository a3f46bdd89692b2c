//! Initial-value-problem driver for the DLN family.
//!
//! Three ways to take one step are provided:
//!
//! * [`dln_step_direct`] solves the one-leg relation for `y_{n+1}` directly;
//! * [`dln_step_refactorized`] wraps a single backward-Euler stage at the
//!   broadcast time between linear pre- and post-filters. When the problem
//!   carries a [`BilinearSplit`] the stage is semi-implicit (the advecting slot
//!   is frozen at the extrapolant) and reduces to one linear solve;
//! * [`dln_step_semi_implicit`] is the same semi-implicit scheme written in
//!   the one-leg form, used to cross-check the refactorized path.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coefficients::{
    g_norm_sq, one_leg_coefficients, OneLegCoefficients, RefactorCoefficients, StepPair, Theta,
};
use crate::error::{DlnError, Result};

pub type RhsFn = Box<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Box<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ExactFn = Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// An ODE system `y' = f(t, y)`.
pub trait IvpProblem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, _t: f64, _y: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    fn split(&self) -> Option<&BilinearSplit> {
        None
    }

    fn exact(&self, _t: f64) -> Option<DVector<f64>> {
        None
    }
}

/// Decomposition `f(t, y) = L(t) y + B(y) y + g(t)` where `B` is linear in its argument.
///
/// The semi-implicit scheme evaluates `B` at an extrapolated state, so the stage
/// equation becomes linear in the unknown.
pub struct BilinearSplit {
    linear: Box<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
    bilinear: Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>,
    source: Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
}

impl BilinearSplit {
    pub fn new(
        linear: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        bilinear: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        source: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        BilinearSplit {
            linear: Box::new(linear),
            bilinear: Box::new(bilinear),
            source: Box::new(source),
        }
    }

    /// `L(t) + B(w)`.
    pub fn operator(&self, t: f64, frozen: &DVector<f64>) -> DMatrix<f64> {
        (self.linear)(t) + (self.bilinear)(frozen)
    }

    pub fn source(&self, t: f64) -> DVector<f64> {
        (self.source)(t)
    }

    /// Re-assembled right side `L(t) y + B(y) y + g(t)`.
    pub fn assemble(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        self.operator(t, y) * y + self.source(t)
    }
}

/// Closure-backed [`IvpProblem`].
pub struct FnProblem {
    dim: usize,
    rhs: RhsFn,
    jacobian: Option<JacobianFn>,
    split: Option<BilinearSplit>,
    exact: Option<ExactFn>,
}

impl FnProblem {
    pub fn new(
        dim: usize,
        rhs: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        FnProblem {
            dim,
            rhs: Box::new(rhs),
            jacobian: None,
            split: None,
            exact: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn with_split(mut self, split: BilinearSplit) -> Self {
        self.split = Some(split);
        self
    }

    pub fn with_exact(mut self, exact: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.exact = Some(Box::new(exact));
        self
    }
}

impl IvpProblem for FnProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        (self.rhs)(t, y)
    }

    fn jacobian(&self, t: f64, y: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(t, y))
    }

    fn split(&self) -> Option<&BilinearSplit> {
        self.split.as_ref()
    }

    fn exact(&self, t: f64) -> Option<DVector<f64>> {
        self.exact.as_ref().map(|e| e(t))
    }
}

/// Largest relative mismatch between a problem's split and its right side at the probes.
///
/// Returns `None` when the problem has no split.
pub fn split_consistency(problem: &dyn IvpProblem, probes: &[(f64, DVector<f64>)]) -> Option<f64> {
    let split = problem.split()?;
    let worst = probes
        .iter()
        .map(|(t, y)| {
            let f = problem.rhs(*t, y);
            (split.assemble(*t, y) - &f).norm() / f.norm().max(1.0)
        })
        .fold(0.0, f64::max);
    Some(worst)
}

/// Ready-made problems used by tests, the CLI and the acceptance suite.
pub mod problems {
    use super::*;

    /// `y' = -y + sin t`, `y(0) = y0`, with its closed-form solution.
    pub fn forced_decay(y0: f64) -> FnProblem {
        let c = y0 + 0.5;
        FnProblem::new(1, |t, y| DVector::from_element(1, -y[0] + t.sin()))
            .with_jacobian(|_, _| DMatrix::from_element(1, 1, -1.0))
            .with_split(BilinearSplit::new(
                |_| DMatrix::from_element(1, 1, -1.0),
                |_| DMatrix::zeros(1, 1),
                |t| DVector::from_element(1, t.sin()),
            ))
            .with_exact(move |t| DVector::from_element(1, 0.5 * (t.sin() - t.cos()) + c * (-t).exp()))
    }

    /// Scalar Dahlquist test `y' = lambda y`, `y(0) = 1`.
    pub fn dahlquist(lambda: f64) -> FnProblem {
        FnProblem::new(1, move |_, y| y * lambda)
            .with_jacobian(move |_, _| DMatrix::from_element(1, 1, lambda))
            .with_exact(move |t| DVector::from_element(1, (lambda * t).exp()))
    }

    /// Autonomous linear system `y' = A y`.
    pub fn linear(a: DMatrix<f64>) -> FnProblem {
        let dim = a.nrows();
        let (a1, a2, a3) = (a.clone(), a.clone(), a);
        FnProblem::new(dim, move |_, y| &a1 * y)
            .with_jacobian(move |_, _| a2.clone())
            .with_split(BilinearSplit::new(
                move |_| a3.clone(),
                move |_| DMatrix::zeros(dim, dim),
                move |_| DVector::zeros(dim),
            ))
    }

    /// `y' = 0` in `dim` dimensions.
    pub fn zero(dim: usize) -> FnProblem {
        FnProblem::new(dim, move |_, _| DVector::zeros(dim))
            .with_jacobian(move |_, _| DMatrix::zeros(dim, dim))
    }

    /// Scalar `y' = -y + y^2` with the quadratic written as `B(y) y`, `B(w) = w`.
    pub fn logistic_like() -> FnProblem {
        FnProblem::new(1, |_, y| DVector::from_element(1, -y[0] + y[0] * y[0]))
            .with_jacobian(|_, y| DMatrix::from_element(1, 1, -1.0 + 2.0 * y[0]))
            .with_split(BilinearSplit::new(
                |_| DMatrix::from_element(1, 1, -1.0),
                |w| DMatrix::from_element(1, 1, w[0]),
                |_| DVector::zeros(1),
            ))
            .with_exact(|t| {
                // y(0) = 1/2: y = 1 / (1 + e^t)
                DVector::from_element(1, 1.0 / (1.0 + t.exp()))
            })
    }
}

/// The two most recent solutions and their times.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWindow {
    pub t_prev: f64,
    pub t_curr: f64,
    pub y_prev: DVector<f64>,
    pub y_curr: DVector<f64>,
}

impl StateWindow {
    pub fn new(t_prev: f64, y_prev: DVector<f64>, t_curr: f64, y_curr: DVector<f64>) -> Result<Self> {
        if !(t_curr > t_prev) {
            return Err(DlnError::InvalidStep {
                k_n: f64::NAN,
                k_nm1: t_curr - t_prev,
            });
        }
        if y_prev.len() != y_curr.len() {
            return Err(DlnError::DimensionMismatch {
                expected: y_prev.len(),
                found: y_curr.len(),
            });
        }
        Ok(StateWindow {
            t_prev,
            t_curr,
            y_prev,
            y_curr,
        })
    }

    pub fn previous_step(&self) -> f64 {
        self.t_curr - self.t_prev
    }

    pub fn pair(&self, k_n: f64) -> Result<StepPair> {
        StepPair::new(k_n, self.previous_step())
    }

    /// Shift the window forward by one accepted step.
    pub fn advance(&mut self, t_next: f64, y_next: DVector<f64>) {
        let y_curr = std::mem::replace(&mut self.y_curr, y_next);
        self.y_prev = y_curr;
        self.t_prev = self.t_curr;
        self.t_curr = t_next;
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.y_curr.len() != dim {
            return Err(DlnError::DimensionMismatch {
                expected: dim,
                found: self.y_curr.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageMethod {
    Newton,
    FixedPoint,
    /// A single linearized solve; exact when `f` is affine in `y`.
    LinearDirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSolveConfig {
    pub method: StageMethod,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for StageSolveConfig {
    fn default() -> Self {
        StageSolveConfig {
            method: StageMethod::Newton,
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_iters: 50,
        }
    }
}

impl StageSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) || self.max_iters == 0 {
            return Err(DlnError::InvalidConfig(
                "stage solver tolerances must be positive and max_iters >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one step together with the work the stage solve needed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub y_next: DVector<f64>,
    /// Nonlinear (Newton or fixed-point) iterations.
    pub iterations: usize,
    pub linear_solves: usize,
}

/// Second-order extrapolation of `y_{n,beta}` from `y_n`, `y_{n-1}`.
///
/// `ratio` is `k_n / k_{n-1}`.
pub fn extrapolant(window: &StateWindow, coeffs: &OneLegCoefficients, ratio: f64) -> DVector<f64> {
    let [b0, b1, b2] = coeffs.beta;
    &window.y_curr * (b2 * (1.0 + ratio) + b1) + &window.y_prev * (b0 - b2 * ratio)
}

/// Stage equation `a z - c - h f(tau, m z + d) = 0`.
struct StageEquation<'a> {
    a: f64,
    c: &'a DVector<f64>,
    h: f64,
    m: f64,
    d: &'a DVector<f64>,
    tau: f64,
}

impl StageEquation<'_> {
    fn arg(&self, z: &DVector<f64>) -> DVector<f64> {
        z * self.m + self.d
    }

    fn residual(&self, problem: &dyn IvpProblem, z: &DVector<f64>) -> DVector<f64> {
        z * self.a - self.c - problem.rhs(self.tau, &self.arg(z)) * self.h
    }

    fn jacobian(&self, problem: &dyn IvpProblem, z: &DVector<f64>) -> DMatrix<f64> {
        let x = self.arg(z);
        let jf = problem
            .jacobian(self.tau, &x)
            .unwrap_or_else(|| fd_jacobian(problem, self.tau, &x));
        DMatrix::identity(z.len(), z.len()) * self.a - jf * (self.h * self.m)
    }
}

fn fd_jacobian(problem: &dyn IvpProblem, t: f64, y: &DVector<f64>) -> DMatrix<f64> {
    let n = y.len();
    let f0 = problem.rhs(t, y);
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = y.clone();
    for j in 0..n {
        let h = f64::EPSILON.sqrt() * y[j].abs().max(1.0);
        probe[j] = y[j] + h;
        let col = (problem.rhs(t, &probe) - &f0) / h;
        jac.set_column(j, &col);
        probe[j] = y[j];
    }
    jac
}

fn ensure_finite(y: &DVector<f64>, t: f64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DlnError::NonFiniteState { t })
    }
}

fn lu_solve(mat: DMatrix<f64>, rhs: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    mat.lu().solve(rhs).ok_or(DlnError::NonFiniteState { t })
}

fn solve_stage(
    problem: &dyn IvpProblem,
    eq: &StageEquation<'_>,
    guess: DVector<f64>,
    config: &StageSolveConfig,
) -> Result<(DVector<f64>, usize, usize)> {
    config.validate()?;
    let mut z = guess;
    let converged =
        |r: &DVector<f64>, z: &DVector<f64>| r.norm() <= config.abs_tol + config.rel_tol * z.norm();
    match config.method {
        StageMethod::LinearDirect => {
            let r = eq.residual(problem, &z);
            let delta = lu_solve(eq.jacobian(problem, &z), &(-r), eq.tau)?;
            z += delta;
            ensure_finite(&z, eq.tau)?;
            Ok((z, 0, 1))
        }
        StageMethod::Newton => {
            let mut solves = 0;
            for it in 0..=config.max_iters {
                let r = eq.residual(problem, &z);
                ensure_finite(&r, eq.tau)?;
                if converged(&r, &z) {
                    return Ok((z, it, solves));
                }
                if it == config.max_iters {
                    return Err(DlnError::SolverDiverged {
                        iterations: it,
                        residual: r.norm(),
                    });
                }
                let delta = lu_solve(eq.jacobian(problem, &z), &(-r), eq.tau)?;
                z += &delta;
                solves += 1;
                if converged(&delta, &z) {
                    return Ok((z, it + 1, solves));
                }
            }
            unreachable!()
        }
        StageMethod::FixedPoint => {
            for it in 0..=config.max_iters {
                let r = eq.residual(problem, &z);
                ensure_finite(&r, eq.tau)?;
                if converged(&r, &z) {
                    return Ok((z, it, 0));
                }
                if it == config.max_iters {
                    return Err(DlnError::SolverDiverged {
                        iterations: it,
                        residual: r.norm(),
                    });
                }
                let next = (eq.c + problem.rhs(eq.tau, &eq.arg(&z)) * eq.h) / eq.a;
                ensure_finite(&next, eq.tau)?;
                let change = &next - &z;
                z = next;
                if converged(&change, &z) {
                    return Ok((z, it + 1, 0));
                }
            }
            unreachable!()
        }
    }
}

fn linear_guess(window: &StateWindow, ratio: f64) -> DVector<f64> {
    &window.y_curr * (1.0 + ratio) - &window.y_prev * ratio
}

/// One DLN step solving the one-leg relation for `y_{n+1}` directly.
pub fn dln_step_direct(
    problem: &dyn IvpProblem,
    window: &StateWindow,
    theta: Theta,
    k_n: f64,
    config: &StageSolveConfig,
) -> Result<StepOutcome> {
    window.check_dim(problem.dim())?;
    let pair = window.pair(k_n)?;
    let c = one_leg_coefficients(theta, pair);
    let [a0, a1, a2] = c.alpha;
    let [b0, b1, b2] = c.beta;
    let known = -(&window.y_curr * a1 + &window.y_prev * a0);
    let offset = &window.y_curr * b1 + &window.y_prev * b0;
    let eq = StageEquation {
        a: a2,
        c: &known,
        h: c.khat,
        m: b2,
        d: &offset,
        tau: c.broadcast(window.t_prev, window.t_curr, window.t_curr + k_n),
    };
    let (y_next, iterations, linear_solves) =
        solve_stage(problem, &eq, linear_guess(window, pair.ratio()), config)?;
    Ok(StepOutcome {
        y_next,
        iterations,
        linear_solves,
    })
}

/// One DLN step through pre-filter, backward-Euler stage, post-filter.
pub fn dln_step_refactorized(
    problem: &dyn IvpProblem,
    window: &StateWindow,
    theta: Theta,
    k_n: f64,
    config: &StageSolveConfig,
) -> Result<StepOutcome> {
    window.check_dim(problem.dim())?;
    let pair = window.pair(k_n)?;
    let c = one_leg_coefficients(theta, pair);
    let r = RefactorCoefficients::from_one_leg(&c);
    let tau = c.broadcast(window.t_prev, window.t_curr, window.t_curr + k_n);
    let y_old = &window.y_curr * r.a1 + &window.y_prev * r.a0;
    let k_be = r.b * c.khat;

    let (y_temp, iterations, linear_solves) = match problem.split() {
        Some(split) => {
            let frozen = extrapolant(window, &c, pair.ratio());
            let n = problem.dim();
            let mat = DMatrix::identity(n, n) - split.operator(tau, &frozen) * k_be;
            let rhs = &y_old + split.source(tau) * k_be;
            (lu_solve(mat, &rhs, tau)?, 0, 1)
        }
        None => {
            let zero = DVector::zeros(problem.dim());
            let eq = StageEquation {
                a: 1.0,
                c: &y_old,
                h: k_be,
                m: 1.0,
                d: &zero,
                tau,
            };
            let guess = extrapolant(window, &c, pair.ratio());
            solve_stage(problem, &eq, guess, config)?
        }
    };
    let y_next = y_temp * r.c2 + &window.y_curr * r.c1 + &window.y_prev * r.c0;
    ensure_finite(&y_next, window.t_curr + k_n)?;
    Ok(StepOutcome {
        y_next,
        iterations,
        linear_solves,
    })
}

/// Semi-implicit DLN in one-leg form: `sum alpha y = khat (M y_beta + g)`, `M = L + B(y~_n)`.
///
/// Falls back to [`dln_step_direct`] when the problem has no split.
pub fn dln_step_semi_implicit(
    problem: &dyn IvpProblem,
    window: &StateWindow,
    theta: Theta,
    k_n: f64,
    config: &StageSolveConfig,
) -> Result<StepOutcome> {
    let Some(split) = problem.split() else {
        return dln_step_direct(problem, window, theta, k_n, config);
    };
    window.check_dim(problem.dim())?;
    let pair = window.pair(k_n)?;
    let c = one_leg_coefficients(theta, pair);
    let [a0, a1, a2] = c.alpha;
    let [b0, b1, b2] = c.beta;
    let tau = c.broadcast(window.t_prev, window.t_curr, window.t_curr + k_n);
    let m = split.operator(tau, &extrapolant(window, &c, pair.ratio()));
    let n = problem.dim();
    let mat = DMatrix::identity(n, n) * a2 - &m * (c.khat * b2);
    let partial = &window.y_curr * b1 + &window.y_prev * b0;
    let rhs = -(&window.y_curr * a1 + &window.y_prev * a0)
        + (m * partial + split.source(tau)) * c.khat;
    let y_next = lu_solve(mat, &rhs, tau)?;
    Ok(StepOutcome {
        y_next,
        iterations: 0,
        linear_solves: 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPath {
    Direct,
    Refactorized,
    SemiImplicit,
}

impl StepPath {
    pub fn step(
        self,
        problem: &dyn IvpProblem,
        window: &StateWindow,
        theta: Theta,
        k_n: f64,
        config: &StageSolveConfig,
    ) -> Result<StepOutcome> {
        match self {
            StepPath::Direct => dln_step_direct(problem, window, theta, k_n, config),
            StepPath::Refactorized => dln_step_refactorized(problem, window, theta, k_n, config),
            StepPath::SemiImplicit => dln_step_semi_implicit(problem, window, theta, k_n, config),
        }
    }
}

/// One implicit-midpoint step, used to seed `y_1` when no exact solution is known.
pub fn midpoint_startup(
    problem: &dyn IvpProblem,
    t0: f64,
    y0: &DVector<f64>,
    k0: f64,
    config: &StageSolveConfig,
) -> Result<DVector<f64>> {
    let half = y0 * 0.5;
    let eq = StageEquation {
        a: 1.0,
        c: y0,
        h: k0,
        m: 0.5,
        d: &half,
        tau: t0 + 0.5 * k0,
    };
    let guess = y0 + problem.rhs(t0, y0) * k0;
    Ok(solve_stage(problem, &eq, guess, config)?.0)
}

/// Step ratios outside this band are allowed but logged.
pub const RATIO_BAND: (f64, f64) = (0.2, 1.5);

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `||(y_{n+1}, y_n)||_G^2` for every consecutive pair, starting with `(y_1, y_0)`.
    pub g_energy: Vec<f64>,
    /// Indices `n` of steps whose ratio `k_n / k_{n-1}` left [`RATIO_BAND`].
    pub ratio_warnings: Vec<usize>,
    pub iterations: usize,
}

impl Trajectory {
    /// Max-norm error against the problem's exact solution over all grid points.
    pub fn max_error(&self, problem: &dyn IvpProblem) -> Option<f64> {
        self.times.iter().zip(&self.states).try_fold(0.0f64, |acc, (t, y)| {
            let exact = problem.exact(*t)?;
            Some(acc.max((y - exact).amax()))
        })
    }
}

/// Integrate over a prescribed step schedule.
///
/// `steps[0]` is `k_0 = t_1 - t_0`; the remaining entries are `k_1, k_2, ...`.
/// `y1` seeds the two-step recurrence.
#[allow(clippy::too_many_arguments)]
pub fn integrate_fixed(
    problem: &dyn IvpProblem,
    t0: f64,
    y0: DVector<f64>,
    y1: DVector<f64>,
    steps: &[f64],
    theta: Theta,
    config: &StageSolveConfig,
    path: StepPath,
) -> Result<Trajectory> {
    let (&k0, rest) = steps
        .split_first()
        .ok_or_else(|| DlnError::InvalidConfig("empty step schedule".into()))?;
    let mut window = StateWindow::new(t0, y0.clone(), t0 + k0, y1.clone())?;
    window.check_dim(problem.dim())?;
    let mut traj = Trajectory {
        times: vec![t0, t0 + k0],
        states: vec![y0, y1],
        g_energy: vec![g_norm_sq(theta, window.y_curr.as_slice(), window.y_prev.as_slice())?],
        ratio_warnings: Vec::new(),
        iterations: 0,
    };
    let mut k_prev = k0;
    for (i, &k) in rest.iter().enumerate() {
        let n = i + 1;
        let ratio = k / k_prev;
        if !(RATIO_BAND.0..=RATIO_BAND.1).contains(&ratio) {
            debug!("step {n}: ratio k_n/k_n-1 = {ratio:.3} outside {RATIO_BAND:?}");
            traj.ratio_warnings.push(n);
        }
        let out = path
            .step(problem, &window, theta, k, config)
            .map_err(|e| DlnError::StepFailed {
                step: n,
                source: Box::new(e),
            })?;
        traj.iterations += out.iterations;
        let t_next = window.t_curr + k;
        traj.g_energy
            .push(g_norm_sq(theta, out.y_next.as_slice(), window.y_curr.as_slice())?);
        traj.times.push(t_next);
        traj.states.push(out.y_next.clone());
        window.advance(t_next, out.y_next);
        k_prev = k;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::problems::*;
    use super::*;
    use approx::assert_relative_eq;

    fn window(yp: f64, yc: f64, k: f64) -> StateWindow {
        StateWindow::new(
            0.0,
            DVector::from_element(1, yp),
            k,
            DVector::from_element(1, yc),
        )
        .unwrap()
    }

    fn newton() -> StageSolveConfig {
        StageSolveConfig::default()
    }

    #[test]
    fn zero_rhs_step_matches_one_leg_relation() {
        let p = zero(1);
        let w = window(0.3, 1.7, 0.4);
        let theta = Theta::new(0.4).unwrap();
        let out = dln_step_direct(&p, &w, theta, 0.9, &newton()).unwrap();
        let c = one_leg_coefficients(theta, StepPair::new(0.9, 0.4).unwrap());
        let expected = -(c.alpha[1] * 1.7 + c.alpha[0] * 0.3) / c.alpha[2];
        assert_relative_eq!(out.y_next[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn dahlquist_matches_closed_form_solve() {
        let lambda = -1.0;
        let p = dahlquist(lambda);
        let w = window(1.0, (-0.1f64).exp(), 0.1);
        let theta = Theta::two_thirds();
        let c = one_leg_coefficients(theta, StepPair::constant(0.1).unwrap());
        let z = c.khat * lambda;
        let closed = (-(c.alpha[1] - z * c.beta[1]) * w.y_curr[0]
            - (c.alpha[0] - z * c.beta[0]) * w.y_prev[0])
            / (c.alpha[2] - z * c.beta[2]);
        for path in [StepPath::Direct, StepPath::Refactorized] {
            let out = path.step(&p, &w, theta, 0.1, &newton()).unwrap();
            assert_relative_eq!(out.y_next[0], closed, epsilon = 1e-15);
        }
    }

    #[test]
    fn stable_at_infinity_for_two_over_sqrt5() {
        // As lambda*khat -> -inf the recurrence reduces to beta_2 r^2 + beta_1 r + beta_0 = 0.
        let roots = |theta: Theta| {
            let c = one_leg_coefficients(theta, StepPair::constant(1.0).unwrap());
            let [b0, b1, b2] = c.beta;
            let disc = b1 * b1 - 4.0 * b2 * b0;
            if disc >= 0.0 {
                let s = disc.sqrt();
                ((-b1 + s) / (2.0 * b2)).abs().max(((-b1 - s) / (2.0 * b2)).abs())
            } else {
                (b0 / b2).sqrt()
            }
        };
        assert!(roots(Theta::stable_at_infinity()) < 1.0);
        assert_relative_eq!(roots(Theta::MIDPOINT), 1.0, epsilon = 1e-15);

        // and the actual step with a huge stiff eigenvalue contracts the G-energy
        let p = dahlquist(-1e8);
        let mut w = window(1.0, 1.0, 0.1);
        for _ in 0..20 {
            let out = dln_step_direct(&p, &w, Theta::stable_at_infinity(), 0.1, &newton()).unwrap();
            w.advance(w.t_curr + 0.1, out.y_next);
        }
        assert!(w.y_curr[0].abs() < 1e-2);
    }

    #[test]
    fn refactorized_midpoint_zero_rhs_is_identity() {
        let p = zero(2);
        let y = DVector::from_vec(vec![1.0, -2.0]);
        let w = StateWindow::new(0.0, y.clone(), 1.0, y.clone()).unwrap();
        let out = dln_step_refactorized(&p, &w, Theta::MIDPOINT, 1.0, &newton()).unwrap();
        assert_relative_eq!(out.y_next, y, epsilon = 1e-15);
    }

    #[test]
    fn refactorized_equals_direct_on_dahlquist() {
        let p = dahlquist(-2.0);
        let theta = Theta::two_thirds();
        let w = window(1.0, (-0.1f64).exp(), 0.05);
        let d = dln_step_direct(&p, &w, theta, 0.05, &newton()).unwrap();
        let r = dln_step_refactorized(&p, &w, theta, 0.05, &newton()).unwrap();
        assert!((d.y_next[0] - r.y_next[0]).abs() <= 1e-13);
    }

    #[test]
    fn semi_implicit_bilinear_needs_no_newton_iterations() {
        let p = logistic_like();
        let theta = Theta::two_thirds();
        let w = window(0.5, 1.0 / (1.0 + 0.1f64.exp()), 0.1);
        let r = dln_step_refactorized(&p, &w, theta, 0.1, &newton()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.linear_solves, 1);
        let s = dln_step_semi_implicit(&p, &w, theta, 0.1, &newton()).unwrap();
        assert!((r.y_next[0] - s.y_next[0]).abs() < 1e-14);
        // semi-implicit stays close to the fully implicit answer
        let d = dln_step_direct(&p, &w, theta, 0.1, &newton()).unwrap();
        assert!(d.iterations > 0);
        assert!((d.y_next[0] - r.y_next[0]).abs() < 1e-3);
    }

    #[test]
    fn split_consistency_of_library_problems() {
        let probes: Vec<_> = [(0.1, 0.3), (1.7, -2.0), (3.0, 0.9)]
            .iter()
            .map(|&(t, y)| (t, DVector::from_element(1, y)))
            .collect();
        assert!(split_consistency(&forced_decay(1.0), &probes).unwrap() < 1e-12);
        assert!(split_consistency(&logistic_like(), &probes).unwrap() < 1e-12);
        assert!(split_consistency(&dahlquist(-1.0), &probes).is_none());
    }

    #[test]
    fn extrapolant_of_constant_is_constant() {
        let w = window(2.5, 2.5, 0.3);
        let theta = Theta::new(0.8).unwrap();
        let pair = StepPair::new(0.45, 0.3).unwrap();
        let c = one_leg_coefficients(theta, pair);
        assert_relative_eq!(extrapolant(&w, &c, pair.ratio())[0], 2.5, epsilon = 1e-14);
    }

    #[test]
    fn extrapolant_exact_for_affine_data() {
        let (a, b) = (0.7, -1.3);
        for &(kn, km) in &[(0.1, 0.1), (0.3, 0.1), (0.05, 0.2)] {
            let w = window(a, a + b * km, km);
            let theta = Theta::new(0.55).unwrap();
            let pair = StepPair::new(kn, km).unwrap();
            let c = one_leg_coefficients(theta, pair);
            let tb = c.broadcast(0.0, km, km + kn);
            assert_relative_eq!(extrapolant(&w, &c, pair.ratio())[0], a + b * tb, epsilon = 1e-14);
        }
    }

    #[test]
    fn extrapolant_error_is_second_order() {
        let theta = Theta::two_thirds();
        let err = |k: f64| {
            let t0 = 0.3;
            let w = StateWindow::new(
                t0,
                DVector::from_element(1, t0 * t0),
                t0 + k,
                DVector::from_element(1, (t0 + k).powi(2)),
            )
            .unwrap();
            let pair = StepPair::constant(k).unwrap();
            let c = one_leg_coefficients(theta, pair);
            let tb = c.broadcast(t0, t0 + k, t0 + 2.0 * k);
            (extrapolant(&w, &c, 1.0)[0] - tb * tb).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn constant_trajectory_for_zero_rhs() {
        let p = zero(3);
        let c = DVector::from_vec(vec![1.0, 2.0, -3.0]);
        let steps = vec![0.1, 0.1, 0.2, 0.15, 0.05];
        let traj = integrate_fixed(
            &p,
            0.0,
            c.clone(),
            c.clone(),
            &steps,
            Theta::two_thirds(),
            &newton(),
            StepPath::Refactorized,
        )
        .unwrap();
        assert_eq!(traj.states.len(), steps.len() + 1);
        for y in &traj.states {
            assert_relative_eq!(y, &c, epsilon = 1e-14);
        }
        assert_eq!(traj.ratio_warnings, vec![2]);
    }

    #[test]
    fn fixed_point_stage_solver_converges() {
        let p = forced_decay(1.0);
        let w = window(1.0, p.exact(0.05).unwrap()[0], 0.05);
        let cfg = StageSolveConfig {
            method: StageMethod::FixedPoint,
            ..Default::default()
        };
        let fp = dln_step_direct(&p, &w, Theta::two_thirds(), 0.05, &cfg).unwrap();
        let nt = dln_step_direct(&p, &w, Theta::two_thirds(), 0.05, &newton()).unwrap();
        assert!(fp.iterations > 1);
        assert!((fp.y_next[0] - nt.y_next[0]).abs() < 1e-10);
    }

    #[test]
    fn diverging_fixed_point_reports_error() {
        let p = dahlquist(-50.0);
        let w = window(1.0, 0.9, 0.1);
        let cfg = StageSolveConfig {
            method: StageMethod::FixedPoint,
            max_iters: 20,
            ..Default::default()
        };
        assert!(matches!(
            dln_step_direct(&p, &w, Theta::two_thirds(), 0.1, &cfg),
            Err(DlnError::SolverDiverged { .. }) | Err(DlnError::NonFiniteState { .. })
        ));
    }

    #[test]
    fn finite_difference_jacobian_used_when_missing() {
        let p = FnProblem::new(1, |_, y| DVector::from_element(1, -y[0].powi(3)));
        let w = window(1.0, 0.95, 0.05);
        let out = dln_step_direct(&p, &w, Theta::two_thirds(), 0.05, &newton()).unwrap();
        assert!(out.iterations >= 1 && out.y_next[0] < 0.95);
    }

    #[test]
    fn midpoint_startup_second_order() {
        let p = forced_decay(1.0);
        let y0 = p.exact(0.0).unwrap();
        let e = |k: f64| {
            (midpoint_startup(&p, 0.0, &y0, k, &newton()).unwrap() - p.exact(k).unwrap()).amax()
        };
        assert!(e(0.1) / e(0.05) > 7.0);
    }
}
