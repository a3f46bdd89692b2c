//! Adaptive step selection.
//!
//! Two controllers are provided. [`adapt_loop_lte`] compares the DLN solution
//! with an explicit AB2-like prediction built from four back solutions and
//! feeds the scaled difference into the Hairer–Wanner style controller.
//! [`adapt_loop_nd`] keeps the ratio of numerical to viscous dissipation below
//! a tolerance by doubling or halving the step.

use std::fmt;
use std::io::{Read, Write};

use log::{debug, info};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::coefficients::{beta, one_leg_coefficients, OneLegCoefficients, StepPair, Theta};
use crate::error::{DlnError, Result};
use crate::ivp::{midpoint_startup, IvpProblem, StageSolveConfig, StateWindow, StepPath};

/// Four back solutions `y_{n-3}, .., y_n` and the five times `t_{n-3}, .., t_{n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct History4<V> {
    pub times: [f64; 5],
    pub states: [V; 4],
}

impl<V> History4<V> {
    pub fn new(times: [f64; 5], states: [V; 4]) -> Result<Self> {
        for w in times.windows(2) {
            let k = w[1] - w[0];
            if !(k > 0.0 && k.is_finite()) {
                return Err(DlnError::InvalidStep { k_n: k, k_nm1: f64::NAN });
            }
        }
        Ok(History4 { times, states })
    }

    /// `k_{n-3+i}` for `i = 0..4`.
    fn k(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    fn pair(&self, i: usize) -> StepPair {
        StepPair::new(self.k(i), self.k(i - 1)).expect("history times validated")
    }

    pub fn eps_n(&self) -> f64 {
        self.pair(3).variability()
    }

    pub fn eps_nm1(&self) -> f64 {
        self.pair(2).variability()
    }

    pub fn eps_nm2(&self) -> f64 {
        self.pair(1).variability()
    }

    /// Broadcast points of the steps that produced `y_n` and `y_{n-1}`.
    pub fn broadcast_points(&self, theta: Theta) -> (f64, f64) {
        let t = &self.times;
        let ca = one_leg_coefficients(theta, self.pair(2));
        let cb = one_leg_coefficients(theta, self.pair(1));
        (ca.broadcast(t[1], t[2], t[3]), cb.broadcast(t[0], t[1], t[2]))
    }

    /// Weights of `y_n, y_{n-1}, y_{n-2}, y_{n-3}` in the AB2-like prediction of `y_{n+1}`.
    ///
    /// The one-leg difference quotients of the last two steps approximate `y'`
    /// at their broadcast points; the linear interpolant of those two slopes is
    /// integrated from `t_n` to `t_{n+1}`.
    pub fn ab2_like_weights(&self, theta: Theta) -> Result<[f64; 4]> {
        let t = &self.times;
        let ca = one_leg_coefficients(theta, self.pair(2));
        let cb = one_leg_coefficients(theta, self.pair(1));
        let t_a = ca.broadcast(t[1], t[2], t[3]);
        let t_b = cb.broadcast(t[0], t[1], t[2]);
        let gap = t_a - t_b;
        if gap.abs() <= 1e-14 * t[4].abs().max(t[4] - t[0]) {
            return Err(DlnError::DegenerateHistory);
        }
        let dt = t[4] - t[3];
        let sum = t[4] + t[3];
        let pa = dt * (sum - 2.0 * t_b) / (2.0 * gap * ca.khat);
        let pb = dt * (sum - 2.0 * t_a) / (2.0 * gap * cb.khat);
        let [a0, a1, a2] = ca.alpha;
        Ok([1.0 + pa * a2, pa * a1 - pb * a2, pa * a0 - pb * a1, -pb * a0])
    }
}

/// Explicit AB2-like prediction of `y_{n+1}`.
pub fn ab2_like_predict(history: &History4<DVector<f64>>, theta: Theta) -> Result<DVector<f64>> {
    let w = history.ab2_like_weights(theta)?;
    let [ynm3, ynm2, ynm1, yn] = &history.states;
    Ok(yn * w[0] + ynm1 * w[1] + ynm2 * w[2] + ynm3 * w[3])
}

/// Scaling `|G| / |G + R|` between the predictor gap and the local error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LteCoefficients {
    pub g: f64,
    pub r: f64,
    pub scale: f64,
}

fn ratio_from_eps(eps: f64) -> f64 {
    (1.0 - eps) / (1.0 + eps)
}

/// Leading local-error constant of the one-leg step, per `alpha_2 k_n^3 y'''`.
pub fn g_coefficient(theta: Theta, eps_n: f64) -> f64 {
    let [a0, _, a2] = crate::coefficients::alpha(theta);
    let [b0, _, b2] = beta(theta, eps_n);
    let r = ratio_from_eps(eps_n);
    let q = a0 / a2;
    (0.5 - 0.5 * q * r) * (b2 - b0 * r).powi(2) + q * r.powi(3) / 6.0 - 1.0 / 6.0
}

/// Companion constant of the AB2-like predictor.
pub fn r_coefficient(theta: Theta, eps_n: f64, eps_nm1: f64, eps_nm2: f64) -> f64 {
    let [b0_1, _, b2_1] = beta(theta, eps_nm1);
    let [b0_2, _, b2_2] = beta(theta, eps_nm2);
    let (r0, r1, r2) = (ratio_from_eps(eps_n), ratio_from_eps(eps_nm1), ratio_from_eps(eps_nm2));
    let first = 3.0 * r0 * (1.0 - b2_2 * r1 + b0_2 * r2 * r1) * (1.0 - b2_1 * r0 + b0_1 * r1 * r0);
    let second = 3.0
        * r0
        * (2.0 / (1.0 + eps_n) - b2_2 * r1 * r0 + b0_2 * r2 * r1 * r0)
        * (-b2_1 + b0_1 * r1);
    (2.0 + first + second) / 12.0
}

/// Evaluate `G`, `R` and the estimator scale for a step pattern.
///
/// Fails with [`DlnError::ZeroDivisor`] when `|G + R| < 1e-14`.
pub fn lte_coefficients(theta: Theta, eps_n: f64, eps_nm1: f64, eps_nm2: f64) -> Result<LteCoefficients> {
    for eps in [eps_n, eps_nm1, eps_nm2] {
        if !(eps > -1.0 && eps < 1.0) {
            return Err(DlnError::InvalidConfig(format!("step variability {eps} outside (-1, 1)")));
        }
    }
    let g = g_coefficient(theta, eps_n);
    let r = r_coefficient(theta, eps_n, eps_nm1, eps_nm2);
    if (g + r).abs() < 1e-14 {
        return Err(DlnError::ZeroDivisor { g, r });
    }
    Ok(LteCoefficients {
        g,
        r,
        scale: g.abs() / (g + r).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Absolute,
    Relative,
}

/// Scaled estimator from precomputed norms.
pub fn lte_estimate_from_norms(kind: EstimatorKind, diff_norm: f64, dln_norm: f64, scale: f64) -> Result<f64> {
    match kind {
        EstimatorKind::Absolute => Ok(scale * diff_norm),
        EstimatorKind::Relative if dln_norm > 0.0 => Ok(scale * diff_norm / dln_norm),
        EstimatorKind::Relative => Err(DlnError::ZeroNorm),
    }
}

pub fn lte_estimate(
    kind: EstimatorKind,
    y_dln: &DVector<f64>,
    y_ab2: &DVector<f64>,
    coeffs: &LteCoefficients,
) -> Result<f64> {
    if y_dln.len() != y_ab2.len() {
        return Err(DlnError::DimensionMismatch {
            expected: y_dln.len(),
            found: y_ab2.len(),
        });
    }
    lte_estimate_from_norms(kind, (y_dln - y_ab2).norm(), y_dln.norm(), coeffs.scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub tol: f64,
    pub kappa: f64,
    pub k0: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub estimator_kind: EstimatorKind,
    pub max_rejects_per_step: usize,
    pub startup_steps: usize,
    /// When set, a reject at `k_min` is retried (and eventually aborts)
    /// instead of being accepted with a flag.
    pub strict_k_min: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            tol: 1e-7,
            kappa: 0.95,
            k0: 5e-4,
            k_min: 5e-4,
            k_max: 0.05,
            estimator_kind: EstimatorKind::Relative,
            max_rejects_per_step: 10,
            startup_steps: 3,
            strict_k_min: false,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DlnError::InvalidConfig(msg.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad("kappa must lie in (0, 1]");
        }
        if !(self.k_min > 0.0 && self.k_min <= self.k_max && self.k_max.is_finite()) {
            return bad("need 0 < k_min <= k_max");
        }
        if !(self.k0 >= self.k_min && self.k0 <= self.k_max) {
            return bad("k0 must lie in [k_min, k_max]");
        }
        if self.max_rejects_per_step == 0 {
            return bad("max_rejects_per_step must be at least 1");
        }
        Ok(())
    }

    pub fn clamp(&self, k: f64) -> f64 {
        k.clamp(self.k_min, self.k_max)
    }
}

/// Inner controller factor `min{1.5, max{0.2, kappa (tol/est)^(1/3)}}`.
pub fn controller_factor(est: f64, tol: f64, kappa: f64) -> f64 {
    if est <= 0.0 {
        return 1.5;
    }
    (kappa * (tol / est).cbrt()).clamp(0.2, 1.5)
}

pub fn controller_next_step(k_n: f64, est: f64, config: &ControllerConfig) -> f64 {
    config.clamp(k_n * controller_factor(est, config.tol, config.kappa))
}

/// `(E_ND, E_VD) = (||sum gamma y||^2 / khat, nu * grad_of_broadcast)`.
pub fn dissipation_pair(
    states: [&DVector<f64>; 3],
    coeffs: &OneLegCoefficients,
    grad_of_broadcast: f64,
    nu: f64,
) -> (f64, f64) {
    let [g0, g1, g2] = coeffs.gamma;
    let combo = states[0] * g0 + states[1] * g1 + states[2] * g2;
    (combo.norm_squared() / coeffs.khat, nu * grad_of_broadcast)
}

/// `E_ND / E_VD`, with `0/0` read as zero.
pub fn dissipation_ratio(e_nd: f64, e_vd: f64) -> Result<f64> {
    if e_vd > 0.0 {
        Ok(e_nd / e_vd)
    } else if e_nd == 0.0 {
        Ok(0.0)
    } else {
        Err(DlnError::ZeroViscousDissipation { e_nd })
    }
}

/// What the adaptive loops need from a time integrator and its spatial layer.
pub trait DlnStepper {
    type State: Clone;

    fn theta(&self) -> Theta;

    /// Second solution given the first; called once before the loop starts.
    fn startup(&mut self, t0: f64, y0: &Self::State, k0: f64) -> Result<Self::State>;

    fn step(
        &mut self,
        t_prev: f64,
        y_prev: &Self::State,
        t_curr: f64,
        y_curr: &Self::State,
        k_n: f64,
    ) -> Result<Self::State>;

    fn combine(&self, terms: &[(f64, &Self::State)]) -> Self::State;

    fn norm(&self, y: &Self::State) -> f64;

    /// Squared seminorm used for the viscous dissipation term.
    fn grad_seminorm_sq(&self, y: &Self::State) -> f64;

    fn viscosity(&self) -> f64;

    fn energy(&self, y: &Self::State) -> f64 {
        0.5 * self.norm(y).powi(2)
    }
}

/// DLN stepper for an ODE problem.
pub struct OdeStepper<P> {
    pub problem: P,
    pub theta: Theta,
    pub path: StepPath,
    pub solver: StageSolveConfig,
    /// Weight multiplying `||y_beta||^2` in the viscous dissipation term.
    pub nu: f64,
}

impl<P: IvpProblem> OdeStepper<P> {
    pub fn new(problem: P, theta: Theta) -> Self {
        OdeStepper {
            problem,
            theta,
            path: StepPath::Refactorized,
            solver: StageSolveConfig::default(),
            nu: 1.0,
        }
    }
}

impl<P: IvpProblem> DlnStepper for OdeStepper<P> {
    type State = DVector<f64>;

    fn theta(&self) -> Theta {
        self.theta
    }

    fn startup(&mut self, t0: f64, y0: &DVector<f64>, k0: f64) -> Result<DVector<f64>> {
        match self.problem.exact(t0 + k0) {
            Some(y1) => Ok(y1),
            None => midpoint_startup(&self.problem, t0, y0, k0, &self.solver),
        }
    }

    fn step(
        &mut self,
        t_prev: f64,
        y_prev: &DVector<f64>,
        t_curr: f64,
        y_curr: &DVector<f64>,
        k_n: f64,
    ) -> Result<DVector<f64>> {
        let window = StateWindow::new(t_prev, y_prev.clone(), t_curr, y_curr.clone())?;
        Ok(self
            .path
            .step(&self.problem, &window, self.theta, k_n, &self.solver)?
            .y_next)
    }

    fn combine(&self, terms: &[(f64, &DVector<f64>)]) -> DVector<f64> {
        let mut out = DVector::zeros(self.problem.dim());
        for (w, y) in terms {
            out.axpy(*w, y, 1.0);
        }
        out
    }

    fn norm(&self, y: &DVector<f64>) -> f64 {
        y.norm()
    }

    fn grad_seminorm_sq(&self, y: &DVector<f64>) -> f64 {
        y.norm_squared()
    }

    fn viscosity(&self) -> f64 {
        self.nu
    }
}

/// Annotation attached to a ledger row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RowFlag {
    #[default]
    None,
    /// Startup step taken at `k0` without an estimate.
    Startup,
    /// `G + R` vanished; the estimator used scale 1.
    ScaleFallback,
    /// Rejected by the criterion but accepted because the step was already `k_min`.
    ForcedAtMin,
    /// The estimator was replaced through the override hook.
    Overridden,
}

/// One attempted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub attempt_index: usize,
    pub t_n: f64,
    pub k_n: f64,
    pub accepted: bool,
    pub estimator: f64,
    #[serde(rename = "E_ND")]
    pub e_nd: f64,
    #[serde(rename = "E_VD")]
    pub e_vd: f64,
    pub energy: f64,
    #[serde(skip)]
    pub flag: RowFlag,
}

/// Every attempt of an adaptive run, accepted or not.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLedger {
    pub rows: Vec<LedgerRow>,
}

pub const LEDGER_COLUMNS: [&str; 8] = [
    "attempt_index",
    "t_n",
    "k_n",
    "accepted",
    "estimator",
    "E_ND",
    "E_VD",
    "energy",
];

impl RunLedger {
    pub fn accepted(&self) -> impl Iterator<Item = &LedgerRow> {
        self.rows.iter().filter(|r| r.accepted)
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted().count()
    }

    pub fn rejected_count(&self) -> usize {
        self.rows.len() - self.accepted_count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| DlnError::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Rows are read back without their flags.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r
            .headers()
            .map_err(|e| DlnError::Io(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != LEDGER_COLUMNS {
            return Err(DlnError::Io(format!("unexpected ledger header {header:?}")));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<LedgerRow>, _>>()
            .map_err(|e| DlnError::Io(e.to_string()))?;
        Ok(RunLedger { rows })
    }

    /// `attempt_index,flag` for rows carrying a flag.
    pub fn flags_csv(&self) -> String {
        let mut s = String::from("attempt_index,flag\n");
        for row in self.rows.iter().filter(|r| r.flag != RowFlag::None) {
            let flag = serde_json::to_value(row.flag).expect("flag serializes");
            s.push_str(&format!("{},{}\n", row.attempt_index, flag.as_str().unwrap_or("")));
        }
        s
    }
}

/// An aborted adaptive run keeps the ledger gathered so far.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveAbort {
    pub error: DlnError,
    pub ledger: RunLedger,
}

impl fmt::Display for AdaptiveAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "adaptive run aborted after {} attempts: {}", self.ledger.rows.len(), self.error)
    }
}

impl std::error::Error for AdaptiveAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Result of a completed adaptive run.
#[derive(Debug, Clone)]
pub struct AdaptiveRun<V> {
    pub ledger: RunLedger,
    /// Accepted times, starting with `t0` and the seeded `t1`.
    pub times: Vec<f64>,
    pub final_state: V,
}

/// Replaces the estimator of an attempt; arguments are the attempt index and the computed value.
pub type EstimatorOverride<'a> = &'a mut dyn FnMut(usize, f64) -> f64;

struct LoopState<V> {
    all_times: Vec<f64>,
    times: Vec<f64>,
    states: Vec<V>,
    ledger: RunLedger,
}

impl<V: Clone> LoopState<V> {
    fn new(t0: f64, y0: V, t1: f64, y1: V) -> Self {
        LoopState {
            all_times: vec![t0, t1],
            times: vec![t0, t1],
            states: vec![y0, y1],
            ledger: RunLedger::default(),
        }
    }

    fn t(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    fn back(&self, i: usize) -> (&f64, &V) {
        let n = self.times.len() - 1 - i;
        (&self.times[n], &self.states[n])
    }

    fn push(&mut self, t: f64, y: V) {
        self.all_times.push(t);
        self.times.push(t);
        self.states.push(y);
        // only four back solutions are ever needed
        if self.states.len() > 4 {
            self.states.remove(0);
            self.times.remove(0);
        }
    }

    fn abort(self, error: DlnError) -> AdaptiveAbort {
        AdaptiveAbort {
            error,
            ledger: self.ledger,
        }
    }
}

fn end_reached(t: f64, t_end: f64) -> bool {
    t >= t_end - 1e-12 * t_end.abs().max(1.0)
}

fn trim_to_end(t: f64, k: f64, t_end: f64) -> f64 {
    if t + k > t_end {
        t_end - t
    } else {
        k
    }
}

/// Dissipation pair of a candidate step, through the stepper's norms.
fn stepper_dissipation<S: DlnStepper>(
    stepper: &S,
    coeffs: &OneLegCoefficients,
    y_prev: &S::State,
    y_curr: &S::State,
    y_next: &S::State,
) -> (f64, f64) {
    let [g0, g1, g2] = coeffs.gamma;
    let [b0, b1, b2] = coeffs.beta;
    let combo = stepper.combine(&[(g0, y_prev), (g1, y_curr), (g2, y_next)]);
    let e_nd = stepper.norm(&combo).powi(2) / coeffs.khat;
    let broadcast = stepper.combine(&[(b0, y_prev), (b1, y_curr), (b2, y_next)]);
    (e_nd, stepper.viscosity() * stepper.grad_seminorm_sq(&broadcast))
}

/// Local-error controlled loop.
pub fn adapt_loop_lte<S: DlnStepper>(
    stepper: &mut S,
    t0: f64,
    y0: S::State,
    config: &ControllerConfig,
    t_end: f64,
) -> std::result::Result<AdaptiveRun<S::State>, AdaptiveAbort> {
    adapt_loop_lte_with(stepper, t0, y0, config, t_end, &mut |_, est| est)
}

/// [`adapt_loop_lte`] with an estimator override, used to inject rejects.
pub fn adapt_loop_lte_with<S: DlnStepper>(
    stepper: &mut S,
    t0: f64,
    y0: S::State,
    config: &ControllerConfig,
    t_end: f64,
    hook: EstimatorOverride<'_>,
) -> std::result::Result<AdaptiveRun<S::State>, AdaptiveAbort> {
    let fail = |error| AdaptiveAbort {
        error,
        ledger: RunLedger::default(),
    };
    config.validate().map_err(fail)?;
    let theta = stepper.theta();
    let k0 = trim_to_end(t0, config.k0, t_end);
    let y1 = stepper.startup(t0, &y0, k0).map_err(fail)?;
    let mut st = LoopState::new(t0, y0, t0 + k0, y1);
    let mut k = config.k0;
    let mut accepted_steps = 0usize;
    let mut rejects = 0usize;

    while !end_reached(st.t(), t_end) {
        let k_try = trim_to_end(st.t(), k, t_end);
        let (&t_curr, y_curr) = st.back(0);
        let (&t_prev, y_prev) = st.back(1);
        let y_next = match stepper.step(t_prev, y_prev, t_curr, y_curr, k_try) {
            Ok(y) => y,
            Err(e) => {
                return Err(st.abort(DlnError::StepFailed {
                    step: accepted_steps + 1,
                    source: Box::new(e),
                }))
            }
        };
        let pair = match StepPair::new(k_try, t_curr - t_prev) {
            Ok(p) => p,
            Err(e) => return Err(st.abort(e)),
        };
        let coeffs = one_leg_coefficients(theta, pair);
        let (e_nd, e_vd) = stepper_dissipation(stepper, &coeffs, y_prev, y_curr, &y_next);
        let attempt_index = st.ledger.rows.len();
        let mut row = LedgerRow {
            attempt_index,
            t_n: t_curr,
            k_n: k_try,
            accepted: true,
            estimator: f64::NAN,
            e_nd,
            e_vd,
            energy: stepper.energy(&y_next),
            flag: RowFlag::None,
        };

        // startup: the predictor needs four back solutions
        if accepted_steps < config.startup_steps || st.states.len() < 4 {
            row.flag = RowFlag::Startup;
            st.ledger.rows.push(row);
            st.push(t_curr + k_try, y_next);
            accepted_steps += 1;
            continue;
        }

        let times = [st.times[0], st.times[1], st.times[2], t_curr, t_curr + k_try];
        let history = match History4::new(times, [(); 4]) {
            Ok(h) => h,
            Err(e) => return Err(st.abort(e)),
        };
        let weights = match history.ab2_like_weights(theta) {
            Ok(w) => w,
            Err(e) => return Err(st.abort(e)),
        };
        let y_ab2 = stepper.combine(&[
            (weights[0], &st.states[3]),
            (weights[1], &st.states[2]),
            (weights[2], &st.states[1]),
            (weights[3], &st.states[0]),
        ]);
        let scale = match lte_coefficients(theta, history.eps_n(), history.eps_nm1(), history.eps_nm2()) {
            Ok(c) => c.scale,
            Err(DlnError::ZeroDivisor { .. }) => {
                row.flag = RowFlag::ScaleFallback;
                1.0
            }
            Err(e) => return Err(st.abort(e)),
        };
        let diff = stepper.combine(&[(1.0, &y_next), (-1.0, &y_ab2)]);
        let est = match lte_estimate_from_norms(
            config.estimator_kind,
            stepper.norm(&diff),
            stepper.norm(&y_next),
            scale,
        ) {
            Ok(v) => v,
            Err(e) => return Err(st.abort(e)),
        };
        let est_used = hook(attempt_index, est);
        if est_used.to_bits() != est.to_bits() {
            row.flag = RowFlag::Overridden;
        }
        row.estimator = est_used;
        let k_new = controller_next_step(k_try, est_used, config);

        if est_used < config.tol {
            st.ledger.rows.push(row);
            st.push(t_curr + k_try, y_next);
            accepted_steps += 1;
            rejects = 0;
            k = k_new;
        } else if k_try <= config.k_min && !config.strict_k_min {
            info!("t = {t_curr}: estimator {est_used:.3e} above tol at k_min; accepting");
            row.flag = RowFlag::ForcedAtMin;
            st.ledger.rows.push(row);
            st.push(t_curr + k_try, y_next);
            accepted_steps += 1;
            rejects = 0;
            k = config.k_min;
        } else {
            row.accepted = false;
            st.ledger.rows.push(row);
            rejects += 1;
            debug!("t = {t_curr}: reject k = {k_try:.4e}, est = {est_used:.3e}, retry k = {k_new:.4e}");
            if rejects > config.max_rejects_per_step {
                return Err(st.abort(DlnError::TooManyRejects {
                    t: t_curr,
                    max: config.max_rejects_per_step,
                }));
            }
            k = k_new;
        }
    }
    Ok(finish(st))
}

fn finish<V: Clone>(st: LoopState<V>) -> AdaptiveRun<V> {
    AdaptiveRun {
        ledger: st.ledger,
        times: st.all_times,
        final_state: st.states.last().expect("nonempty").clone(),
    }
}

/// Dissipation-ratio controlled loop.
pub fn adapt_loop_nd<S: DlnStepper>(
    stepper: &mut S,
    t0: f64,
    y0: S::State,
    config: &ControllerConfig,
    t_end: f64,
) -> std::result::Result<AdaptiveRun<S::State>, AdaptiveAbort> {
    adapt_loop_nd_with(stepper, t0, y0, config, t_end, &mut |_, chi| chi)
}

/// [`adapt_loop_nd`] with an override of the dissipation ratio.
pub fn adapt_loop_nd_with<S: DlnStepper>(
    stepper: &mut S,
    t0: f64,
    y0: S::State,
    config: &ControllerConfig,
    t_end: f64,
    hook: EstimatorOverride<'_>,
) -> std::result::Result<AdaptiveRun<S::State>, AdaptiveAbort> {
    let fail = |error| AdaptiveAbort {
        error,
        ledger: RunLedger::default(),
    };
    config.validate().map_err(fail)?;
    let theta = stepper.theta();
    let k0 = trim_to_end(t0, config.k0, t_end);
    let y1 = stepper.startup(t0, &y0, k0).map_err(fail)?;
    let mut st = LoopState::new(t0, y0, t0 + k0, y1);
    let mut k = config.k0;
    let mut accepted_steps = 0usize;
    let mut rejects = 0usize;

    while !end_reached(st.t(), t_end) {
        let k_try = trim_to_end(st.t(), k, t_end);
        let (&t_curr, y_curr) = st.back(0);
        let (&t_prev, y_prev) = st.back(1);
        let y_next = match stepper.step(t_prev, y_prev, t_curr, y_curr, k_try) {
            Ok(y) => y,
            Err(e) => {
                return Err(st.abort(DlnError::StepFailed {
                    step: accepted_steps + 1,
                    source: Box::new(e),
                }))
            }
        };
        let pair = match StepPair::new(k_try, t_curr - t_prev) {
            Ok(p) => p,
            Err(e) => return Err(st.abort(e)),
        };
        let coeffs = one_leg_coefficients(theta, pair);
        let (e_nd, e_vd) = stepper_dissipation(stepper, &coeffs, y_prev, y_curr, &y_next);
        let chi = dissipation_ratio(e_nd, e_vd).unwrap_or(f64::INFINITY);
        let attempt_index = st.ledger.rows.len();
        let chi_used = hook(attempt_index, chi);
        let mut row = LedgerRow {
            attempt_index,
            t_n: t_curr,
            k_n: k_try,
            accepted: true,
            estimator: chi_used,
            e_nd,
            e_vd,
            energy: stepper.energy(&y_next),
            flag: if chi_used.to_bits() != chi.to_bits() {
                RowFlag::Overridden
            } else {
                RowFlag::None
            },
        };

        if chi_used < config.tol {
            st.ledger.rows.push(row);
            st.push(t_curr + k_try, y_next);
            accepted_steps += 1;
            rejects = 0;
            k = (2.0 * k_try).min(config.k_max);
        } else if k_try <= config.k_min && !config.strict_k_min {
            info!("t = {t_curr}: dissipation ratio {chi_used:.3e} above tol at k_min; accepting");
            row.flag = RowFlag::ForcedAtMin;
            st.ledger.rows.push(row);
            st.push(t_curr + k_try, y_next);
            accepted_steps += 1;
            rejects = 0;
            k = config.k_min;
        } else {
            row.accepted = false;
            st.ledger.rows.push(row);
            rejects += 1;
            if rejects > config.max_rejects_per_step {
                let error = if e_vd == 0.0 {
                    DlnError::ZeroViscousDissipation { e_nd }
                } else {
                    DlnError::TooManyRejects {
                        t: t_curr,
                        max: config.max_rejects_per_step,
                    }
                };
                return Err(st.abort(error));
            }
            k = (0.5 * k_try).max(config.k_min);
        }
    }
    Ok(finish(st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ivp::problems;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, Matrix4, Vector4};

    fn hist(times: [f64; 5], f: impl Fn(f64) -> f64) -> History4<DVector<f64>> {
        let states = [0, 1, 2, 3].map(|i| DVector::from_element(1, f(times[i])));
        History4::new(times, states).unwrap()
    }

    #[test]
    fn predictor_preserves_constants() {
        let theta = Theta::two_thirds();
        let h = hist([0.0, 0.1, 0.25, 0.3, 0.42], |_| 3.5);
        assert_relative_eq!(ab2_like_predict(&h, theta).unwrap()[0], 3.5, epsilon = 1e-13);
    }

    #[test]
    fn predictor_exact_for_quadratics() {
        let f = |t: f64| 1.0 - 2.0 * t + 0.7 * t * t;
        for theta in [Theta::two_thirds(), Theta::stable_at_infinity(), Theta::MIDPOINT, Theta::new(0.3).unwrap()] {
            let times = [0.0, 0.1, 0.25, 0.3, 0.42];
            let h = hist(times, f);
            assert_relative_eq!(ab2_like_predict(&h, theta).unwrap()[0], f(0.42), epsilon = 1e-13);
        }
    }

    #[test]
    fn midpoint_constant_step_weights_match_vandermonde_oracle() {
        // With alpha_0 = 0 the oldest weight vanishes; the rest reproduce 1, t, t^2.
        let times = [-3.0, -2.0, -1.0, 0.0, 1.0];
        let h = History4::new(times, [(); 4]).unwrap();
        let w = h.ab2_like_weights(Theta::MIDPOINT).unwrap();
        let nodes = [0.0, -1.0, -2.0, -3.0];
        let mut m = Matrix4::zeros();
        for j in 0..4 {
            m[(0, j)] = 1.0;
            m[(1, j)] = nodes[j];
            m[(2, j)] = nodes[j] * nodes[j];
        }
        m[(3, 3)] = 1.0;
        let rhs = Vector4::new(1.0, 1.0, 1.0, 0.0);
        let oracle = m.lu().solve(&rhs).unwrap();
        for j in 0..4 {
            assert_relative_eq!(w[j], oracle[j], epsilon = 1e-14);
        }
        assert_relative_eq!(oracle[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(oracle[1], -3.0, epsilon = 1e-14);
        assert_relative_eq!(oracle[2], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn predictor_gap_shrinks_eightfold_on_exponential() {
        let theta = Theta::two_thirds();
        let p = problems::dahlquist(1.0);
        let gap = |k: f64| {
            let times = [0.0, k, 2.0 * k, 3.0 * k, 4.0 * k];
            let h = hist(times, f64::exp);
            let y_ab2 = ab2_like_predict(&h, theta).unwrap();
            let w = StateWindow::new(2.0 * k, h.states[2].clone(), 3.0 * k, h.states[3].clone()).unwrap();
            let y_dln = crate::ivp::dln_step_direct(&p, &w, theta, k, &StageSolveConfig::default())
                .unwrap()
                .y_next;
            (y_dln - y_ab2).amax()
        };
        let ratio = gap(0.02) / gap(0.01);
        assert!((ratio - 8.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn degenerate_history_detected() {
        // broadcast points closer than roundoff at this time offset
        let base = 1e6;
        let times = [0.0, 1e-9, 2e-9, 3e-9, 4e-9].map(|d| base + d);
        let h = History4::new(times, [(); 4]).unwrap();
        assert_eq!(h.ab2_like_weights(Theta::MIDPOINT), Err(DlnError::DegenerateHistory));
        assert!(History4::new([0.0, 0.0, 0.1, 0.2, 0.3], [(); 4]).is_err());
    }

    #[test]
    fn g_at_midpoint_constant_steps() {
        assert_relative_eq!(g_coefficient(Theta::MIDPOINT, 0.0), -1.0 / 24.0, epsilon = 1e-15);
    }

    #[test]
    fn g_matches_taylor_oracle() {
        // Local error of the one-leg step on y = t^3/6 divided by alpha_2 k_n^3.
        for &(theta, kn, km) in &[(2.0 / 3.0, 1.0, 1.0), (0.8, 1.3, 0.7), (0.4, 0.5, 1.1)] {
            let theta = Theta::new(theta).unwrap();
            let pair = StepPair::new(kn, km).unwrap();
            let c = one_leg_coefficients(theta, pair);
            let (tp, tc, tn) = (-km, 0.0, kn);
            let y = |t: f64| t.powi(3) / 6.0;
            let tb = c.broadcast(tp, tc, tn);
            let lte = c.khat * 0.5 * tb * tb - (c.alpha[0] * y(tp) + c.alpha[1] * y(tc) + c.alpha[2] * y(tn));
            let oracle = lte / (c.alpha[2] * kn.powi(3));
            assert_relative_eq!(g_coefficient(theta, pair.variability()), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn midpoint_constant_steps_hit_zero_divisor() {
        assert_relative_eq!(r_coefficient(Theta::MIDPOINT, 0.0, 0.0, 0.0), 1.0 / 24.0, epsilon = 1e-15);
        assert!(matches!(
            lte_coefficients(Theta::MIDPOINT, 0.0, 0.0, 0.0),
            Err(DlnError::ZeroDivisor { .. })
        ));
    }

    #[test]
    fn lte_coefficients_finite_at_theta_zero() {
        let c = lte_coefficients(Theta::new(0.0).unwrap(), 0.1, -0.2, 0.3).unwrap();
        assert!(c.g.is_finite() && c.r.is_finite() && c.scale.is_finite());
    }

    #[test]
    fn two_thirds_constant_step_constants() {
        let c = lte_coefficients(Theta::two_thirds(), 0.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(c.g, -2.0 / 15.0, epsilon = 1e-14);
        assert_relative_eq!(c.r, 5.0 / 36.0, epsilon = 1e-14);
        assert_relative_eq!(c.scale, 24.0, epsilon = 1e-10);
    }

    #[test]
    fn lte_coefficients_reject_bad_eps() {
        assert!(lte_coefficients(Theta::two_thirds(), 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn estimate_arithmetic() {
        let c = LteCoefficients { g: 1.0, r: 1.0, scale: 0.5 };
        let y = DVector::from_vec(vec![2.0, 0.0]);
        let z = DVector::from_vec(vec![2.0, 1e-6]);
        assert_eq!(lte_estimate(EstimatorKind::Absolute, &y, &y, &c).unwrap(), 0.0);
        assert_relative_eq!(lte_estimate(EstimatorKind::Absolute, &y, &z, &c).unwrap(), 5e-7, epsilon = 1e-20);
        assert_relative_eq!(lte_estimate(EstimatorKind::Relative, &y, &z, &c).unwrap(), 2.5e-7, epsilon = 1e-20);
        let zero = DVector::zeros(2);
        assert_eq!(lte_estimate(EstimatorKind::Relative, &zero, &z, &c), Err(DlnError::ZeroNorm));
    }

    #[test]
    fn controller_clamps() {
        let cfg = ControllerConfig {
            tol: 1e-6,
            kappa: 0.95,
            k_min: 1e-6,
            k_max: 10.0,
            k0: 1e-3,
            ..Default::default()
        };
        assert_relative_eq!(controller_next_step(1.0, 1e-6, &cfg), 0.95, epsilon = 1e-15);
        let one = ControllerConfig { kappa: 1.0, ..cfg.clone() };
        assert_relative_eq!(controller_next_step(1.0, 8e-6, &one), 0.5, epsilon = 1e-15);
        assert_relative_eq!(controller_next_step(1.0, 1.0, &cfg), 0.2, epsilon = 1e-15);
        assert_relative_eq!(controller_next_step(1.0, 0.0, &cfg), 1.5, epsilon = 1e-15);
        assert_relative_eq!(controller_next_step(8.0, 0.0, &cfg), 10.0, epsilon = 1e-15);
        assert_relative_eq!(controller_next_step(2e-6, 1.0, &cfg), 1e-6, epsilon = 1e-20);
    }

    #[test]
    fn dissipation_examples() {
        let theta = Theta::two_thirds();
        let c = one_leg_coefficients(theta, StepPair::constant(0.1).unwrap());
        let z = DVector::from_element(1, 0.0);
        let e = DVector::from_element(1, 1.0);
        let (nd, vd) = dissipation_pair([&z, &z, &e], &c, 3.0, 0.5);
        assert_relative_eq!(nd, 5.0 / 108.0 / c.khat, epsilon = 1e-14);
        assert_relative_eq!(vd, 1.5);
        // affine data, constant steps
        let (a, b, d) = (DVector::from_element(1, 1.0), DVector::from_element(1, 2.0), DVector::from_element(1, 3.0));
        assert!(dissipation_pair([&a, &b, &d], &c, 1.0, 1.0).0 < 1e-30);
        let mid = one_leg_coefficients(Theta::MIDPOINT, StepPair::new(0.3, 0.1).unwrap());
        assert_eq!(dissipation_pair([&a, &d, &b], &mid, 1.0, 1.0).0, 0.0);
    }

    #[test]
    fn dissipation_ratio_rules() {
        assert_eq!(dissipation_ratio(0.0, 0.0), Ok(0.0));
        assert_eq!(dissipation_ratio(1.0, 4.0), Ok(0.25));
        assert!(matches!(dissipation_ratio(1.0, 0.0), Err(DlnError::ZeroViscousDissipation { .. })));
    }

    fn decay_stepper(theta: Theta) -> OdeStepper<crate::ivp::FnProblem> {
        OdeStepper::new(problems::dahlquist(-1.0), theta)
    }

    #[test]
    fn loose_tolerance_grows_steps_to_k_max() {
        let cfg = ControllerConfig {
            tol: 1.0,
            k0: 1e-3,
            k_min: 1e-4,
            k_max: 0.2,
            estimator_kind: EstimatorKind::Absolute,
            ..Default::default()
        };
        let mut s = decay_stepper(Theta::two_thirds());
        let run = adapt_loop_lte(&mut s, 0.0, DVector::from_element(1, 1.0), &cfg, 5.0).unwrap();
        assert_eq!(run.ledger.rejected_count(), 0);
        let ks: Vec<f64> = run.ledger.rows.iter().map(|r| r.k_n).collect();
        for w in ks[3..].windows(2) {
            if w[1] < cfg.k_max - 1e-15 && w[0] < cfg.k_max - 1e-15 {
                assert_relative_eq!(w[1] / w[0], 1.5, epsilon = 1e-12);
            }
        }
        assert!(ks.contains(&cfg.k_max));
        assert_relative_eq!(*run.times.last().unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn forced_reject_retries_same_time() {
        let cfg = ControllerConfig {
            tol: 1e-3,
            kappa: 0.95,
            k0: 0.01,
            k_min: 1e-5,
            k_max: 0.1,
            estimator_kind: EstimatorKind::Absolute,
            ..Default::default()
        };
        let mut s = decay_stepper(Theta::two_thirds());
        let mut hook = |i: usize, est: f64| if i == 6 { 10.0 * cfg.tol } else { est };
        let run = adapt_loop_lte_with(&mut s, 0.0, DVector::from_element(1, 1.0), &cfg, 1.0, &mut hook).unwrap();
        let rows = &run.ledger.rows;
        assert!(!rows[6].accepted);
        assert_eq!(rows[6].flag, RowFlag::Overridden);
        assert_eq!(rows[7].t_n, rows[6].t_n);
        let shrink = rows[7].k_n / rows[6].k_n;
        assert!((0.2..=0.46).contains(&shrink), "shrink {shrink}");
        assert_relative_eq!(shrink, 0.95 * 0.1f64.cbrt(), epsilon = 1e-12);
    }

    #[test]
    fn growth_problem_shrinks_steps_under_absolute_estimator() {
        let cfg = ControllerConfig {
            tol: 1e-6,
            k0: 1e-3,
            k_min: 1e-5,
            k_max: 0.5,
            estimator_kind: EstimatorKind::Absolute,
            ..Default::default()
        };
        let mut s = OdeStepper::new(problems::dahlquist(2.0), Theta::two_thirds());
        let run = adapt_loop_lte(&mut s, 0.0, DVector::from_element(1, 1.0), &cfg, 4.0).unwrap();
        let acc: Vec<_> = run.ledger.accepted().filter(|r| r.flag != RowFlag::Startup).collect();
        let mid = acc.len() / 2;
        let early = acc[mid / 2].k_n;
        let late = acc.last().unwrap().k_n.max(acc[acc.len() - 2].k_n);
        assert!(late < early, "late {late} early {early}");
        assert!(acc.iter().all(|r| r.estimator < cfg.tol || r.flag == RowFlag::ForcedAtMin));
    }

    #[test]
    fn growth_problem_relative_estimator_below_tol() {
        let cfg = ControllerConfig {
            tol: 1e-6,
            k0: 1e-3,
            k_min: 1e-5,
            k_max: 0.5,
            estimator_kind: EstimatorKind::Relative,
            ..Default::default()
        };
        let mut s = OdeStepper::new(problems::dahlquist(2.0), Theta::stable_at_infinity());
        let run = adapt_loop_lte(&mut s, 0.0, DVector::from_element(1, 1.0), &cfg, 4.0).unwrap();
        for r in run.ledger.accepted().filter(|r| r.flag != RowFlag::Startup) {
            assert!(r.estimator < cfg.tol);
        }
    }

    #[test]
    fn strict_mode_aborts_with_ledger() {
        let cfg = ControllerConfig {
            tol: 1e-3,
            k0: 0.01,
            k_min: 0.01,
            k_max: 0.01,
            estimator_kind: EstimatorKind::Absolute,
            strict_k_min: true,
            max_rejects_per_step: 4,
            ..Default::default()
        };
        let mut s = decay_stepper(Theta::two_thirds());
        let mut hook = |_: usize, _: f64| 1.0;
        let err = adapt_loop_lte_with(&mut s, 0.0, DVector::from_element(1, 1.0), &cfg, 1.0, &mut hook).unwrap_err();
        assert!(matches!(err.error, DlnError::TooManyRejects { max: 4, .. }));
        assert_eq!(err.ledger.rejected_count(), 5);
    }

    #[test]
    fn forced_accept_at_k_min_is_flagged() {
        let cfg = ControllerConfig {
            tol: 1e-3,
            k0: 0.01,
            k_min: 0.01,
            k_max: 0.01,
            estimator_kind: EstimatorKind::Absolute,
            ..Default::default()
        };
        let mut s = decay_stepper(Theta::two_thirds());
        let mut hook = |_: usize, _: f64| 1.0;
        let run = adapt_loop_lte_with(&mut s, 0.0, DVector::from_element(1, 1.0), &cfg, 0.1, &mut hook).unwrap();
        assert_eq!(run.ledger.rejected_count(), 0);
        assert!(run.ledger.rows.iter().skip(3).all(|r| r.flag == RowFlag::ForcedAtMin));
    }

    #[test]
    fn midpoint_nd_loop_rides_k_max() {
        let cfg = ControllerConfig {
            tol: 1e-10,
            k0: 1e-3,
            k_min: 1e-4,
            k_max: 0.1,
            ..Default::default()
        };
        let mut s = decay_stepper(Theta::MIDPOINT);
        let run = adapt_loop_nd(&mut s, 0.0, DVector::from_element(1, 1.0), &cfg, 3.0).unwrap();
        assert_eq!(run.ledger.rejected_count(), 0);
        assert!(run.ledger.rows.iter().all(|r| r.estimator == 0.0));
        let ks: Vec<f64> = run.ledger.rows.iter().map(|r| r.k_n).collect();
        assert_relative_eq!(ks[1], 2e-3, epsilon = 1e-15);
        assert!(ks[ks.len() - 2] == cfg.k_max);
    }

    #[test]
    fn nd_forced_reject_halves() {
        let cfg = ControllerConfig {
            tol: 1e-2,
            k0: 0.02,
            k_min: 1e-4,
            k_max: 0.02,
            ..Default::default()
        };
        let mut s = decay_stepper(Theta::two_thirds());
        let mut hook = |i: usize, chi: f64| if i == 2 { 2.0 * cfg.tol } else { chi };
        let run = adapt_loop_nd_with(&mut s, 0.0, DVector::from_element(1, 1.0), &cfg, 0.2, &mut hook).unwrap();
        let rows = &run.ledger.rows;
        assert!(!rows[2].accepted);
        assert_eq!(rows[3].t_n, rows[2].t_n);
        assert_relative_eq!(rows[3].k_n, 0.5 * rows[2].k_n, epsilon = 1e-15);
    }

    #[test]
    fn nd_zero_viscous_dissipation_rejects() {
        let cfg = ControllerConfig {
            tol: 1e-2,
            k0: 0.02,
            k_min: 0.01,
            k_max: 0.02,
            strict_k_min: true,
            max_rejects_per_step: 2,
            ..Default::default()
        };
        let mut s = OdeStepper::new(problems::dahlquist(-1.0), Theta::two_thirds());
        s.nu = 0.0;
        let err = adapt_loop_nd(&mut s, 0.0, DVector::from_element(1, 1.0), &cfg, 1.0).unwrap_err();
        assert!(matches!(err.error, DlnError::ZeroViscousDissipation { .. }));
    }

    #[test]
    fn lte_estimate_third_order_for_constant_steps() {
        let theta = Theta::two_thirds();
        let p = problems::forced_decay(1.0);
        let est = |k: f64| {
            let times = [0.0, k, 2.0 * k, 3.0 * k, 4.0 * k];
            let states = [0, 1, 2, 3].map(|i| p.exact(times[i]).unwrap());
            let h = History4::new(times, states).unwrap();
            let y_ab2 = ab2_like_predict(&h, theta).unwrap();
            let w = StateWindow::new(times[2], h.states[2].clone(), times[3], h.states[3].clone()).unwrap();
            let y = crate::ivp::dln_step_direct(&p, &w, theta, k, &StageSolveConfig::default())
                .unwrap()
                .y_next;
            let c = lte_coefficients(theta, 0.0, 0.0, 0.0).unwrap();
            lte_estimate(EstimatorKind::Absolute, &y, &y_ab2, &c).unwrap() / k.powi(3)
        };
        let (a, b) = (est(0.01), est(0.005));
        assert!((a / b - 1.0).abs() < 0.05, "{a} {b}");
    }

    #[test]
    fn ledger_csv_round_trip() {
        let ledger = RunLedger {
            rows: vec![
                LedgerRow {
                    attempt_index: 0,
                    t_n: 0.1,
                    k_n: 0.01,
                    accepted: true,
                    estimator: f64::NAN,
                    e_nd: 1e-9,
                    e_vd: 2.0,
                    energy: 1.0,
                    flag: RowFlag::Startup,
                },
                LedgerRow {
                    attempt_index: 1,
                    t_n: 0.11,
                    k_n: 0.015,
                    accepted: false,
                    estimator: 3e-7,
                    e_nd: 0.0,
                    e_vd: 2.0,
                    energy: 0.99,
                    flag: RowFlag::None,
                },
            ],
        };
        let s = ledger.to_csv_string();
        assert!(s.starts_with("attempt_index,t_n,k_n,accepted,estimator,E_ND,E_VD,energy\n"));
        let back = RunLedger::read_csv(s.as_bytes()).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert!(back.rows[0].estimator.is_nan());
        assert_eq!(back.rows[1], LedgerRow { flag: RowFlag::None, ..ledger.rows[1] });
        assert_eq!(ledger.flags_csv(), "attempt_index,flag\n0,startup\n");
    }

    #[test]
    fn ode_stepper_combine_and_norms() {
        let s = OdeStepper::new(problems::linear(DMatrix::identity(2, 2)), Theta::MIDPOINT);
        let a = DVector::from_vec(vec![1.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(s.combine(&[(2.0, &a), (-1.0, &b)]), DVector::from_vec(vec![-1.0, 5.0]));
        assert_relative_eq!(s.energy(&a), 2.5);
    }
}
