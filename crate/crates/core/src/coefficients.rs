//! Coefficient algebra of the variable-step DLN family.
//!
//! A DLN step advances `y_{n-1}, y_n -> y_{n+1}` through the one-leg relation
//!
//! ```text
//! sum_l alpha_l y_{n-1+l} = khat_n f(t_{n,beta}, y_{n,beta}),   z_{n,beta} = sum_l beta_l z_{n-1+l}
//! ```
//!
//! Every coefficient is a function of the method parameter `theta` and the
//! step pair `(k_n, k_{n-1})` only, so everything here is a pure function.
//! Index `l` of the three-element arrays multiplies `y_{n-1+l}`.

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};

/// Method parameter of the DLN family, restricted to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Theta(f64);

impl Theta {
    /// `theta = 1`, the one-leg midpoint rule.
    pub const MIDPOINT: Theta = Theta(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Theta(value))
        } else {
            Err(DlnError::InvalidTheta(value))
        }
    }

    /// `theta = 2/3`, balancing stability and truncation error.
    pub fn two_thirds() -> Self {
        Theta(2.0 / 3.0)
    }

    /// `theta = 2/sqrt(5)`, stable at infinity.
    pub fn stable_at_infinity() -> Self {
        Theta(2.0 / 5f64.sqrt())
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn weights(self) -> GNormWeights {
        GNormWeights {
            w_top: 0.25 * (1.0 + self.0),
            w_bot: 0.25 * (1.0 - self.0),
        }
    }
}

impl TryFrom<f64> for Theta {
    type Error = DlnError;

    fn try_from(value: f64) -> Result<Self> {
        Theta::new(value)
    }
}

impl From<Theta> for f64 {
    fn from(theta: Theta) -> f64 {
        theta.0
    }
}

/// Current and previous step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPair {
    k_n: f64,
    k_nm1: f64,
}

impl StepPair {
    pub fn new(k_n: f64, k_nm1: f64) -> Result<Self> {
        let ok = |k: f64| k.is_finite() && k > 0.0;
        if ok(k_n) && ok(k_nm1) {
            Ok(StepPair { k_n, k_nm1 })
        } else {
            Err(DlnError::InvalidStep { k_n, k_nm1 })
        }
    }

    pub fn constant(k: f64) -> Result<Self> {
        StepPair::new(k, k)
    }

    pub fn current(&self) -> f64 {
        self.k_n
    }

    pub fn previous(&self) -> f64 {
        self.k_nm1
    }

    /// `k_n / k_{n-1}`.
    pub fn ratio(&self) -> f64 {
        self.k_n / self.k_nm1
    }

    pub fn variability(&self) -> f64 {
        step_variability(*self)
    }
}

/// Step variability `eps_n = (k_n - k_{n-1}) / (k_n + k_{n-1})`, always in `(-1, 1)`.
pub fn step_variability(pair: StepPair) -> f64 {
    (pair.k_n - pair.k_nm1) / (pair.k_n + pair.k_nm1)
}

/// Weights of the G-norm `||(u, v)||_G^2 = w_top ||u||^2 + w_bot ||v||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GNormWeights {
    pub w_top: f64,
    pub w_bot: f64,
}

impl GNormWeights {
    pub fn apply(&self, top_sq: f64, bot_sq: f64) -> f64 {
        self.w_top * top_sq + self.w_bot * bot_sq
    }
}

/// The nine one-leg coefficients of a single step plus `khat_n` and `eps_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneLegCoefficients {
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
    pub gamma: [f64; 3],
    /// Average step `alpha_2 k_n - alpha_0 k_{n-1}`.
    pub khat: f64,
    pub eps: f64,
}

/// `(alpha_0, alpha_1, alpha_2)`; independent of the step sizes.
pub fn alpha(theta: Theta) -> [f64; 3] {
    let th = theta.value();
    [0.5 * (th - 1.0), -th, 0.5 * (th + 1.0)]
}

/// `(beta_0, beta_1, beta_2)` for a given step variability.
pub fn beta(theta: Theta, eps: f64) -> [f64; 3] {
    let th = theta.value();
    let one_m = 1.0 - th * th;
    let denom = (1.0 + eps * th).powi(2);
    let q = one_m / denom;
    let s = eps * eps * th * one_m / denom;
    [
        0.25 * (1.0 + q - s - th),
        0.5 * (1.0 - q),
        0.25 * (1.0 + q + s + th),
    ]
}

/// `(gamma_0, gamma_1, gamma_2)`, the numerical-dissipation weights.
pub fn gamma(theta: Theta, eps: f64) -> [f64; 3] {
    let th = theta.value();
    let g1 = -(th * (1.0 - th * th)).sqrt() / (std::f64::consts::SQRT_2 * (1.0 + eps * th));
    [-0.5 * (1.0 + eps) * g1, g1, -0.5 * (1.0 - eps) * g1]
}

pub fn one_leg_coefficients(theta: Theta, pair: StepPair) -> OneLegCoefficients {
    let eps = pair.variability();
    let alpha = alpha(theta);
    OneLegCoefficients {
        alpha,
        beta: beta(theta, eps),
        gamma: gamma(theta, eps),
        khat: alpha[2] * pair.k_n - alpha[0] * pair.k_nm1,
        eps,
    }
}

impl OneLegCoefficients {
    pub fn new(theta: Theta, pair: StepPair) -> Self {
        one_leg_coefficients(theta, pair)
    }

    /// Broadcast point `t_{n,beta}` given `t_{n-1}, t_n, t_{n+1}`.
    pub fn broadcast(&self, t_prev: f64, t_curr: f64, t_next: f64) -> f64 {
        self.beta[0] * t_prev + self.beta[1] * t_curr + self.beta[2] * t_next
    }

    /// `sum_l w_l z_{n-1+l}` for scalars.
    pub fn combine(weights: &[f64; 3], prev: f64, curr: f64, next: f64) -> f64 {
        weights[0] * prev + weights[1] * curr + weights[2] * next
    }
}

/// Pre/post-processing weights that wrap a backward-Euler stage into a DLN step.
///
/// Pre-process: `y_old = a1 y_n + a0 y_{n-1}`, `k_BE = b khat_n`.
/// Post-process: `y_{n+1} = c2 y_temp + c1 y_n + c0 y_{n-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefactorCoefficients {
    pub a1: f64,
    pub a0: f64,
    pub b: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

pub fn refactor_coefficients(theta: Theta, pair: StepPair) -> RefactorCoefficients {
    RefactorCoefficients::from_one_leg(&one_leg_coefficients(theta, pair))
}

impl RefactorCoefficients {
    pub fn from_one_leg(c: &OneLegCoefficients) -> Self {
        let [a0, a1, a2] = c.alpha;
        let [b0, b1, b2] = c.beta;
        RefactorCoefficients {
            a1: b1 - a1 * b2 / a2,
            a0: b0 - a0 * b2 / a2,
            b: b2 / a2,
            c2: 1.0 / b2,
            c1: -b1 / b2,
            c0: -b0 / b2,
        }
    }
}

fn check_dims(expected: usize, others: &[&[f64]]) -> Result<()> {
    match others.iter().find(|v| v.len() != expected) {
        Some(v) => Err(DlnError::DimensionMismatch {
            expected,
            found: v.len(),
        }),
        None => Ok(()),
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm_sq(u: &[f64]) -> f64 {
    dot(u, u)
}

/// `||(u, v)||_G^2 = (1 + theta)/4 ||u||^2 + (1 - theta)/4 ||v||^2`.
pub fn g_norm_sq(theta: Theta, u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u.len(), &[v])?;
    Ok(theta.weights().apply(norm_sq(u), norm_sq(v)))
}

/// Left side minus right side of the G-stability identity
///
/// ```text
/// <sum alpha y, sum beta y> = ||(y_{n+1}, y_n)||_G^2 - ||(y_n, y_{n-1})||_G^2 + ||sum gamma y||^2
/// ```
///
/// evaluated in the Euclidean inner product.
pub fn g_stability_residual(
    theta: Theta,
    pair: StepPair,
    y_prev: &[f64],
    y_curr: &[f64],
    y_next: &[f64],
) -> Result<f64> {
    check_dims(y_prev.len(), &[y_curr, y_next])?;
    let c = one_leg_coefficients(theta, pair);
    let comb = |w: &[f64; 3]| -> Vec<f64> {
        y_prev
            .iter()
            .zip(y_curr)
            .zip(y_next)
            .map(|((p, q), r)| w[0] * p + w[1] * q + w[2] * r)
            .collect()
    };
    let (sa, sb, sg) = (comb(&c.alpha), comb(&c.beta), comb(&c.gamma));
    let lhs = dot(&sa, &sb);
    let w = theta.weights();
    let rhs = w.apply(norm_sq(y_next), norm_sq(y_curr)) - w.apply(norm_sq(y_curr), norm_sq(y_prev))
        + norm_sq(&sg);
    Ok(lhs - rhs)
}
