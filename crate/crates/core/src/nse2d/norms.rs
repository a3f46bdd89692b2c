use serde::{Deserialize, Serialize};

use super::field::{leray_project, VelocityField};
use crate::error::{DlnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L2,
    H1Semi,
    HMinus1,
}

/// Spatial norm of a single field.
pub fn discrete_norm(field: &VelocityField, kind: NormKind) -> Result<f64> {
    match kind {
        NormKind::L2 => Ok(field.l2_norm()),
        NormKind::H1Semi => Ok(field.h1_semi_sq().sqrt()),
        NormKind::HMinus1 => h_minus1_norm(field),
    }
}

/// Dual norm over divergence-free test functions: `||P f||_{-1}`.
pub fn h_minus1_norm(field: &VelocityField) -> Result<f64> {
    let [m1, m2] = field.mean();
    let mean = m1.hypot(m2);
    if mean > 1e-12 * field.l2_norm().max(1.0) {
        return Err(DlnError::NonZeroMean(mean));
    }
    let projected = leray_project(field);
    Ok(projected
        .weighted_sq(|k2| if k2 > 0.0 { 1.0 / k2 } else { 0.0 })
        .sqrt())
}

/// Running `max_n ||f_n||`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BochnerSup {
    max: f64,
}

impl BochnerSup {
    pub fn push(&mut self, norm: f64) {
        self.max = self.max.max(norm);
    }

    pub fn value(&self) -> f64 {
        self.max
    }
}

/// Running `(sum_n (k_n + k_{n-1}) ||f_{n,beta}||^2)^(1/2)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BochnerL2Beta {
    sum: f64,
}

impl BochnerL2Beta {
    pub fn push(&mut self, k_n: f64, k_nm1: f64, norm: f64) {
        self.sum += (k_n + k_nm1) * norm * norm;
    }

    pub fn value(&self) -> f64 {
        self.sum.sqrt()
    }
}

pub fn bochner_sup(norms: &[f64]) -> f64 {
    let mut acc = BochnerSup::default();
    norms.iter().for_each(|&v| acc.push(v));
    acc.value()
}

/// Entries are `(k_n, k_{n-1}, ||f(t_{n,beta})||)`.
pub fn bochner_l2_beta(samples: &[(f64, f64, f64)]) -> f64 {
    let mut acc = BochnerL2Beta::default();
    samples.iter().for_each(|&(a, b, v)| acc.push(a, b, v));
    acc.value()
}
