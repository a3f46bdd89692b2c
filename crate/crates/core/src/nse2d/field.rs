use std::sync::Arc;

use num_complex::Complex64;

use super::grid::Grid2D;
use crate::error::{DlnError, Result};
use crate::krylov::KrylovVector;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Two-component periodic velocity stored as truncated spectral coefficients.
#[derive(Debug, Clone)]
pub struct VelocityField {
    grid: Arc<Grid2D>,
    comps: [Vec<Complex64>; 2],
}

impl PartialEq for VelocityField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.comps == other.comps
    }
}

impl VelocityField {
    pub fn zeros(grid: &Arc<Grid2D>) -> Self {
        VelocityField {
            grid: grid.clone(),
            comps: [vec![ZERO; grid.len()], vec![ZERO; grid.len()]],
        }
    }

    /// Build from coefficients; modes outside the truncation are discarded.
    pub fn from_spectral(grid: &Arc<Grid2D>, mut u: Vec<Complex64>, mut v: Vec<Complex64>) -> Result<Self> {
        for c in [&u, &v] {
            if c.len() != grid.len() {
                return Err(DlnError::DimensionMismatch {
                    expected: grid.len(),
                    found: c.len(),
                });
            }
        }
        grid.truncate(&mut u);
        grid.truncate(&mut v);
        Ok(VelocityField {
            grid: grid.clone(),
            comps: [u, v],
        })
    }

    pub fn from_physical(grid: &Arc<Grid2D>, u: &[f64], v: &[f64]) -> Result<Self> {
        for c in [u, v] {
            if c.len() != grid.len() {
                return Err(DlnError::DimensionMismatch {
                    expected: grid.len(),
                    found: c.len(),
                });
            }
        }
        Self::from_spectral(grid, grid.forward(u), grid.forward(v))
    }

    pub fn from_fn(grid: &Arc<Grid2D>, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let (u, v): (Vec<f64>, Vec<f64>) = (0..grid.len())
            .map(|i| {
                let (x, y) = grid.coords(i);
                f(x, y)
            })
            .unzip();
        Self::from_physical(grid, &u, &v).expect("sizes match by construction")
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        &self.grid
    }

    pub fn spectral(&self, component: usize) -> &[Complex64] {
        &self.comps[component]
    }

    pub fn to_physical(&self) -> [Vec<f64>; 2] {
        [self.grid.inverse(&self.comps[0]), self.grid.inverse(&self.comps[1])]
    }

    pub fn check_grid(&self, other: &VelocityField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(DlnError::GridMismatch)
        }
    }

    /// Apply a per-mode map to both components.
    pub fn map_modes(&self, f: impl Fn(usize, Complex64, Complex64) -> (Complex64, Complex64)) -> Self {
        let mut out = Self::zeros(&self.grid);
        for idx in 0..self.grid.len() {
            let (a, b) = f(idx, self.comps[0][idx], self.comps[1][idx]);
            out.comps[0][idx] = a;
            out.comps[1][idx] = b;
        }
        out
    }

    /// `sum_i w_i f_i`; all fields must share a grid.
    pub fn lincomb(terms: &[(f64, &VelocityField)]) -> Self {
        let first = terms.first().expect("at least one term").1;
        let mut out = Self::zeros(&first.grid);
        for (w, f) in terms {
            debug_assert!(f.grid == first.grid);
            out.add_scaled(*w, f);
        }
        out
    }

    pub fn add_scaled(&mut self, a: f64, x: &VelocityField) {
        for c in 0..2 {
            for (s, v) in self.comps[c].iter_mut().zip(&x.comps[c]) {
                *s += a * v;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map_modes(|_, u, v| (u * a, v * a))
    }

    /// Discrete `L^2` inner product (grid quadrature, evaluated by Parseval).
    pub fn inner(&self, other: &VelocityField) -> f64 {
        let s: f64 = (0..2)
            .map(|c| {
                self.comps[c]
                    .iter()
                    .zip(&other.comps[c])
                    .map(|(a, b)| (a.conj() * b).re)
                    .sum::<f64>()
            })
            .sum();
        s * self.grid.area()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// `||grad u||^2`.
    pub fn h1_semi_sq(&self) -> f64 {
        self.weighted_sq(|k2| k2)
    }

    /// `sum |kappa|^{2p} |c|^2` scaled to the domain, skipping the mean mode when `p < 0`.
    pub(crate) fn weighted_sq(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let mut s = 0.0;
        for idx in 0..self.grid.len() {
            let k2 = self.grid.k_sq(idx);
            let m = self.comps[0][idx].norm_sqr() + self.comps[1][idx].norm_sqr();
            if m != 0.0 {
                s += weight(k2) * m;
            }
        }
        s * self.grid.area()
    }

    /// Mean of each component.
    pub fn mean(&self) -> [f64; 2] {
        [self.comps[0][0].re, self.comps[1][0].re]
    }

    pub fn divergence_spectral(&self) -> Vec<Complex64> {
        (0..self.grid.len())
            .map(|idx| {
                let (kx, ky) = self.grid.wavevector(idx);
                I * (self.comps[0][idx] * kx + self.comps[1][idx] * ky)
            })
            .collect()
    }

    /// `max |div u|` over grid points.
    pub fn max_divergence(&self) -> f64 {
        self.grid
            .inverse(&self.divergence_spectral())
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Spectral derivatives `(d/dx, d/dy)` of one component.
    pub fn gradient_spectral(&self, component: usize) -> [Vec<Complex64>; 2] {
        let c = &self.comps[component];
        let mut dx = vec![ZERO; c.len()];
        let mut dy = vec![ZERO; c.len()];
        for idx in 0..c.len() {
            let (kx, ky) = self.grid.wavevector(idx);
            dx[idx] = I * kx * c[idx];
            dy[idx] = I * ky * c[idx];
        }
        [dx, dy]
    }

    pub fn laplacian(&self) -> Self {
        let g = self.grid.clone();
        self.map_modes(|idx, u, v| {
            let k2 = g.k_sq(idx);
            (-u * k2, -v * k2)
        })
    }

    pub fn all_finite(&self) -> bool {
        self.comps.iter().flatten().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl KrylovVector for VelocityField {
    fn dot(&self, other: &Self) -> f64 {
        self.inner(other)
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        self.add_scaled(a, x);
    }

    fn scale(&mut self, a: f64) {
        self.comps.iter_mut().flatten().for_each(|c| *c *= a);
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(&self.grid)
    }
}

/// `L^2`-orthogonal projection onto divergence-free fields.
pub fn leray_project(field: &VelocityField) -> VelocityField {
    let g = field.grid.clone();
    field.map_modes(|idx, u, v| {
        let (kx, ky) = g.wavevector(idx);
        let k2 = kx * kx + ky * ky;
        if k2 == 0.0 {
            return (u, v);
        }
        let dot = u * kx + v * ky;
        (u - dot * (kx / k2), v - dot * (ky / k2))
    })
}

/// Scalar field with zero mean, stored spectrally.
#[derive(Debug, Clone)]
pub struct PressureField {
    grid: Arc<Grid2D>,
    coeffs: Vec<Complex64>,
}

impl PressureField {
    /// The mean mode is removed.
    pub fn from_spectral(grid: &Arc<Grid2D>, mut coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(DlnError::DimensionMismatch {
                expected: grid.len(),
                found: coeffs.len(),
            });
        }
        grid.truncate(&mut coeffs);
        coeffs[0] = ZERO;
        Ok(PressureField {
            grid: grid.clone(),
            coeffs,
        })
    }

    pub fn from_fn(grid: &Arc<Grid2D>, f: impl Fn(f64, f64) -> f64) -> Self {
        let phys: Vec<f64> = (0..grid.len())
            .map(|i| {
                let (x, y) = grid.coords(i);
                f(x, y)
            })
            .collect();
        Self::from_spectral(grid, grid.forward(&phys)).expect("sizes match by construction")
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        &self.grid
    }

    pub fn spectral(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn to_physical(&self) -> Vec<f64> {
        self.grid.inverse(&self.coeffs)
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn l2_norm(&self) -> f64 {
        (self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.area()).sqrt()
    }

    pub fn difference(&self, other: &PressureField) -> Result<PressureField> {
        if self.grid != other.grid {
            return Err(DlnError::GridMismatch);
        }
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(PressureField {
            grid: self.grid.clone(),
            coeffs,
        })
    }
}
