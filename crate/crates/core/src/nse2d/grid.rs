use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{DlnError, Result};

/// Uniform periodic grid on `[0, L]^2` with its transform plans.
///
/// Samples are stored row-major: the value at `(x_i, y_j)` lives at `j * n + i`.
/// Spectral coefficients use the same layout and are normalized so that
/// `u(x) = sum_m c_m exp(i kappa_m . x)`.
pub struct Grid2D {
    n: usize,
    side_length: f64,
    wavenumbers: Vec<f64>,
    retained: Vec<bool>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid2D")
            .field("n", &self.n)
            .field("side_length", &self.side_length)
            .finish()
    }
}

impl PartialEq for Grid2D {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.side_length == other.side_length
    }
}

impl Grid2D {
    /// `n` must be even and at least 8.
    pub fn new(n: usize, side_length: f64) -> Result<Arc<Self>> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(DlnError::InvalidGrid(format!("n = {n}: need an even n >= 8")));
        }
        if !(side_length > 0.0 && side_length.is_finite()) {
            return Err(DlnError::InvalidGrid(format!("side length {side_length} must be positive")));
        }
        let base = 2.0 * std::f64::consts::PI / side_length;
        let half = (n / 2) as i64;
        let modes: Vec<i64> = (0..n as i64).map(|i| if i < half { i } else { i - n as i64 }).collect();
        // the Nyquist mode has no real derivative
        let wavenumbers = modes
            .iter()
            .map(|&m| if m == -half { 0.0 } else { base * m as f64 })
            .collect();
        let retained = modes.iter().map(|&m| 3 * m.unsigned_abs() < n as u64).collect();
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Grid2D {
            n,
            side_length,
            wavenumbers,
            retained,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn side_length(&self) -> f64 {
        self.side_length
    }

    pub fn spacing(&self) -> f64 {
        self.side_length / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn area(&self) -> f64 {
        self.side_length * self.side_length
    }

    /// Physical coordinates of flat index `idx`.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let h = self.spacing();
        ((idx % self.n) as f64 * h, (idx / self.n) as f64 * h)
    }

    /// `(kappa_x, kappa_y)` of flat spectral index `idx`.
    pub fn wavevector(&self, idx: usize) -> (f64, f64) {
        (self.wavenumbers[idx % self.n], self.wavenumbers[idx / self.n])
    }

    pub fn k_sq(&self, idx: usize) -> f64 {
        let (kx, ky) = self.wavevector(idx);
        kx * kx + ky * ky
    }

    /// Whether the mode survives the 2/3-rule truncation.
    pub fn retained(&self, idx: usize) -> bool {
        self.retained[idx % self.n] && self.retained[idx / self.n]
    }

    pub fn truncate(&self, spec: &mut [Complex64]) {
        for (idx, c) in spec.iter_mut().enumerate() {
            if !self.retained(idx) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    fn transform_2d(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        fft.process(data);
        transpose(data, self.n);
        fft.process(data);
        transpose(data, self.n);
    }

    /// Normalized forward transform of real samples.
    pub fn forward(&self, phys: &[f64]) -> Vec<Complex64> {
        assert_eq!(phys.len(), self.len(), "sample count does not match grid");
        let mut data: Vec<Complex64> = phys.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform_2d(&mut data, &self.forward);
        let norm = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= norm);
        data
    }

    /// Real samples of a spectral field; imaginary round-off is dropped.
    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        assert_eq!(spec.len(), self.len(), "coefficient count does not match grid");
        let mut data = spec.to_vec();
        self.transform_2d(&mut data, &self.inverse);
        data.into_iter().map(|c| c.re).collect()
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for j in 0..n {
        for i in j + 1..n {
            data.swap(j * n + i, i * n + j);
        }
    }
}
