//! Restarted GMRES with right preconditioning, generic over the vector type.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};

/// Real inner-product space operations needed by [`gmres`].
pub trait KrylovVector: Clone {
    fn dot(&self, other: &Self) -> f64;
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale(&mut self, a: f64);
    fn zeros_like(&self) -> Self;

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl KrylovVector for DVector<f64> {
    fn dot(&self, other: &Self) -> f64 {
        nalgebra::Matrix::dot(self, other)
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        nalgebra::Matrix::axpy(self, a, x, 1.0);
    }

    fn scale(&mut self, a: f64) {
        self.scale_mut(a);
    }

    fn zeros_like(&self) -> Self {
        DVector::zeros(self.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmresConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub restart: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig {
            rel_tol: 1e-10,
            max_iters: 200,
            restart: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome<V> {
    pub x: V,
    pub iterations: usize,
    /// `||b - A x|| / ||b||` at exit.
    pub rel_residual: f64,
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

/// Solve `A x = b` with right preconditioner `M` (`A M y = b`, `x = M y`).
pub fn gmres<V, A, M>(mut apply: A, mut precond: M, b: &V, x0: V, cfg: &GmresConfig) -> Result<GmresOutcome<V>>
where
    V: KrylovVector,
    A: FnMut(&V) -> V,
    M: FnMut(&V) -> V,
{
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(GmresOutcome {
            x: b.zeros_like(),
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let m = cfg.restart.max(1);
    let mut x = x0;
    let mut total = 0;
    loop {
        let mut r = b.clone();
        r.axpy(-1.0, &apply(&x));
        let beta = r.norm();
        let rel = beta / b_norm;
        if !rel.is_finite() {
            return Err(DlnError::LinearSolverStagnation {
                iterations: total,
                residual: rel,
            });
        }
        if rel <= cfg.rel_tol {
            return Ok(GmresOutcome {
                x,
                iterations: total,
                rel_residual: rel,
            });
        }
        if total >= cfg.max_iters {
            return Err(DlnError::LinearSolverStagnation {
                iterations: total,
                residual: rel,
            });
        }

        r.scale(1.0 / beta);
        let mut basis = vec![r];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut cols = 0;
        for j in 0..m {
            let mut w = apply(&precond(&basis[j]));
            total += 1;
            for (i, v) in basis.iter().enumerate() {
                h[i][j] = w.dot(v);
                w.axpy(-h[i][j], v);
            }
            let h_next = w.norm();
            h[j + 1][j] = h_next;
            for i in 0..j {
                let tmp = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = tmp;
            }
            let (c, s) = givens(h[j][j], h[j + 1][j]);
            cs[j] = c;
            sn[j] = s;
            h[j][j] = c * h[j][j] + s * h[j + 1][j];
            h[j + 1][j] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            cols = j + 1;
            let breakdown = h_next <= f64::EPSILON * beta;
            if g[j + 1].abs() / b_norm <= cfg.rel_tol || total >= cfg.max_iters || breakdown {
                break;
            }
            w.scale(1.0 / h_next);
            basis.push(w);
        }

        let mut y = vec![0.0; cols];
        for i in (0..cols).rev() {
            let mut acc = g[i];
            for k in i + 1..cols {
                acc -= h[i][k] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = basis[0].zeros_like();
        for (yi, v) in y.iter().zip(&basis) {
            update.axpy(*yi, v);
        }
        x.axpy(1.0, &precond(&update));
    }
}
