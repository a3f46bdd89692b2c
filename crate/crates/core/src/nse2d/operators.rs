use num_complex::Complex64;

use super::field::VelocityField;
use crate::error::Result;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn physical_gradients(v: &VelocityField) -> [[Vec<f64>; 2]; 2] {
    let g = v.grid();
    [0, 1].map(|c| v.gradient_spectral(c).map(|d| g.inverse(&d)))
}

/// Skew-symmetric advection `1/2 [(u~ . grad) v + div(u~ (x) v)]` with 2/3-rule dealiasing.
pub fn advection_apply(u_tilde: &VelocityField, v: &VelocityField) -> VelocityField {
    let grid = v.grid().clone();
    let [a1, a2] = u_tilde.to_physical();
    let vp = v.to_physical();
    let grads = physical_gradients(v);
    let mut out = [Vec::new(), Vec::new()];
    for c in 0..2 {
        let conv: Vec<f64> = (0..grid.len())
            .map(|i| a1[i] * grads[c][0][i] + a2[i] * grads[c][1][i])
            .collect();
        let conv_hat = grid.forward(&conv);
        let fx = grid.forward(&mul(&a1, &vp[c]));
        let fy = grid.forward(&mul(&a2, &vp[c]));
        out[c] = (0..grid.len())
            .map(|idx| {
                let (kx, ky) = grid.wavevector(idx);
                0.5 * (conv_hat[idx] + I * (fx[idx] * kx + fy[idx] * ky))
            })
            .collect();
    }
    let [u, w] = out;
    VelocityField::from_spectral(&grid, u, w).expect("sizes match")
}

/// `(u . grad v, w)` by grid quadrature.
pub fn convective_form(u: &VelocityField, v: &VelocityField, w: &VelocityField) -> Result<f64> {
    u.check_grid(v)?;
    u.check_grid(w)?;
    let grid = u.grid();
    let [u1, u2] = u.to_physical();
    let grads = physical_gradients(v);
    let wp = w.to_physical();
    let mut s = 0.0;
    for c in 0..2 {
        for i in 0..grid.len() {
            s += (u1[i] * grads[c][0][i] + u2[i] * grads[c][1][i]) * wp[c][i];
        }
    }
    Ok(s * grid.spacing().powi(2))
}

/// `b(u, v, w) = 1/2 (u . grad v, w) - 1/2 (u . grad w, v)`.
pub fn trilinear_b(u: &VelocityField, v: &VelocityField, w: &VelocityField) -> Result<f64> {
    Ok(0.5 * convective_form(u, v, w)? - 0.5 * convective_form(u, w, v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nse2d::field::leray_project;
    use crate::nse2d::grid::Grid2D;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn random_field(grid: &Arc<Grid2D>, seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        VelocityField::from_physical(grid, &u, &v).unwrap()
    }

    #[test]
    fn skew_symmetry_without_divergence_free_advector() {
        let g = Grid2D::new(24, 1.0).unwrap();
        let u = random_field(&g, 1);
        let v = random_field(&g, 2);
        let w = random_field(&g, 3);
        let b1 = trilinear_b(&u, &v, &w).unwrap();
        let b2 = trilinear_b(&u, &w, &v).unwrap();
        assert!((b1 + b2).abs() < 1e-12 * b1.abs().max(1.0));
        assert!(trilinear_b(&u, &v, &v).unwrap().abs() < 1e-13);
        assert_eq!(trilinear_b(&VelocityField::zeros(&g), &v, &w).unwrap(), 0.0);
    }

    #[test]
    fn divergence_free_advector_matches_convective_form() {
        let g = Grid2D::new(24, 2.0).unwrap();
        let u = leray_project(&random_field(&g, 4));
        let v = random_field(&g, 5);
        let w = random_field(&g, 6);
        let b = trilinear_b(&u, &v, &w).unwrap();
        let c = convective_form(&u, &v, &w).unwrap();
        assert!((b - c).abs() < 1e-10 * c.abs().max(1.0), "{b} {c}");
    }

    #[test]
    fn advection_is_weak_form_of_b_and_skew() {
        let g = Grid2D::new(24, 1.0).unwrap();
        let u = leray_project(&random_field(&g, 7));
        let v = random_field(&g, 8);
        let w = random_field(&g, 9);
        let av = advection_apply(&u, &v);
        assert_relative_eq!(av.inner(&w), trilinear_b(&u, &v, &w).unwrap(), epsilon = 1e-11);
        assert!(av.inner(&v).abs() < 1e-12 * av.l2_norm() * v.l2_norm());
    }

    #[test]
    fn constant_field_is_not_advected() {
        let g = Grid2D::new(16, 2.0).unwrap();
        let u = leray_project(&random_field(&g, 10));
        let c = VelocityField::from_fn(&g, |_, _| (1.5, -0.5));
        assert!(advection_apply(&u, &c).l2_norm() < 1e-13);
    }

    #[test]
    fn two_mode_product_matches_hand_convolution() {
        // u~ = (sin(2 pi y), 0) advecting v = (0, cos(2 pi x)) on the unit square:
        // (u~ . grad) v = (0, sin(2 pi y) d/dx cos(2 pi x)) = (0, -2 pi sin(2 pi x) sin(2 pi y))
        // div(u~ v2) = d/dx (sin(2 pi y) cos(2 pi x)) = the same, so A v equals it.
        let g = Grid2D::new(16, 1.0).unwrap();
        let u = VelocityField::from_fn(&g, |_, y| ((2.0 * PI * y).sin(), 0.0));
        let v = VelocityField::from_fn(&g, |x, _| (0.0, (2.0 * PI * x).cos()));
        let a = advection_apply(&u, &v);
        let expected = VelocityField::from_fn(&g, |x, y| (0.0, -2.0 * PI * (2.0 * PI * x).sin() * (2.0 * PI * y).sin()));
        let mut d = a.clone();
        d.add_scaled(-1.0, &expected);
        assert!(d.l2_norm() < 1e-12);
        // four modes (+-1, +-1) of magnitude pi/2 each
        let idx = 16 + 1;
        assert_relative_eq!(a.spectral(1)[idx].norm(), PI / 2.0, epsilon = 1e-12);
    }
}
