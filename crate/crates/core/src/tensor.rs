//! Adaptive anisotropy tensor built from a smoothed structure tensor.
//!
//! Pipeline: Gaussian pre-smoothing (σ), central-difference gradients, outer
//! products smoothed again (ρ), closed-form 2×2 eigendecomposition, and the
//! Weickert rescaling of the dominant eigenvalue. The result at every pixel is
//! `A = V diag(c(μ1/μ1_avg; k), 1) Vᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::Shape;

/// Weickert diffusivity constant `c_m`.
pub const WEICKERT_CM: f64 = 3.31488;
/// Weickert diffusivity exponent `m`.
pub const WEICKERT_M: i32 = 4;

/// Smoothed structure tensor `(Jxx, Jxy, Jyy)` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureTensorField {
    pub shape: Shape,
    pub jxx: Vec<f64>,
    pub jxy: Vec<f64>,
    pub jyy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub sigma_px: f64,
    pub rho_px: f64,
    pub k: f64,
    pub mu1_avg: f64,
}

/// Symmetric positive-definite 2×2 matrix per pixel, stored as `(a11, a12, a22)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField2D {
    shape: Shape,
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a22: Vec<f64>,
    pub meta: Option<TensorMeta>,
}

impl TensorField2D {
    pub fn identity(shape: Shape) -> Self {
        Self::constant(shape, 1.0, 0.0, 1.0)
    }

    pub fn constant(shape: Shape, a11: f64, a12: f64, a22: f64) -> Self {
        let n = shape.len();
        TensorField2D { shape, a11: vec![a11; n], a12: vec![a12; n], a22: vec![a22; n], meta: None }
    }

    pub fn from_components(shape: Shape, a11: Vec<f64>, a12: Vec<f64>, a22: Vec<f64>) -> Result<Self> {
        shape.check(&a11)?;
        shape.check(&a12)?;
        shape.check(&a22)?;
        Ok(TensorField2D { shape, a11, a12, a22, meta: None })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn is_identity(&self) -> bool {
        self.a11.iter().chain(&self.a22).all(|&v| v == 1.0) && self.a12.iter().all(|&v| v == 0.0)
    }

    /// `(gx, gy) <- A (gx, gy)` pixel by pixel.
    pub fn apply_in_place(&self, gx: &mut [f64], gy: &mut [f64]) {
        for n in 0..gx.len() {
            let (x, y) = (gx[n], gy[n]);
            gx[n] = self.a11[n] * x + self.a12[n] * y;
            gy[n] = self.a12[n] * x + self.a22[n] * y;
        }
    }

    /// Row-major `(a11, a12, a22)` triplets.
    pub fn interleaved(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.shape.len());
        for n in 0..self.shape.len() {
            out.extend_from_slice(&[self.a11[n], self.a12[n], self.a22[n]]);
        }
        out
    }
}

/// Separable Gaussian blur, kernel truncated at `ceil(3 std)` and renormalized,
/// replicate boundary. `std_px == 0` returns the input unchanged.
pub fn gaussian_smooth(shape: Shape, u: &[f64], std_px: f64) -> Result<Vec<f64>> {
    shape.check(u)?;
    if !(std_px >= 0.0 && std_px.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing std must be >= 0, got {std_px}")));
    }
    Ok(smooth(shape, u, std_px))
}

fn gaussian_kernel(std_px: f64) -> Vec<f64> {
    let radius = (3.0 * std_px).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * std_px * std_px)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn smooth(shape: Shape, u: &[f64], std_px: f64) -> Vec<f64> {
    if std_px == 0.0 {
        return u.to_vec();
    }
    let kernel = gaussian_kernel(std_px);
    let r = (kernel.len() / 2) as i64;
    let Shape { nx, ny } = shape;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; u.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut s = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                s += w * u[j * nx + clamp(i as i64 + t as i64 - r, nx)];
            }
            tmp[j * nx + i] = s;
        }
    }
    let mut out = vec![0.0; u.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut s = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                s += w * tmp[clamp(j as i64 + t as i64 - r, ny) * nx + i];
            }
            out[j * nx + i] = s;
        }
    }
    out
}

/// `J_ρ = K_ρ * (∇u_σ ⊗ ∇u_σ)` with central-difference gradients.
pub fn structure_tensor(shape: Shape, u0: &[f64], sigma_px: f64, rho_px: f64) -> Result<StructureTensorField> {
    let us = gaussian_smooth(shape, u0, sigma_px)?;
    if !(rho_px >= 0.0 && rho_px.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be >= 0, got {rho_px}")));
    }
    let Shape { nx, ny } = shape;
    let n = shape.len();
    let (mut xx, mut xy, mut yy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for j in 0..ny {
        for i in 0..nx {
            let at = |ii: usize, jj: usize| us[jj * nx + ii];
            let ux = 0.5 * (at((i + 1).min(nx - 1), j) - at(i.saturating_sub(1), j));
            let uy = 0.5 * (at(i, (j + 1).min(ny - 1)) - at(i, j.saturating_sub(1)));
            let k = j * nx + i;
            xx[k] = ux * ux;
            xy[k] = ux * uy;
            yy[k] = uy * uy;
        }
    }
    Ok(StructureTensorField {
        shape,
        jxx: smooth(shape, &xx, rho_px),
        jxy: smooth(shape, &xy, rho_px),
        jyy: smooth(shape, &yy, rho_px),
    })
}

/// Eigen-structure of a symmetric 2×2 matrix: `(μ1, μ2, v1)` with `μ1 >= μ2`
/// and `v1` the unit eigenvector of `μ1`. Degenerate input yields `v1 = (1, 0)`.
pub fn eig_sym2(jxx: f64, jxy: f64, jyy: f64) -> (f64, f64, [f64; 2]) {
    let mean = 0.5 * (jxx + jyy);
    let half_diff = 0.5 * (jxx - jyy);
    let rad = half_diff.hypot(jxy);
    let mu1 = mean + rad;
    let mu2 = mean - rad;
    let trace = (jxx + jyy).abs();
    if rad <= 1e-14 * trace || rad == 0.0 {
        return (mu1, mu2, [1.0, 0.0]);
    }
    // two algebraically equivalent candidates; keep the better conditioned one
    let c1 = [mu1 - jyy, jxy];
    let c2 = [jxy, mu1 - jxx];
    let (n1, n2) = (c1[0].hypot(c1[1]), c2[0].hypot(c2[1]));
    let v = if n1 >= n2 { [c1[0] / n1, c1[1] / n1] } else { [c2[0] / n2, c2[1] / n2] };
    (mu1, mu2, v)
}

/// Weickert diffusivity `c(s; k)`.
pub fn weickert_c(s: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("k must be positive, got {k}")));
    }
    Ok(weickert_unchecked(s, k))
}

fn weickert_unchecked(s: f64, k: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else {
        1.0 - (-WEICKERT_CM / (s / k).powi(WEICKERT_M)).exp()
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::InvalidArgument(format!("k must lie in (0, 1], got {k}")));
    }
    Ok(())
}

/// Adaptive tensor field from an image estimate `u0`.
pub fn build_tensor_field(shape: Shape, u0: &[f64], sigma_px: f64, rho_px: f64, k: f64) -> Result<TensorField2D> {
    check_k(k)?;
    let j = structure_tensor(shape, u0, sigma_px, rho_px)?;
    let n = shape.len();
    let eig: Vec<(f64, f64, [f64; 2])> = (0..n).map(|p| eig_sym2(j.jxx[p], j.jxy[p], j.jyy[p])).collect();
    let mu1_avg = eig.iter().map(|e| e.0).sum::<f64>() / n as f64;
    let energy = u0.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let eps_flat = 1e-12 * energy;
    let mut field = TensorField2D::identity(shape);
    field.meta = Some(TensorMeta { sigma_px, rho_px, k, mu1_avg });
    if energy == 0.0 || mu1_avg < eps_flat || mu1_avg <= 0.0 {
        return Ok(field);
    }
    for (p, &(mu1, _, v)) in eig.iter().enumerate() {
        let c = weickert_unchecked(mu1 / mu1_avg, k);
        // V diag(c, 1) V^T = I + (c - 1) v1 v1^T
        let d = c - 1.0;
        field.a11[p] = 1.0 + d * v[0] * v[0];
        field.a12[p] = d * v[0] * v[1];
        field.a22[p] = 1.0 + d * v[1] * v[1];
    }
    Ok(field)
}

/// Volumetric variant of the eigenvalue rescaling: `(c(μ1/μ1_avg), c(μ2/μ1_avg), 1)`.
pub fn modify_eigs_3d(mu1: f64, mu2: f64, mu3: f64, mu1_avg: f64, k: f64) -> Result<(f64, f64, f64)> {
    check_k(k)?;
    if !(mu1 >= mu2 && mu2 >= mu3) {
        return Err(Error::InvalidArgument(format!(
            "eigenvalues must be ordered mu1 >= mu2 >= mu3, got ({mu1}, {mu2}, {mu3})"
        )));
    }
    if !(mu1_avg > 0.0) {
        return Err(Error::InvalidArgument(format!("mu1_avg must be positive, got {mu1_avg}")));
    }
    Ok((weickert_unchecked(mu1 / mu1_avg, k), weickert_unchecked(mu2 / mu1_avg, k), 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Shape) -> Vec<f64> {
        (0..shape.len()).map(|n| (n % shape.nx) as f64).collect()
    }

    #[test]
    fn smoothing_preserves_constants_and_mass() {
        let s = Shape::new(21, 17);
        let c = gaussian_smooth(s, &vec![2.25; s.len()], 1.5).unwrap();
        assert!(c.iter().all(|v| (v - 2.25).abs() < 1e-12));
        let mut imp = vec![0.0; s.len()];
        imp[s.idx(10, 8)] = 1.0;
        let out = gaussian_smooth(s, &imp, 1.5).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gaussian_smooth(s, &imp, 0.0).unwrap(), imp);
        assert!(gaussian_smooth(s, &imp, -1.0).is_err());
    }

    #[test]
    fn structure_tensor_of_ramp() {
        let s = Shape::new(40, 40);
        let (sigma, rho) = (1.5, 1.0);
        let j = structure_tensor(s, &ramp(s), sigma, rho).unwrap();
        let band = (3.0 * sigma).ceil() as usize + (3.0 * rho).ceil() as usize + 1;
        for jj in band..s.ny - band {
            for ii in band..s.nx - band {
                let p = s.idx(ii, jj);
                assert!((j.jxx[p] - 1.0).abs() < 1e-10);
                assert!(j.jxy[p].abs() < 1e-10);
                assert!(j.jyy[p].abs() < 1e-10);
            }
        }
        let flat = structure_tensor(s, &vec![4.0; s.len()], sigma, rho).unwrap();
        assert!(flat.jxx.iter().chain(&flat.jxy).chain(&flat.jyy).all(|&v| v == 0.0));
    }

    #[test]
    fn eig_examples() {
        let (m1, m2, v) = eig_sym2(1.0, 0.0, 1.0);
        assert_eq!((m1, m2, v), (1.0, 1.0, [1.0, 0.0]));
        let (m1, m2, v) = eig_sym2(4.0, 0.0, 1.0);
        assert!((m1 - 4.0).abs() < 1e-15 && (m2 - 1.0).abs() < 1e-15);
        assert!((v[0].abs() - 1.0).abs() < 1e-15 && v[1].abs() < 1e-15);
        let (m1, m2, v) = eig_sym2(2.0, 1.0, 2.0);
        assert!((m1 - 3.0).abs() < 1e-14 && (m2 - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0].abs() - r).abs() < 1e-14 && (v[1].abs() - r).abs() < 1e-14);
        assert!(v[0] * v[1] > 0.0);
    }

    #[test]
    fn weickert_values() {
        assert_eq!(weickert_c(-0.5, 0.3).unwrap(), 1.0);
        assert_eq!(weickert_c(0.0, 0.3).unwrap(), 1.0);
        let at_k = weickert_c(0.4, 0.4).unwrap();
        assert!((at_k - (1.0 - (-3.31488f64).exp())).abs() < 1e-15);
        assert!((at_k - 0.96366).abs() < 1e-5);
        let far = weickert_c(100.0 * 0.2, 0.2).unwrap();
        assert!((far / 3.31488e-8 - 1.0).abs() < 1e-6);
        assert!(weickert_c(1.0, 0.0).is_err());
    }

    #[test]
    fn flat_image_gives_identity() {
        let s = Shape::new(16, 16);
        assert!(build_tensor_field(s, &vec![0.7; s.len()], 1.5, 3.0, 0.3).unwrap().is_identity());
        assert!(build_tensor_field(s, &vec![0.0; s.len()], 1.5, 3.0, 0.3).unwrap().is_identity());
        assert!(build_tensor_field(s, &vec![0.0; s.len()], 1.5, 3.0, 0.0).is_err());
    }

    #[test]
    fn edge_is_suppressed_across() {
        let s = Shape::new(32, 32);
        let u: Vec<f64> = (0..s.len()).map(|n| if n % s.nx >= 16 { 1.0 } else { 0.0 }).collect();
        let a = build_tensor_field(s, &u, 1.5, 1.0, 0.3).unwrap();
        let j = structure_tensor(s, &u, 1.5, 1.0).unwrap();
        let p = s.idx(15, 16);
        let (_, _, v) = eig_sym2(j.jxx[p], j.jxy[p], j.jyy[p]);
        assert!(v[0].abs() > 0.999);
        // x-direction gain is c < 1, y-direction untouched
        assert!(a.a11[p] < 0.5);
        assert!((a.a22[p] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scaling_image_leaves_tensor_unchanged() {
        let s = Shape::new(24, 24);
        let u: Vec<f64> = (0..s.len()).map(|n| ((n * 37 % 11) as f64).sin()).collect();
        let a = build_tensor_field(s, &u, 1.5, 1.0, 0.5).unwrap();
        let scaled: Vec<f64> = u.iter().map(|v| v * 7.0).collect();
        let b = build_tensor_field(s, &scaled, 1.5, 1.0, 0.5).unwrap();
        for p in 0..s.len() {
            assert!((a.a11[p] - b.a11[p]).abs() < 1e-12);
            assert!((a.a12[p] - b.a12[p]).abs() < 1e-12);
            assert!((a.a22[p] - b.a22[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn eigs_3d() {
        assert_eq!(modify_eigs_3d(0.0, 0.0, 0.0, 1.0, 0.5).unwrap(), (1.0, 1.0, 1.0));
        let (d1, d2, d3) = modify_eigs_3d(2.0, 2.0, 0.1, 2.0, 1.0).unwrap();
        assert!((d1 - 0.96366).abs() < 1e-5 && (d2 - 0.96366).abs() < 1e-5 && d3 == 1.0);
        assert!(modify_eigs_3d(1.0, 2.0, 0.0, 1.0, 1.0).is_err());
    }
}
