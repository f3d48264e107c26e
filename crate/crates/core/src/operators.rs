//! Discrete differential operators, TV functionals and the Haar transform.
//!
//! Gradients use backward differences with a zero first column/row, so the
//! isotropic TV below is exactly `sum_n sqrt((u[x]-u[x-1])^2 + (u[y]-u[y-1])^2)`.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::tensor::TensorField2D;

/// Image dimensions; `i` indexes columns (x), `j` rows (y).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub nx: usize,
    pub ny: usize,
}

impl Shape {
    pub fn new(nx: usize, ny: usize) -> Self {
        Shape { nx, ny }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub(crate) fn check(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), actual: values.len() });
        }
        Ok(())
    }

    pub(crate) fn check_same(&self, other: Shape) -> Result<()> {
        if *self != other {
            return Err(Error::ShapeMismatch { expected: (self.nx, self.ny), actual: (other.nx, other.ny) });
        }
        Ok(())
    }
}

/// Two-component per-pixel vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField2D {
    pub shape: Shape,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl GradientField2D {
    pub fn zeros(shape: Shape) -> Self {
        GradientField2D { shape, gx: vec![0.0; shape.len()], gy: vec![0.0; shape.len()] }
    }

    pub fn dot(&self, other: &GradientField2D) -> f64 {
        self.gx.iter().zip(&other.gx).map(|(a, b)| a * b).sum::<f64>()
            + self.gy.iter().zip(&other.gy).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm2_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Per-pixel Euclidean magnitude.
    pub fn magnitude(&self, n: usize) -> f64 {
        self.gx[n].hypot(self.gy[n])
    }

    /// Largest per-pixel magnitude.
    pub fn max_magnitude(&self) -> f64 {
        (0..self.shape.len()).map(|n| self.magnitude(n)).fold(0.0, f64::max)
    }
}

/// Backward-difference gradient into a preallocated field.
pub fn gradient_into(shape: Shape, u: &[f64], out: &mut GradientField2D) {
    let Shape { nx, ny } = shape;
    for j in 0..ny {
        let row = j * nx;
        out.gx[row] = 0.0;
        for i in 1..nx {
            out.gx[row + i] = u[row + i] - u[row + i - 1];
        }
        if j == 0 {
            out.gy[..nx].fill(0.0);
        } else {
            for i in 0..nx {
                out.gy[row + i] = u[row + i] - u[row - nx + i];
            }
        }
    }
}

pub fn gradient(shape: Shape, u: &[f64]) -> Result<GradientField2D> {
    shape.check(u)?;
    let mut g = GradientField2D::zeros(shape);
    gradient_into(shape, u, &mut g);
    Ok(g)
}

/// `out = grad^T g`, the exact transpose of [`gradient_into`].
pub fn gradient_adjoint_into(shape: Shape, gx: &[f64], gy: &[f64], out: &mut [f64]) {
    let Shape { nx, ny } = shape;
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            let n = row + i;
            let mut v = 0.0;
            if i >= 1 {
                v += gx[n];
            }
            if i + 1 < nx {
                v -= gx[n + 1];
            }
            if j >= 1 {
                v += gy[n];
            }
            if j + 1 < ny {
                v -= gy[n + nx];
            }
            out[n] = v;
        }
    }
}

/// Discrete divergence, the negative adjoint of [`gradient`].
pub fn divergence(g: &GradientField2D) -> Vec<f64> {
    let mut out = vec![0.0; g.shape.len()];
    gradient_adjoint_into(g.shape, &g.gx, &g.gy, &mut out);
    out.iter_mut().for_each(|v| *v = -*v);
    out
}

/// Isotropic total variation.
pub fn tv_value(shape: Shape, u: &[f64]) -> Result<f64> {
    shape.check(u)?;
    Ok(tv_unchecked(shape, u))
}

pub(crate) fn tv_unchecked(shape: Shape, u: &[f64]) -> f64 {
    let Shape { nx, ny } = shape;
    let mut s = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let n = j * nx + i;
            let dx = if i > 0 { u[n] - u[n - 1] } else { 0.0 };
            let dy = if j > 0 { u[n] - u[n - nx] } else { 0.0 };
            s += dx.hypot(dy);
        }
    }
    s
}

/// Pointwise `A(x) * grad u`.
pub fn adaptive_gradient(a: &TensorField2D, u: &[f64]) -> Result<GradientField2D> {
    a.shape().check(u)?;
    let mut g = GradientField2D::zeros(a.shape());
    adaptive_gradient_into(a, u, &mut g);
    Ok(g)
}

pub(crate) fn adaptive_gradient_into(a: &TensorField2D, u: &[f64], out: &mut GradientField2D) {
    gradient_into(a.shape(), u, out);
    a.apply_in_place(&mut out.gx, &mut out.gy);
}

/// Adjoint of [`adaptive_gradient`]: `grad^T (A z)`, i.e. `-div(A z)`.
pub fn adaptive_divergence(a: &TensorField2D, z: &GradientField2D) -> Result<Vec<f64>> {
    a.shape().check_same(z.shape)?;
    let mut out = vec![0.0; z.shape.len()];
    let mut scratch = GradientField2D::zeros(z.shape);
    adaptive_divergence_into(a, z, &mut scratch, &mut out);
    Ok(out)
}

pub(crate) fn adaptive_divergence_into(
    a: &TensorField2D,
    z: &GradientField2D,
    scratch: &mut GradientField2D,
    out: &mut [f64],
) {
    scratch.gx.copy_from_slice(&z.gx);
    scratch.gy.copy_from_slice(&z.gy);
    a.apply_in_place(&mut scratch.gx, &mut scratch.gy);
    gradient_adjoint_into(z.shape, &scratch.gx, &scratch.gy, out);
}

/// `sum_x |A(x) grad u(x)|_2`.
pub fn a2tv_value(a: &TensorField2D, u: &[f64]) -> Result<f64> {
    let g = adaptive_gradient(a, u)?;
    Ok((0..g.shape.len()).map(|n| g.magnitude(n)).sum())
}

fn check_haar(shape: Shape, levels: u32) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidArgument("Haar transform needs at least one level".into()));
    }
    let block = 1usize << levels;
    if !shape.nx.is_multiple_of(block) || !shape.ny.is_multiple_of(block) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is not divisible by 2^{levels} = {block}",
            shape.nx, shape.ny
        )));
    }
    Ok(())
}

/// Orthonormal 2D Haar analysis, Mallat layout (LL band top-left).
pub fn haar_forward(shape: Shape, u: &[f64], levels: u32) -> Result<Vec<f64>> {
    shape.check(u)?;
    check_haar(shape, levels)?;
    let mut w = u.to_vec();
    let mut tmp = vec![0.0; shape.nx.max(shape.ny)];
    haar_forward_in_place(shape, &mut w, levels, &mut tmp);
    Ok(w)
}

/// Exact transpose (and inverse) of [`haar_forward`].
pub fn haar_inverse(shape: Shape, w: &[f64], levels: u32) -> Result<Vec<f64>> {
    shape.check(w)?;
    check_haar(shape, levels)?;
    let mut u = w.to_vec();
    let mut tmp = vec![0.0; shape.nx.max(shape.ny)];
    haar_inverse_in_place(shape, &mut u, levels, &mut tmp);
    Ok(u)
}

pub(crate) fn haar_forward_in_place(shape: Shape, w: &mut [f64], levels: u32, tmp: &mut [f64]) {
    let (mut bw, mut bh) = (shape.nx, shape.ny);
    for _ in 0..levels {
        let (hw, hh) = (bw / 2, bh / 2);
        for j in 0..bh {
            let row = j * shape.nx;
            for k in 0..hw {
                let a = w[row + 2 * k];
                let b = w[row + 2 * k + 1];
                tmp[k] = (a + b) * FRAC_1_SQRT_2;
                tmp[hw + k] = (a - b) * FRAC_1_SQRT_2;
            }
            w[row..row + bw].copy_from_slice(&tmp[..bw]);
        }
        for i in 0..bw {
            for k in 0..hh {
                let a = w[2 * k * shape.nx + i];
                let b = w[(2 * k + 1) * shape.nx + i];
                tmp[k] = (a + b) * FRAC_1_SQRT_2;
                tmp[hh + k] = (a - b) * FRAC_1_SQRT_2;
            }
            for j in 0..bh {
                w[j * shape.nx + i] = tmp[j];
            }
        }
        bw = hw;
        bh = hh;
    }
}

pub(crate) fn haar_inverse_in_place(shape: Shape, u: &mut [f64], levels: u32, tmp: &mut [f64]) {
    for level in (0..levels).rev() {
        let bw = shape.nx >> level;
        let bh = shape.ny >> level;
        let (hw, hh) = (bw / 2, bh / 2);
        for i in 0..bw {
            for k in 0..hh {
                let s = u[k * shape.nx + i];
                let d = u[(hh + k) * shape.nx + i];
                tmp[2 * k] = (s + d) * FRAC_1_SQRT_2;
                tmp[2 * k + 1] = (s - d) * FRAC_1_SQRT_2;
            }
            for j in 0..bh {
                u[j * shape.nx + i] = tmp[j];
            }
        }
        for j in 0..bh {
            let row = j * shape.nx;
            for k in 0..hw {
                let s = u[row + k];
                let d = u[row + hw + k];
                tmp[2 * k] = (s + d) * FRAC_1_SQRT_2;
                tmp[2 * k + 1] = (s - d) * FRAC_1_SQRT_2;
            }
            u[row..row + bw].copy_from_slice(&tmp[..bw]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn ramp(shape: Shape) -> Vec<f64> {
        (0..shape.len()).map(|n| (n % shape.nx) as f64).collect()
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let s = Shape::new(7, 5);
        let g = gradient(s, &vec![3.5; s.len()]).unwrap();
        assert!(g.gx.iter().chain(&g.gy).all(|&v| v == 0.0));
        assert_eq!(tv_value(s, &vec![3.5; s.len()]).unwrap(), 0.0);
    }

    #[test]
    fn ramp_gradient() {
        let s = Shape::new(6, 4);
        let g = gradient(s, &ramp(s)).unwrap();
        for j in 0..4 {
            for i in 0..6 {
                let n = s.idx(i, j);
                assert_eq!(g.gx[n], if i == 0 { 0.0 } else { 1.0 });
                assert_eq!(g.gy[n], 0.0);
            }
        }
    }

    #[test]
    fn gradient_is_linear() {
        let s = Shape::new(9, 8);
        let u = random(s.len(), 1);
        let g = gradient(s, &u).unwrap();
        let u2: Vec<f64> = u.iter().map(|v| -2.5 * v).collect();
        let g2 = gradient(s, &u2).unwrap();
        for n in 0..s.len() {
            assert!((g2.gx[n] + 2.5 * g.gx[n]).abs() < 1e-14);
            assert!((g2.gy[n] + 2.5 * g.gy[n]).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_is_negative_adjoint() {
        let s = Shape::new(13, 11);
        let u = random(s.len(), 2);
        let g = GradientField2D { shape: s, gx: random(s.len(), 3), gy: random(s.len(), 4) };
        let lhs = gradient(s, &u).unwrap().dot(&g);
        let rhs: f64 = -u.iter().zip(divergence(&g)).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        assert!(divergence(&GradientField2D::zeros(s)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_of_interior_field_sums_to_zero() {
        let s = Shape::new(10, 10);
        let mut g = GradientField2D::zeros(s);
        let r = random(s.len(), 5);
        for j in 2..8 {
            for i in 2..8 {
                g.gx[s.idx(i, j)] = r[s.idx(i, j)];
                g.gy[s.idx(i, j)] = -r[s.idx(j, i)];
            }
        }
        assert!(divergence(&g).iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn tv_of_single_pixel() {
        let s = Shape::new(5, 5);
        let mut u = vec![0.0; s.len()];
        u[s.idx(2, 2)] = 1.7;
        let expected = 1.7 * (2.0 + 2f64.sqrt());
        assert!((tv_value(s, &u).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn tv_is_one_homogeneous() {
        let s = Shape::new(8, 6);
        let u = random(s.len(), 6);
        let t = tv_value(s, &u).unwrap();
        let scaled: Vec<f64> = u.iter().map(|v| -3.0 * v).collect();
        assert!((tv_value(s, &scaled).unwrap() - 3.0 * t).abs() < 1e-12 * t);
    }

    #[test]
    fn identity_tensor_reduces_to_plain_operators() {
        let s = Shape::new(8, 7);
        let a = TensorField2D::identity(s);
        let u = random(s.len(), 7);
        assert_eq!(adaptive_gradient(&a, &u).unwrap(), gradient(s, &u).unwrap());
        assert_eq!(a2tv_value(&a, &u).unwrap(), tv_value(s, &u).unwrap());
        let z = GradientField2D { shape: s, gx: random(s.len(), 8), gy: random(s.len(), 9) };
        let d = divergence(&z);
        let ad = adaptive_divergence(&a, &z).unwrap();
        assert!(d.iter().zip(&ad).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn cross_direction_suppressed_on_ramp() {
        let s = Shape::new(8, 8);
        let u = ramp(s);
        let zero_x = TensorField2D::constant(s, 0.0, 0.0, 1.0);
        let g = adaptive_gradient(&zero_x, &u).unwrap();
        assert!(g.gx.iter().chain(&g.gy).all(|&v| v == 0.0));
        let c = 0.3;
        let aniso = TensorField2D::constant(s, c, 0.0, 1.0);
        let want = c * tv_value(s, &u).unwrap();
        assert!((a2tv_value(&aniso, &u).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = TensorField2D::identity(Shape::new(4, 4));
        assert!(adaptive_gradient(&a, &[0.0; 15]).is_err());
        let z = GradientField2D::zeros(Shape::new(4, 3));
        assert!(adaptive_divergence(&a, &z).is_err());
    }

    #[test]
    fn haar_constant_block() {
        let s = Shape::new(2, 2);
        let w = haar_forward(s, &[1.5; 4], 1).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-15);
        assert!(w[1..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn haar_round_trip_and_parseval() {
        let s = Shape::new(32, 16);
        let u = random(s.len(), 10);
        let w = haar_forward(s, &u, 3).unwrap();
        let back = haar_inverse(s, &w, 3).unwrap();
        assert!(u.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
        let e0: f64 = u.iter().map(|v| v * v).sum();
        let e1: f64 = w.iter().map(|v| v * v).sum();
        assert!((e0.sqrt() - e1.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn haar_rejects_indivisible() {
        let s = Shape::new(12, 16);
        assert!(haar_forward(s, &vec![0.0; s.len()], 3).is_err());
        assert!(haar_forward(s, &vec![0.0; s.len()], 0).is_err());
    }
}
