//! Reference ROF solver: accelerated projected gradient on the dual with
//! adaptive restart, stopped on a certified duality gap.

use oatomo::operators::{gradient, gradient_adjoint_into, tv_value};
use oatomo::{GradientField2D, Shape};

#[allow(dead_code)]
pub struct RofSolution {
    pub primal: f64,
    pub dual: f64,
    pub u: Vec<f64>,
    pub iterations: usize,
}

impl RofSolution {
    pub fn relative_gap(&self) -> f64 {
        (self.primal - self.dual) / self.primal
    }
}

/// Minimizes `(lam/2)|u - f|² + TV(u)` to relative gap `gap_tol`.
pub fn rof_oracle(shape: Shape, f: &[f64], lam: f64, gap_tol: f64, max_iter: usize) -> RofSolution {
    let n = f.len();
    let lf: Vec<f64> = f.iter().map(|v| lam * v).collect();
    let f_sq: f64 = f.iter().map(|v| v * v).sum();
    // the dual objective is (1/lam)-smooth with constant |∇|² <= 8
    let step = lam / 8.0;
    let mut z = GradientField2D::zeros(shape);
    let mut y = z.clone();
    let mut zn = z.clone();
    let mut t = 1.0f64;
    let mut work = vec![0.0; n];

    let evaluate = |z: &GradientField2D, work: &mut Vec<f64>| -> (f64, f64, Vec<f64>) {
        gradient_adjoint_into(shape, &z.gx, &z.gy, work);
        let u: Vec<f64> = (0..n).map(|i| f[i] - work[i] / lam).collect();
        let fit: f64 = u.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
        let primal = 0.5 * lam * fit + tv_value(shape, &u).unwrap();
        let dual = 0.5 * lam * f_sq - (0..n).map(|i| (lf[i] - work[i]).powi(2)).sum::<f64>() / (2.0 * lam);
        (primal, dual, u)
    };

    for it in 0..max_iter {
        gradient_adjoint_into(shape, &y.gx, &y.gy, &mut work);
        for i in 0..n {
            work[i] = (work[i] - lf[i]) / lam;
        }
        let g = gradient(shape, &work).unwrap();
        for i in 0..n {
            let a = y.gx[i] - step * g.gx[i];
            let b = y.gy[i] - step * g.gy[i];
            let m = a.hypot(b).max(1.0);
            zn.gx[i] = a / m;
            zn.gy[i] = b / m;
        }
        let mut ip = 0.0;
        for i in 0..n {
            ip += (y.gx[i] - zn.gx[i]) * (zn.gx[i] - z.gx[i]) + (y.gy[i] - zn.gy[i]) * (zn.gy[i] - z.gy[i]);
        }
        if ip > 0.0 {
            t = 1.0;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / tn;
        if it % 100 == 0 {
            let (primal, dual, u) = evaluate(&zn, &mut work);
            if (primal - dual) / primal <= gap_tol {
                return RofSolution { primal, dual, u, iterations: it };
            }
        }
        for i in 0..n {
            y.gx[i] = zn.gx[i] + beta * (zn.gx[i] - z.gx[i]);
            y.gy[i] = zn.gy[i] + beta * (zn.gy[i] - z.gy[i]);
        }
        std::mem::swap(&mut z, &mut zn);
        t = tn;
    }
    let (primal, dual, u) = evaluate(&z, &mut work);
    RofSolution { primal, dual, u, iterations: max_iter }
}
