//! LSQR (Paige & Saunders) and Tikhonov via the stacked system.

use crate::error::{ensure_len, Error, Result};
use crate::exec::Exec;
use crate::forward::SparseModelMatrix;

/// Final iterate and the residual norm `|M u_k - p|` after every step
/// (entry 0 is `|p|`).
#[derive(Debug, Clone, PartialEq)]
pub struct LsqrOutput {
    pub u: Vec<f64>,
    pub residual_norms: Vec<f64>,
}

fn scale(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

/// Generic LSQR on an operator given by `apply` (`y = A x`) and
/// `apply_t` (`x = Aᵀ y`).
pub fn lsqr_operator<F, G>(
    exec: Exec,
    n_cols: usize,
    b: &[f64],
    iters: usize,
    atol: f64,
    mut apply: F,
    mut apply_t: G,
) -> LsqrOutput
where
    F: FnMut(&[f64], &mut [f64]),
    G: FnMut(&[f64], &mut [f64]),
{
    let m = b.len();
    let mut x = vec![0.0; n_cols];
    let mut u = b.to_vec();
    let mut beta = exec.norm2(&u);
    let mut residual_norms = vec![beta];
    if beta == 0.0 {
        return LsqrOutput { u: x, residual_norms };
    }
    scale(&mut u, 1.0 / beta);
    let mut v = vec![0.0; n_cols];
    apply_t(&u, &mut v);
    let mut alpha = exec.norm2(&v);
    if alpha == 0.0 {
        return LsqrOutput { u: x, residual_norms };
    }
    scale(&mut v, 1.0 / alpha);
    let mut w = v.clone();
    let beta1 = beta;
    let (mut phibar, mut rhobar) = (beta, alpha);
    let mut au = vec![0.0; m];
    let mut atv = vec![0.0; n_cols];
    for _ in 0..iters {
        apply(&v, &mut au);
        u.iter_mut().zip(&au).for_each(|(ui, a)| *ui = a - alpha * *ui);
        beta = exec.norm2(&u);
        if beta > 0.0 {
            scale(&mut u, 1.0 / beta);
            apply_t(&u, &mut atv);
            v.iter_mut().zip(&atv).for_each(|(vi, a)| *vi = a - beta * *vi);
            alpha = exec.norm2(&v);
            if alpha > 0.0 {
                scale(&mut v, 1.0 / alpha);
            }
        }
        let rho = rhobar.hypot(beta);
        let (c, s) = (rhobar / rho, beta / rho);
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;
        let (t1, t2) = (phi / rho, -theta / rho);
        for k in 0..n_cols {
            x[k] += t1 * w[k];
            w[k] = v[k] + t2 * w[k];
        }
        residual_norms.push(phibar.abs());
        if phibar.abs() <= atol * beta1 || beta == 0.0 || alpha == 0.0 {
            break;
        }
    }
    LsqrOutput { u: x, residual_norms }
}

fn check_iters(iters: usize) -> Result<()> {
    if iters == 0 {
        return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
    }
    Ok(())
}

/// Least-squares solution of `M u ≈ p` after at most `iters` steps, stopping
/// early once `|M u - p| <= atol |p|`.
pub fn lsqr(m: &SparseModelMatrix, p: &[f64], iters: usize, atol: f64) -> Result<LsqrOutput> {
    lsqr_with(Exec::default(), m, p, iters, atol)
}

pub fn lsqr_with(exec: Exec, m: &SparseModelMatrix, p: &[f64], iters: usize, atol: f64) -> Result<LsqrOutput> {
    ensure_len(m.n_rows(), p.len())?;
    check_iters(iters)?;
    Ok(lsqr_operator(
        exec,
        m.n_cols(),
        p,
        iters,
        atol,
        |x, y| m.apply_into(exec, x, y),
        |y, x| m.apply_adjoint_into(exec, y, x),
    ))
}

/// `argmin |M u - p|² + lam |u|²`, by LSQR on `[M; sqrt(lam) I] u ≈ [p; 0]`.
pub fn tikhonov(m: &SparseModelMatrix, p: &[f64], lam: f64, iters: usize) -> Result<Vec<f64>> {
    tikhonov_with(Exec::default(), m, p, lam, iters)
}

pub fn tikhonov_with(exec: Exec, m: &SparseModelMatrix, p: &[f64], lam: f64, iters: usize) -> Result<Vec<f64>> {
    ensure_len(m.n_rows(), p.len())?;
    check_iters(iters)?;
    if !(lam >= 0.0 && lam.is_finite()) {
        return Err(Error::InvalidArgument(format!("Tikhonov weight must be >= 0, got {lam}")));
    }
    let (rows, cols) = (m.n_rows(), m.n_cols());
    let s = lam.sqrt();
    let mut b = p.to_vec();
    b.resize(rows + cols, 0.0);
    let out = lsqr_operator(
        exec,
        cols,
        &b,
        iters,
        0.0,
        |x, y| {
            m.apply_into(exec, x, &mut y[..rows]);
            y[rows..].iter_mut().zip(x).for_each(|(o, v)| *o = s * v);
        },
        |y, x| {
            m.apply_adjoint_into(exec, &y[..rows], x);
            x.iter_mut().zip(&y[rows..]).for_each(|(o, v)| *o += s * v);
        },
    );
    Ok(out.u)
}
