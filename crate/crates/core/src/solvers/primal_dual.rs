//! Accelerated primal-dual (Chambolle-Pock) solvers for A²TV and TV-L1.
//!
//! Both problems share one engine. The saddle-point operator is
//! `K = [M; A∇]` (plus `Φ` for TV-L1), `G = 0`, and the fidelity is handled
//! through the conjugate prox `q = (q̃ - σp) / (1 + σ/λ)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::exec::Exec;
use crate::forward::{SparseModelMatrix, LIPSCHITZ_TARGET};
use crate::operators::{
    a2tv_value, adaptive_divergence_into, adaptive_gradient_into, gradient_adjoint_into, gradient_into,
    haar_forward, haar_forward_in_place, haar_inverse_in_place, tv_value, GradientField2D, Shape,
};
use crate::tensor::{build_tensor_field, TensorField2D};

/// How dual step sizes are derived from `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// One `σ = 1 / (τ L²)` for all dual blocks, with `L` the summed bound.
    #[default]
    Scalar,
    /// One step per dual block, `σ_b = 1 / (B τ L_b²)` for `B` blocks, where
    /// `L_b²` is `L_M²`, `l_grad` (a bound on `|∇|²`) or `l_wavelet²`.
    PerBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub iters: usize,
    /// A²TV fidelity weight.
    pub lambda: f64,
    /// TV-L1 weights.
    pub alpha: f64,
    pub mu: f64,
    pub wavelet_levels: u32,
    pub k: f64,
    pub sigma_px: f64,
    pub rho_px: f64,
    /// Iterations between tensor rebuilds.
    pub tensor_update_stride: usize,
    /// Keep `A = I` for the whole run.
    pub freeze_tensor: bool,
    /// `γ = gamma_factor · λ` (`λ = 2` for the TV-L1 fidelity).
    pub gamma_factor: f64,
    pub tau0: f64,
    pub l_m: f64,
    pub l_grad: f64,
    pub l_wavelet: f64,
    pub extrapolation: bool,
    pub step_mode: StepMode,
    pub trace_stride: usize,
    /// Run even when `M` fails the normalization check.
    pub allow_unnormalized: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iters: 3000,
            lambda: 0.01,
            alpha: 1.0,
            mu: 0.0,
            wavelet_levels: 3,
            k: 0.3,
            sigma_px: 1.5,
            rho_px: 3.0,
            tensor_update_stride: 1,
            freeze_tensor: false,
            gamma_factor: 0.7,
            tau0: 0.5,
            l_m: LIPSCHITZ_TARGET,
            l_grad: 8.0,
            l_wavelet: 1.0,
            extrapolation: false,
            step_mode: StepMode::Scalar,
            trace_stride: 10,
            allow_unnormalized: false,
            exec: Exec::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.iters == 0 {
            return bad("iters must be >= 1".into());
        }
        if self.trace_stride == 0 {
            return bad("trace_stride must be >= 1".into());
        }
        if self.tensor_update_stride == 0 {
            return bad("tensor_update_stride must be >= 1".into());
        }
        for (name, v) in [("tau0", self.tau0), ("l_m", self.l_m), ("l_grad", self.l_grad), ("l_wavelet", self.l_wavelet)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.gamma_factor >= 0.0 && self.gamma_factor.is_finite()) {
            return bad(format!("gamma_factor must be >= 0, got {}", self.gamma_factor));
        }
        Ok(())
    }

    /// `L = L_M + L_∇`.
    pub fn lipschitz_a2tv(&self) -> f64 {
        self.l_m + self.l_grad
    }

    /// `L = L_M + L_∇ + |Φ|`.
    pub fn lipschitz_tvl1(&self) -> f64 {
        self.l_m + self.l_grad + self.l_wavelet
    }
}

/// Iterate and step sizes of a primal-dual run.
#[derive(Debug, Clone, PartialEq)]
pub struct PDState {
    pub u: Vec<f64>,
    pub q: Vec<f64>,
    pub z: GradientField2D,
    pub w: Option<Vec<f64>>,
    pub tau: f64,
    /// Fidelity-block step (the only one in scalar mode).
    pub sigma: f64,
    pub sigma_grad: f64,
    pub sigma_wavelet: f64,
    pub theta: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub fidelity_term: f64,
    pub regularizer_term: f64,
    pub total: f64,
    pub tau: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyTrace {
    pub rows: Vec<TraceRow>,
    /// Iterations after which the tensor was rebuilt.
    pub tensor_updates: Vec<usize>,
    pub tensor_update_stride: usize,
}

impl EnergyTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,fidelity_term,regularizer_term,total,tau,sigma\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                r.iter, r.fidelity_term, r.regularizer_term, r.total, r.tau, r.sigma
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn last_total(&self) -> Option<f64> {
        self.rows.last().map(|r| r.total)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub u: Vec<f64>,
    pub trace: EnergyTrace,
    pub state: PDState,
    pub tensor: TensorField2D,
}

/// Dual prox of the A²TV problem (see module docs), in place.
pub fn prox_fstar_in_place(q: &mut [f64], z: &mut GradientField2D, sigma: f64, lam: f64, p: &[f64]) {
    let d = 1.0 + sigma / lam;
    q.iter_mut().zip(p).for_each(|(qi, pi)| *qi = (*qi - sigma * pi) / d);
    project_ball(z, 1.0);
}

pub fn prox_fstar(
    q_tilde: &[f64],
    z_tilde: &GradientField2D,
    sigma: f64,
    lam: f64,
    p: &[f64],
) -> Result<(Vec<f64>, GradientField2D)> {
    ensure_len(q_tilde.len(), p.len())?;
    if !(sigma > 0.0 && lam > 0.0) {
        return Err(Error::InvalidArgument(format!("prox needs sigma, lambda > 0, got {sigma}, {lam}")));
    }
    let mut q = q_tilde.to_vec();
    let mut z = z_tilde.clone();
    prox_fstar_in_place(&mut q, &mut z, sigma, lam, p);
    Ok((q, z))
}

/// Pointwise projection of a vector field onto `{|z| <= radius}`.
fn project_ball(z: &mut GradientField2D, radius: f64) {
    for n in 0..z.gx.len() {
        let m = z.gx[n].hypot(z.gy[n]);
        if m > radius {
            let s = if m > 0.0 { radius / m } else { 0.0 };
            z.gx[n] *= s;
            z.gy[n] *= s;
        }
    }
}

fn residual_sq(exec: Exec, m: &SparseModelMatrix, u: &[f64], p: &[f64]) -> f64 {
    let mut mu = vec![0.0; m.n_rows()];
    m.apply_into(exec, u, &mut mu);
    exec.sum(p.len(), |i| (mu[i] - p[i]) * (mu[i] - p[i]))
}

fn check_problem(m: &SparseModelMatrix, p: &[f64], shape: Shape, u_len: usize) -> Result<()> {
    ensure_len(m.n_rows(), p.len())?;
    ensure_len(m.n_cols(), shape.len())?;
    ensure_len(shape.len(), u_len)
}

/// `(λ/2)|Mu - p|² + Σ|A ∇u|`.
pub fn objective_a2tv(u: &[f64], a: &TensorField2D, m: &SparseModelMatrix, p: &[f64], lam: f64) -> Result<f64> {
    check_problem(m, p, a.shape(), u.len())?;
    Ok(0.5 * lam * residual_sq(Exec::default(), m, u, p) + a2tv_value(a, u)?)
}

/// `|Mu - p|² + μ|Φu|₁ + α TV(u)`.
pub fn objective_tvl1(
    u: &[f64],
    shape: Shape,
    m: &SparseModelMatrix,
    p: &[f64],
    alpha: f64,
    mu: f64,
    levels: u32,
) -> Result<f64> {
    check_problem(m, p, shape, u.len())?;
    let l1 = if mu != 0.0 { haar_forward(shape, u, levels)?.iter().map(|v| v.abs()).sum::<f64>() } else { 0.0 };
    Ok(residual_sq(Exec::default(), m, u, p) + mu * l1 + alpha * tv_value(shape, u)?)
}

#[derive(Clone, Copy)]
enum Problem {
    A2tv { lambda: f64 },
    Tvl1 { alpha: f64, mu: f64, levels: u32 },
}

impl Problem {
    fn fidelity_weight(self) -> f64 {
        match self {
            Problem::A2tv { lambda } => lambda,
            Problem::Tvl1 { .. } => 2.0,
        }
    }
}

struct Engine<'a> {
    m: &'a SparseModelMatrix,
    p: &'a [f64],
    shape: Shape,
    cfg: &'a SolverConfig,
    problem: Problem,
}

impl Engine<'_> {
    fn objective(&self, u: &[f64], a: &TensorField2D, tmp: &mut [f64], gtmp: &mut GradientField2D) -> (f64, f64) {
        let exec = self.cfg.exec;
        let fid = 0.5 * self.problem.fidelity_weight() * residual_sq(exec, self.m, u, self.p);
        let reg = match self.problem {
            Problem::A2tv { .. } => {
                adaptive_gradient_into(a, u, gtmp);
                (0..u.len()).map(|n| gtmp.magnitude(n)).sum()
            }
            Problem::Tvl1 { alpha, mu, levels } => {
                let mut r = 0.0;
                if alpha != 0.0 {
                    gradient_into(self.shape, u, gtmp);
                    r += alpha * (0..u.len()).map(|n| gtmp.magnitude(n)).sum::<f64>();
                }
                if mu != 0.0 {
                    let mut w = u.to_vec();
                    haar_forward_in_place(self.shape, &mut w, levels, tmp);
                    r += mu * w.iter().map(|v| v.abs()).sum::<f64>();
                }
                r
            }
        };
        (fid, reg)
    }

    fn run(&self, observer: &mut dyn FnMut(&PDState)) -> Result<SolverOutput> {
        let cfg = self.cfg;
        cfg.validate()?;
        if !cfg.allow_unnormalized && !self.m.is_normalized(1e-9) {
            return Err(Error::NotNormalized { found: self.m.lipschitz_bound(), expected: LIPSCHITZ_TARGET });
        }
        let exec = cfg.exec;
        let shape = self.shape;
        let n_px = shape.len();
        let lam_f = self.problem.fidelity_weight();
        let (tvl1, big_l, blocks) = match self.problem {
            Problem::A2tv { .. } => (None, cfg.lipschitz_a2tv(), 2.0),
            Problem::Tvl1 { alpha, mu, levels } => {
                if !(alpha >= 0.0 && mu >= 0.0) {
                    return Err(Error::InvalidArgument(format!("alpha, mu must be >= 0, got {alpha}, {mu}")));
                }
                haar_forward(shape, &vec![0.0; n_px], levels)?;
                (Some((alpha, mu, levels)), cfg.lipschitz_tvl1(), 3.0)
            }
        };
        if let Problem::A2tv { lambda } = self.problem {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
            }
            if !cfg.freeze_tensor {
                crate::tensor::weickert_c(1.0, cfg.k)?;
                build_tensor_field(shape, &vec![0.0; n_px], cfg.sigma_px, cfg.rho_px, cfg.k)?;
            }
        }
        let gamma = cfg.gamma_factor * lam_f;
        let tau = cfg.tau0;
        let (sigma, sigma_grad, sigma_wavelet) = match cfg.step_mode {
            StepMode::Scalar => {
                let s = 1.0 / (tau * big_l * big_l);
                (s, s, s)
            }
            StepMode::PerBlock => (
                1.0 / (blocks * tau * cfg.l_m * cfg.l_m),
                1.0 / (blocks * tau * cfg.l_grad),
                1.0 / (blocks * tau * cfg.l_wavelet * cfg.l_wavelet),
            ),
        };
        let mut st = PDState {
            u: vec![0.0; n_px],
            q: vec![0.0; self.m.n_rows()],
            z: GradientField2D::zeros(shape),
            w: tvl1.map(|_| vec![0.0; n_px]),
            tau,
            sigma,
            sigma_grad,
            sigma_wavelet,
            theta: 1.0,
            n: 0,
        };
        let z_radius = tvl1.map_or(1.0, |(alpha, _, _)| alpha);
        let mut a = TensorField2D::identity(shape);
        let mut trace = EnergyTrace { tensor_update_stride: cfg.tensor_update_stride, ..Default::default() };

        let mut ubar = st.u.clone();
        let mut mu_buf = vec![0.0; self.m.n_rows()];
        let mut grad = GradientField2D::zeros(shape);
        let mut scratch = GradientField2D::zeros(shape);
        let mut kt = vec![0.0; n_px];
        let mut kt2 = vec![0.0; n_px];
        let mut wt = vec![0.0; n_px];
        let mut tmp = vec![0.0; shape.nx.max(shape.ny)];
        let mut u_new = vec![0.0; n_px];

        let record = |st: &PDState, a: &TensorField2D, trace: &mut EnergyTrace, tmp: &mut [f64], g: &mut GradientField2D| {
            let (fid, reg) = self.objective(&st.u, a, tmp, g);
            trace.rows.push(TraceRow {
                iter: st.n,
                fidelity_term: fid,
                regularizer_term: reg,
                total: fid + reg,
                tau: st.tau,
                sigma: st.sigma,
            });
        };
        record(&st, &a, &mut trace, &mut tmp, &mut scratch);

        for _ in 0..cfg.iters {
            // dual: fidelity block
            self.m.apply_into(exec, &ubar, &mut mu_buf);
            let (s_q, d_q) = (st.sigma, 1.0 + st.sigma / lam_f);
            exec.for_each_chunk(&mut st.q, |start, chunk| {
                for (k, qi) in chunk.iter_mut().enumerate() {
                    let r = start + k;
                    *qi = (*qi + s_q * mu_buf[r] - s_q * self.p[r]) / d_q;
                }
            });
            // dual: gradient block
            adaptive_gradient_into(&a, &ubar, &mut grad);
            for n in 0..n_px {
                st.z.gx[n] += st.sigma_grad * grad.gx[n];
                st.z.gy[n] += st.sigma_grad * grad.gy[n];
            }
            project_ball(&mut st.z, z_radius);
            // dual: wavelet block
            if let (Some((_, mu, levels)), Some(w)) = (tvl1, st.w.as_mut()) {
                wt.copy_from_slice(&ubar);
                haar_forward_in_place(shape, &mut wt, levels, &mut tmp);
                for n in 0..n_px {
                    w[n] = (w[n] + st.sigma_wavelet * wt[n]).clamp(-mu, mu);
                }
            }
            // primal
            self.m.apply_adjoint_into(exec, &st.q, &mut kt);
            if a.is_identity() {
                gradient_adjoint_into(shape, &st.z.gx, &st.z.gy, &mut kt2);
            } else {
                adaptive_divergence_into(&a, &st.z, &mut scratch, &mut kt2);
            }
            for n in 0..n_px {
                kt[n] += kt2[n];
            }
            if let (Some((_, _, levels)), Some(w)) = (tvl1, st.w.as_ref()) {
                wt.copy_from_slice(w);
                haar_inverse_in_place(shape, &mut wt, levels, &mut tmp);
                for n in 0..n_px {
                    kt[n] += wt[n];
                }
            }
            for n in 0..n_px {
                u_new[n] = st.u[n] - st.tau * kt[n];
            }
            // step schedule
            let theta = 1.0 / (1.0 + 2.0 * gamma * st.tau).sqrt();
            st.theta = theta;
            st.tau *= theta;
            st.sigma /= theta;
            st.sigma_grad /= theta;
            st.sigma_wavelet /= theta;
            if cfg.extrapolation {
                for n in 0..n_px {
                    ubar[n] = u_new[n] + theta * (u_new[n] - st.u[n]);
                }
            } else {
                ubar.copy_from_slice(&u_new);
            }
            std::mem::swap(&mut st.u, &mut u_new);
            st.n += 1;

            if matches!(self.problem, Problem::A2tv { .. })
                && !cfg.freeze_tensor
                && st.n.is_multiple_of(cfg.tensor_update_stride)
            {
                a = build_tensor_field(shape, &st.u, cfg.sigma_px, cfg.rho_px, cfg.k)?;
                trace.tensor_updates.push(st.n);
            }
            if st.n.is_multiple_of(cfg.trace_stride) || st.n == cfg.iters {
                record(&st, &a, &mut trace, &mut tmp, &mut scratch);
            }
            observer(&st);
        }
        Ok(SolverOutput { u: st.u.clone(), trace, state: st, tensor: a })
    }
}

/// A²TV reconstruction, `min (λ/2)|Mu - p|² + Σ|A∇u|`, with `A` rebuilt from
/// the running estimate.
pub fn chambolle_pock_a2tv(m: &SparseModelMatrix, p: &[f64], shape: Shape, cfg: &SolverConfig) -> Result<SolverOutput> {
    chambolle_pock_a2tv_observed(m, p, shape, cfg, &mut |_| {})
}

/// [`chambolle_pock_a2tv`] calling `observer` after every iteration.
pub fn chambolle_pock_a2tv_observed(
    m: &SparseModelMatrix,
    p: &[f64],
    shape: Shape,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&PDState),
) -> Result<SolverOutput> {
    check_problem(m, p, shape, shape.len())?;
    Engine { m, p, shape, cfg, problem: Problem::A2tv { lambda: cfg.lambda } }.run(observer)
}

/// TV-L1 reconstruction, `min |Mu - p|² + μ|Φu|₁ + α TV(u)`.
pub fn chambolle_pock_tvl1(m: &SparseModelMatrix, p: &[f64], shape: Shape, cfg: &SolverConfig) -> Result<SolverOutput> {
    chambolle_pock_tvl1_observed(m, p, shape, cfg, &mut |_| {})
}

pub fn chambolle_pock_tvl1_observed(
    m: &SparseModelMatrix,
    p: &[f64],
    shape: Shape,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&PDState),
) -> Result<SolverOutput> {
    check_problem(m, p, shape, shape.len())?;
    let problem = Problem::Tvl1 { alpha: cfg.alpha, mu: cfg.mu, levels: cfg.wavelet_levels };
    Engine { m, p, shape, cfg, problem }.run(observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_examples() {
        let s = Shape::new(1, 1);
        let p = [2.0];
        let z = GradientField2D { shape: s, gx: vec![3.0], gy: vec![4.0] };
        let (q, z) = prox_fstar(&[0.5 * 2.0], &z, 0.5, 1.0, &p).unwrap();
        assert_eq!(q, vec![0.0]);
        assert!((z.gx[0] - 0.6).abs() < 1e-15 && (z.gy[0] - 0.8).abs() < 1e-15);
        let inside = GradientField2D { shape: s, gx: vec![0.3], gy: vec![-0.4] };
        let (_, z2) = prox_fstar(&[0.0], &inside, 0.5, 1.0, &p).unwrap();
        assert_eq!(z2, inside);
    }

    #[test]
    fn zero_data_stays_zero() {
        let shape = Shape::new(8, 8);
        let m = SparseModelMatrix::scaled_identity(64, 160.0);
        let cfg = SolverConfig { iters: 20, ..Default::default() };
        let mut all_zero = true;
        let out = chambolle_pock_a2tv_observed(&m, &[0.0; 64], shape, &cfg, &mut |st| {
            all_zero &= st.u.iter().all(|&v| v == 0.0);
        })
        .unwrap();
        assert!(all_zero);
        assert!(out.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unnormalized_rejected() {
        let shape = Shape::new(4, 4);
        let m = SparseModelMatrix::scaled_identity(16, 1.0);
        let cfg = SolverConfig { iters: 2, ..Default::default() };
        assert!(matches!(chambolle_pock_a2tv(&m, &[0.0; 16], shape, &cfg), Err(Error::NotNormalized { .. })));
        let ok = SolverConfig { allow_unnormalized: true, ..cfg };
        assert!(chambolle_pock_a2tv(&m, &[0.0; 16], shape, &ok).is_ok());
    }
}
