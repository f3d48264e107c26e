//! Sparse forward operator `p = M u` for a circular detection arc.
//!
//! Each row samples the pressure of one detector at one time step. The image is
//! modelled with bilinear (tent) basis functions centred on the pixel grid. For
//! every detector and time `t_k` the spherical-mean integral
//! `∫_{|r - r_d| = c t_k} u(r) / |r - r_d| ds` is computed by walking the arc
//! with midpoint quadrature; the time derivative is then taken by central
//! differences (one-sided at both ends) and scaled by `Γ / (4π c)`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{ensure_len, Error, Result};
use crate::exec::Exec;
use crate::geometry::{detector_positions, DetectionGeometry, GridSpec};

/// Target value of `sqrt(|M|_inf |M|_1)` after normalization.
pub const LIPSCHITZ_TARGET: f64 = 160.0;

/// Default quadrature step along the arc, as a fraction of the pixel size.
pub const DEFAULT_ARC_STEP_FRAC: f64 = 0.125;

const MAGIC: &[u8; 6] = b"OAMM1\n";

/// Compressed-sparse-row model matrix with a cached transpose for `Mᵀp`.
#[derive(Debug, Clone)]
pub struct SparseModelMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    norm_factor: f64,
    // transpose, CSR over columns
    t_ptr: Vec<usize>,
    t_idx: Vec<u32>,
    t_val: Vec<f64>,
}

impl PartialEq for SparseModelMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
            && self.values == other.values
            && self.norm_factor.to_bits() == other.norm_factor.to_bits()
    }
}

impl SparseModelMatrix {
    /// Builds a matrix from CSR arrays, validating index order and ranges.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f64>,
        norm_factor: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return bad(format!("row offsets must have {} entries starting at 0", n_rows + 1));
        }
        if n_cols > u32::MAX as usize {
            return bad("too many columns for u32 indices".into());
        }
        let nnz = *row_ptr.last().unwrap();
        if col_idx.len() != nnz || values.len() != nnz {
            return bad(format!("nnz {} disagrees with {} indices / {} values", nnz, col_idx.len(), values.len()));
        }
        for r in 0..n_rows {
            let (a, b) = (row_ptr[r], row_ptr[r + 1]);
            if a > b || b > nnz {
                return bad(format!("row offsets not monotone at row {r}"));
            }
            let cols = &col_idx[a..b];
            if cols.iter().any(|&c| c as usize >= n_cols) {
                return bad(format!("column index out of range in row {r}"));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("column indices not strictly increasing in row {r}"));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut m = SparseModelMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
            norm_factor,
            t_ptr: Vec::new(),
            t_idx: Vec::new(),
            t_val: Vec::new(),
        };
        m.rebuild_transpose();
        Ok(m)
    }

    /// Dense row-major input; zeros are dropped.
    pub fn from_dense(n_rows: usize, n_cols: usize, dense: &[f64]) -> Result<Self> {
        ensure_len(n_rows * n_cols, dense.len())?;
        let mut row_ptr = vec![0];
        let (mut col_idx, mut values) = (Vec::new(), Vec::new());
        for r in 0..n_rows {
            for c in 0..n_cols {
                let v = dense[r * n_cols + c];
                if v != 0.0 {
                    col_idx.push(c as u32);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self::from_csr(n_rows, n_cols, row_ptr, col_idx, values, 1.0)
    }

    /// `scale * I`.
    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let row_ptr = (0..=n).collect();
        let col_idx = (0..n as u32).collect();
        Self::from_csr(n, n, row_ptr, col_idx, vec![scale; n], 1.0).expect("identity is well formed")
    }

    fn rebuild_transpose(&mut self) {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let nnz = self.values.len();
        let mut next = counts.clone();
        let mut t_idx = vec![0u32; nnz];
        let mut t_val = vec![0.0; nnz];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k] as usize;
                t_idx[next[c]] = r as u32;
                t_val[next[c]] = self.values[k];
                next[c] += 1;
            }
        }
        self.t_ptr = counts;
        self.t_idx = t_idx;
        self.t_val = t_val;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn norm_factor(&self) -> f64 {
        self.norm_factor
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[a..b].iter().map(|&c| c as usize).zip(self.values[a..b].iter().copied())
    }

    /// Entry `(r, c)`, zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        match self.col_idx[a..b].binary_search(&(c as u32)) {
            Ok(k) => self.values[a + k],
            Err(_) => 0.0,
        }
    }

    /// Column `c` as `(row, value)` pairs.
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.t_ptr[c], self.t_ptr[c + 1]);
        self.t_idx[a..b].iter().map(|&r| r as usize).zip(self.t_val[a..b].iter().copied())
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n_rows)
            .map(|r| self.values[self.row_ptr[r]..self.row_ptr[r + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.n_cols)
            .map(|c| self.t_val[self.t_ptr[c]..self.t_ptr[c + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `sqrt(|M|_inf |M|_1)`, an upper bound on the spectral norm.
    pub fn lipschitz_bound(&self) -> f64 {
        (self.norm_inf() * self.norm_1()).sqrt()
    }

    pub fn is_normalized(&self, rel_tol: f64) -> bool {
        (self.lipschitz_bound() / LIPSCHITZ_TARGET - 1.0).abs() <= rel_tol
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.apply_with(Exec::default(), u)
    }

    pub fn apply_adjoint(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.apply_adjoint_with(Exec::default(), p)
    }

    pub fn apply_with(&self, exec: Exec, u: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.n_cols, u.len())?;
        let mut y = vec![0.0; self.n_rows];
        self.apply_into(exec, u, &mut y);
        Ok(y)
    }

    pub fn apply_adjoint_with(&self, exec: Exec, p: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.n_rows, p.len())?;
        let mut x = vec![0.0; self.n_cols];
        self.apply_adjoint_into(exec, p, &mut x);
        Ok(x)
    }

    /// `y = M u`; lengths are the caller's responsibility.
    pub fn apply_into(&self, exec: Exec, u: &[f64], y: &mut [f64]) {
        exec.fill(y, |r| {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.values[k] * u[self.col_idx[k] as usize];
            }
            s
        });
    }

    /// `x = Mᵀ p`; lengths are the caller's responsibility.
    pub fn apply_adjoint_into(&self, exec: Exec, p: &[f64], x: &mut [f64]) {
        exec.fill(x, |c| {
            let (a, b) = (self.t_ptr[c], self.t_ptr[c + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.t_val[k] * p[self.t_idx[k] as usize];
            }
            s
        });
    }

    /// Keeps only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut row_ptr = vec![0];
        let (mut col_idx, mut values) = (Vec::new(), Vec::new());
        for &r in rows {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            col_idx.extend_from_slice(&self.col_idx[a..b]);
            values.extend_from_slice(&self.values[a..b]);
            row_ptr.push(values.len());
        }
        Self::from_csr(rows.len(), self.n_cols, row_ptr, col_idx, values, self.norm_factor)
            .expect("row selection keeps structure")
    }

    /// Writes the binary `OAMM1` container.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let tmp = path.with_extension("tmp-write");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
            w.write_all(MAGIC).map_err(io)?;
            for v in [self.n_rows as u64, self.n_cols as u64, self.nnz() as u64] {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
            for &v in &self.row_ptr {
                w.write_all(&(v as u64).to_le_bytes()).map_err(io)?;
            }
            for &c in &self.col_idx {
                w.write_all(&c.to_le_bytes()).map_err(io)?;
            }
            for &v in &self.values {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
            w.write_all(&self.norm_factor.to_le_bytes()).map_err(io)?;
            w.flush().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(io)
    }

    /// Reads a binary `OAMM1` container.
    pub fn read_from(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let fmt = |msg: &str| Error::Format { path: path.to_path_buf(), msg: msg.to_string() };
        let file = File::open(path).map_err(io)?;
        let actual = file.metadata().map_err(io)?.len();
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic, expected OAMM1"));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
            r.read_exact(&mut u64buf).map_err(|_| fmt("truncated header"))?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let n_rows = read_u64(&mut r)? as usize;
        let n_cols = read_u64(&mut r)? as usize;
        let nnz = read_u64(&mut r)? as usize;
        let expected = 6 + 24 + 8 * (n_rows as u64 + 1) + 4 * nnz as u64 + 8 * nnz as u64 + 8;
        if expected != actual {
            return Err(Error::SizeMismatch { path: path.to_path_buf(), expected, actual });
        }
        let mut bytes = Vec::with_capacity((actual - 30) as usize);
        r.read_to_end(&mut bytes).map_err(io)?;
        let mut off = 0;
        let mut take = |n: usize| {
            let s = &bytes[off..off + n];
            off += n;
            s
        };
        let row_ptr: Vec<usize> = take(8 * (n_rows + 1))
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let col_idx: Vec<u32> =
            take(4 * nnz).chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        let values: Vec<f64> =
            take(8 * nnz).chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let norm_factor = f64::from_le_bytes(take(8).try_into().unwrap());
        Self::from_csr(n_rows, n_cols, row_ptr, col_idx, values, norm_factor)
            .map_err(|e| fmt(&e.to_string()))
    }
}

/// Divides `M` by `sqrt(|M|_inf |M|_1) / 160`; the applied factor accumulates
/// into `norm_factor`.
pub fn normalize_matrix(m: &SparseModelMatrix) -> Result<SparseModelMatrix> {
    let bound = m.lipschitz_bound();
    if bound == 0.0 {
        return Err(Error::AllZero("model matrix"));
    }
    let f = bound / LIPSCHITZ_TARGET;
    let mut out = m.clone();
    out.values.iter_mut().for_each(|v| *v /= f);
    out.t_val.iter_mut().for_each(|v| *v /= f);
    out.norm_factor = m.norm_factor * f;
    Ok(out)
}

type SparseRow = Vec<(u32, f64)>;

/// Per-detector row builder with a dense accumulator.
struct ArcIntegrator<'a> {
    grid: &'a GridSpec,
    step_mm: f64,
    acc: Vec<f64>,
    touched: Vec<u32>,
}

impl<'a> ArcIntegrator<'a> {
    fn new(grid: &'a GridSpec, arc_step_frac: f64) -> Self {
        ArcIntegrator {
            grid,
            step_mm: arc_step_frac * grid.pixel_mm,
            acc: vec![0.0; grid.len()],
            touched: Vec::new(),
        }
    }

    /// Bilinear-basis support: pixel-centre box grown by one pixel.
    fn support(&self) -> [f64; 4] {
        let g = self.grid;
        let hx = 0.5 * (g.nx as f64 + 1.0) * g.pixel_mm;
        let hy = 0.5 * (g.ny as f64 + 1.0) * g.pixel_mm;
        [-hx, hx, -hy, hy]
    }

    fn deposit(&mut self, i: usize, j: usize, w: f64) {
        let n = j * self.grid.nx + i;
        if self.acc[n] == 0.0 {
            self.touched.push(n as u32);
        }
        self.acc[n] += w;
        if self.acc[n] == 0.0 {
            // keep the touched bookkeeping consistent if contributions cancel
            self.acc[n] = f64::MIN_POSITIVE * 0.0;
        }
    }

    /// `∫ u ds / radius` over the circle of `radius` around `centre`.
    fn integrate(&mut self, centre: [f64; 2], radius: f64) -> SparseRow {
        let [x0, x1, y0, y1] = self.support();
        let dx = (x0 - centre[0]).max(0.0).max(centre[0] - x1);
        let dy = (y0 - centre[1]).max(0.0).max(centre[1] - y1);
        let near = dx.hypot(dy);
        let far = (centre[0] - x0).abs().max((centre[0] - x1).abs())
            .hypot((centre[1] - y0).abs().max((centre[1] - y1).abs()));
        if radius <= near || radius >= far {
            return Vec::new();
        }
        // angular window of the support box as seen from the detector
        let base = (-centre[1]).atan2(-centre[0]);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in [(x0, y0), (x0, y1), (x1, y0), (x1, y1)] {
            let mut a = (y - centre[1]).atan2(x - centre[0]) - base;
            a = (a + PI).rem_euclid(2.0 * PI) - PI;
            lo = lo.min(a);
            hi = hi.max(a);
        }
        let span = hi - lo;
        let steps = ((radius * span) / self.step_mm).ceil().max(1.0) as usize;
        let dphi = span / steps as f64;
        let g = *self.grid;
        let (cx, cy) = ((g.nx as f64 - 1.0) / 2.0, (g.ny as f64 - 1.0) / 2.0);
        for s in 0..steps {
            let phi = base + lo + (s as f64 + 0.5) * dphi;
            let px = centre[0] + radius * phi.cos();
            let py = centre[1] + radius * phi.sin();
            let fx = px / g.pixel_mm + cx;
            let fy = py / g.pixel_mm + cy;
            let (ix, iy) = (fx.floor(), fy.floor());
            let (wx, wy) = (fx - ix, fy - iy);
            let (ix, iy) = (ix as i64, iy as i64);
            // ds / radius = dphi
            for (di, wi) in [(0, 1.0 - wx), (1, wx)] {
                let i = ix + di;
                if i < 0 || i >= g.nx as i64 || wi == 0.0 {
                    continue;
                }
                for (dj, wj) in [(0, 1.0 - wy), (1, wy)] {
                    let j = iy + dj;
                    if j < 0 || j >= g.ny as i64 || wj == 0.0 {
                        continue;
                    }
                    self.deposit(i as usize, j as usize, wi * wj * dphi);
                }
            }
        }
        self.touched.sort_unstable();
        let row = self.touched.iter().map(|&n| (n, self.acc[n as usize])).filter(|e| e.1 != 0.0).collect();
        for &n in &self.touched {
            self.acc[n as usize] = 0.0;
        }
        self.touched.clear();
        row
    }
}

/// `a * x + b * y` of two sorted sparse rows.
fn combine(a: f64, x: &SparseRow, b: f64, y: &SparseRow) -> SparseRow {
    let mut out = Vec::with_capacity(x.len() + y.len());
    let (mut i, mut j) = (0, 0);
    while i < x.len() || j < y.len() {
        let take_x = j >= y.len() || (i < x.len() && x[i].0 < y[j].0);
        let take_y = i >= x.len() || (j < y.len() && y[j].0 < x[i].0);
        let (c, v) = if take_x {
            i += 1;
            (x[i - 1].0, a * x[i - 1].1)
        } else if take_y {
            j += 1;
            (y[j - 1].0, b * y[j - 1].1)
        } else {
            i += 1;
            j += 1;
            (x[i - 1].0, a * x[i - 1].1 + b * y[j - 1].1)
        };
        if v != 0.0 {
            out.push((c, v));
        }
    }
    out
}

fn check_build_args(grid: &GridSpec, geom: &DetectionGeometry, arc_step_frac: f64) -> Result<()> {
    geom.validate_for(grid)?;
    if !(arc_step_frac > 0.0 && arc_step_frac <= 0.5) {
        return Err(Error::InvalidArgument(format!("arc_step_frac must lie in (0, 0.5], got {arc_step_frac}")));
    }
    if grid.len() > u32::MAX as usize {
        return Err(Error::InvalidGrid("too many pixels for u32 column indices".into()));
    }
    Ok(())
}

/// Rows of one detector block, in time order.
fn detector_block(grid: &GridSpec, geom: &DetectionGeometry, pos: [f64; 2], arc_step_frac: f64) -> Vec<SparseRow> {
    let mut arc = ArcIntegrator::new(grid, arc_step_frac);
    let c = geom.sound_speed_mm_per_us;
    let k_n = geom.n_samples;
    let arcs: Vec<SparseRow> = (0..k_n).map(|k| arc.integrate(pos, c * geom.time(k))).collect();
    if arcs.iter().all(|r| r.is_empty()) {
        return Vec::new();
    }
    let scale = geom.grueneisen / (4.0 * PI * c);
    let dt = geom.dt_us;
    (0..k_n)
        .map(|k| {
            if k == 0 {
                combine(scale / dt, &arcs[1], -scale / dt, &arcs[0])
            } else if k == k_n - 1 {
                combine(scale / dt, &arcs[k], -scale / dt, &arcs[k - 1])
            } else {
                let h = scale / (2.0 * dt);
                combine(h, &arcs[k + 1], -h, &arcs[k - 1])
            }
        })
        .collect()
}

pub fn build_model_matrix(grid: &GridSpec, geom: &DetectionGeometry, arc_step_frac: f64) -> Result<SparseModelMatrix> {
    build_model_matrix_with(Exec::default(), grid, geom, arc_step_frac)
}

/// Assembles `M`, one detector block per task.
pub fn build_model_matrix_with(
    exec: Exec,
    grid: &GridSpec,
    geom: &DetectionGeometry,
    arc_step_frac: f64,
) -> Result<SparseModelMatrix> {
    check_build_args(grid, geom, arc_step_frac)?;
    let positions = detector_positions(geom);
    let blocks = exec.map(positions.len(), |d| detector_block(grid, geom, positions[d], arc_step_frac));
    if let Some(d) = blocks.iter().position(|b| b.is_empty()) {
        return Err(Error::InvalidGeometry(format!("detector {d}: no arc intersects the image support")));
    }
    let nnz: usize = blocks.iter().flatten().map(|r| r.len()).sum();
    let mut row_ptr = Vec::with_capacity(geom.n_rows() + 1);
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    row_ptr.push(0);
    for row in blocks.iter().flatten() {
        for &(c, v) in row {
            col_idx.push(c);
            values.push(v);
        }
        row_ptr.push(values.len());
    }
    SparseModelMatrix::from_csr(geom.n_rows(), grid.len(), row_ptr, col_idx, values, 1.0)
}
