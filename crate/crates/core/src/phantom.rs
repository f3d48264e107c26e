//! Synthetic test images and sinogram degradation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DetectionGeometry, DetectorSubset, GridSpec, ImageGrid2D, Sinogram};

fn default_count() -> usize {
    6
}

fn default_widths() -> (f64, f64) {
    (1.5, 3.5)
}

fn default_curvature() -> f64 {
    0.6
}

fn default_radius_frac() -> f64 {
    0.25
}

fn default_height() -> f64 {
    1.0
}

fn default_position() -> f64 {
    0.5
}

/// Phantom family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PhantomKind {
    Vessels {
        #[serde(default = "default_count")]
        count: usize,
        /// Tube diameter range in pixels.
        #[serde(default = "default_widths")]
        width_px: (f64, f64),
        /// Standard deviation of the heading change per control point (radians).
        #[serde(default = "default_curvature")]
        curvature: f64,
    },
    Disk {
        #[serde(default = "default_radius_frac")]
        radius_frac: f64,
        #[serde(default = "default_height")]
        height: f64,
    },
    Step {
        /// Edge column as a fraction of the width.
        #[serde(default = "default_position")]
        position_frac: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub kind: PhantomKind,
}

impl PhantomSpec {
    pub fn vessels(size: usize, seed: u64, count: usize) -> Self {
        PhantomSpec {
            size,
            seed,
            kind: PhantomKind::Vessels { count, width_px: default_widths(), curvature: default_curvature() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.size < 16 {
            return bad(format!("phantom size must be >= 16, got {}", self.size));
        }
        match self.kind {
            PhantomKind::Vessels { width_px: (lo, hi), curvature, .. } => {
                if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
                    return bad(format!("vessel widths must satisfy 1 <= lo <= hi, got ({lo}, {hi})"));
                }
                if !(curvature >= 0.0 && curvature.is_finite()) {
                    return bad(format!("curvature must be >= 0, got {curvature}"));
                }
            }
            PhantomKind::Disk { radius_frac, height } => {
                if !(radius_frac > 0.0 && radius_frac <= 0.45) {
                    return bad(format!("disk radius fraction must lie in (0, 0.45], got {radius_frac}"));
                }
                if !height.is_finite() {
                    return bad("disk height must be finite".into());
                }
            }
            PhantomKind::Step { position_frac } => {
                if !(0.0..=1.0).contains(&position_frac) {
                    return bad(format!("step position must lie in [0, 1], got {position_frac}"));
                }
            }
        }
        Ok(())
    }
}

/// Renders any phantom kind on a square grid with the given pixel size.
pub fn generate(spec: &PhantomSpec, pixel_mm: f64) -> Result<ImageGrid2D> {
    spec.validate()?;
    let grid = GridSpec::new(spec.size, spec.size, pixel_mm)?;
    let values = match spec.kind {
        PhantomKind::Vessels { .. } => vessel_values(spec),
        PhantomKind::Disk { radius_frac, height } => disk_values(spec.size, radius_frac, height),
        PhantomKind::Step { position_frac } => step_values(spec.size, position_frac),
    };
    ImageGrid2D::new(grid, values)
}

pub fn vessel_phantom(spec: &PhantomSpec) -> Result<ImageGrid2D> {
    if !matches!(spec.kind, PhantomKind::Vessels { .. }) {
        return Err(Error::InvalidArgument("vessel_phantom needs a vessels spec".into()));
    }
    generate(spec, 1.0)
}

pub fn disk_phantom(n: usize, radius_frac: f64, height: f64) -> Result<ImageGrid2D> {
    generate(&PhantomSpec { size: n, seed: 0, kind: PhantomKind::Disk { radius_frac, height } }, 1.0)
}

pub fn step_phantom(n: usize, position_frac: f64) -> Result<ImageGrid2D> {
    generate(&PhantomSpec { size: n, seed: 0, kind: PhantomKind::Step { position_frac } }, 1.0)
}

fn disk_values(n: usize, radius_frac: f64, height: f64) -> Vec<f64> {
    let r = radius_frac * n as f64;
    let c = (n as f64 - 1.0) / 2.0;
    (0..n * n)
        .map(|p| {
            let (i, j) = ((p % n) as f64, (p / n) as f64);
            if (i - c).hypot(j - c) <= r {
                height
            } else {
                0.0
            }
        })
        .collect()
}

fn step_values(n: usize, position_frac: f64) -> Vec<f64> {
    let edge = position_frac * n as f64;
    (0..n * n).map(|p| if ((p % n) as f64) >= edge { 1.0 } else { 0.0 }).collect()
}

const MAX_FILL: f64 = 0.40;
const MIN_FILL: f64 = 0.01;

struct Canvas {
    n: usize,
    values: Vec<f64>,
    filled: usize,
}

impl Canvas {
    fn fill_fraction(&self) -> f64 {
        self.filled as f64 / self.values.len() as f64
    }

    /// Pixels newly covered by a tube, without drawing it.
    fn tube_pixels(&self, pts: &[[f64; 2]], w0: f64, w1: f64) -> Vec<usize> {
        let n = self.n as i64;
        let mut hit = vec![false; self.values.len()];
        let mut out = Vec::new();
        let last = (pts.len() - 1).max(1) as f64;
        for (s, p) in pts.iter().enumerate() {
            let r = 0.5 * (w0 + (w1 - w0) * s as f64 / last);
            let (i0, i1) = ((p[0] - r).floor() as i64, (p[0] + r).ceil() as i64);
            let (j0, j1) = ((p[1] - r).floor() as i64, (p[1] + r).ceil() as i64);
            for j in j0.max(0)..=j1.min(n - 1) {
                for i in i0.max(0)..=i1.min(n - 1) {
                    let q = (j * n + i) as usize;
                    if !hit[q] && (i as f64 - p[0]).hypot(j as f64 - p[1]) <= r {
                        hit[q] = true;
                        out.push(q);
                    }
                }
            }
        }
        out
    }

    /// Draws the tube unless it would push coverage above the cap.
    fn draw(&mut self, pts: &[[f64; 2]], widths: (f64, f64), intensity: f64) -> bool {
        let pix = self.tube_pixels(pts, widths.0, widths.1);
        let fresh = pix.iter().filter(|&&q| self.values[q] == 0.0).count();
        if (self.filled + fresh) as f64 > MAX_FILL * self.values.len() as f64 {
            return false;
        }
        for q in pix {
            if self.values[q] == 0.0 {
                self.filled += 1;
            }
            self.values[q] = self.values[q].max(intensity);
        }
        true
    }
}

/// Uniform Catmull-Rom spline through `ctrl`, sampled every ~0.25 px.
fn spline(ctrl: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let m = ctrl.len();
    let at = |k: isize| ctrl[k.clamp(0, m as isize - 1) as usize];
    let mut out = Vec::new();
    for seg in 0..m as isize - 1 {
        let (p0, p1, p2, p3) = (at(seg - 1), at(seg), at(seg + 1), at(seg + 2));
        let len = (p2[0] - p1[0]).hypot(p2[1] - p1[1]);
        let steps = (len * 4.0).ceil().max(1.0) as usize;
        for s in 0..steps {
            let t = s as f64 / steps as f64;
            let (t2, t3) = (t * t, t * t * t);
            let f = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b + (c - a) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (3.0 * b - a - 3.0 * c + d) * t3)
            };
            out.push([f(p0[0], p1[0], p2[0], p3[0]), f(p0[1], p1[1], p2[1], p3[1])]);
        }
    }
    out.push(ctrl[m - 1]);
    out
}

fn draw_widths(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> (f64, f64) {
    (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
}

/// Hairpin loop with a side branch, rotated and shifted at random.
fn hairpin_with_branch(rng: &mut ChaCha8Rng, n: f64) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let d = 0.07 * n;
    let l = 0.22 * n;
    let arm = [[-d, l], [-d, 0.0], [-d * 0.7, -0.45 * l], [0.0, -0.6 * l], [d * 0.7, -0.45 * l], [d, 0.0], [d, l]];
    let branch = [[-d, 0.3 * l], [-d - 0.4 * l, 0.55 * l], [-d - 0.8 * l, 0.45 * l], [-d - 1.1 * l, 0.7 * l]];
    let rot = rng.random_range(0.0..std::f64::consts::TAU);
    let shift = [rng.random_range(-0.06..0.06) * n, rng.random_range(-0.06..0.06) * n];
    let c = (n - 1.0) / 2.0;
    let place = |p: &[f64; 2]| {
        let (s, co) = rot.sin_cos();
        [c + shift[0] + co * p[0] - s * p[1], c + shift[1] + s * p[0] + co * p[1]]
    };
    (arm.iter().map(place).collect(), branch.iter().map(place).collect())
}

/// Random-walk curve starting near the rim of the field of view.
fn wandering(rng: &mut ChaCha8Rng, n: f64, curvature: f64) -> Vec<[f64; 2]> {
    let c = (n - 1.0) / 2.0;
    let rmax = 0.44 * n;
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let mut p = [c + 0.8 * rmax * a.cos(), c + 0.8 * rmax * a.sin()];
    let mut heading = a + std::f64::consts::PI + rng.random_range(-0.6..0.6);
    let turn = Normal::new(0.0, curvature.max(1e-12)).expect("finite std");
    let steps = rng.random_range(4..=6);
    let mut pts = vec![p];
    for _ in 0..steps {
        heading += turn.sample(rng);
        let step = rng.random_range(0.12..0.2) * n;
        let mut q = [p[0] + step * heading.cos(), p[1] + step * heading.sin()];
        let (dx, dy) = (q[0] - c, q[1] - c);
        let r = dx.hypot(dy);
        if r > rmax {
            q = [c + dx * rmax / r, c + dy * rmax / r];
            heading += std::f64::consts::FRAC_PI_2;
        }
        pts.push(q);
        p = q;
    }
    pts
}

fn vessel_values(spec: &PhantomSpec) -> Vec<f64> {
    let PhantomKind::Vessels { count, width_px, curvature } = spec.kind else {
        unreachable!("checked by caller")
    };
    let n = spec.size;
    let mut canvas = Canvas { n, values: vec![0.0; n * n], filled: 0 };
    if count == 0 {
        return canvas.values;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nf = n as f64;
    let (arm, branch) = hairpin_with_branch(&mut rng, nf);
    let w = draw_widths(&mut rng, width_px);
    let intensity = rng.random_range(0.5..=1.0);
    canvas.draw(&spline(&arm), w, intensity);
    canvas.draw(&spline(&branch), (w.0, w.0.min(w.1)), rng.random_range(0.5..=1.0));
    let mut drawn = 1;
    let mut attempts = 0;
    while (drawn < count || canvas.fill_fraction() < MIN_FILL) && attempts < 64 * count.max(1) {
        attempts += 1;
        let pts = spline(&wandering(&mut rng, nf, curvature));
        let w = draw_widths(&mut rng, width_px);
        let intensity = rng.random_range(0.5..=1.0);
        if canvas.draw(&pts, w, intensity) {
            drawn += 1;
        } else if canvas.fill_fraction() >= MIN_FILL {
            break;
        }
    }
    canvas.values
}

/// Adds i.i.d. `N(0, (rel_std * max p)^2)` noise from a seeded generator.
pub fn add_gaussian_noise(p: &Sinogram, rel_std: f64, seed: u64) -> Result<Sinogram> {
    if !(rel_std >= 0.0 && rel_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("relative noise level must be >= 0, got {rel_std}")));
    }
    if rel_std == 0.0 {
        return Ok(p.clone());
    }
    if p.values().iter().all(|&v| v == 0.0) {
        return Err(Error::AllZero("sinogram: noise level relative to max 0 is undefined"));
    }
    let max = p.max();
    if !(max > 0.0) {
        return Err(Error::InvalidArgument(format!("sinogram maximum must be positive, got {max}")));
    }
    let normal = Normal::new(0.0, rel_std * max).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = p.clone();
    out.values_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    Ok(out)
}

/// Keeps every `n_detectors / n_keep`-th detector, starting at index 0.
pub fn subsample_projections(
    p: &Sinogram,
    geom: &DetectionGeometry,
    n_keep: usize,
) -> Result<(Sinogram, DetectionGeometry)> {
    if p.n_detectors != geom.n_detectors || p.n_samples != geom.n_samples {
        return Err(Error::ShapeMismatch {
            expected: (geom.n_detectors, geom.n_samples),
            actual: (p.n_detectors, p.n_samples),
        });
    }
    let n = geom.n_detectors;
    if n_keep == 0 || n_keep > n || !n.is_multiple_of(n_keep) {
        return Err(Error::InvalidArgument(format!("cannot keep {n_keep} of {n} detectors by even striding")));
    }
    let stride = n / n_keep;
    let mut values = Vec::with_capacity(n_keep * p.n_samples);
    for d in (0..n).step_by(stride) {
        values.extend_from_slice(p.detector(d));
    }
    let mut reduced = geom.clone();
    reduced.n_detectors = n_keep;
    if stride > 1 {
        reduced.subset = Some(match geom.subset {
            None => DetectorSubset { parent_count: n, stride },
            Some(s) => DetectorSubset { parent_count: s.parent_count, stride: s.stride * stride },
        });
    }
    Ok((Sinogram::new(n_keep, p.n_samples, values)?, reduced))
}

/// Detector indices kept by [`subsample_projections`].
pub fn kept_detectors(n_detectors: usize, n_keep: usize) -> Vec<usize> {
    (0..n_detectors).step_by((n_detectors / n_keep.max(1)).max(1)).take(n_keep).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vessels_deterministic_and_bounded() {
        for seed in [1, 7, 42] {
            let s = PhantomSpec::vessels(64, seed, 6);
            let a = vessel_phantom(&s).unwrap();
            let b = vessel_phantom(&s).unwrap();
            assert_eq!(a, b);
            let nz = a.values().iter().filter(|&&v| v != 0.0).count() as f64 / 4096.0;
            assert!((0.01..=0.40).contains(&nz), "fill {nz}");
            assert!(a.values().iter().all(|&v| v == 0.0 || (0.5..=1.0).contains(&v)));
        }
        let empty = vessel_phantom(&PhantomSpec::vessels(32, 3, 0)).unwrap();
        assert!(empty.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_area() {
        let d = disk_phantom(128, 0.25, 1.0).unwrap();
        let count = d.values().iter().filter(|&&v| v != 0.0).count() as f64;
        let area = std::f64::consts::PI * 32.0 * 32.0;
        assert!((count - area).abs() / area < 0.03);
        let tiny = disk_phantom(17, 0.01, 1.0).unwrap();
        assert!(tiny.values().iter().filter(|&&v| v != 0.0).count() <= 1);
        assert!(disk_phantom(16, 0.2, 0.0).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(disk_phantom(16, 0.5, 1.0).is_err());
    }

    #[test]
    fn noise_contract() {
        let p = Sinogram::new(2, 3, vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.0]).unwrap();
        assert_eq!(add_gaussian_noise(&p, 0.0, 1).unwrap(), p);
        assert_eq!(add_gaussian_noise(&p, 0.6, 9).unwrap(), add_gaussian_noise(&p, 0.6, 9).unwrap());
        assert!(add_gaussian_noise(&Sinogram::zeros(2, 3), 0.6, 1).is_err());
    }

    #[test]
    fn stride_arithmetic() {
        assert_eq!(kept_detectors(8, 4), vec![0, 2, 4, 6]);
        assert_eq!(kept_detectors(256, 32)[1], 8);
    }
}
