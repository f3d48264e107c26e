//! Image grids, circular detection geometry and sinogram containers.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::operators::Shape;

/// Default speed of sound (water) in mm/µs.
pub const DEFAULT_SOUND_SPEED: f64 = 1.5;

/// Pixel layout of a square-pixel image centred on the detection origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub pixel_mm: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, pixel_mm: f64) -> Result<Self> {
        let g = GridSpec { nx, ny, pixel_mm };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidGrid(format!("need nx, ny >= 2, got {}x{}", self.nx, self.ny)));
        }
        if !(self.pixel_mm > 0.0 && self.pixel_mm.is_finite()) {
            return Err(Error::InvalidGrid(format!("pixel size must be positive, got {}", self.pixel_mm)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.nx, self.ny)
    }

    /// Physical centre of pixel `(i, j)` (column, row) in mm.
    pub fn pixel_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            (i as f64 - (self.nx as f64 - 1.0) / 2.0) * self.pixel_mm,
            (j as f64 - (self.ny as f64 - 1.0) / 2.0) * self.pixel_mm,
        ]
    }

    /// Half the diagonal of the pixel-edge bounding box.
    pub fn half_diagonal_mm(&self) -> f64 {
        0.5 * self.pixel_mm * ((self.nx * self.nx + self.ny * self.ny) as f64).sqrt()
    }
}

/// Row-major scalar image (`index = j * nx + i`, `i` the column).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid2D {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ImageGrid2D {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        ensure_len(spec.len(), values.len())?;
        Ok(ImageGrid2D { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Result<Self> {
        Self::new(spec, vec![0.0; spec.len()])
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn shape(&self) -> Shape {
        self.spec.shape()
    }

    pub fn nx(&self) -> usize {
        self.spec.nx
    }

    pub fn ny(&self) -> usize {
        self.spec.ny
    }

    pub fn pixel_mm(&self) -> f64 {
        self.spec.pixel_mm
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.spec.nx + i]
    }
}

/// Start time, sampling interval and length of the detector time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    pub t0_us: f64,
    pub dt_us: f64,
    pub n_samples: usize,
}

/// Detectors kept from a denser parent arc by index striding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSubset {
    pub parent_count: usize,
    pub stride: usize,
}

fn default_sound_speed() -> f64 {
    DEFAULT_SOUND_SPEED
}

fn default_grueneisen() -> f64 {
    1.0
}

/// Detectors on a circular arc around the image, plus the time sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionGeometry {
    pub radius_mm: f64,
    pub arc_deg: f64,
    pub n_detectors: usize,
    #[serde(default = "default_sound_speed")]
    pub sound_speed_mm_per_us: f64,
    #[serde(default = "default_grueneisen")]
    pub grueneisen: f64,
    pub t0_us: f64,
    pub dt_us: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<DetectorSubset>,
}

impl DetectionGeometry {
    /// Geometry with the time axis derived from `grid` via [`default_time_axis`].
    pub fn for_grid(
        grid: &GridSpec,
        radius_mm: f64,
        arc_deg: f64,
        n_detectors: usize,
        sound_speed_mm_per_us: f64,
    ) -> Result<Self> {
        let axis = default_time_axis(radius_mm, sound_speed_mm_per_us, grid)?;
        let geom = DetectionGeometry {
            radius_mm,
            arc_deg,
            n_detectors,
            sound_speed_mm_per_us,
            grueneisen: 1.0,
            t0_us: axis.t0_us,
            dt_us: axis.dt_us,
            n_samples: axis.n_samples,
            subset: None,
        };
        geom.validate_for(grid)?;
        Ok(geom)
    }

    /// Checks the grid-independent invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        if !(self.radius_mm > 0.0 && self.radius_mm.is_finite()) {
            return bad(format!("radius must be positive, got {}", self.radius_mm));
        }
        if !(self.arc_deg > 0.0 && self.arc_deg <= 360.0) {
            return bad(format!("arc must lie in (0, 360] degrees, got {}", self.arc_deg));
        }
        if self.n_detectors == 0 {
            return bad("need at least one detector".into());
        }
        if !(self.sound_speed_mm_per_us > 0.0 && self.sound_speed_mm_per_us.is_finite()) {
            return bad(format!("sound speed must be positive, got {}", self.sound_speed_mm_per_us));
        }
        if !self.grueneisen.is_finite() || self.grueneisen == 0.0 {
            return bad(format!("invalid Grueneisen parameter {}", self.grueneisen));
        }
        if !(self.dt_us > 0.0 && self.dt_us.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt_us));
        }
        if !self.t0_us.is_finite() {
            return bad("t0 must be finite".into());
        }
        if self.n_samples < 3 {
            return bad(format!("need at least 3 time samples, got {}", self.n_samples));
        }
        if let Some(sub) = self.subset {
            if sub.stride == 0 || sub.parent_count != sub.stride * self.n_detectors {
                return bad(format!(
                    "subset stride {} does not map {} detectors onto {}",
                    sub.stride, self.n_detectors, sub.parent_count
                ));
            }
        }
        Ok(())
    }

    /// Checks all invariants, including those relative to the image grid.
    pub fn validate_for(&self, grid: &GridSpec) -> Result<()> {
        self.validate()?;
        grid.validate()?;
        let d = grid.half_diagonal_mm();
        if self.radius_mm <= d {
            return Err(Error::InvalidGeometry(format!(
                "detector radius {} mm must exceed the grid half-diagonal {:.4} mm",
                self.radius_mm, d
            )));
        }
        // pixel-centre bounding box
        let hx = 0.5 * (grid.nx as f64 - 1.0) * grid.pixel_mm;
        let hy = 0.5 * (grid.ny as f64 - 1.0) * grid.pixel_mm;
        let r_lo = self.t0_us * self.sound_speed_mm_per_us;
        let r_hi = self.t_end_us() * self.sound_speed_mm_per_us;
        for p in detector_positions(self) {
            let dx = (p[0].abs() - hx).max(0.0);
            let dy = (p[1].abs() - hy).max(0.0);
            let near = dx.hypot(dy);
            let far = (p[0].abs() + hx).hypot(p[1].abs() + hy);
            if near < r_lo || far > r_hi {
                return Err(Error::InvalidGeometry(format!(
                    "time window [{:.4}, {:.4}] mm does not cover pixel distances [{:.4}, {:.4}] mm",
                    r_lo, r_hi, near, far
                )));
            }
        }
        Ok(())
    }

    pub fn t_end_us(&self) -> f64 {
        self.t0_us + (self.n_samples as f64 - 1.0) * self.dt_us
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0_us + k as f64 * self.dt_us
    }

    pub fn n_rows(&self) -> usize {
        self.n_detectors * self.n_samples
    }

    pub fn time_axis(&self) -> TimeAxis {
        TimeAxis { t0_us: self.t0_us, dt_us: self.dt_us, n_samples: self.n_samples }
    }
}

/// Angles (degrees) of `n` detectors spread over `arc_deg`, endpoints included.
fn arc_angles_deg(arc_deg: f64, n: usize) -> Vec<f64> {
    let start = 90.0 + (360.0 - arc_deg) / 2.0;
    if n == 1 {
        return vec![start + arc_deg / 2.0];
    }
    // a closed ring would put the last detector on top of the first
    let divisor = if arc_deg >= 360.0 { n as f64 } else { (n - 1) as f64 };
    (0..n).map(|i| start + i as f64 * arc_deg / divisor).collect()
}

/// Detector positions in mm, ordered by increasing angle.
pub fn detector_positions(geom: &DetectionGeometry) -> Vec<[f64; 2]> {
    let angles = match geom.subset {
        None => arc_angles_deg(geom.arc_deg, geom.n_detectors),
        Some(sub) => {
            let parent = arc_angles_deg(geom.arc_deg, sub.parent_count);
            parent.into_iter().step_by(sub.stride).take(geom.n_detectors).collect()
        }
    };
    angles
        .into_iter()
        .map(|a| {
            let t = a.to_radians();
            [geom.radius_mm * t.cos(), geom.radius_mm * t.sin()]
        })
        .collect()
}

/// Time axis spanning every pixel-to-detector distance, sampled at half a
/// pixel of acoustic travel.
pub fn default_time_axis(radius_mm: f64, sound_speed_mm_per_us: f64, grid: &GridSpec) -> Result<TimeAxis> {
    grid.validate()?;
    if !(sound_speed_mm_per_us > 0.0) {
        return Err(Error::InvalidGeometry(format!("sound speed must be positive, got {sound_speed_mm_per_us}")));
    }
    let d = grid.half_diagonal_mm();
    if d >= radius_mm {
        return Err(Error::InvalidGeometry(format!(
            "detector radius {radius_mm} mm lies inside the image support (half-diagonal {d:.4} mm)"
        )));
    }
    let c = sound_speed_mm_per_us;
    let t0 = (radius_mm - d) / c;
    let t_end = (radius_mm + d) / c;
    let dt = grid.pixel_mm / (2.0 * c);
    let n_samples = ((t_end - t0) / dt).ceil() as usize + 1;
    Ok(TimeAxis { t0_us: t0, dt_us: dt, n_samples })
}

/// Detector-major pressure samples: row `d` holds the full signal of detector `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub n_detectors: usize,
    pub n_samples: usize,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(n_detectors: usize, n_samples: usize, values: Vec<f64>) -> Result<Self> {
        ensure_len(n_detectors * n_samples, values.len())?;
        Ok(Sinogram { n_detectors, n_samples, values })
    }

    pub fn zeros(n_detectors: usize, n_samples: usize) -> Self {
        Sinogram { n_detectors, n_samples, values: vec![0.0; n_detectors * n_samples] }
    }

    pub fn for_geometry(geom: &DetectionGeometry, values: Vec<f64>) -> Result<Self> {
        Self::new(geom.n_detectors, geom.n_samples, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn detector(&self, d: usize) -> &[f64] {
        &self.values[d * self.n_samples..(d + 1) * self.n_samples]
    }

    pub fn get(&self, d: usize, t: usize) -> f64 {
        self.values[d * self.n_samples + t]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
