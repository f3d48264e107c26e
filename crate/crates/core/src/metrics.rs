//! Reconstruction quality measures and line profiles.

use serde::Serialize;

use crate::error::{ensure_len, Error, Result};
use crate::geometry::ImageGrid2D;

/// Mean absolute distance `(1/N) sum |a - b|`.
pub fn mad(u_orig: &[f64], u_star: &[f64]) -> Result<f64> {
    ensure_len(u_orig.len(), u_star.len())?;
    if u_orig.is_empty() {
        return Err(Error::InvalidArgument("MAD of empty images".into()));
    }
    let s: f64 = u_orig.iter().zip(u_star).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / u_orig.len() as f64)
}

/// [`mad`] on two images of equal shape.
pub fn mad_images(a: &ImageGrid2D, b: &ImageGrid2D) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { expected: (a.nx(), a.ny()), actual: (b.nx(), b.ny()) });
    }
    mad(a.values(), b.values())
}

/// Direction of a 1D cut through an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Fixed row `j`, running over x.
    Row,
    /// Fixed column `i`, running over y.
    Column,
}

/// Pixel values along a row or column with their physical coordinates (mm).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    pub position_mm: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn profile_slice(u: &ImageGrid2D, axis: Axis, index: usize, normalize: bool) -> Result<Profile> {
    let spec = u.spec();
    let (len, limit) = match axis {
        Axis::Row => (spec.nx, spec.ny),
        Axis::Column => (spec.ny, spec.nx),
    };
    if index >= limit {
        return Err(Error::InvalidArgument(format!("slice index {index} out of range 0..{limit}")));
    }
    let mut position_mm = Vec::with_capacity(len);
    let mut values = Vec::with_capacity(len);
    for k in 0..len {
        let (i, j) = match axis {
            Axis::Row => (k, index),
            Axis::Column => (index, k),
        };
        let c = spec.pixel_center(i, j);
        position_mm.push(match axis {
            Axis::Row => c[0],
            Axis::Column => c[1],
        });
        values.push(u.get(i, j));
    }
    if normalize {
        let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m <= 0.0 {
            return Err(Error::InvalidArgument(format!("cannot normalize a slice with maximum {m}")));
        }
        values.iter_mut().for_each(|v| *v /= m);
    }
    Ok(Profile { position_mm, values })
}

/// `max - min` of the profile values whose coordinate lies in `[lo, hi]` mm.
pub fn peak_to_peak(profile: &Profile, window_mm: Option<(f64, f64)>) -> Result<f64> {
    let (lo, hi) = window_mm.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let inside: Vec<f64> = profile
        .position_mm
        .iter()
        .zip(&profile.values)
        .filter(|(x, _)| **x >= lo && **x <= hi)
        .map(|(_, v)| *v)
        .collect();
    if inside.is_empty() {
        return Err(Error::InvalidArgument(format!("no samples in window [{lo}, {hi}] mm")));
    }
    let max = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = inside.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// One evaluated reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScore {
    pub label: String,
    pub mad: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_to_peak: Option<f64>,
}

/// Scores plus optional slices, in input order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub methods: Vec<MethodScore>,
    #[serde(skip)]
    pub slices: Vec<(String, Profile)>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// Slice table: `position_mm` then one column per method.
    pub fn slices_csv(&self) -> String {
        let mut out = String::from("position_mm");
        for (label, _) in &self.slices {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        if let Some((_, first)) = self.slices.first() {
            for k in 0..first.position_mm.len() {
                out.push_str(&format!("{}", first.position_mm[k]));
                for (_, p) in &self.slices {
                    out.push_str(&format!(",{}", p.values[k]));
                }
                out.push('\n');
            }
        }
        out
    }
}
