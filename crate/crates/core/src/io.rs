//! On-disk formats: raw f64 payloads with JSON sidecars, 16-bit PGM, montages.
//!
//! A payload `name.img` holds little-endian f64 values in row-major order; the
//! sidecar `name.img.json` carries the shape, dtype tag, physical metadata and
//! provenance. Every writer goes through a temporary file and a rename.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DetectionGeometry, GridSpec, ImageGrid2D, Sinogram};
use crate::tensor::TensorField2D;

pub const SCHEMA_VERSION: u32 = 1;
pub const DTYPE_F64LE: &str = "f64le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Image,
    Sinogram,
    Tensor,
}

/// Physical description of a payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PhysicalMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<DetectionGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarMeta {
    pub schema_version: u32,
    pub kind: PayloadKind,
    /// Slowest-varying dimension first: `[ny, nx]`, `[n_detectors, n_samples]`, `[ny, nx, 3]`.
    pub shape: Vec<usize>,
    pub dtype: String,
    pub metadata: PhysicalMeta,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl SidecarMeta {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Sidecar path for a payload: the payload name with `.json` appended.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `bytes` to `path` atomically (temporary sibling, then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode_f64(values: &[f64]) -> Result<Vec<u8>> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut out = Vec::with_capacity(8 * values.len());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn write_payload(path: &Path, values: &[f64], meta: &SidecarMeta) -> Result<()> {
    let bytes = encode_f64(values)?;
    let mut json = serde_json::to_string_pretty(meta).map_err(|e| Error::json(path, e))?;
    json.push('\n');
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar_path(path), json.as_bytes())
}

/// Reads and validates a payload/sidecar pair.
pub fn read_payload(path: &Path) -> Result<(Vec<f64>, SidecarMeta)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: SidecarMeta = serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
    let fmt = |msg: String| Error::Format { path: side.clone(), msg };
    if meta.schema_version != SCHEMA_VERSION {
        return Err(fmt(format!("unknown schema_version {}, expected {SCHEMA_VERSION}", meta.schema_version)));
    }
    if meta.dtype != DTYPE_F64LE {
        return Err(fmt(format!("unsupported dtype {:?}, expected {DTYPE_F64LE:?}", meta.dtype)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = 8 * meta.element_count() as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { path: path.to_path_buf(), expected, actual: bytes.len() as u64 });
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok((values, meta))
}

pub fn write_image(path: &Path, img: &ImageGrid2D, provenance: &serde_json::Value) -> Result<()> {
    let meta = SidecarMeta {
        schema_version: SCHEMA_VERSION,
        kind: PayloadKind::Image,
        shape: vec![img.ny(), img.nx()],
        dtype: DTYPE_F64LE.into(),
        metadata: PhysicalMeta { pixel_mm: Some(img.pixel_mm()), geometry: None },
        provenance: provenance.clone(),
    };
    write_payload(path, img.values(), &meta)
}

pub fn read_image(path: &Path) -> Result<(ImageGrid2D, SidecarMeta)> {
    let (values, meta) = read_payload(path)?;
    let fmt = |msg: &str| Error::Format { path: sidecar_path(path), msg: msg.into() };
    if meta.kind != PayloadKind::Image || meta.shape.len() != 2 {
        return Err(fmt("not a 2D image sidecar"));
    }
    let pixel_mm = meta.metadata.pixel_mm.ok_or_else(|| fmt("image sidecar lacks pixel_mm"))?;
    let grid = GridSpec::new(meta.shape[1], meta.shape[0], pixel_mm)?;
    Ok((ImageGrid2D::new(grid, values)?, meta))
}

pub fn write_sinogram(
    path: &Path,
    p: &Sinogram,
    geom: &DetectionGeometry,
    provenance: &serde_json::Value,
) -> Result<()> {
    geom.validate()?;
    if p.n_detectors != geom.n_detectors || p.n_samples != geom.n_samples {
        return Err(Error::ShapeMismatch {
            expected: (geom.n_detectors, geom.n_samples),
            actual: (p.n_detectors, p.n_samples),
        });
    }
    let meta = SidecarMeta {
        schema_version: SCHEMA_VERSION,
        kind: PayloadKind::Sinogram,
        shape: vec![p.n_detectors, p.n_samples],
        dtype: DTYPE_F64LE.into(),
        metadata: PhysicalMeta { pixel_mm: None, geometry: Some(geom.clone()) },
        provenance: provenance.clone(),
    };
    write_payload(path, p.values(), &meta)
}

pub fn read_sinogram(path: &Path) -> Result<(Sinogram, DetectionGeometry, SidecarMeta)> {
    let (values, meta) = read_payload(path)?;
    let fmt = |msg: String| Error::Format { path: sidecar_path(path), msg };
    if meta.kind != PayloadKind::Sinogram || meta.shape.len() != 2 {
        return Err(fmt("not a sinogram sidecar".into()));
    }
    let geom = meta.metadata.geometry.clone().ok_or_else(|| fmt("sinogram sidecar lacks geometry".into()))?;
    geom.validate()?;
    if geom.n_detectors != meta.shape[0] || geom.n_samples != meta.shape[1] {
        return Err(fmt(format!(
            "geometry ({} x {}) disagrees with shape {:?}",
            geom.n_detectors, geom.n_samples, meta.shape
        )));
    }
    Ok((Sinogram::new(meta.shape[0], meta.shape[1], values)?, geom, meta))
}

/// Raw export of a tensor field as interleaved `(a11, a12, a22)` per pixel.
pub fn write_tensor_field(path: &Path, a: &TensorField2D, provenance: &serde_json::Value) -> Result<()> {
    let s = a.shape();
    let meta = SidecarMeta {
        schema_version: SCHEMA_VERSION,
        kind: PayloadKind::Tensor,
        shape: vec![s.ny, s.nx, 3],
        dtype: DTYPE_F64LE.into(),
        metadata: PhysicalMeta::default(),
        provenance: provenance.clone(),
    };
    write_payload(path, &a.interleaved(), &meta)
}

/// Grey-level mapping for PGM export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Window {
    Fixed { lo: f64, hi: f64 },
    /// Percentiles in `[0, 100]`.
    Percentile { lo: f64, hi: f64 },
}

impl Default for Window {
    fn default() -> Self {
        Window::Percentile { lo: 1.0, hi: 99.0 }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (a, b) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[a] + (sorted[b] - sorted[a]) * (pos - a as f64)
}

impl Window {
    /// Concrete `(lo, hi)` for the given values.
    pub fn resolve(&self, values: &[f64]) -> Result<(f64, f64)> {
        match *self {
            Window::Fixed { lo, hi } => {
                if !(hi > lo) {
                    return Err(Error::InvalidArgument(format!("window needs hi > lo, got ({lo}, {hi})")));
                }
                Ok((lo, hi))
            }
            Window::Percentile { lo, hi } => {
                if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || hi <= lo {
                    return Err(Error::InvalidArgument(format!("bad percentile window ({lo}, {hi})")));
                }
                if values.is_empty() {
                    return Err(Error::InvalidArgument("empty image".into()));
                }
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let (a, b) = (percentile(&sorted, lo), percentile(&sorted, hi));
                Ok(if b > a { (a, b) } else { (a - 1.0, a + 1.0) })
            }
        }
    }
}

/// `clamp((v - lo) / (hi - lo))` scaled to 16 bits.
pub fn to_gray16(v: f64, lo: f64, hi: f64) -> u16 {
    (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn pgm_bytes(width: usize, height: usize, pixels: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    out
}

/// 16-bit binary PGM of one image (row 0 written first).
pub fn export_pgm(img: &ImageGrid2D, path: &Path, window: Window) -> Result<(f64, f64)> {
    let (lo, hi) = window.resolve(img.values())?;
    let pixels: Vec<u16> = img.values().iter().map(|&v| to_gray16(v, lo, hi)).collect();
    write_atomic(path, &pgm_bytes(img.nx(), img.ny(), &pixels))?;
    Ok((lo, hi))
}

pub const MONTAGE_GAP: usize = 2;

/// Tiles `rows x cols` images (row-major) with 2-px white separators under a
/// common window, and writes a JSON legend next to the PGM.
pub fn export_montage(
    tiles: &[ImageGrid2D],
    rows: usize,
    cols: usize,
    legend: &[serde_json::Value],
    path: &Path,
    window: Window,
) -> Result<(usize, usize)> {
    if tiles.is_empty() {
        return Err(Error::InvalidArgument("montage needs at least one tile".into()));
    }
    if rows * cols != tiles.len() {
        return Err(Error::InvalidArgument(format!("{} tiles do not fill a {rows}x{cols} montage", tiles.len())));
    }
    let (tw, th) = (tiles[0].nx(), tiles[0].ny());
    if let Some(k) = tiles.iter().position(|t| t.nx() != tw || t.ny() != th) {
        return Err(Error::ShapeMismatch { expected: (tw, th), actual: (tiles[k].nx(), tiles[k].ny()) });
    }
    let all: Vec<f64> = tiles.iter().flat_map(|t| t.values().iter().copied()).collect();
    let (lo, hi) = window.resolve(&all)?;
    let width = cols * tw + (cols - 1) * MONTAGE_GAP;
    let height = rows * th + (rows - 1) * MONTAGE_GAP;
    let mut pixels = vec![u16::MAX; width * height];
    for (k, t) in tiles.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        let (x0, y0) = (c * (tw + MONTAGE_GAP), r * (th + MONTAGE_GAP));
        for j in 0..th {
            for i in 0..tw {
                pixels[(y0 + j) * width + x0 + i] = to_gray16(t.get(i, j), lo, hi);
            }
        }
    }
    write_atomic(path, &pgm_bytes(width, height, &pixels))?;
    let doc = serde_json::json!({
        "rows": rows,
        "cols": cols,
        "tile_width": tw,
        "tile_height": th,
        "separator_px": MONTAGE_GAP,
        "window": [lo, hi],
        "tiles": legend,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("legend is serializable");
    text.push('\n');
    write_atomic(&sidecar_path(path), text.as_bytes())?;
    Ok((width, height))
}

/// Parses a 16-bit P5 PGM as written by this module.
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |m: &str| Error::Format { path: path.to_path_buf(), msg: m.into() };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(fmt("expected a 16-bit P5 PGM"));
    }
    let w: usize = fields[1].parse().map_err(|_| fmt("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| fmt("bad height"))?;
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() != 2 * w * h {
        return Err(Error::SizeMismatch { path: path.to_path_buf(), expected: (2 * w * h) as u64, actual: data.len() as u64 });
    }
    Ok((w, h, data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_mapping() {
        assert_eq!(to_gray16(0.5, 0.0, 1.0), 32768);
        assert_eq!(to_gray16(-3.0, 0.0, 1.0), 0);
        assert_eq!(to_gray16(7.0, 0.0, 1.0), 65535);
        assert!(Window::Fixed { lo: 1.0, hi: 1.0 }.resolve(&[]).is_err());
    }

    #[test]
    fn sidecar_naming() {
        assert_eq!(sidecar_path(Path::new("a/b.img")), PathBuf::from("a/b.img.json"));
    }
}
