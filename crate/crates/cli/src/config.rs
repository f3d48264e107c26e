//! Run configuration: one JSON document plus dotted-path overrides.

use std::path::Path;

use anyhow::bail;
use oatomo::phantom::{PhantomKind, PhantomSpec};
use oatomo::solvers::SolverConfig;
use oatomo::{DetectionGeometry, GridSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub pixel_mm: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { nx: 256, ny: 256, pixel_mm: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub radius_mm: f64,
    pub arc_deg: f64,
    pub n_detectors: usize,
    pub sound_speed_mm_per_us: f64,
    pub arc_step_frac: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            radius_mm: 40.0,
            arc_deg: 270.0,
            n_detectors: 256,
            sound_speed_mm_per_us: 1.5,
            arc_step_frac: oatomo::forward::DEFAULT_ARC_STEP_FRAC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeConfig {
    pub rel_std: f64,
    pub seed: u64,
    pub n_keep: Option<usize>,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig { rel_std: 0.6, seed: 0, n_keep: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsqrConfig {
    pub iters: usize,
    pub atol: f64,
}

impl Default for LsqrConfig {
    fn default() -> Self {
        LsqrConfig { iters: 100, atol: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TikhonovConfig {
    pub lambda: f64,
    pub iters: usize,
}

impl Default for TikhonovConfig {
    fn default() -> Self {
        TikhonovConfig { lambda: 0.01, iters: 100 }
    }
}

pub const METHODS: [&str; 5] = ["lsqr", "tikhonov", "tvl1", "a2tv", "tv"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    /// One of `lsqr`, `tikhonov`, `tvl1`, `a2tv`, `tv` (A²TV with `A = I`).
    pub name: String,
    pub lsqr: LsqrConfig,
    pub tikhonov: TikhonovConfig,
    pub solver: SolverConfig,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            name: "a2tv".into(),
            lsqr: LsqrConfig::default(),
            tikhonov: TikhonovConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// Two-axis parameter grid; parameter names are dotted config paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub param1: String,
    pub values1: Vec<Value>,
    pub param2: String,
    pub values2: Vec<Value>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            param1: "method.solver.lambda".into(),
            values1: vec![1e-4.into(), 0.01.into(), 0.5.into()],
            param2: "method.solver.k".into(),
            values2: vec![0.01.into(), 0.3.into(), 1.0.into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub geometry: GeometryConfig,
    pub phantom: PhantomSpec,
    pub degrade: DegradeConfig,
    pub method: MethodConfig,
    pub scan: ScanConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig::default(),
            geometry: GeometryConfig::default(),
            phantom: PhantomSpec {
                size: 256,
                seed: 0,
                kind: PhantomKind::Vessels { count: 12, width_px: (1.5, 3.5), curvature: 0.6 },
            },
            degrade: DegradeConfig::default(),
            method: MethodConfig::default(),
            scan: ScanConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the optional file, then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, UsageError> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
            merge(&mut doc, file);
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| UsageError(format!("override {o:?} is not of the form key=value")))?;
            set_path(&mut doc, key, parse_scalar(raw)).map_err(|e| UsageError(e.to_string()))?;
        }
        Self::from_value(doc)
    }

    pub fn from_value(doc: Value) -> Result<Self, UsageError> {
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| UsageError(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let u = |e: oatomo::Error| UsageError(format!("invalid config: {e}"));
        self.grid_spec().map_err(u)?;
        self.phantom.validate().map_err(u)?;
        if !METHODS.contains(&self.method.name.as_str()) {
            return Err(UsageError(format!("unknown method {:?} (expected one of {})", self.method.name, METHODS.join(", "))));
        }
        self.method.solver.validate().map_err(u)?;
        if self.scan.values1.is_empty() || self.scan.values2.is_empty() {
            return Err(UsageError("scan value lists must be non-empty".into()));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> oatomo::Result<GridSpec> {
        GridSpec::new(self.grid.nx, self.grid.ny, self.grid.pixel_mm)
    }

    /// Full-acquisition geometry with the default time axis for the grid.
    pub fn geometry(&self) -> oatomo::Result<DetectionGeometry> {
        let g = &self.geometry;
        DetectionGeometry::for_grid(&self.grid_spec()?, g.radius_mm, g.arc_deg, g.n_detectors, g.sound_speed_mm_per_us)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// JSON literal if it parses as one, otherwise a bare string.
pub fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c` in a JSON tree, creating intermediate objects.
pub fn set_path(doc: &mut Value, key: &str, value: Value) -> anyhow::Result<()> {
    if key.is_empty() {
        bail!("empty override key");
    }
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(o) => o,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().unwrap()
            }
            _ => bail!("cannot set {key:?}: {:?} is not an object", parts[..i].join(".")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!()
}
