//! Subcommand implementations.

use std::path::Path;

use anyhow::{bail, Context as _};
use oatomo::io::{self, Window};
use oatomo::metrics::{self, Axis, EvalReport, MethodScore};
use oatomo::phantom;
use oatomo::solvers::{self, SolverConfig};
use oatomo::{normalize_matrix, DetectionGeometry, Exec, GridSpec, ImageGrid2D, Sinogram, SparseModelMatrix, TensorField2D};
use serde_json::{json, Value};

use crate::cache::{self, sha256_hex};
use crate::config::{self, RunConfig};
use crate::UsageError;

pub struct Context {
    pub cfg: RunConfig,
}

fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn config_digest(cfg: &RunConfig) -> String {
    sha256_hex(cfg.to_value().to_string().as_bytes())
}

/// Everything needed to repeat the step: the resolved config and the input hashes.
fn provenance(command: &str, cfg: &RunConfig, inputs: &[(&str, &Path)]) -> anyhow::Result<Value> {
    let mut ins = serde_json::Map::new();
    for (name, path) in inputs {
        ins.insert((*name).to_string(), json!({ "sha256": file_digest(path)? }));
    }
    Ok(json!({
        "tool": "oatomo",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_digest": config_digest(cfg),
        "config": cfg.to_value(),
        "seeds": { "phantom": cfg.phantom.seed, "noise": cfg.degrade.seed },
        "inputs": Value::Object(ins),
    }))
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn phantom(ctx: &Context, out: &Path, pgm: Option<&Path>) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    if cfg.phantom.size != cfg.grid.nx || cfg.phantom.size != cfg.grid.ny {
        return Err(UsageError(format!(
            "phantom.size {} does not match grid {}x{}",
            cfg.phantom.size, cfg.grid.nx, cfg.grid.ny
        ))
        .into());
    }
    let img = phantom::generate(&cfg.phantom, cfg.grid.pixel_mm)?;
    ensure_parent(out)?;
    io::write_image(out, &img, &provenance("phantom", cfg, &[])?)?;
    if let Some(pgm) = pgm {
        ensure_parent(pgm)?;
        io::export_pgm(&img, pgm, Window::default())?;
    }
    Ok(())
}

pub fn forward(ctx: &Context, image: &Path, out: &Path, use_cache: bool) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let (img, _) = io::read_image(image)?;
    let grid = cfg.grid_spec()?;
    if img.spec() != grid {
        bail!(
            "image grid {}x{} @ {} mm does not match configured grid {}x{} @ {} mm",
            img.nx(),
            img.ny(),
            img.pixel_mm(),
            grid.nx,
            grid.ny,
            grid.pixel_mm
        );
    }
    let geom = cfg.geometry()?;
    let m = cache::model_matrix(&grid, &geom, cfg.geometry.arc_step_frac, use_cache)?;
    let p = Sinogram::for_geometry(&geom, m.apply_with(Exec::Parallel, img.values())?)?;
    ensure_parent(out)?;
    io::write_sinogram(out, &p, &geom, &provenance("forward", cfg, &[("image", image)])?)?;
    Ok(())
}

pub fn degrade(ctx: &Context, sinogram: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let (p, geom, _) = io::read_sinogram(sinogram)?;
    let d = &cfg.degrade;
    let noisy = phantom::add_gaussian_noise(&p, d.rel_std, d.seed)?;
    let (p, geom) = match d.n_keep {
        Some(n) => phantom::subsample_projections(&noisy, &geom, n)?,
        None => (noisy, geom),
    };
    ensure_parent(out)?;
    io::write_sinogram(out, &p, &geom, &provenance("degrade", cfg, &[("sinogram", sinogram)])?)?;
    Ok(())
}

/// Raw and normalized model matrices for one acquisition.
pub struct Operators {
    pub grid: GridSpec,
    pub raw: SparseModelMatrix,
    pub normalized: Option<SparseModelMatrix>,
}

impl Operators {
    pub fn load(cfg: &RunConfig, geom: &DetectionGeometry, use_cache: bool) -> anyhow::Result<Self> {
        let grid = cfg.grid_spec()?;
        check_geometry(cfg, geom)?;
        let full = cfg.geometry()?;
        let m = cache::model_matrix(&grid, &full, cfg.geometry.arc_step_frac, use_cache)?;
        let raw = match geom.subset {
            None => m,
            Some(s) => {
                let rows: Vec<usize> = (0..geom.n_detectors)
                    .flat_map(|d| {
                        let parent = d * s.stride;
                        (parent * full.n_samples..(parent + 1) * full.n_samples).collect::<Vec<_>>()
                    })
                    .collect();
                m.select_rows(&rows)
            }
        };
        Ok(Operators { grid, raw, normalized: None })
    }

    fn ensure_normalized(&mut self) -> anyhow::Result<()> {
        if self.normalized.is_none() {
            self.normalized = Some(normalize_matrix(&self.raw)?);
        }
        Ok(())
    }
}

fn check_geometry(cfg: &RunConfig, geom: &DetectionGeometry) -> anyhow::Result<()> {
    let full = cfg.geometry()?;
    let parent = geom.subset.map_or(geom.n_detectors, |s| s.parent_count);
    let same = geom.radius_mm == full.radius_mm
        && geom.arc_deg == full.arc_deg
        && geom.sound_speed_mm_per_us == full.sound_speed_mm_per_us
        && geom.t0_us == full.t0_us
        && geom.dt_us == full.dt_us
        && geom.n_samples == full.n_samples
        && parent == full.n_detectors;
    if !same {
        bail!("sinogram geometry does not match the configured grid and geometry");
    }
    Ok(())
}

pub struct Reconstruction {
    pub image: ImageGrid2D,
    pub trace_csv: String,
    pub tensor: Option<TensorField2D>,
}

fn lsqr_trace(residuals: &[f64]) -> String {
    let mut out = String::from("iter,residual_norm\n");
    for (k, r) in residuals.iter().enumerate() {
        out.push_str(&format!("{k},{r:e}\n"));
    }
    out
}

/// Runs the configured method. Primal-dual methods work on the normalized
/// operator with the data rescaled alike, so images stay in absorption units.
pub fn run_method(cfg: &RunConfig, ops: &Operators, p: &Sinogram, exec: Exec) -> anyhow::Result<Reconstruction> {
    let grid = ops.grid;
    let method = &cfg.method;
    let mut solver: SolverConfig = method.solver.clone();
    solver.exec = exec;
    let (u, trace_csv, tensor) = match method.name.as_str() {
        "lsqr" => {
            let out = solvers::lsqr_with(exec, &ops.raw, p.values(), method.lsqr.iters, method.lsqr.atol)?;
            let csv = lsqr_trace(&out.residual_norms);
            (out.u, csv, None)
        }
        "tikhonov" => {
            let t = &method.tikhonov;
            (solvers::tikhonov_with(exec, &ops.raw, p.values(), t.lambda, t.iters)?, String::new(), None)
        }
        name @ ("a2tv" | "tv" | "tvl1") => {
            let m = ops.normalized.as_ref().expect("normalized operator prepared");
            let f = m.norm_factor();
            let pn: Vec<f64> = p.values().iter().map(|v| v / f).collect();
            if name == "tv" {
                solver.freeze_tensor = true;
            }
            let out = if name == "tvl1" {
                solvers::chambolle_pock_tvl1(m, &pn, grid.shape(), &solver)?
            } else {
                solvers::chambolle_pock_a2tv(m, &pn, grid.shape(), &solver)?
            };
            let tensor = (name == "a2tv").then_some(out.tensor);
            (out.u, out.trace.to_csv(), tensor)
        }
        other => return Err(UsageError(format!("unknown method {other:?}")).into()),
    };
    Ok(Reconstruction { image: ImageGrid2D::new(grid, u)?, trace_csv, tensor })
}

pub fn reconstruct(
    ctx: &Context,
    sinogram: &Path,
    out: &Path,
    trace: Option<&Path>,
    tensor: Option<&Path>,
    pgm: Option<&Path>,
    use_cache: bool,
) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let (p, geom, _) = io::read_sinogram(sinogram)?;
    let mut ops = Operators::load(cfg, &geom, use_cache)?;
    if is_primal_dual(&cfg.method.name) {
        ops.ensure_normalized()?;
    }
    let rec = run_method(cfg, &ops, &p, Exec::Parallel)?;
    let prov = provenance("reconstruct", cfg, &[("sinogram", sinogram)])?;
    ensure_parent(out)?;
    io::write_image(out, &rec.image, &prov)?;
    if let Some(path) = trace {
        ensure_parent(path)?;
        io::write_atomic(path, rec.trace_csv.as_bytes())?;
    }
    if let Some(path) = tensor {
        let Some(a) = &rec.tensor else {
            return Err(UsageError("--tensor is only available for the a2tv method".into()).into());
        };
        ensure_parent(path)?;
        io::write_tensor_field(path, a, &prov)?;
    }
    if let Some(path) = pgm {
        ensure_parent(path)?;
        io::export_pgm(&rec.image, path, Window::default())?;
    }
    Ok(())
}

struct Tile {
    v1: Value,
    v2: Value,
    cfg: RunConfig,
}

fn fmt_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn scan(ctx: &Context, sinogram: &Path, reference: &Path, out_dir: &Path, use_cache: bool) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let sc = &cfg.scan;
    let (p, geom, _) = io::read_sinogram(sinogram)?;
    let (reference_img, _) = io::read_image(reference)?;
    if reference_img.spec() != cfg.grid_spec()? {
        bail!("reference image grid does not match the configured grid");
    }
    let mut tiles = Vec::new();
    for v1 in &sc.values1 {
        for v2 in &sc.values2 {
            let mut doc = cfg.to_value();
            let tile_err = |e: String| UsageError(format!("tile {}={}, {}={}: {e}", sc.param1, fmt_value(v1), sc.param2, fmt_value(v2)));
            config::set_path(&mut doc, &sc.param1, v1.clone()).map_err(|e| tile_err(e.to_string()))?;
            config::set_path(&mut doc, &sc.param2, v2.clone()).map_err(|e| tile_err(e.to_string()))?;
            let tile_cfg = RunConfig::from_value(doc).map_err(|e| tile_err(e.0))?;
            tiles.push(Tile { v1: v1.clone(), v2: v2.clone(), cfg: tile_cfg });
        }
    }
    let mut ops = Operators::load(cfg, &geom, use_cache)?;
    if tiles.iter().any(|t| is_primal_dual(&t.cfg.method.name)) {
        ops.ensure_normalized()?;
    }
    let results = run_tiles(&tiles, &ops, &p);
    let mut images = Vec::with_capacity(tiles.len());
    for (t, r) in tiles.iter().zip(results) {
        let rec = r.with_context(|| format!("tile {}={}, {}={}", sc.param1, fmt_value(&t.v1), sc.param2, fmt_value(&t.v2)))?;
        images.push(rec.image);
    }

    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let cols = sc.values2.len();
    let mut rows_out = Vec::with_capacity(tiles.len());
    let mut legend = Vec::with_capacity(tiles.len());
    for (idx, (t, img)) in tiles.iter().zip(&images).enumerate() {
        let mad = metrics::mad_images(&reference_img, img)?;
        let name = format!("tile_r{}_c{}.img", idx / cols, idx % cols);
        io::write_image(&out_dir.join(&name), img, &provenance("scan", &t.cfg, &[("sinogram", sinogram)])?)?;
        legend.push(json!({
            "row": idx / cols,
            "col": idx % cols,
            sc.param1.clone(): t.v1,
            sc.param2.clone(): t.v2,
            "mad": mad,
            "image": name,
        }));
        rows_out.push((idx, mad));
    }
    io::export_montage(&images, sc.values1.len(), cols, &legend, &out_dir.join("montage.pgm"), Window::default())?;

    rows_out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut csv = format!("{},{},mad\n", sc.param1, sc.param2);
    for &(idx, mad) in &rows_out {
        csv.push_str(&format!("{},{},{mad:e}\n", fmt_value(&tiles[idx].v1), fmt_value(&tiles[idx].v2)));
    }
    io::write_atomic(&out_dir.join("scan.csv"), csv.as_bytes())?;
    let (best, best_mad) = rows_out[0];
    println!(
        "best: {}={} {}={} mad={best_mad:e}",
        sc.param1,
        fmt_value(&tiles[best].v1),
        sc.param2,
        fmt_value(&tiles[best].v2)
    );
    Ok(())
}

#[cfg(feature = "parallel")]
fn run_tiles(tiles: &[Tile], ops: &Operators, p: &Sinogram) -> Vec<anyhow::Result<Reconstruction>> {
    use rayon::prelude::*;
    // tiles run in parallel, each one sequentially inside
    tiles.par_iter().map(|t| run_tile(t, ops, p)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_tiles(tiles: &[Tile], ops: &Operators, p: &Sinogram) -> Vec<anyhow::Result<Reconstruction>> {
    tiles.iter().map(|t| run_tile(t, ops, p)).collect()
}

fn run_tile(t: &Tile, ops: &Operators, p: &Sinogram) -> anyhow::Result<Reconstruction> {
    run_method(&t.cfg, ops, p, Exec::Sequential)
}

fn is_primal_dual(name: &str) -> bool {
    matches!(name, "a2tv" | "tv" | "tvl1")
}

pub fn parse_window(raw: &str) -> anyhow::Result<(f64, f64)> {
    let bad = || UsageError(format!("--window expects lo,hi in mm, got {raw:?}"));
    let (lo, hi) = raw.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(bad().into());
    }
    Ok((lo, hi))
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    _ctx: &Context,
    reference: &Path,
    recons: &[std::path::PathBuf],
    labels: &[String],
    slice: Option<(Axis, usize)>,
    normalize: bool,
    window: Option<(f64, f64)>,
    out: &Path,
    slices_csv: Option<&Path>,
) -> anyhow::Result<()> {
    if !labels.is_empty() && labels.len() != recons.len() {
        return Err(UsageError(format!("{} labels given for {} reconstructions", labels.len(), recons.len())).into());
    }
    if window.is_some() && slice.is_none() {
        return Err(UsageError("--window needs --slice-axis and --slice-index".into()).into());
    }
    if slices_csv.is_some() && slice.is_none() {
        return Err(UsageError("--slices-csv needs --slice-axis and --slice-index".into()).into());
    }
    let (ref_img, _) = io::read_image(reference)?;
    let mut report = EvalReport { methods: Vec::new(), slices: Vec::new() };
    if let Some((axis, index)) = slice {
        report.slices.push(("reference".into(), metrics::profile_slice(&ref_img, axis, index, normalize)?));
    }
    for (k, path) in recons.iter().enumerate() {
        let label = labels.get(k).cloned().unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("recon{k}"))
        });
        let (img, _) = io::read_image(path)?;
        let mad = metrics::mad_images(&ref_img, &img).with_context(|| format!("scoring {label}"))?;
        let mut peak_to_peak = None;
        if let Some((axis, index)) = slice {
            let prof = metrics::profile_slice(&img, axis, index, normalize)?;
            if window.is_some() {
                peak_to_peak = Some(metrics::peak_to_peak(&prof, window)?);
            }
            report.slices.push((label.clone(), prof));
        }
        report.methods.push(MethodScore { label, mad, peak_to_peak });
    }
    ensure_parent(out)?;
    let mut text = report.to_json();
    text.push('\n');
    io::write_atomic(out, text.as_bytes())?;
    if let Some(path) = slices_csv {
        ensure_parent(path)?;
        io::write_atomic(path, report.slices_csv().as_bytes())?;
    }
    Ok(())
}
