//! `oatomo` command-line front end.

mod cache;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oatomo::metrics::Axis;

/// Configuration or usage problem; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "oatomo", version, about = "Model-based optoacoustic tomography pipeline")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `method.solver.lambda=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the configured phantom.
    Phantom {
        #[arg(short, long)]
        out: PathBuf,
        /// Also write a 16-bit PGM preview.
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Simulate a sinogram from an image.
    Forward {
        #[arg(long)]
        image: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Skip the on-disk matrix cache.
        #[arg(long)]
        no_cache: bool,
    },
    /// Add noise and/or drop detectors.
    Degrade {
        #[arg(long)]
        sinogram: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Reconstruct an image with the configured method.
    Reconstruct {
        #[arg(long)]
        sinogram: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Shorthand for `--set method.name=...`.
        #[arg(long)]
        method: Option<String>,
        /// Energy / residual trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Raw export of the final A²TV tensor field.
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[arg(long)]
        no_cache: bool,
    },
    /// Reconstruct over a two-parameter grid and rank tiles by MAD.
    Scan {
        #[arg(long)]
        sinogram: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        no_cache: bool,
    },
    /// Score reconstructions against a reference image.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        /// Reconstruction image; repeatable, order is preserved.
        #[arg(long = "recon", required = true)]
        recons: Vec<PathBuf>,
        /// Label per reconstruction (defaults to the file stem).
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(long, value_enum)]
        slice_axis: Option<AxisArg>,
        #[arg(long)]
        slice_index: Option<usize>,
        /// Divide each slice by its maximum.
        #[arg(long)]
        normalize: bool,
        /// Peak-to-peak window along the slice, `lo,hi` in mm.
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        slices_csv: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum AxisArg {
    Row,
    Column,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Axis {
        match a {
            AxisArg::Row => Axis::Row,
            AxisArg::Column => Axis::Column,
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid usage").trim_start_matches("error: ");
            eprintln!("ERROR: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            let msg = e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ");
            eprintln!("ERROR: {}", one_line(&msg));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be >= 1".into()).into());
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut overrides = cli.set.clone();
    let method = match &cli.cmd {
        Command::Reconstruct { method, .. } | Command::Scan { method, .. } => method.clone(),
        _ => None,
    };
    if let Some(m) = method {
        overrides.push(format!("method.name=\"{m}\""));
    }
    let cfg = config::RunConfig::load(cli.config.as_deref(), &overrides)?;
    let ctx = commands::Context { cfg };
    match cli.cmd {
        Command::Phantom { out, pgm } => commands::phantom(&ctx, &out, pgm.as_deref()),
        Command::Forward { image, out, no_cache } => commands::forward(&ctx, &image, &out, !no_cache),
        Command::Degrade { sinogram, out } => commands::degrade(&ctx, &sinogram, &out),
        Command::Reconstruct { sinogram, out, trace, tensor, pgm, no_cache, .. } => commands::reconstruct(
            &ctx,
            &sinogram,
            &out,
            trace.as_deref(),
            tensor.as_deref(),
            pgm.as_deref(),
            !no_cache,
        ),
        Command::Scan { sinogram, reference, out_dir, no_cache, .. } => {
            commands::scan(&ctx, &sinogram, &reference, &out_dir, !no_cache)
        }
        Command::Evaluate { reference, recons, labels, slice_axis, slice_index, normalize, window, out, slices_csv } => {
            let slice = match (slice_axis, slice_index) {
                (Some(a), Some(i)) => Some((a.into(), i)),
                (None, None) => None,
                _ => return Err(UsageError("--slice-axis and --slice-index go together".into()).into()),
            };
            let window = window.map(|w| commands::parse_window(&w)).transpose()?;
            commands::evaluate(&ctx, &reference, &recons, &labels, slice, normalize, window, &out, slices_csv.as_deref())
        }
    }
}
