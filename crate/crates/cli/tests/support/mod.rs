//! Helpers for driving the `oatomo` binary from integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde::Serialize;
use serde_json::{json, Value};

pub struct Cli {
    pub dir: PathBuf,
    pub cache: PathBuf,
}

impl Cli {
    pub fn new(dir: &Path) -> Self {
        let cache = dir.join("cache");
        Cli { dir: dir.to_path_buf(), cache }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_config(&self, name: &str, cfg: &Value) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
        path
    }

    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_oatomo"))
            .args(args)
            .current_dir(&self.dir)
            .env("OATOMO_CACHE", &self.cache)
            .output()
            .expect("spawning oatomo")
    }

    /// Runs and panics with the captured stderr on a nonzero exit.
    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "oatomo {} failed ({:?}): {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).into_owned()
    }
}

/// 64×64 vessel phantom seen by 128 detectors over 270°.
pub fn protocol_config() -> Value {
    json!({
        "grid": {"nx": 64, "ny": 64, "pixel_mm": 0.1},
        "geometry": {
            "radius_mm": 40.0,
            "arc_deg": 270.0,
            "n_detectors": 128,
            "sound_speed_mm_per_us": 1.5,
            "arc_step_frac": 0.125
        },
        "phantom": {"size": 64, "seed": 1, "kind": "vessels", "count": 6, "width_px": [1.5, 3.5]},
        "degrade": {"rel_std": 0.6, "seed": 11},
        "method": {
            "name": "a2tv",
            "lsqr": {"iters": 100},
            "solver": {
                "iters": 3000,
                "step_mode": "per_block",
                "extrapolation": true,
                "tau0": 0.05,
                "rho_px": 3.0
            }
        }
    })
}

pub fn with_scan<A: Serialize, B: Serialize>(mut cfg: Value, p1: &str, v1: &[A], p2: &str, v2: &[B]) -> Value {
    cfg["scan"] = json!({"param1": p1, "values1": v1, "param2": p2, "values2": v2});
    cfg
}

pub struct ScanRow {
    pub v1: String,
    pub v2: String,
    pub mad: f64,
}

/// `scan.csv` rows, best first.
pub fn read_scan(dir: &Path) -> Vec<ScanRow> {
    let text = std::fs::read_to_string(dir.join("scan.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ScanRow { v1: f[0].into(), v2: f[1].into(), mad: f[2].parse().unwrap() }
        })
        .collect()
}

/// Image file of the best tile, looked up in the montage legend.
pub fn best_tile(dir: &Path) -> PathBuf {
    let side: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("montage.pgm.json")).unwrap()).unwrap();
    let best = side["tiles"]
        .as_array()
        .unwrap()
        .iter()
        .min_by(|a, b| a["mad"].as_f64().unwrap().total_cmp(&b["mad"].as_f64().unwrap()))
        .unwrap();
    dir.join(best["image"].as_str().unwrap())
}
