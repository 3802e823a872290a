//! Run configuration: JSON on disk, command-line overrides, path resolution.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PolarGrid;
use crate::objective::ValleySpec;
use crate::optimizer::OptimizeConfig;
use crate::sensitivity::default_steps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_phi: usize,
    pub n_radial: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_phi: 64,
            n_radial: 48,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<PolarGrid>> {
        Ok(Arc::new(PolarGrid::new(self.n_phi, self.n_radial)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    /// CSV field dumps.
    Fields,
    /// The per-command JSON summary.
    Report,
    /// The optimizer history.
    History,
}

fn all_emits() -> BTreeSet<Emit> {
    [Emit::Fields, Emit::Report, Emit::History].into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckParams {
    /// Seed of the random perturbation direction.
    pub seed: u64,
    pub steps: Vec<f64>,
    /// Pass threshold on the minimum relative error.
    pub tolerance: f64,
    /// Amplitude of a random base control (seeded with `seed + 1`); `0` keeps
    /// the configured control.
    pub control_amplitude: f64,
}

impl Default for GradcheckParams {
    fn default() -> Self {
        Self {
            seed: 7,
            steps: default_steps(),
            tolerance: 1e-4,
            control_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateParams {
    /// Grids of the refinement study, coarse to fine.
    pub order_grids: Vec<GridSpec>,
    pub min_order: f64,
    /// Max-norm bound for the unit-source Poisson problem on the run grid.
    pub poisson_tolerance: f64,
    pub quadrature_tolerance: f64,
    pub uniqueness_tolerance: f64,
    /// Seed of the random starting potential of the uniqueness check.
    pub seed: u64,
}

impl Default for ValidateParams {
    fn default() -> Self {
        Self {
            order_grids: vec![
                GridSpec {
                    n_phi: 32,
                    n_radial: 24,
                },
                GridSpec {
                    n_phi: 64,
                    n_radial: 48,
                },
                GridSpec {
                    n_phi: 128,
                    n_radial: 96,
                },
            ],
            min_order: 1.5,
            poisson_tolerance: 1e-3,
            quadrature_tolerance: 1e-3,
            uniqueness_tolerance: 1e-9,
            seed: 11,
        }
    }
}

fn default_valley() -> ValleySpec {
    ValleySpec::Constant { value: 0.0 }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_valley")]
    pub valley: ValleySpec,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    /// Field dump of the control (zero when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<PathBuf>,
    /// Field dump of a starting potential for the forward solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_potential: Option<PathBuf>,
    #[serde(default = "all_emits")]
    pub emit: BTreeSet<Emit>,
    #[serde(default)]
    pub gradcheck: GradcheckParams,
    #[serde(default)]
    pub validate: ValidateParams,
    /// Where outputs go, relative to the config file. Not embedded in emitted
    /// reports, so reruns from a report elsewhere produce identical files.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            valley: default_valley(),
            optimize: OptimizeConfig::default(),
            control: None,
            initial_potential: None,
            emit: all_emits(),
            gradcheck: GradcheckParams::default(),
            validate: ValidateParams::default(),
            output_dir: default_output_dir(),
        }
    }
}

/// Command-line values that replace configuration entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub grid: Option<(usize, usize)>,
    pub alpha: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

impl RunConfig {
    /// Reads a configuration file, or the `config` entry of an emitted report.
    /// Relative paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key("config") => {
                map.remove("config").expect("checked")
            }
            other => other,
        };
        let mut config: RunConfig = serde_json::from_value(value).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        config.resolve_paths(&base)?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        let base = if base.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            base.to_path_buf()
        };
        let base = std::path::absolute(&base).map_err(|e| Error::io(&base, e))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.control.as_mut() {
            fix(p);
        }
        if let Some(p) = self.initial_potential.as_mut() {
            fix(p);
        }
        if let ValleySpec::FromFile { path } = &mut self.valley {
            fix(path);
        }
        fix(&mut self.output_dir);
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some((n, m)) = o.grid {
            self.grid = GridSpec {
                n_phi: n,
                n_radial: m,
            };
        }
        if let Some(a) = o.alpha {
            self.optimize.alpha = a;
        }
        if let Some(t) = o.tol {
            self.optimize.tol = t;
        }
        if let Some(k) = o.max_iters {
            self.optimize.k_max = k;
        }
    }

    /// Checks parameters and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        self.valley.validate()?;
        self.optimize.validate()?;
        let files = [
            self.control.as_ref(),
            self.initial_potential.as_ref(),
            match &self.valley {
                ValleySpec::FromFile { path } => Some(path),
                _ => None,
            },
        ];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        let gc = &self.gradcheck;
        if gc.steps.is_empty() || gc.steps.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Config("gradcheck.steps must be positive".into()));
        }
        if !(gc.tolerance > 0.0) || !gc.control_amplitude.is_finite() {
            return Err(Error::Config(
                "gradcheck tolerance/amplitude invalid".into(),
            ));
        }
        let v = &self.validate;
        if v.order_grids.len() < 2 {
            return Err(Error::Config("validate.order_grids needs two grids".into()));
        }
        for g in &v.order_grids {
            g.build()?;
        }
        Ok(())
    }

    pub fn emits(&self, what: Emit) -> bool {
        self.emit.contains(&what)
    }
}

/// Worker cap from `EQUIDESIGN_THREADS`; defaults to the available cores.
pub fn thread_cap() -> usize {
    std::env::var("EQUIDESIGN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}
