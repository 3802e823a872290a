//! The `forward`, `optimize` and `gradcheck` commands. Each writes its files
//! into the configured output directory and returns the process exit code.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::equilibrium::EquilibriumSolver;
use crate::error::{Error, Result};
use crate::grid::{h1_norm, PolarGrid, ScalarField};
use crate::objective::{ensemble_term, evaluate_j, regularization, valley_eval};
use crate::optimizer::ncg_minimize;
use crate::sensitivity::{gradient_check, Sensitivity};
use crate::workbench::config::{Emit, RunConfig};
use crate::workbench::fields::{read_field, write_field};

pub const EXIT_OK: i32 = 0;
/// An embedded check (mass, monotonicity, gradient check, validation) failed.
pub const EXIT_CHECK: i32 = 1;
/// The equilibrium (or a linear solve) could not be computed.
pub const EXIT_FORWARD: i32 = 2;
/// The optimizer stopped on a line-search or forward failure.
pub const EXIT_ABORT: i32 = 3;
/// Configuration or file-system error before any computation.
pub const EXIT_CONFIG: i32 = 4;

/// Exit code and the files a command wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
}

pub(crate) struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    pub(crate) fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub(crate) fn field(&mut self, name: &str, field: &ScalarField) -> Result<()> {
        let path = self.dir.join(name);
        write_field(&path, field)?;
        self.files.push(path);
        Ok(())
    }

    pub(crate) fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    pub(crate) fn finish(self, exit_code: i32) -> CommandOutcome {
        CommandOutcome {
            exit_code,
            files: self.files,
        }
    }
}

/// Smooth seeded field vanishing on the rim and single-valued at the origin:
/// `(1 - r²) Σ_{k<5} r^k (a_k cos kφ + b_k sin kφ)` with `a, b ~ U(-1, 1)`.
pub fn random_field(grid: &Arc<PolarGrid>, seed: u64, amplitude: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<(f64, f64)> = (0..5)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let mut f = ScalarField::from_polar(grid, |p, r| {
        let sum: f64 = coef
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let kf = k as f64;
                r.powi(k as i32) * (a * (kf * p).cos() + b * (kf * p).sin())
            })
            .sum();
        amplitude * (1.0 - r * r) * sum
    });
    f.zero_boundary();
    f
}

fn control(config: &RunConfig, grid: &Arc<PolarGrid>) -> Result<ScalarField> {
    match &config.control {
        Some(path) => read_field(path, grid),
        None => Ok(ScalarField::zeros(grid)),
    }
}

fn failure_report(error: &Error, config: &RunConfig) -> serde_json::Value {
    let mut value = json!({
        "status": "failed",
        "error": error.to_string(),
        "config": config,
    });
    if let Error::FixedPoint {
        sweeps, residual, ..
    } = error
    {
        value["fp_iterations"] = json!(sweeps);
        value["fp_residual"] = json!(residual);
    }
    value
}

pub fn forward(config: &RunConfig) -> Result<CommandOutcome> {
    config.validate()?;
    let grid = config.grid.build()?;
    let u = control(config, &grid)?;
    let valley = valley_eval(&config.valley, &grid)?;
    let warm = match &config.initial_potential {
        Some(path) => Some(read_field(path, &grid)?),
        None => None,
    };
    let mut out = Writer::new(&config.output_dir)?;
    let solver = EquilibriumSolver::new(&grid)?;
    let state = match solver.solve(&u, &config.optimize.fixed_point, warm.as_ref()) {
        Ok(s) => s,
        Err(e @ (Error::FixedPoint { .. } | Error::Normalizer(_) | Error::Solver { .. })) => {
            out.json("forward.json", &failure_report(&e, config))?;
            return Ok(out.finish(EXIT_FORWARD));
        }
        Err(e) => return Err(e),
    };
    let mass = state.mass();
    let potential_min = state
        .potential
        .values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mass_ok = (mass - 1.0).abs() <= 1e-12;
    let sign_ok = potential_min >= -1e-10;
    if config.emits(Emit::Fields) {
        out.field("u.csv", &u)?;
        out.field("U.csv", &state.potential)?;
        out.field("rho.csv", &state.rho)?;
    }
    if config.emits(Emit::Report) {
        out.json(
            "forward.json",
            &json!({
                "status": "ok",
                "fp_iterations": state.fp_iterations,
                "fp_residual": state.fp_residual,
                "residual_history": state.residual_history,
                "mass": mass,
                "J_ensemble": ensemble_term(&valley, &state.rho)?,
                "potential_min": potential_min,
                "checks": { "unit_mass": mass_ok, "nonnegative_potential": sign_ok },
                "config": config,
            }),
        )?;
    }
    let code = if mass_ok && sign_ok {
        EXIT_OK
    } else {
        EXIT_CHECK
    };
    Ok(out.finish(code))
}

pub fn optimize(config: &RunConfig) -> Result<CommandOutcome> {
    config.validate()?;
    let grid = config.grid.build()?;
    let u0 = control(config, &grid)?;
    let valley = valley_eval(&config.valley, &grid)?;
    let mut out = Writer::new(&config.output_dir)?;
    let equilibrium = EquilibriumSolver::new(&grid)?;
    let sensitivity = Sensitivity::new(&grid, config.optimize.adjoint)?;
    let outcome = match ncg_minimize(&equilibrium, &sensitivity, &u0, &valley, &config.optimize) {
        Ok(o) => o,
        Err(e @ (Error::FixedPoint { .. } | Error::Normalizer(_) | Error::Solver { .. })) => {
            out.json("history.json", &failure_report(&e, config))?;
            return Ok(out.finish(EXIT_FORWARD));
        }
        Err(e) => return Err(e),
    };
    let report = &outcome.report;
    let state = &outcome.state;
    let alpha = config.optimize.alpha;
    let monotone = report.is_monotone();
    if config.emits(Emit::Fields) {
        out.field("u_opt.csv", &outcome.u)?;
        out.field("U_opt.csv", &state.potential)?;
        out.field("rho_opt.csv", &state.rho)?;
        out.field("V.csv", &valley)?;
    }
    if config.emits(Emit::History) {
        out.json(
            "history.json",
            &json!({
                "status": if report.termination.aborted() { "aborted" } else { "ok" },
                "report": report,
                "hyperparameters": config.optimize,
                "final": {
                    "J": evaluate_j(state, &valley, alpha)?,
                    "J_ensemble": ensemble_term(&valley, &state.rho)?,
                    "regularization": regularization(&state.u, alpha)?,
                    "grad_norm": h1_norm(&outcome.bundle.grad),
                    "mass": state.mass(),
                    "fp_iterations": state.fp_iterations,
                    "fp_residual": state.fp_residual,
                },
                "checks": { "monotone": monotone },
                "config": config,
            }),
        )?;
    }
    let code = if report.termination.aborted() {
        EXIT_ABORT
    } else if !monotone {
        EXIT_CHECK
    } else {
        EXIT_OK
    };
    Ok(out.finish(code))
}

pub fn gradcheck(config: &RunConfig) -> Result<CommandOutcome> {
    gradcheck_with(config, false)
}

/// `gradcheck` with the adjoint sign flipped when `corrupt` is set; used as a
/// negative control.
#[doc(hidden)]
pub fn gradcheck_with(config: &RunConfig, corrupt: bool) -> Result<CommandOutcome> {
    config.validate()?;
    let params = &config.gradcheck;
    let grid = config.grid.build()?;
    let mut u = control(config, &grid)?;
    if params.control_amplitude != 0.0 {
        let extra = random_field(&grid, params.seed.wrapping_add(1), params.control_amplitude);
        u = u.add_scaled(1.0, &extra)?;
    }
    let v = random_field(&grid, params.seed, 1.0);
    let valley = valley_eval(&config.valley, &grid)?;
    let mut out = Writer::new(&config.output_dir)?;
    let equilibrium = EquilibriumSolver::new(&grid)?;
    let mut sensitivity = Sensitivity::new(&grid, config.optimize.adjoint)?;
    if corrupt {
        sensitivity = sensitivity.with_corrupted_adjoint();
    }
    let fp = &config.optimize.fixed_point;
    let report = match gradient_check(
        &equilibrium,
        &sensitivity,
        &u,
        &valley,
        config.optimize.alpha,
        &v,
        &params.steps,
        fp,
    ) {
        Ok(r) => r,
        Err(e @ (Error::FixedPoint { .. } | Error::Normalizer(_) | Error::Solver { .. })) => {
            out.json("gradcheck.json", &failure_report(&e, config))?;
            return Ok(out.finish(EXIT_FORWARD));
        }
        Err(e) => return Err(e),
    };
    let passed = report.min_relative_error <= params.tolerance;
    if config.emits(Emit::Report) {
        out.json(
            "gradcheck.json",
            &json!({
                "status": "ok",
                "passed": passed,
                "tolerance": params.tolerance,
                "v_shaped": report.is_v_shaped(),
                "report": report,
                "config": config,
            }),
        )?;
    }
    Ok(out.finish(if passed { EXIT_OK } else { EXIT_CHECK }))
}
