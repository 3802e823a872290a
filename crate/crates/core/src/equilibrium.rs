//! Normalized Boltzmann density and the fixed-point solver for the
//! Poisson-Boltzmann equation `-ΔU = Φ(U, u)`, `U = 0` on the rim.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate, PolarGrid, ScalarField};
use crate::operators::{assemble_laplacian, scale_rhs, Factorized};

/// Fixed-point controls. The update is `U ← (1-θ) U_prev + θ U_new`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointParams {
    /// Max-norm bound on the last update.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub damping: f64,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_sweeps: 200,
            damping: 1.0,
        }
    }
}

impl FixedPointParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Parameter("fixed-point tolerance must be > 0".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Parameter("max_sweeps must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Parameter("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Control, self-consistent potential and density of one converged solve.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    pub u: ScalarField,
    pub potential: ScalarField,
    pub rho: ScalarField,
    pub fp_iterations: usize,
    pub fp_residual: f64,
    /// Max-norm update of every sweep.
    pub residual_history: Vec<f64>,
}

impl EquilibriumState {
    pub fn grid(&self) -> &Arc<PolarGrid> {
        self.u.grid()
    }

    pub fn mass(&self) -> f64 {
        integrate(&self.rho)
    }
}

/// `exp(-(U+u)) / ∫ exp(-(U+u))`, normalized with the grid quadrature.
pub fn phi_density(potential: &ScalarField, u: &ScalarField) -> Result<ScalarField> {
    let total = potential.zip_with(u, |a, b| -(a + b))?;
    let shift = total
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let boltz = total.map(|v| (v - shift).exp());
    let z = integrate(&boltz);
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Normalizer(z));
    }
    Ok(boltz.map(|v| v / z))
}

/// Pointwise `Φ² - Φ`.
pub fn dphi(rho: &ScalarField) -> ScalarField {
    rho.map(|p| p * p - p)
}

/// Fixed-point solver holding the factorized Laplacian of one grid.
#[derive(Debug, Clone)]
pub struct EquilibriumSolver {
    grid: Arc<PolarGrid>,
    laplacian: Factorized,
}

impl EquilibriumSolver {
    pub fn new(grid: &Arc<PolarGrid>) -> Result<Self> {
        let laplacian = assemble_laplacian(grid).factorize()?;
        Ok(Self {
            grid: Arc::clone(grid),
            laplacian,
        })
    }

    pub fn grid(&self) -> &Arc<PolarGrid> {
        &self.grid
    }

    pub fn laplacian(&self) -> &Factorized {
        &self.laplacian
    }

    /// Solves for the equilibrium of control `u`, starting from `warm` (or zero).
    pub fn solve(
        &self,
        u: &ScalarField,
        fp: &FixedPointParams,
        warm: Option<&ScalarField>,
    ) -> Result<EquilibriumState> {
        fp.validate()?;
        let zero = ScalarField::zeros(&self.grid);
        u.check_grid(&zero)?;
        let mut potential = match warm {
            Some(w) => {
                w.check_grid(&zero)?;
                w.clone()
            }
            None => zero,
        };
        let theta = fp.damping;
        let mut history = Vec::new();
        for sweep in 1..=fp.max_sweeps {
            let rho = phi_density(&potential, u)?;
            let fresh = self
                .laplacian
                .solve(&self.grid, &scale_rhs(&self.grid, &rho))?;
            let next = if theta == 1.0 {
                fresh
            } else {
                potential.zip_with(&fresh, |old, new| (1.0 - theta) * old + theta * new)?
            };
            let residual = next.max_abs_diff(&potential)?;
            potential = next;
            history.push(residual);
            if !residual.is_finite() {
                break;
            }
            if residual < fp.tolerance {
                let rho = phi_density(&potential, u)?;
                return Ok(EquilibriumState {
                    u: u.clone(),
                    potential,
                    rho,
                    fp_iterations: sweep,
                    fp_residual: residual,
                    residual_history: history,
                });
            }
        }
        Err(Error::FixedPoint {
            sweeps: history.len(),
            residual: history.last().copied().unwrap_or(f64::NAN),
            last_iterate: Box::new(potential.into_values()),
        })
    }

    /// Like [`EquilibriumSolver::solve`], halving the damping after each
    /// non-convergent attempt (at most `retries` times).
    pub fn solve_with_retries(
        &self,
        u: &ScalarField,
        fp: &FixedPointParams,
        warm: Option<&ScalarField>,
        retries: usize,
    ) -> Result<EquilibriumState> {
        let mut params = *fp;
        let mut attempt = 0;
        loop {
            match self.solve(u, &params, warm) {
                Err(Error::FixedPoint { .. }) if attempt < retries => {
                    attempt += 1;
                    params.damping *= 0.5;
                }
                other => return other,
            }
        }
    }
}

/// One-shot equilibrium solve.
pub fn solve_equilibrium(
    u: &ScalarField,
    grid: &Arc<PolarGrid>,
    fp: &FixedPointParams,
) -> Result<EquilibriumState> {
    EquilibriumSolver::new(grid)?.solve(u, fp, None)
}
