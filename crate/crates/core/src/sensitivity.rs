//! Adjoint solve, H¹ Riesz lift and the reduced gradient `∇Ĵ = αu + μ`,
//! together with the central finite-difference check of the derivative.
//!
//! Two models of the density derivative are available:
//!
//! * [`AdjointModel::Exact`] differentiates the discrete normalized density,
//!   `∂Φ[w] = -Φ w + Φ ⟨Φ, w⟩`, and solves the transposed linearized system,
//!   so the directional derivative agrees with finite differences of the
//!   discrete objective to round-off.
//! * [`AdjointModel::Pointwise`] uses `∂Φ = Φ² - Φ` as a multiplier and the
//!   untransposed operator, i.e. the continuous adjoint equation
//!   `-Δp - ∂_UΦ p = -V ∂_UΦ` discretized directly.
//!
//! Both produce the same bundle: the adjoint field `p`, the L² density of the
//! derivative `(V - p) ∂_uΦ`, its Riesz lift `μ` and the gradient.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{dphi, EquilibriumSolver, EquilibriumState, FixedPointParams};
use crate::error::{Error, Result};
use crate::grid::{h1_inner, l2_inner, PolarGrid, ScalarField};
use crate::objective::evaluate_j;
use crate::operators::{
    assemble_laplacian, assemble_reaction, row_scaling, scale_rhs, Factorized, SparseSystem,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointModel {
    #[default]
    Exact,
    Pointwise,
}

/// Everything the gradient computation produces for one state.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub p: ScalarField,
    pub mu: ScalarField,
    pub grad: ScalarField,
    /// L² density of the ensemble part of `dĴ`. On the origin ring it holds the
    /// density per origin-cell area.
    pub l2_form: ScalarField,
}

/// Assembles and caches the operators shared by every gradient evaluation on
/// one grid.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    grid: Arc<PolarGrid>,
    laplacian: SparseSystem,
    helmholtz: Factorized,
    model: AdjointModel,
    /// Test hook: flips the sign of the adjoint field.
    corrupt_adjoint: bool,
}

impl Sensitivity {
    pub fn new(grid: &Arc<PolarGrid>, model: AdjointModel) -> Result<Self> {
        let laplacian = assemble_laplacian(grid);
        let helmholtz =
            assemble_reaction(grid, &laplacian, &ScalarField::constant(grid, -1.0))?.factorize()?;
        Ok(Self {
            grid: Arc::clone(grid),
            laplacian,
            helmholtz,
            model,
            corrupt_adjoint: false,
        })
    }

    pub fn model(&self) -> AdjointModel {
        self.model
    }

    pub fn grid(&self) -> &Arc<PolarGrid> {
        &self.grid
    }

    #[doc(hidden)]
    pub fn with_corrupted_adjoint(mut self) -> Self {
        self.corrupt_adjoint = true;
        self
    }

    /// Adjoint field `p` and the L² derivative density `(V - p) ∂_uΦ`.
    pub fn solve_adjoint(
        &self,
        state: &EquilibriumState,
        valley: &ScalarField,
    ) -> Result<(ScalarField, ScalarField)> {
        valley.check_grid(&state.rho)?;
        let (mut p, mut form) = match self.model {
            AdjointModel::Exact => self.exact_adjoint(state, valley)?,
            AdjointModel::Pointwise => self.pointwise_adjoint(state, valley)?,
        };
        if self.corrupt_adjoint {
            p = p.scaled(-1.0);
            form = self.form_from_p(state, valley, &p)?;
        }
        Ok((p, form))
    }

    fn pointwise_adjoint(
        &self,
        state: &EquilibriumState,
        valley: &ScalarField,
    ) -> Result<(ScalarField, ScalarField)> {
        let c = dphi(&state.rho);
        let system = assemble_reaction(&self.grid, &self.laplacian, &c)?;
        let rhs = scale_rhs(&self.grid, &valley.zip_with(&c, |v, d| -v * d)?);
        let p = system.factorize()?.solve(&self.grid, &rhs)?;
        let form = self.form_from_p(state, valley, &p)?;
        Ok((p, form))
    }

    fn form_from_p(
        &self,
        state: &EquilibriumState,
        valley: &ScalarField,
        p: &ScalarField,
    ) -> Result<ScalarField> {
        match self.model {
            AdjointModel::Pointwise => {
                let diff = valley.zip_with(p, |v, q| v - q)?;
                diff.zip_with(&dphi(&state.rho), |a, d| a * d)
            }
            AdjointModel::Exact => {
                // p = -S λ / w off the origin ring, -λ₀ on it
                let w = self.grid.quad_weights();
                let s = row_scaling(&self.grid);
                let lambda: Vec<f64> = (0..self.grid.len())
                    .map(|k| {
                        if self.grid.is_origin(k) {
                            if k == 0 {
                                -p[0]
                            } else {
                                0.0
                            }
                        } else if s[k] == 0.0 {
                            0.0
                        } else {
                            -p[k] * w[k] / s[k]
                        }
                    })
                    .collect();
                self.exact_form(state, valley, &lambda)
            }
        }
    }

    /// Transposed linearized solve with the rank-one normalization term
    /// handled by Sherman-Morrison.
    fn exact_adjoint(
        &self,
        state: &EquilibriumState,
        valley: &ScalarField,
    ) -> Result<(ScalarField, ScalarField)> {
        let grid = &self.grid;
        let n = grid.len();
        let w = grid.quad_weights();
        let s = row_scaling(grid);
        let rho = state.rho.values();

        // (K + S diag Φ) where K = -A
        let base =
            assemble_reaction(grid, &self.laplacian, &state.rho.scaled(-1.0))?.factorize()?;

        // b = Dᵀ (w ∘ V), Dᵀ y = -Φ ∘ y + (w ∘ Φ)(Φ · y)
        let wv: Vec<f64> = (0..n).map(|k| w[k] * valley[k]).collect();
        let b = apply_dt(rho, w, &wv);

        // (Bᵀ - a cᵀ) λ = b with a = w ∘ Φ, c = S Φ
        let a: Vec<f64> = (0..n).map(|k| w[k] * rho[k]).collect();
        let c: Vec<f64> = (0..n).map(|k| s[k] * rho[k]).collect();
        let z = base.solve_transpose_vec(&b)?;
        let t = base.solve_transpose_vec(&a)?;
        let ct: f64 = c.iter().zip(&t).map(|(x, y)| x * y).sum();
        let cz: f64 = c.iter().zip(&z).map(|(x, y)| x * y).sum();
        let denom = 1.0 - ct;
        if denom.abs() < 1e-14 {
            return Err(Error::Solver {
                reason: "linearized state operator is singular".into(),
                residual: f64::INFINITY,
            });
        }
        let lambda: Vec<f64> = z
            .iter()
            .zip(&t)
            .map(|(zk, tk)| zk + tk * cz / denom)
            .collect();

        let mut p = vec![0.0; n];
        for k in 0..n {
            p[k] = if grid.is_origin(k) {
                -lambda[0]
            } else if w[k] > 0.0 {
                -s[k] * lambda[k] / w[k]
            } else {
                0.0
            };
        }
        let form = self.exact_form(state, valley, &lambda)?;
        Ok((ScalarField::from_values(grid, p)?, form))
    }

    fn exact_form(
        &self,
        state: &EquilibriumState,
        valley: &ScalarField,
        lambda: &[f64],
    ) -> Result<ScalarField> {
        let grid = &self.grid;
        let n = grid.len();
        let w = grid.quad_weights();
        let s = row_scaling(grid);
        let rho = state.rho.values();
        let q: Vec<f64> = (0..n)
            .map(|k| w[k] * valley[k] + s[k] * lambda[k])
            .collect();
        let dual = apply_dt(rho, w, &q);
        let origin = dual[0] / grid.origin_cell_area();
        let form: Vec<f64> = (0..n)
            .map(|k| {
                if grid.is_origin(k) {
                    origin
                } else if w[k] > 0.0 {
                    dual[k] / w[k]
                } else {
                    0.0
                }
            })
            .collect();
        ScalarField::from_values(grid, form)
    }

    /// `μ` with `-Δμ + μ = g`, `μ = 0` on the rim.
    pub fn riesz_lift(&self, g: &ScalarField) -> Result<ScalarField> {
        self.helmholtz.solve(&self.grid, &scale_rhs(&self.grid, g))
    }

    /// Row-scaled nodal derivative of `Ĵ`: a positive multiple of `∂Ĵ/∂u_k` on
    /// the origin and interior rows, zero on constraint rows. Its lift through
    /// [`Sensitivity::lift_pinned`] with nothing pinned is the reduced gradient.
    pub fn nodal_derivative(
        &self,
        state: &EquilibriumState,
        alpha: f64,
        bundle: &GradientBundle,
    ) -> Result<Vec<f64>> {
        let mut rhs = scale_rhs(&self.grid, &bundle.l2_form);
        let hu = self.helmholtz.system().apply_system(state.u.values());
        for (a, b) in rhs.iter_mut().zip(hu) {
            *a += alpha * b;
        }
        Ok(rhs)
    }

    /// H¹ representer of a nodal derivative on the controls vanishing at the
    /// `pinned` nodes.
    pub fn lift_pinned(&self, rhs: &[f64], pinned: &[bool]) -> Result<ScalarField> {
        let rows: Vec<usize> = (0..rhs.len()).filter(|&k| pinned[k]).collect();
        if rows.is_empty() {
            return self.helmholtz.solve(&self.grid, rhs);
        }
        let mut rhs = rhs.to_vec();
        for &k in &rows {
            rhs[k] = 0.0;
        }
        self.helmholtz
            .system()
            .with_identity_rows(&rows)
            .factorize()?
            .solve(&self.grid, &rhs)
    }

    pub fn reduced_gradient(
        &self,
        state: &EquilibriumState,
        valley: &ScalarField,
        alpha: f64,
    ) -> Result<GradientBundle> {
        if !(alpha > 0.0) {
            return Err(Error::Parameter("alpha must be > 0".into()));
        }
        let (p, l2_form) = self.solve_adjoint(state, valley)?;
        let mu = self.riesz_lift(&l2_form)?;
        let grad = state.u.scaled(alpha).add_scaled(1.0, &mu)?;
        Ok(GradientBundle {
            p,
            mu,
            grad,
            l2_form,
        })
    }
}

fn apply_dt(rho: &[f64], w: &[f64], y: &[f64]) -> Vec<f64> {
    let py: f64 = rho.iter().zip(y).map(|(a, b)| a * b).sum();
    (0..rho.len())
        .map(|k| -rho[k] * y[k] + w[k] * rho[k] * py)
        .collect()
}

/// Adjoint-based `dĴ[v]`: the L² pairing of the derivative density with `v`
/// (plus the origin cell, which carries no quadrature weight) and the
/// regularization term `α ⟨u, v⟩_{H¹}`.
pub fn directional_derivative(
    state: &EquilibriumState,
    alpha: f64,
    bundle: &GradientBundle,
    v: &ScalarField,
) -> Result<f64> {
    let grid = state.grid();
    let ensemble =
        l2_inner(&bundle.l2_form, v)? + grid.origin_cell_area() * bundle.l2_form[0] * v[0];
    Ok(ensemble + alpha * h1_inner(&state.u, v)?)
}

/// Per-step outcome of a finite-difference check.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckStep {
    pub step: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckReport {
    pub adjoint_model: AdjointModel,
    pub directional_derivative: f64,
    pub steps: Vec<CheckStep>,
    pub min_relative_error: f64,
}

impl CheckReport {
    /// True if the error first falls and later rises again along the steps.
    pub fn is_v_shaped(&self) -> bool {
        let errs: Vec<f64> = self.steps.iter().map(|s| s.relative_error).collect();
        let Some(best) = errs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
        else {
            return false;
        };
        best > 0
            && best + 1 < errs.len()
            && errs[0] > errs[best]
            && errs[errs.len() - 1] > errs[best]
    }
}

/// Decades `10⁻¹ … 10⁻⁶`.
pub fn default_steps() -> Vec<f64> {
    (1..=6).map(|e| 10f64.powi(-e)).collect()
}

/// Compares the adjoint directional derivative at `u` along `v` with central
/// differences `[Ĵ(u+hv) - Ĵ(u-hv)] / 2h`, re-solving the equilibrium for each
/// evaluation.
pub fn gradient_check(
    equilibrium: &EquilibriumSolver,
    sensitivity: &Sensitivity,
    u: &ScalarField,
    valley: &ScalarField,
    alpha: f64,
    v: &ScalarField,
    steps: &[f64],
    fp: &FixedPointParams,
) -> Result<CheckReport> {
    if steps.is_empty() || steps.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::Parameter("steps must be positive".into()));
    }
    let base = equilibrium.solve(u, fp, None)?;
    let bundle = sensitivity.reduced_gradient(&base, valley, alpha)?;
    let dd = directional_derivative(&base, alpha, &bundle, v)?;
    let j_at = |h: f64| -> Result<f64> {
        let shifted = u.add_scaled(h, v)?;
        let state = equilibrium.solve(&shifted, fp, Some(&base.potential))?;
        evaluate_j(&state, valley, alpha)
    };
    let mut out = Vec::with_capacity(steps.len());
    for &h in steps {
        let fd = (j_at(h)? - j_at(-h)?) / (2.0 * h);
        let scale = dd.abs().max(f64::MIN_POSITIVE);
        out.push(CheckStep {
            step: h,
            finite_difference: fd,
            relative_error: (fd - dd).abs() / scale,
        });
    }
    let min_relative_error = out
        .iter()
        .map(|s| s.relative_error)
        .fold(f64::INFINITY, f64::min);
    Ok(CheckReport {
        adjoint_model: sensitivity.model(),
        directional_derivative: dd,
        steps: out,
        min_relative_error,
    })
}
