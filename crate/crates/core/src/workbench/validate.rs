//! The `validate` command: oracle checks of the discretization and solvers,
//! one pass/fail item each.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::equilibrium::EquilibriumSolver;
use crate::error::Result;
use crate::grid::{integrate, PolarGrid, ScalarField};
use crate::objective::valley_eval;
use crate::operators::{
    assemble_laplacian, assemble_laplacian_with, scale_rhs, smallest_eigenvalue, solve,
    StencilVariant,
};
use crate::sensitivity::{gradient_check, AdjointModel, Sensitivity};
use crate::workbench::commands::{random_field, CommandOutcome, Writer, EXIT_CHECK, EXIT_OK};
use crate::workbench::config::{thread_cap, Emit, GridSpec, RunConfig};
use crate::workbench::parallel_map;

/// Squared first zero of `J₀`, the Dirichlet eigenvalue of the unit disk.
pub const BESSEL_J01_SQ: f64 = 5.783_185_962_946_784;
/// Accepted band for the discrete eigenvalue.
pub const EIGEN_BAND: (f64, f64) = (5.667, 5.899);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub name: String,
    pub passed: bool,
    /// Reported for quantification only; does not affect the verdict.
    pub informational: bool,
    pub details: serde_json::Value,
}

impl Item {
    fn new(name: &str, passed: bool, details: serde_json::Value) -> Self {
        Self {
            name: name.into(),
            passed,
            informational: false,
            details,
        }
    }
}

/// `(1 - r²)(1 + r cos φ + r² sin 2φ)`, with `-ΔU = 4 + 8x + 24xy`.
pub fn manufactured_exact(phi: f64, r: f64) -> f64 {
    (1.0 - r * r) * (1.0 + r * phi.cos() + r * r * (2.0 * phi).sin())
}

pub fn manufactured_source(phi: f64, r: f64) -> f64 {
    let (x, y) = (r * phi.cos(), r * phi.sin());
    4.0 + 8.0 * x + 24.0 * x * y
}

/// Max-norm error of the discrete solution of `-ΔU = f` against `exact`.
pub fn poisson_error(
    grid: &Arc<PolarGrid>,
    variant: StencilVariant,
    source: impl Fn(f64, f64) -> f64,
    exact: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    let a = assemble_laplacian_with(grid, variant);
    let rhs = scale_rhs(grid, &ScalarField::from_polar(grid, source));
    let u = solve(grid, &a, &rhs)?;
    u.max_abs_diff(&ScalarField::from_polar(grid, exact))
}

/// `log(e_k / e_{k+1}) / log(h_k / h_{k+1})` with `h ∝ 1 / (n_radial - 1)`.
pub fn observed_orders(grids: &[GridSpec], errors: &[f64]) -> Vec<f64> {
    grids
        .windows(2)
        .zip(errors.windows(2))
        .map(|(g, e)| {
            let ratio = (g[1].n_radial - 1) as f64 / (g[0].n_radial - 1) as f64;
            (e[0] / e[1]).ln() / ratio.ln()
        })
        .collect()
}

fn quadrature(grid: &Arc<PolarGrid>, tol: f64) -> Item {
    let area = integrate(&ScalarField::constant(grid, 1.0));
    let moment = integrate(&ScalarField::from_polar(grid, |_, r| r * r));
    let (ea, em) = (
        (area - PI).abs() / PI,
        (moment - PI / 2.0).abs() / (PI / 2.0),
    );
    Item::new(
        "quadrature",
        ea <= tol && em <= tol,
        json!({ "area": area, "area_rel_error": ea, "r2_moment": moment,
                "r2_moment_rel_error": em, "tolerance": tol }),
    )
}

fn poisson_unit_source(config: &RunConfig, grid: &Arc<PolarGrid>) -> Result<Item> {
    let tol = config.validate.poisson_tolerance;
    let grids = &config.validate.order_grids;
    let unit = |_: f64, _: f64| 1.0;
    let exact = |_: f64, r: f64| (1.0 - r * r) / 4.0;
    let err = poisson_error(grid, StencilVariant::Corrected, unit, exact)?;
    let errs = grids
        .iter()
        .map(|g| poisson_error(&g.build()?, StencilVariant::Corrected, unit, exact))
        .collect::<Result<Vec<_>>>()?;
    Ok(Item::new(
        "poisson_unit_source",
        err <= tol,
        json!({ "grid": [grid.n_phi(), grid.n_radial()], "max_error": err, "tolerance": tol,
                "refinement_errors": errs, "refinement_orders": observed_orders(grids, &errs) }),
    ))
}

fn refinement(config: &RunConfig, variant: StencilVariant) -> Result<(Vec<f64>, Vec<f64>)> {
    let grids = &config.validate.order_grids;
    let errs = parallel_map(grids, thread_cap(), |g| {
        poisson_error(
            &g.build()?,
            variant,
            manufactured_source,
            manufactured_exact,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let orders = observed_orders(grids, &errs);
    Ok((errs, orders))
}

fn manufactured_order(config: &RunConfig) -> Result<(Item, Item)> {
    let min_order = config.validate.min_order;
    let (errs, orders) = refinement(config, StencilVariant::Corrected)?;
    let (printed_errs, printed_orders) = refinement(config, StencilVariant::AsPrinted)?;
    let converges = |o: &[f64]| o.iter().all(|&p| p >= min_order);
    let order_item = Item::new(
        "manufactured_order",
        converges(&orders),
        json!({ "grids": config.validate.order_grids, "errors": errs, "orders": orders,
                "min_order": min_order }),
    );
    let corrected_ok = converges(&orders);
    let printed_ok = converges(&printed_orders);
    let chosen = if corrected_ok {
        "corrected"
    } else {
        "undecided"
    };
    let stencil_item = Item::new(
        "stencil_variant",
        corrected_ok,
        json!({ "selected": chosen,
                "corrected": { "errors": errs, "orders": orders, "converges": corrected_ok },
                "as_printed": { "errors": printed_errs, "orders": printed_orders,
                                "converges": printed_ok } }),
    );
    Ok((order_item, stencil_item))
}

fn eigenvalue(grid: &Arc<PolarGrid>) -> Result<Item> {
    let fine = Arc::new(PolarGrid::new(2 * grid.n_phi(), 2 * grid.n_radial())?);
    let lambdas = parallel_map(&[grid.clone(), fine], thread_cap(), |g| {
        smallest_eigenvalue(&assemble_laplacian(g), g)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (lambda, lambda_fine) = (lambdas[0], lambdas[1]);
    let c_omega = 1.0 / lambda;
    let change = (lambda_fine - lambda).abs() / lambda;
    let in_band = (EIGEN_BAND.0..=EIGEN_BAND.1).contains(&lambda);
    Ok(Item::new(
        "poincare_eigenvalue",
        in_band && c_omega < 4.0 && change < 0.01,
        json!({ "lambda1": lambda, "oracle": BESSEL_J01_SQ, "band": [EIGEN_BAND.0, EIGEN_BAND.1],
                "c_omega": c_omega, "c_omega_below_4": c_omega < 4.0,
                "refined_grid": [2 * grid.n_phi(), 2 * grid.n_radial()],
                "lambda1_refined": lambda_fine, "relative_change": change }),
    ))
}

fn control(config: &RunConfig, grid: &Arc<PolarGrid>) -> Result<ScalarField> {
    match &config.control {
        Some(p) => crate::workbench::fields::read_field(p, grid),
        None => Ok(ScalarField::zeros(grid)),
    }
}

fn uniqueness(config: &RunConfig, grid: &Arc<PolarGrid>) -> Result<Item> {
    let tol = config.validate.uniqueness_tolerance;
    let u = control(config, grid)?;
    let solver = EquilibriumSolver::new(grid)?;
    let fp = &config.optimize.fixed_point;
    let start = random_field(grid, config.validate.seed, 5.0).map(f64::abs);
    let a = solver.solve(&u, fp, None)?;
    let b = solver.solve(&u, fp, Some(&start))?;
    let diff = a.potential.max_abs_diff(&b.potential)?;
    Ok(Item::new(
        "uniqueness",
        diff <= tol,
        json!({ "max_difference": diff, "tolerance": tol,
                "sweeps": [a.fp_iterations, b.fp_iterations] }),
    ))
}

fn maximum_principle(grid: &Arc<PolarGrid>) -> Result<Item> {
    let a = assemble_laplacian(grid);
    let sources = [
        ScalarField::constant(grid, 1.0),
        ScalarField::from_polar(grid, |p, r| 1.0 + 0.9 * (3.0 * p).cos() * r),
        ScalarField::from_polar(grid, |p, r| (-((r * p.cos() - 0.5).powi(2)) * 50.0).exp()),
    ];
    let mut minima = Vec::new();
    for f in &sources {
        let u = solve(grid, &a, &scale_rhs(grid, f))?;
        minima.push(u.values().iter().copied().fold(f64::INFINITY, f64::min));
    }
    Ok(Item::new(
        "maximum_principle",
        minima.iter().all(|&m| m >= -1e-12),
        json!({ "minima": minima }),
    ))
}

fn adjoint_models(config: &RunConfig) -> Result<(Item, Item)> {
    let grid = config.validate.order_grids[0].build()?;
    let u = random_field(&grid, config.gradcheck.seed.wrapping_add(1), 0.5);
    let v = random_field(&grid, config.gradcheck.seed, 1.0);
    let valley = valley_eval(&config.valley, &grid)?;
    let equilibrium = EquilibriumSolver::new(&grid)?;
    let alpha = config.optimize.alpha;
    let fp = &config.optimize.fixed_point;
    let tol = config.gradcheck.tolerance;
    let mut reports = Vec::new();
    for model in [AdjointModel::Exact, AdjointModel::Pointwise] {
        let s = Sensitivity::new(&grid, model)?;
        reports.push(gradient_check(
            &equilibrium,
            &s,
            &u,
            &valley,
            alpha,
            &v,
            &config.gradcheck.steps,
            fp,
        )?);
    }
    let exact = Item::new(
        "gradient_check_exact",
        reports[0].min_relative_error <= tol,
        json!({ "grid": [grid.n_phi(), grid.n_radial()], "tolerance": tol,
                "min_relative_error": reports[0].min_relative_error, "report": reports[0] }),
    );
    let mut pointwise = Item::new(
        "gradient_check_pointwise",
        reports[1].min_relative_error <= tol,
        json!({ "grid": [grid.n_phi(), grid.n_radial()], "tolerance": tol,
                "min_relative_error": reports[1].min_relative_error, "report": reports[1],
                "note": "pointwise density derivative without the normalization term" }),
    );
    pointwise.informational = true;
    Ok((exact, pointwise))
}

/// Runs every item; the verdict ignores informational items.
pub fn run_items(config: &RunConfig) -> Result<Vec<Item>> {
    let grid = config.grid.build()?;
    let (order, stencil) = manufactured_order(config)?;
    let (exact, pointwise) = adjoint_models(config)?;
    Ok(vec![
        quadrature(&grid, config.validate.quadrature_tolerance),
        poisson_unit_source(config, &grid)?,
        order,
        stencil,
        eigenvalue(&grid)?,
        uniqueness(config, &grid)?,
        maximum_principle(&grid)?,
        exact,
        pointwise,
    ])
}

pub fn validate(config: &RunConfig) -> Result<CommandOutcome> {
    config.validate()?;
    let items = run_items(config)?;
    let passed = items.iter().all(|i| i.passed || i.informational);
    let mut out = Writer::new(&config.output_dir)?;
    if config.emits(Emit::Report) {
        out.json(
            "validate.json",
            &json!({ "passed": passed, "items": items, "config": config }),
        )?;
    }
    Ok(out.finish(if passed { EXIT_OK } else { EXIT_CHECK }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manufactured_pair_is_consistent() {
        // -ΔU by a fine centred difference in x, y at an interior point
        let u = |x: f64, y: f64| manufactured_exact(y.atan2(x), x.hypot(y));
        let (x, y, h) = (0.3, -0.2, 1e-4);
        let lap = (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4.0 * u(x, y)) / (h * h);
        let f = manufactured_source(y.atan2(x), x.hypot(y));
        assert!((-lap - f).abs() < 1e-5);
        assert_eq!(manufactured_exact(0.7, 1.0), 0.0);
    }

    #[test]
    fn orders_of_a_second_order_sequence() {
        let grids = [
            GridSpec {
                n_phi: 8,
                n_radial: 5,
            },
            GridSpec {
                n_phi: 16,
                n_radial: 9,
            },
        ];
        let o = observed_orders(&grids, &[4.0, 1.0]);
        assert!((o[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn maximum_principle_holds() {
        let g = Arc::new(PolarGrid::new(16, 10).unwrap());
        assert!(maximum_principle(&g).unwrap().passed);
    }
}
