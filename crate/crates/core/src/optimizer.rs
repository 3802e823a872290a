//! Fletcher-Reeves nonlinear conjugate gradient with Armijo backtracking over
//! the control field, measured in the discrete H¹ metric throughout.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{EquilibriumSolver, EquilibriumState, FixedPointParams};
use crate::error::{Error, Result};
use crate::grid::{h1_inner, h1_norm, ScalarField};
use crate::objective::evaluate_j;
use crate::sensitivity::{directional_derivative, AdjointModel, GradientBundle, Sensitivity};

/// Damping halvings tried when a trial equilibrium does not converge.
const FORWARD_RETRIES: usize = 3;

/// Relative distance within which a node counts as sitting on a bound.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchParams {
    /// Sufficient-decrease constant `c₁`.
    pub c1: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Ncg,
    Steepest,
}

/// Nodewise bounds `lower ≤ u ≤ upper`. Trial points are projected and the
/// search direction is taken on the nodes not held at a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub lower: f64,
    pub upper: f64,
}

impl BoxBounds {
    /// Clips every node except the rim, which stays at zero.
    pub fn project(&self, u: &mut ScalarField) {
        let grid = u.grid().clone();
        for (k, v) in u.values_mut().iter_mut().enumerate() {
            if !grid.is_boundary(k) {
                *v = v.clamp(self.lower, self.upper);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub alpha: f64,
    /// Stop once `‖u^{k+1} - u^k‖_{H¹} < tol`.
    pub tol: f64,
    pub k_max: usize,
    pub line_search: LineSearchParams,
    pub restart_period: usize,
    pub method: Method,
    #[serde(rename = "box")]
    pub bounds: Option<BoxBounds>,
    pub fixed_point: FixedPointParams,
    pub adjoint: AdjointModel,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            tol: 1e-6,
            k_max: 200,
            line_search: LineSearchParams::default(),
            restart_period: 10,
            method: Method::Ncg,
            bounds: None,
            fixed_point: FixedPointParams::default(),
            adjoint: AdjointModel::Exact,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be > 0");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be > 0");
        }
        let ls = &self.line_search;
        if !(ls.c1 > 0.0 && ls.c1 < 1.0) {
            return bad("line_search.c1 must lie in (0, 1)");
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return bad("line_search.shrink must lie in (0, 1)");
        }
        if !(ls.initial_step > 0.0) {
            return bad("line_search.initial_step must be > 0");
        }
        if self.restart_period == 0 {
            return bad("restart_period must be >= 1");
        }
        if let Some(b) = self.bounds {
            if !(b.lower <= 0.0 && 0.0 <= b.upper) {
                return bad("box bounds must satisfy lower <= 0 <= upper");
            }
        }
        self.fixed_point.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tol,
    KMax,
    LineSearchFailure,
    ForwardFailure,
}

impl Termination {
    pub fn aborted(self) -> bool {
        matches!(
            self,
            Termination::LineSearchFailure | Termination::ForwardFailure
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub k: usize,
    pub j: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub backtracks: usize,
    pub update_norm: f64,
    pub beta: f64,
    pub restarted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub j_initial: f64,
    pub grad_norm_initial: f64,
    pub iterates: Vec<IterateRecord>,
    pub termination: Termination,
    pub iterations: usize,
    /// Message of the error that ended an aborted run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

impl OptimizeReport {
    pub fn j_final(&self) -> f64 {
        self.iterates.last().map_or(self.j_initial, |r| r.j)
    }

    /// True if `J` never increases over accepted iterates.
    pub fn is_monotone(&self) -> bool {
        let mut prev = self.j_initial;
        self.iterates.iter().all(|r| {
            let ok = r.j <= prev;
            prev = r.j;
            ok
        })
    }
}

/// Fletcher-Reeves ratio `‖g_new‖² / ‖g_old‖²` in the H¹ product. `None` when
/// `g_old` vanishes.
pub fn fr_beta(g_new: &ScalarField, g_old: &ScalarField) -> Result<Option<f64>> {
    let den = h1_inner(g_old, g_old)?;
    if den == 0.0 {
        return Ok(None);
    }
    Ok(Some(h1_inner(g_new, g_new)? / den))
}

#[derive(Debug, Clone)]
pub struct Accepted<T> {
    pub step: f64,
    pub backtracks: usize,
    pub u: ScalarField,
    pub j: f64,
    pub extra: T,
}

/// Box projection for the line search, with the derivative `dĴ[·]` used to
/// predict the decrease along the projected step.
pub struct Projection<'a> {
    pub bounds: &'a BoxBounds,
    pub slope: &'a dyn Fn(&ScalarField) -> Result<f64>,
}

/// Backtracking search for the largest `s = s₀ shrinkⁿ` with
/// `J(u + s d) ≤ J(u) + c₁ s dd`. With a projection the trial is
/// `P(u + s d)` and the predicted decrease is `dĴ[P(u + s d) - u]`, which has
/// to be negative. `evaluate` returns `None` for a trial point it cannot
/// evaluate; such trials are rejected like a failed decrease test.
pub fn armijo_search<T>(
    mut evaluate: impl FnMut(&ScalarField) -> Result<Option<(f64, T)>>,
    u: &ScalarField,
    d: &ScalarField,
    j0: f64,
    dd: f64,
    ls: &LineSearchParams,
    project: Option<&Projection<'_>>,
) -> Result<Accepted<T>> {
    if !(dd < 0.0) {
        return Err(Error::NotDescent(dd));
    }
    let mut step = ls.initial_step;
    for backtracks in 0..=ls.max_backtracks {
        let mut trial = u.add_scaled(step, d)?;
        let predicted = match project {
            None => step * dd,
            Some(p) => {
                p.bounds.project(&mut trial);
                (p.slope)(&trial.add_scaled(-1.0, u)?)?
            }
        };
        if predicted < 0.0 {
            if let Some((j, extra)) = evaluate(&trial)? {
                if j <= j0 + ls.c1 * predicted {
                    return Ok(Accepted {
                        step,
                        backtracks,
                        u: trial,
                        j,
                        extra,
                    });
                }
            }
        }
        if backtracks < ls.max_backtracks {
            step *= ls.shrink;
        }
    }
    Err(Error::LineSearch {
        backtracks: ls.max_backtracks,
        step,
    })
}

/// Reduced gradient under box bounds and the active set. Active nodes sit on
/// (or within round-off of) a bound with the gradient step pointing outward; the gradient is the H¹
/// representer of `dĴ` on the controls that keep them fixed, so it vanishes
/// there.
pub fn box_gradient(
    sensitivity: &Sensitivity,
    state: &EquilibriumState,
    alpha: f64,
    bundle: &GradientBundle,
    bounds: &BoxBounds,
) -> Result<(ScalarField, Vec<bool>)> {
    let grid = state.grid().clone();
    let u = state.u.values();
    let slope = sensitivity.nodal_derivative(state, alpha, bundle)?;
    // the origin ring follows node 0
    let movable = |k: usize| !grid.is_boundary(k) && (k == 0 || !grid.is_origin(k));
    let near = |x: f64, bound: f64| (x - bound).abs() <= BOUND_SLACK * bound.abs().max(1.0);
    let blocked = |k: usize, step: f64| {
        (near(u[k], bounds.lower) && step < 0.0) || (near(u[k], bounds.upper) && step > 0.0)
    };
    let mut active: Vec<bool> = (0..grid.len())
        .map(|k| movable(k) && blocked(k, -slope[k]))
        .collect();
    loop {
        let g = sensitivity.lift_pinned(&slope, &active)?;
        let mut grew = false;
        for k in 0..grid.len() {
            if movable(k) && !active[k] && blocked(k, -g[k]) {
                active[k] = true;
                grew = true;
            }
        }
        if !grew {
            return Ok((g, active));
        }
    }
}

/// Final control, its equilibrium and the iteration history.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub u: ScalarField,
    pub state: EquilibriumState,
    pub bundle: GradientBundle,
    pub report: OptimizeReport,
}

pub fn ncg_minimize(
    equilibrium: &EquilibriumSolver,
    sensitivity: &Sensitivity,
    u0: &ScalarField,
    valley: &ScalarField,
    config: &OptimizeConfig,
) -> Result<Outcome> {
    config.validate()?;
    let alpha = config.alpha;
    let fp = &config.fixed_point;
    let mut u = u0.clone();
    if let Some(b) = &config.bounds {
        b.project(&mut u);
    }
    let mut state = equilibrium.solve_with_retries(&u, fp, None, FORWARD_RETRIES)?;
    let mut j = evaluate_j(&state, valley, alpha)?;
    let mut bundle = sensitivity.reduced_gradient(&state, valley, alpha)?;
    let mut active = Vec::new();
    if let Some(b) = &config.bounds {
        (bundle.grad, active) = box_gradient(sensitivity, &state, alpha, &bundle, b)?;
    }
    let mut d = bundle.grad.scaled(-1.0);

    let mut report = OptimizeReport {
        j_initial: j,
        grad_norm_initial: h1_norm(&bundle.grad),
        iterates: Vec::new(),
        termination: Termination::KMax,
        iterations: 0,
        abort_reason: None,
    };
    let mut steepest = true;

    for k in 0..config.k_max {
        if h1_norm(&bundle.grad) == 0.0 {
            report.termination = Termination::Tol;
            break;
        }
        let mut restarted = false;
        let mut dd = directional_derivative(&state, alpha, &bundle, &d)?;
        if !(dd < 0.0) && !steepest {
            d = bundle.grad.scaled(-1.0);
            dd = directional_derivative(&state, alpha, &bundle, &d)?;
            steepest = true;
            restarted = true;
        }

        let mut forward_error = None;
        let slope = |v: &ScalarField| directional_derivative(&state, alpha, &bundle, v);
        let projection = config.bounds.as_ref().map(|bounds| Projection {
            bounds,
            slope: &slope,
        });
        let mut search = |d: &ScalarField, dd: f64| {
            armijo_search(
                |trial| match equilibrium.solve_with_retries(
                    trial,
                    fp,
                    Some(&state.potential),
                    FORWARD_RETRIES,
                ) {
                    Ok(s) => Ok(Some((evaluate_j(&s, valley, alpha)?, s))),
                    Err(e @ Error::FixedPoint { .. }) => {
                        forward_error = Some(e.to_string());
                        Ok(None)
                    }
                    Err(e) => Err(e),
                },
                &u,
                d,
                j,
                dd,
                &config.line_search,
                projection.as_ref(),
            )
        };
        let mut result = search(&d, dd);
        if matches!(
            result,
            Err(Error::LineSearch { .. }) | Err(Error::NotDescent(_))
        ) && !steepest
        {
            d = bundle.grad.scaled(-1.0);
            dd = directional_derivative(&state, alpha, &bundle, &d)?;
            restarted = true;
            result = search(&d, dd);
        }
        let accepted = match result {
            Ok(a) => a,
            Err(e @ (Error::LineSearch { .. } | Error::NotDescent(_))) => {
                report.termination = if forward_error.is_some() {
                    Termination::ForwardFailure
                } else {
                    Termination::LineSearchFailure
                };
                report.abort_reason = Some(forward_error.unwrap_or_else(|| e.to_string()));
                break;
            }
            Err(e) => {
                report.termination = Termination::ForwardFailure;
                report.abort_reason = Some(e.to_string());
                break;
            }
        };

        let update_norm = h1_norm(&accepted.u.add_scaled(-1.0, &u)?);
        u = accepted.u;
        state = accepted.extra;
        j = accepted.j;
        let mut new_bundle = sensitivity.reduced_gradient(&state, valley, alpha)?;
        let mut active_changed = false;
        if let Some(b) = &config.bounds {
            let new_active;
            (new_bundle.grad, new_active) =
                box_gradient(sensitivity, &state, alpha, &new_bundle, b)?;
            active_changed = new_active != active;
            active = new_active;
            for (dk, &a) in d.values_mut().iter_mut().zip(&active) {
                if a {
                    *dk = 0.0;
                }
            }
        }

        let periodic_restart = (k + 1) % config.restart_period == 0 || active_changed;
        let beta = match config.method {
            Method::Steepest => 0.0,
            Method::Ncg if periodic_restart => 0.0,
            Method::Ncg => fr_beta(&new_bundle.grad, &bundle.grad)?.unwrap_or(0.0),
        };
        d = new_bundle.grad.scaled(-1.0).add_scaled(beta, &d)?;
        steepest = beta == 0.0;
        bundle = new_bundle;

        report.iterates.push(IterateRecord {
            k: k + 1,
            j,
            grad_norm: h1_norm(&bundle.grad),
            step: accepted.step,
            backtracks: accepted.backtracks,
            update_norm,
            beta,
            restarted: restarted || (periodic_restart && config.method == Method::Ncg),
        });
        if update_norm < config.tol {
            report.termination = Termination::Tol;
            break;
        }
    }
    report.iterations = report.iterates.len();
    Ok(Outcome {
        u,
        state,
        bundle,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PolarGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn grid(n: usize, m: usize) -> Arc<PolarGrid> {
        Arc::new(PolarGrid::new(n, m).unwrap())
    }

    #[test]
    fn beta_values() {
        let g = grid(16, 8);
        let a = ScalarField::from_polar(&g, |p, r| (1.0 - r) * p.cos());
        assert_eq!(fr_beta(&a, &a).unwrap(), Some(1.0));
        let b = fr_beta(&a.scaled(2.0), &a).unwrap().unwrap();
        assert!((b - 4.0).abs() < 1e-14);
        assert_eq!(fr_beta(&ScalarField::zeros(&g), &a).unwrap(), Some(0.0));
        assert_eq!(fr_beta(&a, &ScalarField::zeros(&g)).unwrap(), None);
    }

    #[test]
    fn armijo_on_quadratic_accepts_unit_step() {
        let g = grid(16, 8);
        let u = ScalarField::from_polar(&g, |p, r| (1.0 - r * r) * (1.0 + p.sin()));
        let d = u.scaled(-1.0);
        let q = |x: &ScalarField| 0.5 * h1_inner(x, x).unwrap();
        let dd = h1_inner(&u, &d).unwrap();
        let ls = LineSearchParams {
            c1: 0.5,
            ..Default::default()
        };
        let acc = armijo_search(|x| Ok(Some((q(x), ()))), &u, &d, q(&u), dd, &ls, None).unwrap();
        assert_eq!(acc.step, 1.0);
        assert_eq!(acc.backtracks, 0);
        assert!(acc.j.abs() < 1e-28);
    }

    #[test]
    fn armijo_backtracks_and_rejects_ascent() {
        let g = grid(8, 4);
        let u = ScalarField::constant(&g, 1.0);
        let d = ScalarField::constant(&g, -1.0);
        // f(x) = (x0 - 0.1)²: s = 1 overshoots past the minimum
        let f = |x: &ScalarField| (x[5] - 0.1) * (x[5] - 0.1);
        let ls = LineSearchParams {
            initial_step: 4.0,
            ..Default::default()
        };
        let acc = armijo_search(|x| Ok(Some((f(x), ()))), &u, &d, f(&u), -1.8, &ls, None).unwrap();
        assert!(acc.backtracks > 0);
        assert!(acc.j < f(&u));
        assert!(matches!(
            armijo_search(|x| Ok(Some((f(x), ()))), &u, &d, f(&u), 0.3, &ls, None),
            Err(Error::NotDescent(_))
        ));
        let never = armijo_search(|_| Ok(None::<(f64, ())>), &u, &d, 0.0, -1.0, &ls, None);
        assert!(matches!(
            never,
            Err(Error::LineSearch { backtracks: 30, .. })
        ));
    }

    fn random_control(g: &Arc<PolarGrid>, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::from_polar(g, |p, r| {
            (1.0 - r * r) * (a[0] + a[1] * p.cos() + a[2] * (2.0 * p).sin() + a[3] * r)
        })
    }

    #[test]
    fn pure_regularization_goes_to_zero() {
        let g = grid(16, 12);
        let eq = EquilibriumSolver::new(&g).unwrap();
        let sens = Sensitivity::new(&g, AdjointModel::Exact).unwrap();
        let config = OptimizeConfig {
            alpha: 1e-2,
            line_search: LineSearchParams {
                initial_step: 100.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = ncg_minimize(
            &eq,
            &sens,
            &random_control(&g, 3),
            &ScalarField::zeros(&g),
            &config,
        )
        .unwrap();
        assert_eq!(out.report.termination, Termination::Tol);
        assert!(h1_norm(&out.u) <= 10.0 * config.tol);
        assert!(out.report.is_monotone());
    }

    #[test]
    fn steepest_never_applies_beta() {
        let g = grid(16, 12);
        let eq = EquilibriumSolver::new(&g).unwrap();
        let sens = Sensitivity::new(&g, AdjointModel::Exact).unwrap();
        let config = OptimizeConfig {
            alpha: 1e-2,
            method: Method::Steepest,
            k_max: 5,
            ..Default::default()
        };
        let v = ScalarField::from_polar(&g, |_, r| -(-r * r / 0.1).exp());
        let out = ncg_minimize(&eq, &sens, &ScalarField::zeros(&g), &v, &config).unwrap();
        assert!(out.report.iterates.iter().all(|r| r.beta == 0.0));
        assert!(out.report.is_monotone());
        assert!(out.report.j_final() < out.report.j_initial);
    }

    #[test]
    fn zero_box_pins_the_control() {
        let g = grid(16, 12);
        let eq = EquilibriumSolver::new(&g).unwrap();
        let sens = Sensitivity::new(&g, AdjointModel::Exact).unwrap();
        let config = OptimizeConfig {
            bounds: Some(BoxBounds {
                lower: 0.0,
                upper: 0.0,
            }),
            k_max: 3,
            ..Default::default()
        };
        let v = ScalarField::from_polar(&g, |_, r| -(-r * r / 0.1).exp());
        let out = ncg_minimize(&eq, &sens, &ScalarField::zeros(&g), &v, &config).unwrap();
        assert_eq!(out.u.max_abs(), 0.0);
        for rec in &out.report.iterates {
            assert!((rec.j - out.report.j_initial).abs() < 1e-12);
        }
    }

    #[test]
    fn active_bounds_still_converge() {
        let g = grid(24, 16);
        let eq = EquilibriumSolver::new(&g).unwrap();
        let sens = Sensitivity::new(&g, AdjointModel::Exact).unwrap();
        let bounds = BoxBounds {
            lower: -2.0,
            upper: 2.0,
        };
        let config = OptimizeConfig {
            bounds: Some(bounds),
            line_search: LineSearchParams {
                initial_step: 1000.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let v = ScalarField::from_polar(&g, |p, r| {
            -(-r * r * (p.cos().powi(2) / 0.005 + p.sin().powi(2) / 0.18)).exp()
        });
        let out = ncg_minimize(&eq, &sens, &ScalarField::zeros(&g), &v, &config).unwrap();
        assert_eq!(out.report.termination, Termination::Tol);
        assert!(out.report.is_monotone());
        let vals = out.u.values();
        assert!(vals.iter().all(|&x| (-2.0..=2.0).contains(&x)));
        assert!(vals.iter().any(|&x| x == -2.0));

        let (gb, active) =
            box_gradient(&sens, &out.state, config.alpha, &out.bundle, &bounds).unwrap();
        for k in 0..g.len() {
            if active[k] {
                assert!(gb[k].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_reports() {
        let g = grid(16, 12);
        let eq = EquilibriumSolver::new(&g).unwrap();
        let sens = Sensitivity::new(&g, AdjointModel::Exact).unwrap();
        let config = OptimizeConfig {
            k_max: 4,
            ..Default::default()
        };
        let v = ScalarField::from_polar(&g, |p, r| -(-r * r * (1.0 + p.cos().powi(2)) / 0.1).exp());
        let a = ncg_minimize(&eq, &sens, &ScalarField::zeros(&g), &v, &config).unwrap();
        let b = ncg_minimize(&eq, &sens, &ScalarField::zeros(&g), &v, &config).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.u, b.u);
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizeConfig::default();
        c.line_search.c1 = 1.5;
        assert!(c.validate().is_err());
        let c = OptimizeConfig {
            bounds: Some(BoxBounds {
                lower: 0.5,
                upper: 1.0,
            }),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(OptimizeConfig::default().validate().is_ok());
    }
}
