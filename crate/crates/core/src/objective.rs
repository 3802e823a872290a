//! Valley functions and the regularized ensemble objective
//! `J = ∫ V ρ + α/2 ‖u‖²_{H¹}`.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::grid::{h1_inner, l2_inner, PolarGrid, ScalarField};
use crate::workbench::fields::read_field;

fn one() -> f64 {
    1.0
}

fn default_clover_scale() -> f64 {
    0.7
}

/// Shape of the valley `V`; the density is pushed towards its low values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValleySpec {
    /// `-A exp(-|x - x₀|² / (2a²))`
    Gaussian {
        #[serde(default = "one")]
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    /// `-A exp(-r² (cos²φ / (2a_x²) + sin²φ / (2a_y²)))`
    AnisotropicGaussian {
        #[serde(default = "one")]
        amplitude: f64,
        width_x: f64,
        width_y: f64,
    },
    /// `-d` on the four-petal rose `r ≤ c |cos 2φ|`, zero elsewhere.
    Clover {
        #[serde(default = "one")]
        depth: f64,
        #[serde(default = "default_clover_scale")]
        scale: f64,
    },
    /// Same value everywhere; `0` gives the pure regularization problem.
    Constant { value: f64 },
    /// A field dump on the active grid.
    FromFile { path: PathBuf },
}

impl ValleySpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        match self {
            ValleySpec::Gaussian {
                amplitude,
                width,
                center,
            } => {
                positive("amplitude", *amplitude)?;
                positive("width", *width)?;
                if center[0].hypot(center[1]) > 1.0 {
                    return Err(Error::Parameter(format!(
                        "valley center {center:?} lies outside the unit disk"
                    )));
                }
            }
            ValleySpec::AnisotropicGaussian {
                amplitude,
                width_x,
                width_y,
            } => {
                positive("amplitude", *amplitude)?;
                positive("width_x", *width_x)?;
                positive("width_y", *width_y)?;
            }
            ValleySpec::Clover { depth, scale } => {
                positive("depth", *depth)?;
                positive("scale", *scale)?;
            }
            ValleySpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Parameter("constant valley must be finite".into()));
                }
            }
            ValleySpec::FromFile { .. } => {}
        }
        Ok(())
    }
}

/// True where `(r, φ)` lies in the rose region `r ≤ c |cos 2φ|`.
pub fn in_clover(scale: f64, phi: f64, r: f64) -> bool {
    r <= scale * (2.0 * phi).cos().abs()
}

pub fn valley_eval(spec: &ValleySpec, grid: &Arc<PolarGrid>) -> Result<ScalarField> {
    spec.validate()?;
    let field = match *spec {
        ValleySpec::Gaussian {
            amplitude,
            width,
            center,
        } => ScalarField::from_polar(grid, |p, r| {
            let (dx, dy) = (r * p.cos() - center[0], r * p.sin() - center[1]);
            -amplitude * (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
        }),
        ValleySpec::AnisotropicGaussian {
            amplitude,
            width_x,
            width_y,
        } => ScalarField::from_polar(grid, |p, r| {
            let (s, c) = p.sin_cos();
            let q = c * c / (2.0 * width_x * width_x) + s * s / (2.0 * width_y * width_y);
            -amplitude * (-r * r * q).exp()
        }),
        ValleySpec::Clover { depth, scale } => {
            ScalarField::from_polar(
                grid,
                |p, r| {
                    if in_clover(scale, p, r) {
                        -depth
                    } else {
                        0.0
                    }
                },
            )
        }
        ValleySpec::Constant { value } => ScalarField::constant(grid, value),
        ValleySpec::FromFile { ref path } => read_field(path, grid)?,
    };
    Ok(field)
}

/// `∫ V ρ`, the expectation of the valley under the density.
pub fn ensemble_term(valley: &ScalarField, rho: &ScalarField) -> Result<f64> {
    l2_inner(valley, rho)
}

/// `α/2 ‖u‖²_{H¹}`
pub fn regularization(u: &ScalarField, alpha: f64) -> Result<f64> {
    Ok(0.5 * alpha * h1_inner(u, u)?)
}

pub fn evaluate_j(state: &EquilibriumState, valley: &ScalarField, alpha: f64) -> Result<f64> {
    Ok(ensemble_term(valley, &state.rho)? + regularization(&state.u, alpha)?)
}
