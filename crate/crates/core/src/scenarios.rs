//! In-repo scenario library.

use crate::coefficients::{CoefficientField, ScalarFn, ScenarioRhs, SymMat};
use crate::epiperimetric::{eval_h, eval_h_nu};
use crate::error::{Error, Result};
use crate::geometry::{norm, Point};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const NAMES: [&str; 5] = [
    "laplace-exact",
    "laplace-exact-3d",
    "lipschitz-perturbed",
    "nonzero-obstacle",
    "frequency-two",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    /// Dimension for scenarios that exist in both 2 and 3 dimensions.
    pub dim: usize,
    /// Size of the coefficient perturbation.
    pub epsilon: f64,
    /// Height of the obstacle cap `c(1 − |x'|²)`.
    pub cap: f64,
    /// Rotation of the free boundary line inside the thin plane (degrees).
    pub thin_rotation_deg: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            dim: 2,
            epsilon: 0.1,
            cap: 0.1,
            thin_rotation_deg: 0.0,
        }
    }
}

#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub coefficients: CoefficientField,
    pub data: ScenarioRhs,
    /// Closed-form solution of the normalized problem, when known.
    pub exact: Option<ScalarFn>,
    /// Free boundary point the monitors are centred at; `None` means the
    /// point nearest the origin is detected from the solution.
    pub center: Option<Point>,
    /// Thin direction of the exact blowup at the center, when known.
    pub direction: Option<Point>,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("coefficients", &self.coefficients)
            .field("center", &self.center)
            .finish()
    }
}

/// `A = I + ε·diag(x_1, …, x_{n−1}, |x|)`: Lipschitz with constant `ε`,
/// equal to `I` at the origin and diagonal (so `a_in = 0` everywhere).
pub fn lipschitz_field(dim: usize, eps: f64) -> CoefficientField {
    let lambda = (1.0 - eps).min(1.0 / (1.0 + eps * (dim as f64).sqrt()));
    CoefficientField::new(dim, lambda, eps, format!("lipschitz-{eps}"), move |x| {
        let mut d = [0.0; 3];
        for (a, da) in d.iter_mut().enumerate().take(dim - 1) {
            *da = 1.0 + eps * x[a];
        }
        d[dim - 1] = 1.0 + eps * norm(x, dim);
        SymMat::diag(&d[..dim])
    })
}

pub fn build(name: &str, params: &ScenarioParams) -> Result<Scenario> {
    let dim = params.dim;
    if dim != 2 && dim != 3 {
        return Err(Error::Dimension(dim));
    }
    let s = match name {
        "laplace-exact" => {
            let exact: ScalarFn = Arc::new(move |x: &Point| eval_h(x, dim));
            let e = exact.clone();
            Scenario {
                name: name.into(),
                dim,
                coefficients: CoefficientField::identity(dim),
                data: ScenarioRhs::homogeneous(move |x| e(x)),
                exact: Some(exact),
                center: Some([0.0; 3]),
                direction: Some([1.0, 0.0, 0.0]),
            }
        }
        "laplace-exact-3d" => {
            let a = params.thin_rotation_deg.to_radians();
            let nu = [a.cos(), a.sin(), 0.0];
            let exact: ScalarFn = Arc::new(move |x: &Point| eval_h_nu(x, 3, &nu));
            let e = exact.clone();
            Scenario {
                name: name.into(),
                dim: 3,
                coefficients: CoefficientField::identity(3),
                data: ScenarioRhs::homogeneous(move |x| e(x)),
                exact: Some(exact),
                center: Some([0.0; 3]),
                direction: Some(nu),
            }
        }
        "lipschitz-perturbed" => Scenario {
            name: name.into(),
            dim,
            coefficients: lipschitz_field(dim, params.epsilon),
            data: ScenarioRhs::homogeneous(move |x| eval_h(x, dim)),
            exact: None,
            center: None,
            direction: None,
        },
        "nonzero-obstacle" => {
            let c = params.cap;
            let cap = move |x: &Point| {
                let r2: f64 = x[..dim - 1].iter().map(|t| t * t).sum();
                c * (1.0 - r2)
            };
            Scenario {
                name: name.into(),
                dim,
                coefficients: CoefficientField::identity(dim),
                data: ScenarioRhs::new(
                    move |x| cap(x),
                    |_| 0.0,
                    move |x| eval_h(x, dim) + cap(x),
                    0.0,
                ),
                exact: None,
                center: None,
                direction: None,
            }
        }
        "frequency-two" => {
            let exact: ScalarFn = Arc::new(move |x: &Point| x[0] * x[0] - x[dim - 1] * x[dim - 1]);
            let e = exact.clone();
            Scenario {
                name: name.into(),
                dim,
                coefficients: CoefficientField::identity(dim),
                data: ScenarioRhs::homogeneous(move |x| e(x)),
                exact: Some(exact),
                center: Some([0.0; 3]),
                direction: None,
            }
        }
        other => return Err(Error::Parameter(format!("unknown scenario {other:?}"))),
    };
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::validate;

    #[test]
    fn library_validates() {
        for name in NAMES {
            for dim in [2, 3] {
                let s = build(
                    name,
                    &ScenarioParams {
                        dim,
                        thin_rotation_deg: 20.0,
                        ..Default::default()
                    },
                )
                .unwrap();
                let r = validate(&s.coefficients, 500).unwrap();
                assert!(r.origin_defect < 1e-15);
            }
        }
        assert!(build("nope", &ScenarioParams::default()).is_err());
    }

    #[test]
    fn cap_obstacle_compatible() {
        let s = build("nonzero-obstacle", &ScenarioParams::default()).unwrap();
        let g = crate::geometry::build_grid(2, 33).unwrap();
        s.data.check_compatibility(&g).unwrap();
    }
}
