//! Recentering at free boundary points, homogeneous and Almgren scalings,
//! fits to the family `a·h_ν` and the regular/non-regular classification.

use crate::coefficients::{conformal_mu, flux_divergence, CoefficientField, SymMat};
use crate::epiperimetric::{eval_h, eval_h_nu};
use crate::error::{Error, Result};
use crate::fit::{golden_section, linear_fit, power_fit};
use crate::geometry::{default_resolution, norm, radius_ladder, BallQuadrature, Grid, GridField, Point, SphereRule};
use crate::monitors::{MonitorParams, RadialContext, RadialProfile, RadialSample, SolutionView};
use crate::solver::{cell_inner, contact_tolerance, SignoriniSolution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Regular,
    NonRegular,
    Undecided,
}

/// `a·h_ν` fitted to a scaling of `v` at radius `radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlowupFit {
    pub amplitude: f64,
    /// Unit thin direction (`e_1` or `−e_1` for `n = 2`).
    pub direction: Point,
    /// `‖v_r − a h_ν‖` in discrete `W^{1,2}(B_1)`.
    pub residual: f64,
    /// `‖v_r‖` in the same norm.
    pub norm: f64,
    pub radius: f64,
}

impl BlowupFit {
    pub fn relative_residual(&self) -> f64 {
        if self.norm > 0.0 {
            self.residual / self.norm
        } else {
            0.0
        }
    }

    /// Angle of the direction in the thin plane.
    pub fn angle(&self) -> f64 {
        self.direction[1].atan2(self.direction[0])
    }

    pub fn eval(&self, x: &Point, dim: usize) -> f64 {
        self.amplitude * eval_h_nu(x, dim, &self.direction)
    }
}

/// Angle between two thin directions, in radians.
pub fn direction_angle(a: &Point, b: &Point) -> f64 {
    let c = (a[0] * b[0] + a[1] * b[1]).clamp(-1.0, 1.0);
    c.acos()
}

/// `∫_{S_1} h²`, by quadrature.
pub fn model_height(dim: usize) -> f64 {
    let rule = SphereRule::unit(dim, default_resolution(dim)).expect("valid dimension");
    rule.integrate(|x| eval_h(x, dim).powi(2))
}

/// `c_n = (∫_{S_1} h²)^{-1/2}`, the amplitude of an Almgren-normalized blowup.
pub fn almgren_constant(dim: usize) -> f64 {
    model_height(dim).powf(-0.5)
}

/// A field moved so that a free boundary point sits at the origin with
/// `A(0) = I`.
#[derive(Clone, Debug)]
pub struct Recentered {
    pub center: Point,
    pub field: GridField,
    pub coefficients: CoefficientField,
    pub rhs: GridField,
    /// `b_{x0} = ⟨A^{1/2}(x0)∇v(x0), e_n⟩`, subtracted as `b x_n`.
    pub b: f64,
    /// Radius of the ball around the new origin on which the field is
    /// sampled from inside the original box.
    pub valid_radius: f64,
    pub center_gradient: f64,
    /// `max|v|` of the input field.
    pub scale: f64,
}

impl Recentered {
    pub fn view(&self) -> SolutionView<'_> {
        SolutionView {
            field: &self.field,
            coefficients: &self.coefficients,
            rhs: Some(&self.rhs),
        }
    }

    pub fn grid(&self) -> Grid {
        self.field.grid
    }
}

fn thin_neighbours(grid: &Grid, x0: &Point, radius: f64) -> Vec<usize> {
    let dim = grid.dim();
    grid.thin_nodes()
        .into_iter()
        .filter(|&p| {
            let x = grid.point(p);
            (0..dim - 1).map(|a| (x[a] - x0[a]).powi(2)).sum::<f64>().sqrt() <= radius + 1e-12
        })
        .collect()
}

/// Checks that `x0` lies on the thin plane, `v(x0) ≈ 0`, and that both
/// contact and positive thin nodes lie within `2·hstep`.
pub fn check_free_boundary_point(field: &GridField, x0: &Point) -> Result<()> {
    let g = field.grid;
    let dim = g.dim();
    if x0[dim - 1] != 0.0 || !g.contains(x0) {
        return Err(Error::NotFreeBoundary(format!("{x0:?} (off the thin plane)")));
    }
    let scale = field.max_abs();
    let zero = 1e-6 * scale;
    let v0 = field.interpolate(x0)?;
    if v0.abs() > contact_tolerance(&g, scale) + zero {
        return Err(Error::NotFreeBoundary(format!("{x0:?} (trace {v0:.3e})")));
    }
    let near = thin_neighbours(&g, x0, 2.0 * g.hstep());
    let contact = near.iter().any(|&p| field.values[p].abs() <= zero);
    let positive = near.iter().any(|&p| field.values[p] > zero);
    if !(contact && positive) {
        return Err(Error::NotFreeBoundary(format!(
            "{x0:?} (no change of contact within two grid steps)"
        )));
    }
    Ok(())
}

/// `v_{x0}(x) = v(x0 + A^{1/2}(x0)x) − b_{x0}x_n`, with
/// `A_{x0} = A^{-1/2}(x0) A(x0 + A^{1/2}(x0)x) A^{-1/2}(x0)` and the matching
/// right-hand side `f(x0 + A^{1/2}x) − b_{x0} div(A_{x0} e_n)`.
///
/// `field` must have zero thin obstacle (a normalized solution).
pub fn recenter(
    field: &GridField,
    coefficients: &CoefficientField,
    rhs: Option<&GridField>,
    x0: &Point,
) -> Result<Recentered> {
    let g = field.grid;
    let dim = g.dim();
    let h = g.hstep();
    check_free_boundary_point(field, x0)?;
    let scale = field.max_abs();
    let with_layers;
    let field = if field.layers.is_some() {
        field
    } else {
        with_layers = field.clone().with_layers();
        &with_layers
    };
    let identity = coefficients.is_identity();
    let s = if identity {
        SymMat::identity(dim)
    } else {
        coefficients.eval(x0).sqrt()?
    };
    let s_inv = if identity { s } else { coefficients.eval(x0).inv_sqrt()? };
    for a in 0..dim - 1 {
        if s.get(dim - 1, a).abs() > 1e-12 * s.max_abs() {
            return Err(Error::Assumption(format!(
                "A^{{1/2}}(x0) mixes thin and normal directions at {x0:?}"
            )));
        }
    }
    let (dp, dm) = field.normal_derivatives(x0).expect("layers attached");
    let b = s.get(dim - 1, dim - 1) * 0.5 * (dp + dm);
    let c0 = *x0;
    let map = move |x: &Point| -> Point {
        let y = s.mul_vec(x);
        [c0[0] + y[0], c0[1] + y[1], c0[2] + y[2]]
    };
    let clamp = |y: Point| -> Point {
        let mut c = y;
        for v in c.iter_mut().take(dim) {
            *v = v.clamp(-1.0, 1.0);
        }
        c
    };
    let trivial = identity && x0.iter().all(|c| *c == 0.0) && b == 0.0;
    let values = if trivial {
        field.values.clone()
    } else {
        (0..g.node_count())
            .into_par_iter()
            .map(|i| {
                let x = g.point(i);
                field.interpolate_unchecked(&clamp(map(&x))) - b * x[dim - 1]
            })
            .collect()
    };
    let new_field = GridField::from_values(g, values)?.with_layers();
    let new_coeffs = if identity {
        CoefficientField::identity(dim)
    } else {
        let base = coefficients.clone();
        let lambda = coefficients.lambda * coefficients.lambda;
        let lip = coefficients.lipschitz / coefficients.lambda.powf(1.5);
        CoefficientField::new(dim, lambda, lip, format!("{}@{:?}", coefficients.name, x0), move |x| {
            s_inv.mul(&base.eval(&map(x))).mul(&s_inv)
        })
    };
    if !identity {
        let a0 = new_coeffs.eval(&[0.0; 3]);
        let defect = a0.max_abs_diff(&SymMat::identity(dim));
        if defect > 1e-10 {
            return Err(Error::Assumption(format!("recentered A(0) differs from I by {defect:.2e}")));
        }
    }
    let step = 0.5 * h;
    let rhs_values: Vec<f64> = (0..g.node_count())
        .into_par_iter()
        .map(|i| {
            let x = g.point(i);
            let f = match rhs {
                Some(r) if trivial => r.values[i],
                Some(r) => r.interpolate_unchecked(&clamp(map(&x))),
                None => 0.0,
            };
            if identity || b == 0.0 {
                f
            } else {
                let mut en = [0.0; 3];
                en[dim - 1] = 1.0;
                f - b * flux_divergence(dim, &x, step, |y| new_coeffs.eval(y).mul_vec(&en))
            }
        })
        .collect();
    let rhs = GridField::from_values(g, rhs_values)?;
    let linf = x0[..dim].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let smax = s.eigenvalues().into_iter().fold(0.0f64, f64::max);
    let valid_radius = ((1.0 - linf) / smax - 2.0 * h).clamp(0.0, 1.0);
    let grad = new_field.gradient(&[0.0; 3])?;
    let center_gradient = norm(&grad, dim);
    let tol_g = 4.0 * h.sqrt() * scale.max(1e-300);
    if center_gradient > tol_g {
        return Err(Error::NotFreeBoundary(format!(
            "{x0:?} (gradient {center_gradient:.3e} after recentering)"
        )));
    }
    debug_assert!((conformal_mu(&new_coeffs, &[0.0; 3]) - 1.0).abs() < 1e-12);
    Ok(Recentered {
        center: *x0,
        field: new_field,
        coefficients: new_coeffs,
        rhs,
        b,
        valid_radius,
        center_gradient,
        scale,
    })
}

/// Recenters a normalized (or zero-obstacle) solution.
pub fn recenter_solution(sol: &SignoriniSolution, x0: &Point) -> Result<Recentered> {
    if sol.obstacle.iter().any(|o| *o != 0.0) {
        return Err(Error::Assumption("recentering needs a normalized solution".into()));
    }
    recenter(&sol.field, &sol.coefficients, Some(&sol.rhs), x0)
}

/// A field rescaled to `B_1` together with its rescaled data.
#[derive(Clone, Debug)]
pub struct Scaled {
    pub radius: f64,
    pub field: GridField,
    pub rhs: GridField,
    pub coefficients: CoefficientField,
    /// Almgren factor `d`, or `r^{3/2}` for the homogeneous scaling.
    pub divisor: f64,
}

impl Scaled {
    pub fn view(&self) -> SolutionView<'_> {
        SolutionView {
            field: &self.field,
            coefficients: &self.coefficients,
            rhs: Some(&self.rhs),
        }
    }
}

fn scaled_field(rec: &Recentered, r: f64, divisor: f64) -> Result<Scaled> {
    let g = rec.grid();
    let dim = g.dim();
    if r < 2.0 * g.hstep() * (1.0 - 1e-12) || r > 1.0 + 1e-12 {
        return Err(Error::Radius {
            radius: r,
            min: 2.0 * g.hstep(),
            max: 1.0,
        });
    }
    let field = GridField::from_fn(g, |x| rec.field.interpolate_unchecked(&[r * x[0], r * x[1], r * x[2]]) / divisor)
        .with_layers();
    // f_r(x) = r^{1/2} f(rx) for the homogeneous scaling; the Almgren
    // scaling carries r² f(rx)/d.
    let factor = r * r / divisor;
    let rhs = GridField::from_fn(g, |x| factor * rec.rhs.interpolate_unchecked(&[r * x[0], r * x[1], r * x[2]]));
    let coefficients = if rec.coefficients.is_identity() {
        CoefficientField::identity(dim)
    } else {
        let base = rec.coefficients.clone();
        CoefficientField::new(
            dim,
            base.lambda,
            base.lipschitz * r,
            format!("{}·{r}", base.name),
            move |x| base.eval(&[r * x[0], r * x[1], r * x[2]]),
        )
    };
    Ok(Scaled {
        radius: r,
        field,
        rhs,
        coefficients,
        divisor,
    })
}

/// `v_r(x) = v(rx)/r^{3/2}` with `A_r(x) = A(rx)` and `f_r(x) = r^{1/2}f(rx)`.
pub fn homogeneous_scaling(rec: &Recentered, r: f64) -> Result<Scaled> {
    scaled_field(rec, r, r.powf(1.5))
}

/// `ṽ(x) = v(rx)/d` with `d = (H(r)/r^{n−1})^{1/2}`.
pub fn almgren_scaling(rec: &Recentered, r: f64) -> Result<Scaled> {
    let dim = rec.grid().dim();
    let ctx = RadialContext::new(rec.view(), None)?;
    let hr = ctx.height(r)?;
    if hr <= 1e-14 * rec.scale * rec.scale || hr == 0.0 {
        return Err(Error::VanishingHeight);
    }
    let d = (hr / r.powi(dim as i32 - 1)).sqrt();
    scaled_field(rec, r, d)
}

/// `∫_{S_1}|v_t − v_s|` for homogeneous scalings.
pub fn decay_curve(rec: &Recentered, s: f64, t: f64) -> Result<f64> {
    let dim = rec.grid().dim();
    let rule = SphereRule::unit(dim, default_resolution(dim))?;
    let mut acc = 0.0;
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let vt = rec.field.interpolate(&[t * p[0], t * p[1], t * p[2]])? / t.powf(1.5);
        let vs = rec.field.interpolate(&[s * p[0], s * p[1], s * p[2]])? / s.powf(1.5);
        acc += w * (vt - vs).abs();
    }
    Ok(acc)
}

/// Discrete `W^{1,2}(B_1)` inner product of homogeneous scalings at radius
/// `r`, evaluated on the original grid over `B_r`:
/// `⟨u_r, w_r⟩ = r^{-3-n}∫_{B_r} u w + r^{-1-n}∫_{B_r} ∇u·∇w`.
struct ScaledInner {
    grid: Grid,
    quad: BallQuadrature,
    l2_factor: f64,
    h1_factor: f64,
}

impl ScaledInner {
    fn new(grid: Grid, r: f64) -> Result<Self> {
        let n = grid.dim() as i32;
        Ok(Self {
            grid,
            quad: BallQuadrature::new(&grid, r)?,
            l2_factor: r.powi(-3 - n),
            h1_factor: r.powi(-1 - n),
        })
    }

    fn inner(&self, u: &[f64], w: &[f64]) -> f64 {
        let l2: f64 = self.quad.node_weights.iter().map(|(i, c)| c * u[*i] * w[*i]).sum();
        let h1: f64 = self
            .quad
            .cells
            .iter()
            .map(|(b, f)| f * cell_inner(&self.grid, *b, u, w))
            .sum();
        self.l2_factor * l2 + self.h1_factor * h1
    }

    fn sample(&self, f: impl Fn(&Point) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.node_count()];
        for (i, _) in &self.quad.node_weights {
            out[*i] = f(&self.grid.point(*i));
        }
        out
    }
}

fn thin_direction(dim: usize, theta: f64) -> Point {
    if dim == 2 {
        [theta.cos().signum(), 0.0, 0.0]
    } else {
        [theta.cos(), theta.sin(), 0.0]
    }
}

/// Fits `a·h_ν` (`a ≥ 0`) to the homogeneous scaling of `field` at radius
/// `r` in discrete `W^{1,2}(B_1)`. For `n = 3` the thin angle is found by a
/// 72-point scan refined by golden-section search.
pub fn fit_at_radius(field: &GridField, r: f64) -> Result<BlowupFit> {
    let g = field.grid;
    let dim = g.dim();
    if r < 2.0 * g.hstep() * (1.0 - 1e-12) {
        return Err(Error::Radius {
            radius: r,
            min: 2.0 * g.hstep(),
            max: 1.0,
        });
    }
    let ip = ScaledInner::new(g, r)?;
    let vv = ip.inner(&field.values, &field.values);
    let score = |theta: f64| -> (f64, f64) {
        let nu = thin_direction(dim, theta);
        let hv = ip.sample(|x| eval_h_nu(x, dim, &nu));
        let c = ip.inner(&field.values, &hv);
        let hh = ip.inner(&hv, &hv);
        (c, hh)
    };
    let best_theta = if dim == 2 {
        let (cp, hp) = score(0.0);
        let (cm, hm) = score(PI);
        let sp = cp.max(0.0).powi(2) / hp;
        let sm = cm.max(0.0).powi(2) / hm;
        if sm > sp {
            PI
        } else {
            0.0
        }
    } else {
        let m = 72;
        let step = 2.0 * PI / m as f64;
        let scan: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|k| {
                let (c, hh) = score(k as f64 * step);
                c.max(0.0).powi(2) / hh
            })
            .collect();
        let k = (0..m).max_by(|a, b| scan[*a].total_cmp(&scan[*b])).unwrap_or(0);
        let t0 = k as f64 * step;
        let (t, _) = golden_section(t0 - step, t0 + step, 1e-5, |t| {
            let (c, hh) = score(t);
            -c.max(0.0).powi(2) / hh
        });
        t.rem_euclid(2.0 * PI)
    };
    let (c, hh) = score(best_theta);
    let a = if hh > 0.0 { (c / hh).max(0.0) } else { 0.0 };
    let residual = (vv - 2.0 * a * c + a * a * hh).max(0.0).sqrt();
    Ok(BlowupFit {
        amplitude: a,
        direction: thin_direction(dim, best_theta),
        residual,
        norm: vv.max(0.0).sqrt(),
        radius: r,
    })
}

/// `‖v_r − f‖` in discrete `W^{1,2}(B_1)`, with `f` evaluated on `B_1`.
pub fn scaled_distance(field: &GridField, r: f64, f: impl Fn(&Point) -> f64) -> Result<f64> {
    let g = field.grid;
    let ip = ScaledInner::new(g, r)?;
    let fr = ip.sample(|x| r.powf(1.5) * f(&crate::geometry::scale(x, 1.0 / r)));
    let diff: Vec<f64> = field.values.iter().zip(&fr).map(|(a, b)| a - b).collect();
    Ok(ip.inner(&diff, &diff).max(0.0).sqrt())
}

/// Fit of a field already living on `B_1`.
pub fn fit_to_family(w: &GridField) -> Result<BlowupFit> {
    fit_at_radius(w, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupParams {
    pub delta: f64,
    pub k_prime: f64,
    pub r_max: f64,
    pub ratio: f64,
    /// Smallest reliable radius in units of `hstep`.
    pub reliable_steps: f64,
    /// Number of smallest reliable radii used to extrapolate `Ñ(0+)`.
    pub extrapolation_points: usize,
    /// Classification band; `None` gives `min(0.1, δ/6)`.
    pub band: Option<f64>,
    /// `a_min` as a fraction of `max|v|`.
    pub a_min_fraction: f64,
}

impl Default for BlowupParams {
    fn default() -> Self {
        Self {
            delta: 0.5,
            k_prime: 0.0,
            r_max: 0.9,
            ratio: 0.93,
            reliable_steps: 6.0,
            extrapolation_points: 5,
            band: None,
            a_min_fraction: 1e-3,
        }
    }
}

impl BlowupParams {
    pub fn band(&self) -> f64 {
        self.band.unwrap_or(0.1f64.min(self.delta / 6.0))
    }

    pub fn monitor(&self) -> MonitorParams {
        MonitorParams {
            delta: self.delta,
            k_prime: self.k_prime,
            r_max: self.r_max,
            ratio: self.ratio,
            ..MonitorParams::default()
        }
    }
}

/// Scalings of a recentered field over a radius ladder.
#[derive(Clone, Debug)]
pub struct ScalingStack {
    pub recentered: Recentered,
    pub params: BlowupParams,
    /// Profile of the recentered field as given.
    pub profile: RadialProfile,
    /// Profile after rescaling the amplitude so that `M(r_top) = c_h r_top³`.
    pub normalized: RadialProfile,
    /// `c²` applied to the height and energies for `normalized`.
    pub amplitude_factor: f64,
    /// Almgren factors `d_r` on the ladder.
    pub almgren: Vec<f64>,
}

impl ScalingStack {
    pub fn build(recentered: Recentered, params: &BlowupParams) -> Result<Self> {
        let g = recentered.grid();
        let dim = g.dim();
        let monitor = params.monitor();
        monitor.check()?;
        let top = params.r_max.min(recentered.valid_radius);
        let ladder = radius_ladder(top, params.ratio, 4.0 * g.hstep());
        if ladder.len() < 3 {
            return Err(Error::TooFewPoints(format!(
                "{} ladder radii below valid radius {:.3}",
                ladder.len(),
                recentered.valid_radius
            )));
        }
        let ctx = RadialContext::new(recentered.view(), monitor.resolution)?;
        let samples: Vec<RadialSample> = ladder.par_iter().map(|&r| ctx.sample(r)).collect::<Result<_>>()?;
        let scale = recentered.field.max_abs();
        let profile = RadialProfile::assemble(dim, scale, &monitor, &samples);
        if profile.h[0] <= 0.0 {
            return Err(Error::VanishingHeight);
        }
        let target = model_height(dim) * top.powi(3);
        let factor = target * profile.psi[0] / profile.h[0];
        let scaled: Vec<RadialSample> = samples
            .iter()
            .map(|s| RadialSample {
                r: s.r,
                h: factor * s.h,
                d: factor * s.d,
                vf: factor * s.vf,
                v2_lr: factor * s.v2_lr,
                sup_v: factor.sqrt() * s.sup_v,
                sup_grad: factor.sqrt() * s.sup_grad,
            })
            .collect();
        let normalized = RadialProfile::assemble(dim, factor.sqrt() * scale, &monitor, &scaled);
        let almgren = samples
            .iter()
            .map(|s| (s.h / s.r.powi(dim as i32 - 1)).sqrt())
            .collect();
        Ok(Self {
            recentered,
            params: params.clone(),
            profile,
            normalized,
            amplitude_factor: factor,
            almgren,
        })
    }

    pub fn center(&self) -> Point {
        self.recentered.center
    }

    pub fn radii(&self) -> &[f64] {
        &self.profile.radii
    }

    /// Ladder indices with `r ≥ reliable_steps·hstep`.
    pub fn reliable(&self) -> Vec<usize> {
        let rmin = self.params.reliable_steps * self.recentered.grid().hstep();
        (0..self.profile.len())
            .filter(|&k| self.profile.radii[k] >= rmin * (1.0 - 1e-12))
            .collect()
    }

    pub fn a_min(&self) -> f64 {
        self.params.a_min_fraction * self.recentered.scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub label: Label,
    /// Extrapolated `Ñ(0+)`; `None` when too few reliable radii exist.
    pub n_tilde_0: Option<f64>,
    pub slope: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub band: f64,
}

/// Extrapolates `Ñ(0+)` linearly in `r` over the smallest reliable radii
/// and applies the gap test.
pub fn classify(stack: &ScalingStack) -> Classification {
    let p = &stack.params;
    let band = p.band();
    let reliable = stack.reliable();
    let take = p.extrapolation_points.min(reliable.len());
    let idx = &reliable[reliable.len() - take..];
    let radii: Vec<f64> = idx.iter().map(|&k| stack.normalized.radii[k]).collect();
    let values: Vec<f64> = idx.iter().map(|&k| stack.normalized.n_tilde[k]).collect();
    let fit = if take >= 3 && values.iter().all(|v| v.is_finite()) {
        linear_fit(&radii, &values)
    } else {
        None
    };
    let Some(fit) = fit else {
        return Classification {
            label: Label::Undecided,
            n_tilde_0: None,
            slope: f64::NAN,
            radii,
            values,
            band,
        };
    };
    let n0 = fit.intercept;
    let upper = (3.0 + p.delta) / 2.0;
    let label = if (n0 - 1.5).abs() <= band {
        Label::Regular
    } else if n0 >= upper - band {
        Label::NonRegular
    } else {
        Label::Undecided
    };
    Classification {
        label,
        n_tilde_0: Some(n0),
        slope: fit.slope,
        radii,
        values,
        band,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayRecord {
    pub radii: Vec<f64>,
    /// `∫_{S_1}|v_r − a h_ν|` against the limit fit.
    pub distances: Vec<f64>,
    /// Log-log slope of `distances` against `r`.
    pub gamma_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlowupLimit {
    /// Fit at the smallest reliable radius.
    pub fit: BlowupFit,
    /// Fit at the next reliable radius.
    pub previous: Option<BlowupFit>,
    pub decay: DecayRecord,
    pub a_min: f64,
    pub nondegenerate: bool,
}

impl BlowupLimit {
    /// Relative change in `a` and angle change in `ν` between the two
    /// smallest reliable radii.
    pub fn stability(&self) -> Option<(f64, f64)> {
        self.previous.map(|p| {
            let da = (self.fit.amplitude - p.amplitude).abs() / self.fit.amplitude.max(f64::MIN_POSITIVE);
            (da, direction_angle(&self.fit.direction, &p.direction))
        })
    }
}

/// Fits the family at the smallest reliable radii and records the decay of
/// the homogeneous scalings towards that fit.
pub fn blowup_limit(stack: &ScalingStack) -> Result<BlowupLimit> {
    let rec = &stack.recentered;
    let dim = rec.grid().dim();
    let reliable = stack.reliable();
    let Some(&last) = reliable.last() else {
        return Err(Error::TooFewPoints("no reliable radius".into()));
    };
    let radii = stack.radii();
    let fit = fit_at_radius(&rec.field, radii[last])?;
    let previous = if reliable.len() >= 2 {
        Some(fit_at_radius(&rec.field, radii[reliable[reliable.len() - 2]])?)
    } else {
        None
    };
    let rule = SphereRule::unit(dim, default_resolution(dim))?;
    let limit: Vec<f64> = rule.points.iter().map(|p| fit.eval(p, dim)).collect();
    let used: Vec<usize> = reliable[..reliable.len() - 1].to_vec();
    let distances: Vec<f64> = used
        .par_iter()
        .map(|&k| {
            let r = radii[k];
            let s = r.powf(1.5);
            let mut acc = 0.0;
            for ((p, w), l) in rule.points.iter().zip(&rule.weights).zip(&limit) {
                acc += w * (rec.field.interpolate_unchecked(&[r * p[0], r * p[1], r * p[2]]) / s - l).abs();
            }
            acc
        })
        .collect();
    let dr: Vec<f64> = used.iter().map(|&k| radii[k]).collect();
    let gamma_hat = power_fit(&dr, &distances).map_or(f64::NAN, |f| f.exponent);
    let a_min = stack.a_min();
    Ok(BlowupLimit {
        fit,
        previous,
        decay: DecayRecord {
            radii: dr,
            distances,
            gamma_hat,
        },
        a_min,
        nondegenerate: fit.amplitude > a_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use crate::scenarios::lipschitz_field;

    fn h_field(dim: usize, n: usize) -> GridField {
        let g = build_grid(dim, n).unwrap();
        GridField::from_fn(g, |x| eval_h(x, dim))
    }

    #[test]
    fn model_constants() {
        assert!((model_height(2) - PI).abs() < 1e-3);
        assert!((model_height(3) - 3.0 * PI * PI / 8.0).abs() < 1e-3);
        assert!((almgren_constant(2) - 0.5642).abs() < 1e-3);
    }

    #[test]
    fn recenter_identity_at_origin() {
        let f = h_field(2, 65);
        let c = CoefficientField::identity(2);
        let rec = recenter(&f, &c, None, &[0.0; 3]).unwrap();
        assert_eq!(rec.field.values, f.values);
        assert_eq!(rec.b, 0.0);
        assert!(rec.coefficients.is_identity());
        assert!(recenter(&f, &c, None, &[0.5, 0.0, 0.0]).is_err());
        assert!(recenter(&f, &c, None, &[-0.5, 0.0, 0.0]).is_err());
        assert!(recenter(&f, &c, None, &[0.0, 0.1, 0.0]).is_err());
    }

    #[test]
    fn recenter_translated_h() {
        let g = build_grid(2, 65).unwrap();
        let shift = 8.0 * g.hstep();
        let f = GridField::from_fn(g, |x| eval_h(&[x[0] - shift, x[1], 0.0], 2) + 0.3 * x[1]);
        let c = CoefficientField::identity(2);
        let rec = recenter(&f, &c, None, &[shift, 0.0, 0.0]).unwrap();
        assert!((rec.b - 0.3).abs() < 1e-9);
        for i in 0..g.node_count() {
            let x = g.point(i);
            if norm(&x, 2) < rec.valid_radius {
                assert!((rec.field.values[i] - eval_h(&x, 2)).abs() < 1e-9);
            }
        }
        assert!((rec.valid_radius - (1.0 - shift - 2.0 * g.hstep())).abs() < 1e-12);
    }

    #[test]
    fn recenter_variable_coefficients() {
        let g = build_grid(2, 65).unwrap();
        let c = lipschitz_field(2, 0.1);
        let f = GridField::from_fn(g, |x| eval_h(&[x[0] - 0.25, x[1], 0.0], 2));
        let x0 = [0.25, 0.0, 0.0];
        let rec = recenter(&f, &c, None, &x0).unwrap();
        let a0 = rec.coefficients.eval(&[0.0; 3]);
        assert!(a0.max_abs_diff(&SymMat::identity(2)) < 1e-12);
        let s = c.eval(&x0).sqrt().unwrap();
        let x = [0.1, 0.2, 0.0];
        let y = s.mul_vec(&x);
        let expect = eval_h(&y, 2);
        assert!((rec.field.interpolate(&x).unwrap() - expect).abs() < 5e-3);
    }

    #[test]
    fn scalings_of_h() {
        let f = h_field(2, 129);
        let c = CoefficientField::identity(2);
        let rec = recenter(&f, &c, None, &[0.0; 3]).unwrap();
        let s = homogeneous_scaling(&rec, 0.5).unwrap();
        let g = f.grid;
        let mut worst: f64 = 0.0;
        for i in 0..g.node_count() {
            let x = g.point(i);
            if norm(&x, 2) <= 1.0 {
                worst = worst.max((s.field.values[i] - eval_h(&x, 2)).abs());
            }
        }
        assert!(worst < 0.01, "{worst}");
        assert!(homogeneous_scaling(&rec, g.hstep()).is_err());
        let a = almgren_scaling(&rec, 0.5).unwrap();
        assert!((a.divisor - (PI / 8.0).sqrt()).abs() < 0.01 * (PI / 8.0).sqrt());
        let h1 = RadialContext::new(a.view(), None).unwrap().height(1.0).unwrap();
        assert!((h1 - 1.0).abs() < 0.01);
        let zero = GridField::zeros(g);
        let mut rz = rec.clone();
        rz.field = zero.with_layers();
        assert!(matches!(almgren_scaling(&rz, 0.5), Err(Error::VanishingHeight)));
    }

    #[test]
    fn rhs_scaling() {
        let f = h_field(2, 65);
        let c = CoefficientField::identity(2);
        let ones = GridField::from_fn(f.grid, |_| 1.0);
        let rec = recenter(&f, &c, Some(&ones), &[0.0; 3]).unwrap();
        let s = homogeneous_scaling(&rec, 0.25).unwrap();
        assert!(s.rhs.values.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn decay_of_h_vanishes() {
        let f = h_field(2, 129);
        let c = CoefficientField::identity(2);
        let rec = recenter(&f, &c, None, &[0.0; 3]).unwrap();
        assert!(decay_curve(&rec, 0.3, 0.3).unwrap() == 0.0);
        assert!(decay_curve(&rec, 0.2, 0.6).unwrap() < 2e-3);
    }

    #[test]
    fn family_fit_recovers_members() {
        let f = h_field(2, 65);
        let fit = fit_to_family(&f).unwrap();
        assert!((fit.amplitude - 1.0).abs() < 1e-12);
        assert_eq!(fit.direction, [1.0, 0.0, 0.0]);
        assert!(fit.residual < 1e-6);
        let g = build_grid(3, 33).unwrap();
        let t = 30f64.to_radians();
        let nu = [t.cos(), t.sin(), 0.0];
        let w = GridField::from_fn(g, |x| 2.0 * eval_h_nu(x, 3, &nu));
        let fit = fit_to_family(&w).unwrap();
        assert!((fit.amplitude - 2.0).abs() < 0.04);
        assert!(direction_angle(&fit.direction, &nu) < 1f64.to_radians());
        let neg = GridField::from_fn(f.grid, |x| -eval_h(x, 2) - eval_h(&[-x[0], x[1], 0.0], 2));
        assert_eq!(fit_to_family(&neg).unwrap().amplitude, 0.0);
    }

    #[test]
    fn family_fit_is_orthogonal_projection() {
        let g = build_grid(2, 65).unwrap();
        let pert = |x: &Point| x[1] * x[1] * (x[0] + 0.5);
        let w = GridField::from_fn(g, |x| eval_h(x, 2) + 0.05 * pert(x));
        let fit = fit_to_family(&w).unwrap();
        let ip = ScaledInner::new(g, 1.0).unwrap();
        let hv = ip.sample(|x| eval_h(x, 2));
        let hm = ip.sample(|x| eval_h(&[-x[0], x[1], 0.0], 2));
        let mut best = (f64::INFINITY, 0.0, 0);
        for (s, hs) in [&hv, &hm].iter().enumerate() {
            for k in 0..=4000 {
                let a = k as f64 * 5e-4;
                let d: Vec<f64> = w.values.iter().zip(hs.iter()).map(|(x, y)| x - a * y).collect();
                let e = ip.inner(&d, &d);
                if e < best.0 {
                    best = (e, a, s);
                }
            }
        }
        assert_eq!(best.2, 0);
        assert!((fit.amplitude - best.1).abs() < 1e-3);
        assert!((fit.residual - best.0.sqrt()).abs() < 1e-3);
        assert!((fit.amplitude - 1.0).abs() < 0.05);
    }

    fn stack_of(f: &GridField) -> ScalingStack {
        let c = CoefficientField::identity(f.grid.dim());
        let rec = recenter(f, &c, None, &[0.0; 3]).unwrap();
        ScalingStack::build(rec, &BlowupParams::default()).unwrap()
    }

    #[test]
    fn classify_examples() {
        let f = h_field(2, 129);
        let s = stack_of(&f);
        let c = classify(&s);
        assert_eq!(c.label, Label::Regular, "{c:?}");
        let tiny = GridField::from_fn(f.grid, |x| 1e-3 * eval_h(x, 2));
        let ct = classify(&stack_of(&tiny));
        assert_eq!(ct.label, Label::Regular);
        assert!((ct.n_tilde_0.unwrap() - c.n_tilde_0.unwrap()).abs() < 1e-9);
        let q = GridField::from_fn(f.grid, |x| x[0] * x[0] - x[1] * x[1]);
        let c = CoefficientField::identity(2);
        // the origin is an isolated zero of the trace, not a contact
        // boundary, so the stack is built without `recenter`
        let rec = Recentered {
            center: [0.0; 3],
            field: q.clone().with_layers(),
            coefficients: c,
            rhs: GridField::zeros(f.grid),
            b: 0.0,
            valid_radius: 1.0 - 2.0 * f.grid.hstep(),
            center_gradient: 0.0,
            scale: q.max_abs(),
        };
        let s = ScalingStack::build(rec, &BlowupParams::default()).unwrap();
        assert_eq!(classify(&s).label, Label::NonRegular);
    }

    #[test]
    fn limit_of_h() {
        let f = h_field(2, 129);
        let s = stack_of(&f);
        let l = blowup_limit(&s).unwrap();
        assert!((l.fit.amplitude - 1.0).abs() < 0.02);
        assert_eq!(l.fit.direction, [1.0, 0.0, 0.0]);
        assert!(l.decay.distances.iter().all(|d| *d < 0.02));
        assert!(l.nondegenerate);
    }

    #[test]
    fn rescaled_frequency_matches() {
        let f = h_field(2, 129);
        let c = CoefficientField::identity(2);
        let rec = recenter(&f, &c, None, &[0.0; 3]).unwrap();
        let r = 0.5;
        let sc = homogeneous_scaling(&rec, r).unwrap();
        let mp = MonitorParams::default();
        let ladder = [0.8, 0.7, 0.6, 0.5, 0.4];
        let outer: Vec<f64> = ladder.iter().map(|t| t * r).collect();
        let a = RadialProfile::compute_on(sc.view(), &mp, &ladder).unwrap();
        let b = RadialProfile::compute_on(rec.view(), &mp, &outer).unwrap();
        for k in 1..ladder.len() - 1 {
            assert!((a.n_tilde[k] - b.n_tilde[k]).abs() < 0.02 * b.n_tilde[k]);
        }
    }
}
