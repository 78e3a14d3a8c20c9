//! Radial monitors on a geometric radius ladder: height `H`, energies `D`
//! and `I`, `G`, `ψ`, `σ`, `M`, `J`, the truncated frequency `N`/`Ñ` and
//! the Weiss functional, plus audits of the identities and monotonicity
//! statements they satisfy.

use crate::coefficients::{conformal_mu, div_a_grad_r, CoefficientField, SymMat};
use crate::error::{Error, Result};
use crate::fit::{linear_fit, power_fit, PowerFit};
use crate::geometry::{default_resolution, norm, radius_ladder, BallQuadrature, GridField, SphereRule};
use crate::geometry::{corner_index, Grid};
use crate::solver::{node_matrices, SignoriniSolution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A field together with the operator data needed to monitor it.
#[derive(Clone, Copy, Debug)]
pub struct SolutionView<'a> {
    pub field: &'a GridField,
    pub coefficients: &'a CoefficientField,
    /// Right-hand side `f` at the nodes; `None` means `f = 0`.
    pub rhs: Option<&'a GridField>,
}

impl SignoriniSolution {
    pub fn view(&self) -> SolutionView<'_> {
        SolutionView {
            field: &self.field,
            coefficients: &self.coefficients,
            rhs: Some(&self.rhs),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorParams {
    /// Truncation exponent `δ ∈ (0,1)`.
    pub delta: f64,
    /// Frequency constant `K′ ≥ 0`.
    pub k_prime: f64,
    pub r_max: f64,
    pub ratio: f64,
    /// Smallest ladder radius in units of `hstep`.
    pub r_min_steps: f64,
    /// Sphere rule resolution; `None` selects the default for the dimension.
    pub resolution: Option<usize>,
}

impl Default for MonitorParams {
    fn default() -> Self {
        Self {
            delta: 0.5,
            k_prime: 0.0,
            r_max: 0.9,
            ratio: 0.93,
            r_min_steps: 4.0,
            resolution: None,
        }
    }
}

impl MonitorParams {
    pub fn check(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!("delta {} outside (0,1)", self.delta)));
        }
        if !(self.k_prime >= 0.0) {
            return Err(Error::Parameter("k_prime must be nonnegative".into()));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) || !(self.r_max > 0.0 && self.r_max <= 1.0) {
            return Err(Error::Parameter("invalid ladder specification".into()));
        }
        Ok(())
    }

    pub fn ladder(&self, hstep: f64) -> Vec<f64> {
        radius_ladder(self.r_max, self.ratio, self.r_min_steps * hstep)
    }
}

/// Raw per-radius integrals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RadialSample {
    pub r: f64,
    /// `∫_{S_r} v² μ`
    pub h: f64,
    /// `∫_{B_r} ⟨A∇v,∇v⟩`
    pub d: f64,
    /// `∫_{B_r} v f`
    pub vf: f64,
    /// `∫_{S_r} v² L|x|`
    pub v2_lr: f64,
    pub sup_v: f64,
    pub sup_grad: f64,
}

/// Shared per-field data for radial sampling.
pub struct RadialContext<'a> {
    pub view: SolutionView<'a>,
    unit: SphereRule,
    mats: Option<Vec<SymMat>>,
}

impl<'a> RadialContext<'a> {
    pub fn new(view: SolutionView<'a>, resolution: Option<usize>) -> Result<Self> {
        let grid = view.field.grid;
        let unit = SphereRule::unit(grid.dim(), resolution.unwrap_or_else(|| default_resolution(grid.dim())))?;
        let mats = node_matrices(&grid, view.coefficients);
        Ok(Self { view, unit, mats })
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        let h = self.view.field.grid.hstep();
        if r < 2.0 * h * (1.0 - 1e-12) || r > 1.0 + 1e-12 {
            return Err(Error::Radius {
                radius: r,
                min: 2.0 * h,
                max: 1.0,
            });
        }
        Ok(())
    }

    pub fn sphere(&self, r: f64) -> Result<SphereRule> {
        self.check_radius(r)?;
        Ok(self.unit.scaled(r))
    }

    pub fn height(&self, r: f64) -> Result<f64> {
        let s = self.sphere(r)?;
        let mut acc = 0.0;
        for (p, w) in s.points.iter().zip(&s.weights) {
            let v = self.view.field.interpolate(p)?;
            acc += w * v * v * conformal_mu(self.view.coefficients, p);
        }
        Ok(acc)
    }

    pub fn dirichlet(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        let grid = self.view.field.grid;
        let q = BallQuadrature::new(&grid, r)?;
        Ok(self.dirichlet_on(&q))
    }

    fn dirichlet_on(&self, q: &BallQuadrature) -> f64 {
        let grid = self.view.field.grid;
        let u = &self.view.field.values;
        let mats = self.mats.as_deref();
        q.cells
            .iter()
            .map(|(b, f)| {
                if *f == 1.0 {
                    multilinear_cell_energy(&grid, *b, u, mats, None)
                } else {
                    multilinear_cell_energy(&grid, *b, u, mats, Some(q.radius))
                }
            })
            .sum()
    }

    fn vf_on(&self, q: &BallQuadrature) -> f64 {
        match self.view.rhs {
            None => 0.0,
            Some(f) => q.integrate_nodes(|i| self.view.field.values[i] * f.values[i]),
        }
    }

    pub fn energy_i(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        let q = BallQuadrature::new(&self.view.field.grid, r)?;
        Ok(self.dirichlet_on(&q) + self.vf_on(&q))
    }

    pub fn sample(&self, r: f64) -> Result<RadialSample> {
        let s = self.sphere(r)?;
        let dim = self.view.field.grid.dim();
        let coeffs = self.view.coefficients;
        let (mut h, mut v2_lr, mut sup_v, mut sup_grad) = (0.0, 0.0, 0.0f64, 0.0f64);
        for (p, w) in s.points.iter().zip(&s.weights) {
            let v = self.view.field.interpolate(p)?;
            let mu = conformal_mu(coeffs, p);
            let lr = div_a_grad_r(coeffs, p)?;
            h += w * v * v * mu;
            v2_lr += w * v * v * lr;
            sup_v = sup_v.max(v.abs());
            sup_grad = sup_grad.max(norm(&self.view.field.gradient(p)?, dim));
        }
        let q = BallQuadrature::new(&self.view.field.grid, r)?;
        Ok(RadialSample {
            r,
            h,
            d: self.dirichlet_on(&q),
            vf: self.vf_on(&q),
            v2_lr,
            sup_v,
            sup_grad,
        })
    }
}

pub fn height(view: SolutionView<'_>, r: f64) -> Result<f64> {
    RadialContext::new(view, None)?.height(r)
}

pub fn energy_i(view: SolutionView<'_>, r: f64) -> Result<f64> {
    RadialContext::new(view, None)?.energy_i(r)
}

/// `G(r) = ∫v²L|x| / ∫v²μ`, or `(n−1)/r` when the height vanishes.
pub fn gee(view: SolutionView<'_>, r: f64) -> Result<f64> {
    let ctx = RadialContext::new(view, None)?;
    let s = ctx.sample(r)?;
    let scale = view.field.max_abs();
    Ok(g_from(&s, view.field.grid.dim(), scale))
}

fn g_from(s: &RadialSample, dim: usize, scale: f64) -> f64 {
    if s.h < 1e-14 * scale * scale || s.h == 0.0 {
        (dim as f64 - 1.0) / s.r
    } else {
        s.v2_lr / s.h
    }
}

const GAUSS_LO: f64 = 0.211_324_865_405_187_1;
const GAUSS_HI: f64 = 0.788_675_134_594_812_9;

/// `∫⟨A∇u,∇u⟩` of the multilinear interpolant over one cell, or over its
/// part inside `B_r` when `clip = Some(r)`. Full cells use the tensor
/// two-point Gauss rule (exact for constant `A`); clipped cells use a
/// midpoint rule on `m^n` sub-cells (`m = 16` in 2D, 6 in 3D). `A` is
/// interpolated multilinearly from the corner matrices.
pub fn multilinear_cell_energy(grid: &Grid, base: usize, u: &[f64], mats: Option<&[SymMat]>, clip: Option<f64>) -> f64 {
    let dim = grid.dim();
    let h = grid.hstep();
    let nc = 1usize << dim;
    let mut vals = [0.0; 8];
    let mut corners = [0usize; 8];
    for k in 0..nc {
        corners[k] = corner_index(grid, base, k);
        vals[k] = u[corners[k]];
    }
    let mi = grid.multi_index(base);
    let origin = [grid.coord(mi[0]), grid.coord(mi[1]), if dim == 3 { grid.coord(mi[2]) } else { 0.0 }];
    let integrand = |t: &[f64; 3]| -> f64 {
        let mut grad = [0.0; 3];
        let mut weights = [0.0; 8];
        for k in 0..nc {
            let mut w = 1.0;
            for (a, ta) in t.iter().enumerate().take(dim) {
                w *= if k >> a & 1 == 1 { *ta } else { 1.0 - ta };
            }
            weights[k] = w;
            for (a, ga) in grad.iter_mut().enumerate().take(dim) {
                let mut d = if k >> a & 1 == 1 { 1.0 } else { -1.0 };
                for (b, tb) in t.iter().enumerate().take(dim) {
                    if b != a {
                        d *= if k >> b & 1 == 1 { *tb } else { 1.0 - tb };
                    }
                }
                *ga += d * vals[k] / h;
            }
        }
        match mats {
            None => grad[..dim].iter().map(|c| c * c).sum(),
            Some(m) => {
                let mut acc = 0.0;
                for k in 0..nc {
                    acc += weights[k] * m[corners[k]].quad(&grad);
                }
                acc
            }
        }
    };
    let vol = h.powi(dim as i32);
    match clip {
        None => {
            let mut acc = 0.0;
            for k in 0..nc {
                let mut t = [0.0; 3];
                for (a, ta) in t.iter_mut().enumerate().take(dim) {
                    *ta = if k >> a & 1 == 1 { GAUSS_HI } else { GAUSS_LO };
                }
                acc += integrand(&t);
            }
            acc * vol / nc as f64
        }
        Some(r) => {
            let m: usize = if dim == 2 { 16 } else { 6 };
            let total = m.pow(dim as u32);
            let mut acc = 0.0;
            for s in 0..total {
                let mut t = [0.0; 3];
                let mut rest = s;
                let mut rr = 0.0;
                for a in 0..dim {
                    t[a] = ((rest % m) as f64 + 0.5) / m as f64;
                    rest /= m;
                    let c = origin[a] + t[a] * h;
                    rr += c * c;
                }
                if rr.sqrt() <= r {
                    acc += integrand(&t);
                }
            }
            acc * vol / total as f64
        }
    }
}

/// All radial quantities on the ladder (descending radii).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialProfile {
    pub dim: usize,
    pub delta: f64,
    pub k_prime: f64,
    pub radii: Vec<f64>,
    pub h: Vec<f64>,
    pub d: Vec<f64>,
    pub i: Vec<f64>,
    pub g: Vec<f64>,
    pub psi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub m: Vec<f64>,
    pub j: Vec<f64>,
    pub n: Vec<f64>,
    pub n_tilde: Vec<f64>,
    /// Weiss functional in the `I/r^{n+1} − (3/2)H/r^{n+2}` form.
    pub w: Vec<f64>,
    /// Weiss functional in the `(H/r^{n+2})(rM′/2M − 3/2)` form.
    pub w_from_m: Vec<f64>,
    /// `rM′/(2M)` (untruncated).
    pub half_log_slope: Vec<f64>,
    /// `∫_{S_r} v² L|x|`
    pub v2_lr: Vec<f64>,
    pub sup_v: Vec<f64>,
    pub sup_grad: Vec<f64>,
    /// Estimate of `lim σ(r)/r`.
    pub alpha: f64,
    /// Empirical bound on `|G − (n−1)/r|` and `|log(σ/r)|/(1−r)`.
    pub beta_hat: f64,
    /// Scale of the field (`max|v|` on the grid).
    pub scale: f64,
}

/// `d log F / d log r` on a descending ladder: centered in the interior,
/// one-sided at the ends.
pub fn log_slope(radii: &[f64], f: &[f64]) -> Vec<f64> {
    let n = radii.len();
    (0..n)
        .map(|k| {
            let (a, b) = if k == 0 {
                (0, 1.min(n - 1))
            } else if k == n - 1 {
                (n - 2, n - 1)
            } else {
                (k - 1, k + 1)
            };
            if a == b || f[a] <= 0.0 || f[b] <= 0.0 {
                return f64::NAN;
            }
            (f[a].ln() - f[b].ln()) / (radii[a].ln() - radii[b].ln())
        })
        .collect()
}

/// Derivative `dF/dr` on a descending ladder: log-space differences where
/// `F` is positive, plain differences otherwise.
pub fn ladder_derivative(radii: &[f64], f: &[f64]) -> Vec<f64> {
    let n = radii.len();
    let slopes = log_slope(radii, f);
    (0..n)
        .map(|k| {
            if slopes[k].is_finite() {
                slopes[k] * f[k] / radii[k]
            } else {
                let (a, b) = if k == 0 {
                    (0, 1)
                } else if k == n - 1 {
                    (n - 2, n - 1)
                } else {
                    (k - 1, k + 1)
                };
                (f[a] - f[b]) / (radii[a] - radii[b])
            }
        })
        .collect()
}

impl RadialProfile {
    pub fn compute(view: SolutionView<'_>, params: &MonitorParams) -> Result<Self> {
        params.check()?;
        let grid = view.field.grid;
        let ladder = params.ladder(grid.hstep());
        Self::compute_on(view, params, &ladder)
    }

    pub fn compute_on(view: SolutionView<'_>, params: &MonitorParams, ladder: &[f64]) -> Result<Self> {
        params.check()?;
        if ladder.len() < 3 {
            return Err(Error::TooFewPoints(format!("ladder has {} radii", ladder.len())));
        }
        let ctx = RadialContext::new(view, params.resolution)?;
        let samples: Vec<RadialSample> = ladder
            .par_iter()
            .map(|&r| ctx.sample(r))
            .collect::<Result<_>>()?;
        Ok(Self::assemble(view.field.grid.dim(), view.field.max_abs(), params, &samples))
    }

    pub fn assemble(dim: usize, scale: f64, params: &MonitorParams, samples: &[RadialSample]) -> Self {
        let nf = dim as f64;
        let radii: Vec<f64> = samples.iter().map(|s| s.r).collect();
        let h: Vec<f64> = samples.iter().map(|s| s.h).collect();
        let d: Vec<f64> = samples.iter().map(|s| s.d).collect();
        let i: Vec<f64> = samples.iter().map(|s| s.d + s.vf).collect();
        let g: Vec<f64> = samples.iter().map(|s| g_from(s, dim, scale)).collect();
        let len = radii.len();
        // log ψ(r) = ∫_0^r G: anchored at the smallest radius by
        // ψ ≈ r^{n−1} exp(r (G − (n−1)/r)), then trapezoid in log s.
        let last = len - 1;
        let mut log_psi = vec![0.0; len];
        log_psi[last] = (nf - 1.0) * radii[last].ln() + radii[last] * (g[last] - (nf - 1.0) / radii[last]);
        for k in (0..last).rev() {
            let dl = radii[k].ln() - radii[k + 1].ln();
            log_psi[k] = log_psi[k + 1] + 0.5 * dl * (g[k] * radii[k] + g[k + 1] * radii[k + 1]);
        }
        let psi: Vec<f64> = log_psi.iter().map(|l| l.exp()).collect();
        let sigma: Vec<f64> = psi.iter().zip(&radii).map(|(p, r)| p / r.powf(nf - 2.0)).collect();
        let m: Vec<f64> = h.iter().zip(&psi).map(|(a, b)| a / b).collect();
        let j: Vec<f64> = i.iter().zip(&psi).map(|(a, b)| a / b).collect();
        let trunc: Vec<f64> = m
            .iter()
            .zip(&radii)
            .map(|(mk, r)| mk.max(r.powf(3.0 + params.delta)))
            .collect();
        let slope_t = log_slope(&radii, &trunc);
        let slope_m = log_slope(&radii, &m);
        let mut n = Vec::with_capacity(len);
        let mut n_tilde = Vec::with_capacity(len);
        for k in 0..len {
            let e = (params.k_prime * radii[k].powf((1.0 - params.delta) / 2.0)).exp();
            let nk = 0.5 * sigma[k] * e * slope_t[k] / radii[k];
            n.push(nk);
            n_tilde.push(radii[k] / sigma[k] * nk);
        }
        let half_log_slope: Vec<f64> = slope_m.iter().map(|s| 0.5 * s).collect();
        let w: Vec<f64> = (0..len)
            .map(|k| i[k] / radii[k].powf(nf + 1.0) - 1.5 * h[k] / radii[k].powf(nf + 2.0))
            .collect();
        let w_from_m: Vec<f64> = (0..len)
            .map(|k| {
                if h[k] > 0.0 {
                    h[k] / radii[k].powf(nf + 2.0) * (half_log_slope[k] - 1.5)
                } else {
                    0.0
                }
            })
            .collect();
        let mut beta_hat: f64 = 0.0;
        for k in 0..len {
            beta_hat = beta_hat
                .max((g[k] - (nf - 1.0) / radii[k]).abs())
                .max((sigma[k] / radii[k]).ln().abs() / (1.0 - radii[k]).max(1e-12));
        }
        let tail = len.min(5);
        let xs: Vec<f64> = radii[len - tail..].to_vec();
        let ys: Vec<f64> = (len - tail..len).map(|k| sigma[k] / radii[k]).collect();
        let alpha = linear_fit(&xs, &ys).map_or(ys[tail - 1], |f| f.intercept);
        Self {
            dim,
            delta: params.delta,
            k_prime: params.k_prime,
            radii,
            h,
            d,
            i,
            g,
            psi,
            sigma,
            m,
            j,
            n,
            n_tilde,
            w,
            w_from_m,
            half_log_slope,
            v2_lr: samples.iter().map(|s| s.v2_lr).collect(),
            sup_v: samples.iter().map(|s| s.sup_v).collect(),
            sup_grad: samples.iter().map(|s| s.sup_grad).collect(),
            alpha,
            beta_hat,
            scale,
        }
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Indices of ladder radii in `[lo, hi]`.
    pub fn indices_in(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.radii[k] >= lo * (1.0 - 1e-12) && self.radii[k] <= hi * (1.0 + 1e-12))
            .collect()
    }

    /// Largest deviation between the two forms of the Weiss functional,
    /// relative to `(3/2)H/r^{n+2}` at each radius.
    pub fn weiss_cross_check(&self) -> Vec<f64> {
        let nf = self.dim as f64;
        (0..self.len())
            .map(|k| {
                let s = 1.5 * self.h[k] / self.radii[k].powf(nf + 2.0);
                if s > 0.0 {
                    (self.w[k] - self.w_from_m[k]).abs() / s
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// `(H′ − 2I − ∫v²L|x|)/(H/r)` per radius (zero where `H = 0`).
pub fn identity_audit_hprime(profile: &RadialProfile) -> Result<Vec<f64>> {
    if profile.len() < 5 {
        return Err(Error::TooFewPoints(format!("{} radii", profile.len())));
    }
    let hp = ladder_derivative(&profile.radii, &profile.h);
    Ok((0..profile.len())
        .map(|k| {
            if profile.h[k] > 0.0 {
                (hp[k] - 2.0 * profile.i[k] - profile.v2_lr[k]) / (profile.h[k] / profile.radii[k])
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    /// Index `k` of the larger radius of the offending adjacent pair.
    pub index: usize,
    pub r_outer: f64,
    pub r_inner: f64,
    /// Amount by which the compensated series drops, beyond the slack.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub violations: Vec<Violation>,
    /// Length of the largest prefix (from the smallest radius up) without
    /// violations, as the radius where it ends.
    pub monotone_up_to: f64,
}

impl MonotonicityReport {
    pub fn count(&self) -> usize {
        self.violations.len()
    }
}

/// Checks that `series(r) + c·r^p` is nondecreasing in `r` over adjacent
/// ladder pairs, allowing a drop of `slack[k]` at pair `(k, k+1)`.
pub fn monotonicity_audit(
    radii: &[f64],
    series: &[f64],
    compensator: Option<(f64, f64)>,
    slack: &[f64],
) -> MonotonicityReport {
    let comp = |r: f64| compensator.map_or(0.0, |(c, p)| c * r.powf(p));
    let mut violations = Vec::new();
    for k in 0..radii.len().saturating_sub(1) {
        let outer = series[k] + comp(radii[k]);
        let inner = series[k + 1] + comp(radii[k + 1]);
        let drop = inner - outer;
        let allow = slack.get(k).copied().unwrap_or(0.0);
        if drop > allow {
            violations.push(Violation {
                index: k,
                r_outer: radii[k],
                r_inner: radii[k + 1],
                excess: drop - allow,
            });
        }
    }
    let monotone_up_to = match violations.iter().map(|v| v.index).max() {
        None => radii.first().copied().unwrap_or(0.0),
        Some(k) => radii[k + 1],
    };
    MonotonicityReport {
        pairs: radii.len().saturating_sub(1),
        violations,
        monotone_up_to,
    }
}

/// Slack per adjacent pair: `3·|identity residual|` times the local size of
/// the series (`unit[k]`), maximized over the pair.
pub fn slack_from_residual(residual: &[f64], unit: &[f64]) -> Vec<f64> {
    (0..residual.len().saturating_sub(1))
        .map(|k| {
            let a = 3.0 * residual[k].abs() * unit[k].abs();
            let b = 3.0 * residual[k + 1].abs() * unit[k + 1].abs();
            a.max(b)
        })
        .collect()
}

/// `Ĉ` minimizing `Σ (W_k + Ĉ r_k^{1/2})²` over the radii where `W < 0`.
pub fn fit_negative_part(radii: &[f64], w: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (r, v) in radii.iter().zip(w) {
        if *v < 0.0 {
            num -= v * r.sqrt();
            den += r;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    pub sup_v: PowerFit,
    pub sup_grad: PowerFit,
    pub height: PowerFit,
    pub energy: PowerFit,
}

/// Log-log exponents of `sup|v|`, `sup|∇v|`, `H` and `|I|` on the ladder.
pub fn growth_audit(profile: &RadialProfile) -> Result<GrowthReport> {
    let tiny = 1e-14 * profile.scale.max(f64::MIN_POSITIVE);
    if profile.scale == 0.0 || profile.sup_v.iter().all(|v| *v <= tiny) {
        return Err(Error::Degenerate("field vanishes on the ladder".into()));
    }
    let fit = |ys: &[f64], what: &str| {
        power_fit(&profile.radii, ys).ok_or_else(|| Error::Degenerate(format!("{what} has too few positive values")))
    };
    let abs_i: Vec<f64> = profile.i.iter().map(|v| v.abs()).collect();
    Ok(GrowthReport {
        sup_v: fit(&profile.sup_v, "sup|v|")?,
        sup_grad: fit(&profile.sup_grad, "sup|∇v|")?,
        height: fit(&profile.h, "H")?,
        energy: fit(&abs_i, "I")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epiperimetric::eval_h;
    use crate::geometry::build_grid;
    use std::f64::consts::PI;

    fn view_of<'a>(f: &'a GridField, c: &'a CoefficientField) -> SolutionView<'a> {
        SolutionView {
            field: f,
            coefficients: c,
            rhs: None,
        }
    }

    #[test]
    fn height_and_energy_of_h() {
        let g = build_grid(2, 129).unwrap();
        let f = GridField::from_fn(g, |x| eval_h(x, 2));
        let c = CoefficientField::identity(2);
        let ctx = RadialContext::new(view_of(&f, &c), None).unwrap();
        assert!((ctx.height(1.0).unwrap() - PI).abs() < 0.01 * PI);
        assert!((ctx.height(0.5).unwrap() - PI / 16.0).abs() < 0.01 * PI / 16.0);
        let i1 = ctx.energy_i(1.0).unwrap();
        assert!((i1 - 1.5 * PI).abs() < 0.05 * 1.5 * PI);
        let ih = ctx.energy_i(0.5).unwrap();
        assert!((ih - 1.5 * PI * 0.125).abs() < 0.05 * 1.5 * PI * 0.125);
        let zero = GridField::zeros(g);
        let z = RadialContext::new(view_of(&zero, &c), None).unwrap();
        assert_eq!(z.height(0.5).unwrap(), 0.0);
        assert_eq!(z.energy_i(0.5).unwrap(), 0.0);
    }

    #[test]
    fn gee_for_identity_and_fallback() {
        let g = build_grid(2, 65).unwrap();
        let f = GridField::from_fn(g, |x| eval_h(x, 2));
        let c = CoefficientField::identity(2);
        assert!((gee(view_of(&f, &c), 0.5).unwrap() - 2.0).abs() < 0.02);
        let g3 = build_grid(3, 33).unwrap();
        let z = GridField::zeros(g3);
        let c3 = CoefficientField::identity(3);
        assert_eq!(gee(view_of(&z, &c3), 0.25).unwrap(), 8.0);
    }

    #[test]
    fn profile_of_h_is_flat() {
        let g = build_grid(2, 129).unwrap();
        let f = GridField::from_fn(g, |x| eval_h(x, 2));
        let c = CoefficientField::identity(2);
        let p = RadialProfile::compute(view_of(&f, &c), &MonitorParams::default()).unwrap();
        for k in 0..p.len() {
            let r = p.radii[k];
            assert!((p.psi[k] / r - 1.0).abs() < 0.01);
            assert!((p.sigma[k] / r - 1.0).abs() < 0.01);
            assert!((p.n_tilde[k] - p.radii[k] / p.sigma[k] * p.n[k]).abs() < 1e-12);
        }
        assert!((p.alpha - 1.0).abs() < 0.02);
        for k in p.indices_in(0.1, 0.5) {
            assert!((p.n_tilde[k] - 1.5).abs() < 0.05, "r={} Ñ={}", p.radii[k], p.n_tilde[k]);
            assert!(p.w[k].abs() < 0.02 * 1.5 * PI);
        }
        let res = identity_audit_hprime(&p).unwrap();
        for k in p.indices_in(0.1, 0.8) {
            assert!(res[k].abs() < 0.03, "r={} res={}", p.radii[k], res[k]);
        }
        let gr = growth_audit(&p).unwrap();
        assert!((gr.sup_v.exponent - 1.5).abs() < 0.1);
        assert!((gr.sup_grad.exponent - 0.5).abs() < 0.1);
        assert!((gr.height.exponent - 4.0).abs() < 0.1);
        assert!((gr.energy.exponent - 3.0).abs() < 0.1);
        let mono = monotonicity_audit(&p.radii, &p.n, None, &slack_from_residual(&res, &p.n));
        assert_eq!(mono.count(), 0);
    }

    #[test]
    fn frequency_two_and_truncation() {
        let g = build_grid(2, 129).unwrap();
        let f = GridField::from_fn(g, |x| x[0] * x[0] - x[1] * x[1]);
        let c = CoefficientField::identity(2);
        let p = RadialProfile::compute(view_of(&f, &c), &MonitorParams::default()).unwrap();
        for k in p.indices_in(0.15, 0.5) {
            assert!((p.n_tilde[k] - 2.0).abs() < 0.05, "r={} Ñ={}", p.radii[k], p.n_tilde[k]);
        }
        let tiny = GridField::from_fn(g, |x| 1e-6 * eval_h(x, 2));
        let q = RadialProfile::compute(view_of(&tiny, &c), &MonitorParams::default()).unwrap();
        for k in 1..q.len() - 1 {
            assert!((q.n_tilde[k] - 1.75).abs() < 1e-9);
        }
        let gr = growth_audit(&p).unwrap();
        assert!((gr.sup_v.exponent - 2.0).abs() < 0.1);
    }

    #[test]
    fn scaling_and_zero() {
        let g = build_grid(2, 65).unwrap();
        let c = CoefficientField::identity(2);
        let f = GridField::from_fn(g, |x| eval_h(x, 2));
        let f2 = GridField::from_fn(g, |x| 2.0 * eval_h(x, 2));
        let p1 = RadialProfile::compute(view_of(&f, &c), &MonitorParams::default()).unwrap();
        let p2 = RadialProfile::compute(view_of(&f2, &c), &MonitorParams::default()).unwrap();
        for k in 0..p1.len() {
            assert!((p2.w[k] - 4.0 * p1.w[k]).abs() < 1e-10);
        }
        let z = GridField::zeros(g);
        let pz = RadialProfile::compute(view_of(&z, &c), &MonitorParams::default()).unwrap();
        assert!(pz.w.iter().all(|w| *w == 0.0));
        assert!(identity_audit_hprime(&pz).unwrap().iter().all(|r| *r == 0.0));
        assert!(matches!(growth_audit(&pz), Err(Error::Degenerate(_))));
    }

    #[test]
    fn decreasing_series_flagged() {
        let r = [0.9, 0.8, 0.7, 0.6];
        let s = [1.0, 2.0, 3.0, 4.0];
        let rep = monotonicity_audit(&r, &s, None, &[0.0; 3]);
        assert_eq!(rep.count(), 3);
        let ok = monotonicity_audit(&r, &[4.0, 3.0, 2.0, 1.0], None, &[0.0; 3]);
        assert_eq!(ok.count(), 0);
    }

    #[test]
    fn multilinear_energy_exact_for_linear() {
        for (dim, n) in [(2, 33), (3, 33)] {
            let g = build_grid(dim, n).unwrap();
            let a = [0.3, -1.2, 0.7];
            let f = GridField::from_fn(g, |x| a[0] * x[0] + a[1] * x[1] + a[2] * x[2] + 0.4);
            let grad2: f64 = a[..dim].iter().map(|c| c * c).sum();
            let vol = g.hstep().powi(dim as i32);
            let base = g.index(&[2, 3, if dim == 3 { 1 } else { 0 }]);
            let e = multilinear_cell_energy(&g, base, &f.values, None, None);
            assert!((e - grad2 * vol).abs() < 1e-13, "{dim}: {e} vs {}", grad2 * vol);
            let m: Vec<SymMat> = (0..g.node_count()).map(|_| SymMat::diag(&[2.0, 2.0, 2.0][..dim])).collect();
            let e2 = multilinear_cell_energy(&g, base, &f.values, Some(&m), None);
            assert!((e2 - 2.0 * grad2 * vol).abs() < 1e-13);
        }
    }

    #[test]
    fn weiss_forms_agree() {
        let g = build_grid(2, 129).unwrap();
        let f = GridField::from_fn(g, |x| eval_h(x, 2) + 0.3 * x[0] * x[1]);
        let c = CoefficientField::identity(2);
        let p = RadialProfile::compute(view_of(&f, &c), &MonitorParams::default()).unwrap();
        let gap = p.weiss_cross_check();
        for k in p.indices_in(0.1, 0.8) {
            assert!(gap[k] < 0.02, "r={} gap={}", p.radii[k], gap[k]);
        }
    }

    #[test]
    fn negative_part_fit() {
        let r = [0.25, 0.16, 0.09];
        let w: Vec<f64> = r.iter().map(|x: &f64| -2.0 * x.sqrt()).collect();
        assert!((fit_negative_part(&r, &w) - 2.0).abs() < 1e-14);
        assert_eq!(fit_negative_part(&r, &[1.0, 1.0, 1.0]), 0.0);
    }
}
