//! Discrete Signorini energy and its projected SOR minimization.
//!
//! The energy `∫⟨A∇w,∇w⟩ + 2fw` is discretized cell by cell: on each cell the
//! gradient at a corner uses the `n` cell edges meeting there, and the
//! integrand is averaged over the `2^n` corners. For `A ≡ I` this is the
//! standard `(2n+1)`-point Laplacian; for diagonal `A` it averages the
//! coefficient over the face of each edge. The form is symmetric positive
//! semidefinite, so projected Gauss–Seidel is a descent method.

use crate::coefficients::{flux_divergence, validate, CoefficientField, ScenarioRhs, SymMat, ValidationReport};
use crate::error::{Error, Result};
use crate::geometry::{corner_index, norm, Grid, GridField, Point};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    /// Dirichlet data on the box boundary.
    Box,
    /// Dirichlet data on every node with `|x| ≥ radius` (grid-masked ball).
    Ball { radius: f64 },
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub coefficients: CoefficientField,
    pub data: ScenarioRhs,
    pub domain: Domain,
}

/// A problem whose coefficient field passed validation.
#[derive(Clone, Debug)]
pub struct ValidatedProblem {
    spec: ProblemSpec,
    pub report: ValidationReport,
}

impl std::ops::Deref for ValidatedProblem {
    type Target = ProblemSpec;
    fn deref(&self) -> &ProblemSpec {
        &self.spec
    }
}

pub const DEFAULT_VALIDATION_SAMPLES: usize = 2000;

impl ProblemSpec {
    pub fn new(grid: Grid, coefficients: CoefficientField, data: ScenarioRhs) -> Self {
        Self {
            grid,
            coefficients,
            data,
            domain: Domain::Box,
        }
    }

    pub fn validate(self, samples: usize) -> Result<ValidatedProblem> {
        if self.coefficients.dim != self.grid.dim() {
            return Err(Error::Parameter(format!(
                "coefficient dimension {} differs from grid dimension {}",
                self.coefficients.dim,
                self.grid.dim()
            )));
        }
        let report = validate(&self.coefficients, samples)?;
        Ok(ValidatedProblem { spec: self, report })
    }

    fn is_fixed(&self, idx: usize) -> bool {
        if self.grid.is_box_boundary(idx) {
            return true;
        }
        match self.domain {
            Domain::Box => false,
            Domain::Ball { radius } => norm(&self.grid.point(idx), self.grid.dim()) >= radius,
        }
    }

    /// `max|g|` over fixed nodes plus `‖f‖_∞`; the unit of `v`.
    pub fn data_scale(&self) -> f64 {
        let g = self.grid;
        let mut gmax: f64 = 0.0;
        for i in 0..g.node_count() {
            if self.is_fixed(i) {
                gmax = gmax.max((self.data.boundary)(&g.point(i)).abs());
            }
        }
        gmax + self.data.rhs_bound
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    Zero,
    BoundaryExtension,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub omega: f64,
    pub max_sweeps: usize,
    /// Stop when one sweep lowers the energy by less than this fraction of
    /// the current energy magnitude.
    pub energy_tol: f64,
    /// Complementarity tolerance; `None` means `1e-6·(max|g| + ‖f‖_∞)`.
    pub tol_c: Option<f64>,
    pub initial: InitialGuess,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            omega: 1.7,
            max_sweeps: 20_000,
            energy_tol: 1e-15,
            tol_c: None,
            initial: InitialGuess::BoundaryExtension,
        }
    }
}

impl SolverParams {
    pub fn check(&self) -> Result<()> {
        if !(self.omega > 1.0 && self.omega < 2.0) {
            return Err(Error::Parameter(format!("omega {} outside (1,2)", self.omega)));
        }
        if !(self.energy_tol > 0.0) || self.tol_c.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Parameter("tolerances must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Parameter("max_sweeps must be positive".into()));
        }
        Ok(())
    }
}

/// Coefficient matrices at every node (`None` for the identity field).
pub fn node_matrices(grid: &Grid, coefficients: &CoefficientField) -> Option<Vec<SymMat>> {
    if coefficients.is_identity() {
        return None;
    }
    use rayon::prelude::*;
    Some(
        (0..grid.node_count())
            .into_par_iter()
            .map(|i| coefficients.eval(&grid.point(i)))
            .collect(),
    )
}

/// Corner gradients of a cell: `g[k][a]` is the difference along edge `a`
/// at corner `k`, divided by `hstep`.
fn corner_gradients(grid: &Grid, base: usize, u: &[f64]) -> [[f64; 3]; 8] {
    let dim = grid.dim();
    let h = grid.hstep();
    let mut vals = [0.0; 8];
    for (k, v) in vals.iter_mut().enumerate().take(1 << dim) {
        *v = u[corner_index(grid, base, k)];
    }
    let mut g = [[0.0; 3]; 8];
    for k in 0..(1usize << dim) {
        for a in 0..dim {
            let hi = k | (1 << a);
            let lo = k & !(1 << a);
            g[k][a] = (vals[hi] - vals[lo]) / h;
        }
    }
    g
}

/// `∫_cell ⟨A∇u,∇u⟩` with the corner-averaged rule.
pub fn cell_energy(grid: &Grid, base: usize, u: &[f64], a: Option<&[SymMat]>) -> f64 {
    let dim = grid.dim();
    let g = corner_gradients(grid, base, u);
    let w = grid.hstep().powi(dim as i32) / (1usize << dim) as f64;
    let mut acc = 0.0;
    for (k, gk) in g.iter().enumerate().take(1 << dim) {
        acc += match a {
            None => gk[..dim].iter().map(|c| c * c).sum::<f64>(),
            Some(m) => m[corner_index(grid, base, k)].quad(gk),
        };
    }
    w * acc
}

/// `∫_cell ⟨∇u,∇w⟩` with the same rule and `A ≡ I`.
pub fn cell_inner(grid: &Grid, base: usize, u: &[f64], v: &[f64]) -> f64 {
    let dim = grid.dim();
    let gu = corner_gradients(grid, base, u);
    let gv = corner_gradients(grid, base, v);
    let w = grid.hstep().powi(dim as i32) / (1usize << dim) as f64;
    let mut acc = 0.0;
    for k in 0..(1usize << dim) {
        for a in 0..dim {
            acc += gu[k][a] * gv[k][a];
        }
    }
    w * acc
}

/// Assembled quadratic form `E(u) = uᵀKu + 2Fᵀu` with Dirichlet and
/// thin-plane constraint information.
#[derive(Clone, Debug)]
pub struct EnergyForm {
    pub grid: Grid,
    offsets: Vec<isize>,
    center_slot: usize,
    stencil: Vec<f64>,
    pub load: Vec<f64>,
    pub fixed: Vec<bool>,
    pub fixed_values: Vec<f64>,
    /// Obstacle at each thin node (by thin ordinal).
    pub obstacle: Vec<f64>,
    pub scale: f64,
}

impl EnergyForm {
    pub fn width(&self) -> usize {
        self.offsets.len()
    }

    /// `(Ku)_p`, skipping couplings that leave the grid.
    pub fn apply_row(&self, p: usize, u: &[f64]) -> f64 {
        let w = self.width();
        let row = &self.stencil[p * w..(p + 1) * w];
        let mut acc = 0.0;
        for (c, off) in row.iter().zip(&self.offsets) {
            if *c != 0.0 {
                let q = p as isize + off;
                acc += c * u[q as usize];
            }
        }
        acc
    }

    pub fn diagonal(&self, p: usize) -> f64 {
        self.stencil[p * self.width() + self.center_slot]
    }

    /// Stencil row of node `p` as (offset, coefficient) pairs.
    pub fn row(&self, p: usize) -> Vec<(isize, f64)> {
        let w = self.width();
        self.offsets
            .iter()
            .copied()
            .zip(self.stencil[p * w..(p + 1) * w].iter().copied())
            .collect()
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for p in 0..u.len() {
            acc += u[p] * (self.apply_row(p, u) + 2.0 * self.load[p]);
        }
        acc
    }

    /// Discrete flux jump `(Ku + F)_p / hstep^{n−1}` at thin node `p`.
    pub fn flux_jump(&self, p: usize, u: &[f64]) -> f64 {
        (self.apply_row(p, u) + self.load[p]) / self.grid.hstep().powi(self.grid.dim() as i32 - 1)
    }
}

/// Assembles the discrete energy; requires a validated problem.
pub fn assemble_energy(problem: &ValidatedProblem) -> Result<EnergyForm> {
    let grid = problem.grid;
    let dim = grid.dim();
    let h = grid.hstep();
    let mats = node_matrices(&grid, &problem.coefficients);
    let diagonal_only = mats.as_ref().map_or(true, |m| {
        m.iter().all(|a| (0..dim).all(|i| (0..dim).all(|j| i == j || a.m[i][j] == 0.0)))
    });
    // slot for neighbour offset vector d ∈ {−1,0,1}^n
    let full_slots = 3usize.pow(dim as u32);
    let mut slot_map = vec![usize::MAX; full_slots];
    let mut offsets = Vec::new();
    for s in 0..full_slots {
        let mut rest = s;
        let mut off = 0isize;
        let mut nonzero = 0;
        for a in 0..dim {
            let d = (rest % 3) as isize - 1;
            rest /= 3;
            if d != 0 {
                nonzero += 1;
            }
            off += d * grid.stride(a) as isize;
        }
        if !diagonal_only || nonzero <= 1 {
            slot_map[s] = offsets.len();
            offsets.push(off);
        }
    }
    let center_slot = slot_map[(full_slots - 1) / 2];
    let width = offsets.len();
    // A ball domain keeps whole cells: nodes outside carry the Dirichlet data,
    // so the free nodes next to the sphere stay fully coupled to it.
    let n = grid.nodes_per_axis();
    let cells: Vec<(usize, f64)> = (0..grid.node_count())
        .filter(|&idx| {
            let mi = grid.multi_index(idx);
            (0..dim).all(|a| mi[a] < n - 1)
        })
        .map(|idx| (idx, 1.0))
        .collect();
    let mut weights = vec![0.0; grid.node_count()];
    let nc = 1usize << dim;
    let corner_w = h.powi(dim as i32) / nc as f64;
    let mut stencil = vec![0.0; grid.node_count() * width];
    // slot of the offset from corner i to corner j, in the full 3^n numbering
    let rel_slot = |i: usize, j: usize| -> usize {
        let mut s = 0;
        let mut pow = 1;
        for a in 0..dim {
            let d = ((j >> a) & 1) as isize - ((i >> a) & 1) as isize;
            s += ((d + 1) as usize) * pow;
            pow *= 3;
        }
        s
    };
    for &(base, frac) in &cells {
        let mut local = [[0.0; 8]; 8];
        for k in 0..nc {
            let a = match &mats {
                None => SymMat::identity(dim),
                Some(m) => m[corner_index(&grid, base, k)],
            };
            // g_k[a] = (u[k|a] − u[k&!a])/h
            for ai in 0..dim {
                for bi in 0..dim {
                    let c = a.m[ai][bi] * frac * corner_w / (h * h);
                    if c == 0.0 {
                        continue;
                    }
                    let (ph, pl) = (k | (1 << ai), k & !(1 << ai));
                    let (qh, ql) = (k | (1 << bi), k & !(1 << bi));
                    local[ph][qh] += c;
                    local[ph][ql] -= c;
                    local[pl][qh] -= c;
                    local[pl][ql] += c;
                }
            }
        }
        for i in 0..nc {
            let pi = corner_index(&grid, base, i);
            weights[pi] += frac * corner_w;
            for (j, lij) in local[i].iter().enumerate().take(nc) {
                if *lij != 0.0 {
                    let slot = slot_map[rel_slot(i, j)];
                    debug_assert!(slot != usize::MAX);
                    stencil[pi * width + slot] += lij;
                }
            }
        }
    }
    let fixed: Vec<bool> = (0..grid.node_count()).map(|i| problem.is_fixed(i)).collect();
    let fixed_values: Vec<f64> = (0..grid.node_count())
        .map(|i| if fixed[i] { (problem.data.boundary)(&grid.point(i)) } else { 0.0 })
        .collect();
    let load: Vec<f64> = (0..grid.node_count())
        .map(|i| {
            if weights[i] == 0.0 {
                0.0
            } else {
                weights[i] * (problem.data.rhs)(&grid.point(i))
            }
        })
        .collect();
    let obstacle: Vec<f64> = grid
        .thin_nodes()
        .iter()
        .map(|&p| (problem.data.obstacle)(&grid.point(p)))
        .collect();
    Ok(EnergyForm {
        grid,
        offsets,
        center_slot,
        stencil,
        load,
        fixed,
        fixed_values,
        obstacle,
        scale: problem.data_scale(),
    })
}

/// Maximum violations of the complementarity conditions on the thin plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Complementarity {
    pub negative_trace: f64,
    pub negative_jump: f64,
    pub product: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualRecord {
    /// From second-order one-sided differences of the field (consistent
    /// with the continuum conditions up to discretization error).
    pub one_sided: Complementarity,
    /// From the discrete system itself (certified against `tol_c`).
    pub discrete: Complementarity,
    pub tol_c: f64,
    pub scale: f64,
}

impl ResidualRecord {
    /// The discrete conditions hold within `tol_c` (product within
    /// `tol_c·scale`).
    pub fn certified(&self) -> bool {
        self.discrete.negative_trace <= self.tol_c
            && self.discrete.negative_jump <= self.tol_c
            && self.discrete.product <= self.tol_c * self.scale.max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Debug)]
pub struct SignoriniSolution {
    /// The normalized solution `v` after [`normalize`], the raw `u` before.
    pub field: GridField,
    /// Node values of the right-hand side of the equation solved by `field`.
    pub rhs: GridField,
    /// Empirical `‖f‖_∞` of `rhs` over the analysis ball.
    pub rhs_bound: f64,
    pub coefficients: CoefficientField,
    /// Obstacle at thin nodes relative to `field` (zero once normalized).
    pub obstacle: Vec<f64>,
    /// Discrete flux jump at thin nodes (by thin ordinal).
    pub discrete_jump: Vec<f64>,
    pub offset_b: f64,
    pub residuals: ResidualRecord,
    pub iterations: usize,
    pub energy: f64,
    pub energy_history: Vec<f64>,
    /// Radius of the ball on which the problem is posed (1 for the box).
    pub analysis_radius: f64,
    pub normalized: bool,
    /// `|∂n⁺u − ∂n⁻u|` at the normalization point.
    pub normal_mismatch: f64,
    /// Gradient magnitude of `v` at the normalization point.
    pub center_gradient: f64,
}

/// Projected SOR: lexicographic sweeps, clamping `u ≥ φ` at thin nodes.
pub fn solve(problem: &ValidatedProblem, params: &SolverParams) -> Result<SignoriniSolution> {
    params.check()?;
    let form = assemble_energy(problem)?;
    solve_form(problem, &form, params)
}

pub fn solve_form(problem: &ValidatedProblem, form: &EnergyForm, params: &SolverParams) -> Result<SignoriniSolution> {
    params.check()?;
    let grid = form.grid;
    let n = grid.node_count();
    // feasibility of Dirichlet data on the thin plane
    for (k, &p) in grid.thin_nodes().iter().enumerate() {
        if form.fixed[p] && form.fixed_values[p] < form.obstacle[k] - 1e-12 * (1.0 + form.obstacle[k].abs()) {
            return Err(Error::Infeasible(format!(
                "boundary datum {:.4e} below obstacle {:.4e} at {:?}",
                form.fixed_values[p],
                form.obstacle[k],
                grid.point(p)
            )));
        }
    }
    let mut u: Vec<f64> = match params.initial {
        InitialGuess::Zero => (0..n).map(|i| if form.fixed[i] { form.fixed_values[i] } else { 0.0 }).collect(),
        InitialGuess::BoundaryExtension => (0..n)
            .map(|i| {
                if form.fixed[i] {
                    form.fixed_values[i]
                } else {
                    (problem.data.boundary)(&grid.point(i))
                }
            })
            .collect(),
    };
    let thin_ord: Vec<Option<usize>> = (0..n).map(|i| grid.thin_ordinal(i)).collect();
    for i in 0..n {
        if let (false, Some(k)) = (form.fixed[i], thin_ord[i]) {
            u[i] = u[i].max(form.obstacle[k]);
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| !form.fixed[i]).collect();
    let omega = params.omega;
    let mut energy = form.energy(&u);
    let mut history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < params.max_sweeps {
        sweeps += 1;
        let mut decrease = 0.0;
        for &p in &free {
            let kpp = form.diagonal(p);
            let r = form.apply_row(p, &u) + form.load[p];
            let old = u[p];
            let target = old - r / kpp;
            let mut new = old + omega * (target - old);
            if let Some(k) = thin_ord[p] {
                new = new.max(form.obstacle[k]);
            }
            u[p] = new;
            decrease += kpp * ((old - target).powi(2) - (new - target).powi(2));
        }
        debug_assert!(decrease >= -1e-12 * energy.abs().max(1.0));
        energy -= decrease;
        history.push(decrease);
        if decrease <= params.energy_tol * energy.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        let tail = history.iter().rev().take(5).rev().copied().collect();
        return Err(Error::NoConvergence { sweeps, history: tail });
    }
    let energy = form.energy(&u);
    let scale = form.scale;
    let tol_c = params.tol_c.unwrap_or(1e-6 * scale);
    let analysis_radius = match problem.domain {
        Domain::Box => 1.0,
        Domain::Ball { radius } => radius,
    };
    let discrete_jump: Vec<f64> = grid
        .thin_nodes()
        .iter()
        .map(|&p| if form.fixed[p] { 0.0 } else { form.flux_jump(p, &u) })
        .collect();
    let field = GridField::from_values(grid, u)?.with_layers();
    let rhs = GridField::from_fn(grid, |x| (problem.data.rhs)(x));
    let rhs_bound = ball_max_abs(&rhs, analysis_radius);
    let mut sol = SignoriniSolution {
        field,
        rhs,
        rhs_bound,
        coefficients: problem.coefficients.clone(),
        obstacle: form.obstacle.clone(),
        discrete_jump,
        offset_b: 0.0,
        residuals: ResidualRecord {
            one_sided: Complementarity::default(),
            discrete: Complementarity::default(),
            tol_c,
            scale,
        },
        iterations: sweeps,
        energy,
        energy_history: history,
        analysis_radius,
        normalized: false,
        normal_mismatch: 0.0,
        center_gradient: 0.0,
    };
    sol.residuals = residuals(&sol, &problem.coefficients);
    Ok(sol)
}

fn ball_max_abs(f: &GridField, r: f64) -> f64 {
    let g = f.grid;
    (0..g.node_count())
        .filter(|&i| norm(&g.point(i), g.dim()) <= r)
        .fold(0.0, |m, i| m.max(f.values[i].abs()))
}

/// Thin nodes strictly inside the analysis ball and off the box boundary.
fn interior_thin(sol: &SignoriniSolution) -> Vec<(usize, usize)> {
    let g = sol.field.grid;
    g.thin_nodes()
        .into_iter()
        .enumerate()
        .filter(|(_, p)| !g.is_box_boundary(*p) && norm(&g.point(*p), g.dim()) < sol.analysis_radius - 1e-12)
        .collect()
}

/// Recomputes both residual records of a solution.
pub fn residuals(sol: &SignoriniSolution, coefficients: &CoefficientField) -> ResidualRecord {
    let g = sol.field.grid;
    let n = g.dim();
    let mut one = Complementarity::default();
    let mut disc = Complementarity::default();
    let layers = sol.field.layers.as_ref();
    for (k, p) in interior_thin(sol) {
        let x = g.point(p);
        let trace = sol.field.values[p] - sol.obstacle[k];
        let jump_d = sol.discrete_jump[k];
        disc.negative_trace = disc.negative_trace.max(-trace);
        disc.negative_jump = disc.negative_jump.max(-jump_d);
        disc.product = disc.product.max((trace * jump_d).abs());
        if let Some(l) = layers {
            let ann = if coefficients.is_identity() {
                1.0
            } else {
                coefficients.eval(&x).m[n - 1][n - 1]
            };
            let jump = ann * (l.minus[k] - l.plus[k]);
            one.negative_trace = one.negative_trace.max(-trace);
            one.negative_jump = one.negative_jump.max(-jump);
            one.product = one.product.max((trace * jump).abs());
        }
    }
    ResidualRecord {
        one_sided: one,
        discrete: disc,
        tol_c: sol.residuals.tol_c,
        scale: sol.residuals.scale,
    }
}

/// Tolerance on `u(x0) − φ(x0)` used to accept a normalization point.
pub fn contact_tolerance(grid: &Grid, scale: f64) -> f64 {
    grid.hstep().powf(1.5) * scale.max(1e-300)
}

/// `v = u − φ(x') + b x_n` with `b = ∂ν₊u(x0) = −∂n⁺u(x0)`.
///
/// `b` averages the two one-sided estimates, `−(∂n⁺u + ∂n⁻u)/2`: at a free
/// boundary point the two coincide, and the average cancels the leading
/// `|x_n|^{1/2}`-type error of each one-sided stencil. The identity
/// `∂ν₊u + ∂ν₋u = 0` is checked within `4·hstep^{1/2}·scale`.
pub fn normalize(sol: &SignoriniSolution, problem: &ProblemSpec, x0: &Point) -> Result<SignoriniSolution> {
    let g = sol.field.grid;
    let dim = g.dim();
    if x0[dim - 1] != 0.0 || !g.contains(x0) {
        return Err(Error::NotFreeBoundary(format!("{x0:?} (off the thin plane)")));
    }
    let scale = sol.residuals.scale;
    let phi = &problem.data.obstacle;
    let gap = sol.field.interpolate(x0)? - phi(x0);
    if gap.abs() > contact_tolerance(&g, scale) + sol.residuals.tol_c {
        return Err(Error::NotFreeBoundary(format!("{x0:?} (u − φ = {gap:.3e})")));
    }
    let (dp, dm) = sol
        .field
        .normal_derivatives(x0)
        .ok_or_else(|| Error::Parameter("field lacks one-sided layers".into()))?;
    let mismatch = (dp - dm).abs();
    if mismatch > 4.0 * g.hstep().sqrt() * scale.max(1e-300) {
        return Err(Error::NotFreeBoundary(format!(
            "{x0:?} (one-sided normal derivatives {dp:.4e} and {dm:.4e} disagree)"
        )));
    }
    let b = -0.5 * (dp + dm);
    let values: Vec<f64> = (0..g.node_count())
        .map(|i| {
            let x = g.point(i);
            sol.field.values[i] - phi(&[x[0], if dim == 3 { x[1] } else { 0.0 }, 0.0]) + b * x[dim - 1]
        })
        .collect();
    let field = GridField::from_values(g, values)?.with_layers();
    let coeffs = problem.coefficients.clone();
    let step = 0.5 * g.hstep();
    let gstep = 1e-4;
    let psi = |y: &Point| -> f64 {
        let t = [y[0], if dim == 3 { y[1] } else { 0.0 }, 0.0];
        phi(&t) - b * y[dim - 1]
    };
    let grad_psi = |y: &Point| -> Point {
        let mut out = [0.0; 3];
        for a in 0..dim {
            let mut yp = *y;
            let mut ym = *y;
            yp[a] += gstep;
            ym[a] -= gstep;
            out[a] = (psi(&yp) - psi(&ym)) / (2.0 * gstep);
        }
        out
    };
    let rhs = GridField::from_fn(g, |x| {
        let f = (problem.data.rhs)(x);
        let lpsi = flux_divergence(dim, x, step, |y| {
            let gp = grad_psi(y);
            if coeffs.is_identity() {
                gp
            } else {
                coeffs.eval(y).mul_vec(&gp)
            }
        });
        f - lpsi
    });
    let rhs_bound = ball_max_abs(&rhs, sol.analysis_radius);
    let mut out = SignoriniSolution {
        field,
        rhs,
        rhs_bound,
        coefficients: coeffs,
        obstacle: vec![0.0; g.thin_count()],
        discrete_jump: sol.discrete_jump.clone(),
        offset_b: b,
        residuals: sol.residuals,
        iterations: sol.iterations,
        energy: sol.energy,
        energy_history: sol.energy_history.clone(),
        analysis_radius: sol.analysis_radius,
        normalized: true,
        normal_mismatch: mismatch,
        center_gradient: 0.0,
    };
    let grad = out.field.gradient(x0)?;
    out.center_gradient = norm(&grad, dim);
    out.residuals = residuals(&out, &problem.coefficients);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epiperimetric::eval_h;
    use crate::geometry::build_grid;

    fn exact_problem(nodes: usize) -> ValidatedProblem {
        let g = build_grid(2, nodes).unwrap();
        ProblemSpec::new(g, CoefficientField::identity(2), ScenarioRhs::homogeneous(|x| eval_h(x, 2)))
            .validate(10)
            .unwrap()
    }

    #[test]
    fn identity_stencil_is_five_point() {
        let p = exact_problem(33);
        let form = assemble_energy(&p).unwrap();
        assert_eq!(form.width(), 5);
        let g = p.grid;
        let c = g.index(&[10, 12, 0]);
        let mut row = form.row(c);
        row.sort_by(|a, b| a.0.cmp(&b.0));
        let n = g.nodes_per_axis() as isize;
        let expect = [(-n, -1.0), (-1, -1.0), (0, 4.0), (1, -1.0), (n, -1.0)];
        for ((o, c), (eo, ec)) in row.iter().zip(expect) {
            assert_eq!(*o, eo);
            assert!((c - ec).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_have_zero_energy() {
        let p = exact_problem(33);
        let form = assemble_energy(&p).unwrap();
        let u = vec![3.5; p.grid.node_count()];
        assert!(form.energy(&u).abs() < 1e-10);
    }

    #[test]
    fn ball_energy_of_h() {
        let g = build_grid(2, 129).unwrap();
        let u = GridField::from_fn(g, |x| eval_h(x, 2));
        let q = crate::geometry::BallQuadrature::new(&g, 1.0).unwrap();
        let d: f64 = q.cells.iter().map(|(b, f)| f * cell_energy(&g, *b, &u.values, None)).sum();
        let exact = 1.5 * std::f64::consts::PI;
        assert!((d - exact).abs() < 0.05 * exact, "{d}");
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = build_grid(2, 33).unwrap();
        let p = ProblemSpec::new(g, CoefficientField::identity(2), ScenarioRhs::homogeneous(|_| 0.0))
            .validate(10)
            .unwrap();
        let s = solve(&p, &SolverParams::default()).unwrap();
        assert_eq!(s.field.max_abs(), 0.0);
        assert!(s.residuals.certified());
    }

    #[test]
    fn inactive_obstacle_matches_harmonic_solve() {
        let g = build_grid(2, 33).unwrap();
        let harmonic = |x: &Point| 2.0 + x[0] * x[0] - x[1] * x[1];
        let data = ScenarioRhs::new(|_| -1.0, |_| 0.0, harmonic, 0.0);
        let p = ProblemSpec::new(g, CoefficientField::identity(2), data).validate(10).unwrap();
        let s = solve(&p, &SolverParams::default()).unwrap();
        // the 5-point Laplacian is exact on quadratics
        for i in 0..g.node_count() {
            assert!((s.field.values[i] - harmonic(&g.point(i))).abs() < 1e-6);
        }
    }

    #[test]
    fn infeasible_boundary_rejected() {
        let g = build_grid(2, 33).unwrap();
        let p = ProblemSpec::new(g, CoefficientField::identity(2), ScenarioRhs::homogeneous(|_| -1.0))
            .validate(10)
            .unwrap();
        assert!(matches!(solve(&p, &SolverParams::default()), Err(Error::Infeasible(_))));
    }

    #[test]
    fn exact_solution_and_normalization() {
        let p = exact_problem(65);
        let s = solve(&p, &SolverParams::default()).unwrap();
        assert!(s.residuals.certified(), "{:?}", s.residuals);
        let v = normalize(&s, &p, &[0.0; 3]).unwrap();
        assert!(v.offset_b.abs() < 1e-3);
        assert!(v.normalized);
        let s2 = solve(
            &p,
            &SolverParams {
                initial: InitialGuess::Zero,
                ..SolverParams::default()
            },
        )
        .unwrap();
        let diff = s
            .field
            .values
            .iter()
            .zip(&s2.field.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn linear_normal_part_is_removed() {
        // u = h + x_n on both sides: ∂ν₊u(0) = −1, so v = u − x_n = h
        let g = build_grid(2, 65).unwrap();
        let p = ProblemSpec::new(g, CoefficientField::identity(2), ScenarioRhs::homogeneous(|x| eval_h(x, 2)))
            .validate(10)
            .unwrap();
        let mut s = solve(&p, &SolverParams::default()).unwrap();
        let exact: Vec<f64> = (0..g.node_count()).map(|i| eval_h(&g.point(i), 2)).collect();
        s.field = GridField::from_values(g, (0..g.node_count()).map(|i| exact[i] + g.point(i)[1]).collect())
            .unwrap()
            .with_layers();
        let v = normalize(&s, &p, &[0.0; 3]).unwrap();
        assert!((v.offset_b + 1.0).abs() < 1e-12);
        for i in 0..g.node_count() {
            assert!((v.field.values[i] - exact[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn obstacle_equal_field_normalizes_to_zero() {
        let g = build_grid(2, 33).unwrap();
        let cap = |x: &Point| 0.2 * (1.0 - x[0] * x[0]);
        let p = ProblemSpec::new(g, CoefficientField::identity(2), ScenarioRhs::new(cap, |_| 0.0, cap, 0.0));
        let vp = p.clone().validate(10).unwrap();
        let mut s = solve(&vp, &SolverParams::default()).unwrap();
        s.field = GridField::from_fn(g, |x| cap(&[x[0], 0.0, 0.0])).with_layers();
        let v = normalize(&s, &p, &[0.0; 3]).unwrap();
        assert_eq!(v.offset_b, 0.0);
        assert!(v.field.max_abs() < 1e-14);
    }

    #[test]
    fn synthetic_negative_trace() {
        let p = exact_problem(33);
        let mut s = solve(&p, &SolverParams::default()).unwrap();
        let g = p.grid;
        s.field = GridField::from_fn(g, |x| -x[0].abs()).with_layers();
        let r = residuals(&s, &p.coefficients);
        let expect = g
            .thin_nodes()
            .iter()
            .map(|&q| g.point(q)[0].abs())
            .filter(|&a| a < 1.0 - 1e-12)
            .fold(0.0, f64::max);
        assert_eq!(r.discrete.negative_trace, expect);
    }

    #[test]
    fn rejects_bad_params() {
        let p = SolverParams {
            omega: 2.5,
            ..SolverParams::default()
        };
        assert!(p.check().is_err());
    }
}
