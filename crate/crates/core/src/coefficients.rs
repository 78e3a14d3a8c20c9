//! Coefficient matrix fields `A(x)` and the quantities derived from them:
//! the conformal factor `μ`, the vector field `Z`, `A^{1/2}` and `L|x|`.

use crate::error::{Error, Result};
use crate::geometry::{norm, Grid, Point};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::sync::Arc;

/// Small dense matrix of size `dim ≤ 3` (stored in a 3×3 array).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat {
    pub dim: usize,
    pub m: [[f64; 3]; 3],
}

impl SymMat {
    pub fn identity(dim: usize) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(dim) {
            row[i] = 1.0;
        }
        Self { dim, m }
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, v) in d.iter().enumerate() {
            m[i][i] = *v;
        }
        Self { dim: d.len(), m }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m[i][j] = *v;
            }
        }
        Self { dim: rows.len(), m }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn mul_vec(&self, x: &Point) -> Point {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = (0..self.dim).map(|j| self.m[i][j] * x[j]).sum();
        }
        out
    }

    pub fn mul(&self, other: &SymMat) -> SymMat {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(self.dim) {
            for (j, v) in row.iter_mut().enumerate().take(self.dim) {
                *v = (0..self.dim).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        SymMat { dim: self.dim, m }
    }

    /// `⟨A ξ, ξ⟩`.
    pub fn quad(&self, x: &Point) -> f64 {
        let ax = self.mul_vec(x);
        (0..self.dim).map(|i| ax[i] * x[i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        let mut out: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out = out.max(self.m[i][j].abs());
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &SymMat) -> f64 {
        let mut out: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out = out.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        out
    }

    pub fn symmetry_defect(&self) -> f64 {
        let mut out: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..i {
                out = out.max((self.m[i][j] - self.m[j][i]).abs());
            }
        }
        out
    }

    fn to_dmatrix(self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| 0.5 * (self.m[i][j] + self.m[j][i]))
    }

    fn from_dmatrix(d: &DMatrix<f64>) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(d.nrows()) {
            for (j, v) in row.iter_mut().enumerate().take(d.ncols()) {
                *v = d[(i, j)];
            }
        }
        Self { dim: d.nrows(), m }
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.to_dmatrix())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        e.sort_by(|a, b| a.total_cmp(b));
        e
    }

    /// `A^p` for a symmetric positive definite matrix via the spectral
    /// decomposition.
    pub fn spd_power(&self, p: f64) -> Result<SymMat> {
        if self.symmetry_defect() > 1e-12 * self.max_abs().max(1.0) {
            return Err(Error::NotSpd);
        }
        let eig = SymmetricEigen::new(self.to_dmatrix());
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::NotSpd);
        }
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(p)));
        let q = &eig.eigenvectors;
        Ok(Self::from_dmatrix(&(q * d * q.transpose())))
    }

    pub fn sqrt(&self) -> Result<SymMat> {
        self.spd_power(0.5)
    }

    pub fn inv_sqrt(&self) -> Result<SymMat> {
        self.spd_power(-0.5)
    }
}

pub type MatrixFn = Arc<dyn Fn(&Point) -> SymMat + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// Matrix field with declared ellipticity `λ` and Lipschitz constant `Q`.
#[derive(Clone)]
pub struct CoefficientField {
    pub dim: usize,
    pub lambda: f64,
    pub lipschitz: f64,
    pub name: String,
    identity: bool,
    eval: MatrixFn,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("dim", &self.dim)
            .field("lambda", &self.lambda)
            .field("lipschitz", &self.lipschitz)
            .field("name", &self.name)
            .finish()
    }
}

impl CoefficientField {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            lambda: 1.0,
            lipschitz: 0.0,
            name: "identity".into(),
            identity: true,
            eval: Arc::new(move |_| SymMat::identity(dim)),
        }
    }

    pub fn new(
        dim: usize,
        lambda: f64,
        lipschitz: f64,
        name: impl Into<String>,
        eval: impl Fn(&Point) -> SymMat + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            lambda,
            lipschitz,
            name: name.into(),
            identity: false,
            eval: Arc::new(eval),
        }
    }

    pub fn constant(m: SymMat, lambda: f64) -> Self {
        Self::new(m.dim, lambda, 0.0, "constant", move |_| m)
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn eval(&self, x: &Point) -> SymMat {
        (self.eval)(x)
    }
}

/// Worst-case violations found on a validation sample.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub symmetry_defect: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// `min(λ_min(A) − λ, 1/λ − λ_max(A))` over the sample.
    pub ellipticity_margin: f64,
    pub lipschitz_quotient: f64,
    pub thin_offdiagonal: f64,
    pub origin_defect: f64,
}

const VALIDATION_SEED: u64 = 0x5eed_a11c;

/// Checks symmetry, ellipticity, the Lipschitz bound and the vanishing of
/// `a_in` on the thin plane on a deterministic sample (extending the sample
/// only adds points, so a failure persists as `sample_count` grows).
pub fn validate(field: &CoefficientField, sample_count: usize) -> Result<ValidationReport> {
    let report = inspect(field, sample_count);
    let tol = 1e-10;
    if report.symmetry_defect > tol {
        return Err(Error::Assumption(format!(
            "symmetry: defect {:.3e}",
            report.symmetry_defect
        )));
    }
    if report.ellipticity_margin < -tol {
        return Err(Error::Assumption(format!(
            "ellipticity: eigenvalues in [{:.4}, {:.4}] exceed declared λ = {}",
            report.min_eigenvalue, report.max_eigenvalue, field.lambda
        )));
    }
    if report.lipschitz_quotient > field.lipschitz * (1.0 + 1e-6) + tol {
        return Err(Error::Assumption(format!(
            "Lipschitz: quotient {:.4} exceeds declared Q = {}",
            report.lipschitz_quotient, field.lipschitz
        )));
    }
    if report.thin_offdiagonal > tol {
        return Err(Error::Assumption(format!(
            "thin plane: off-diagonal entries a_in(x',0) reach {:.3e}",
            report.thin_offdiagonal
        )));
    }
    Ok(report)
}

/// Collects the validation quantities without judging them.
pub fn inspect(field: &CoefficientField, sample_count: usize) -> ValidationReport {
    let dim = field.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
    let mut rep = ValidationReport {
        samples: sample_count,
        symmetry_defect: 0.0,
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        ellipticity_margin: f64::INFINITY,
        lipschitz_quotient: 0.0,
        thin_offdiagonal: 0.0,
        origin_defect: field.eval(&[0.0; 3]).max_abs_diff(&SymMat::identity(dim)),
    };
    for _ in 0..sample_count {
        let mut x = [0.0; 3];
        let mut y = [0.0; 3];
        let mut t = [0.0; 3];
        let step = 10f64.powf(rng.gen_range(-3.0..-1.0));
        for a in 0..dim {
            x[a] = rng.gen_range(-1.0..1.0);
            y[a] = (x[a] + step * rng.gen_range(-1.0..1.0)).clamp(-1.0, 1.0);
            t[a] = if a + 1 < dim { rng.gen_range(-1.0..1.0) } else { 0.0 };
        }
        let ax = field.eval(&x);
        let ay = field.eval(&y);
        rep.symmetry_defect = rep.symmetry_defect.max(ax.symmetry_defect());
        let eig = ax.eigenvalues();
        rep.min_eigenvalue = rep.min_eigenvalue.min(eig[0]);
        rep.max_eigenvalue = rep.max_eigenvalue.max(eig[dim - 1]);
        let d = norm(&crate::geometry::sub(&x, &y), dim);
        if d > 0.0 {
            rep.lipschitz_quotient = rep.lipschitz_quotient.max(ax.max_abs_diff(&ay) / d);
        }
        let at = field.eval(&t);
        for i in 0..dim - 1 {
            rep.thin_offdiagonal = rep
                .thin_offdiagonal
                .max(at.m[i][dim - 1].abs())
                .max(at.m[dim - 1][i].abs());
        }
    }
    if sample_count > 0 {
        rep.ellipticity_margin =
            (rep.min_eigenvalue - field.lambda).min(1.0 / field.lambda - rep.max_eigenvalue);
    }
    rep
}

/// Conformal factor `⟨A x, x⟩/|x|²`; equal to 1 at the origin where `A = I`.
pub fn conformal_mu(field: &CoefficientField, x: &Point) -> f64 {
    let r2: f64 = x[..field.dim].iter().map(|c| c * c).sum();
    if r2 == 0.0 || field.identity {
        return 1.0;
    }
    field.eval(x).quad(x) / r2
}

/// `Z = A(x) x / μ(x)`.
pub fn vector_z(field: &CoefficientField, x: &Point) -> Point {
    let mu = conformal_mu(field, x);
    let ax = field.eval(x).mul_vec(x);
    [ax[0] / mu, ax[1] / mu, ax[2] / mu]
}

pub fn matrix_sqrt(field: &CoefficientField, x0: &Point) -> Result<SymMat> {
    field.eval(x0).sqrt()
}

/// Centered-difference divergence of a flux field with step `step`.
pub fn flux_divergence(dim: usize, x: &Point, step: f64, flux: impl Fn(&Point) -> Point) -> f64 {
    let mut acc = 0.0;
    for a in 0..dim {
        let mut xp = *x;
        let mut xm = *x;
        xp[a] += step;
        xm[a] -= step;
        acc += (flux(&xp)[a] - flux(&xm)[a]) / (2.0 * step);
    }
    acc
}

/// `L|x| = div(A ∇|x|)` by centered differences of the flux with `step`.
pub fn div_a_grad_r_step(field: &CoefficientField, x: &Point, step: f64) -> Result<f64> {
    let r = norm(x, field.dim);
    if r == 0.0 {
        return Err(Error::Origin);
    }
    Ok(flux_divergence(field.dim, x, step, |y| {
        let ry = norm(y, field.dim);
        let a = field.eval(y);
        let u = [y[0] / ry, y[1] / ry, y[2] / ry];
        a.mul_vec(&u)
    }))
}

/// `L|x|` with a step small relative to `|x|`; exact `(n−1)/|x|` for `A ≡ I`.
pub fn div_a_grad_r(field: &CoefficientField, x: &Point) -> Result<f64> {
    let r = norm(x, field.dim);
    if r == 0.0 {
        return Err(Error::Origin);
    }
    if field.identity {
        return Ok((field.dim as f64 - 1.0) / r);
    }
    div_a_grad_r_step(field, x, (1e-3 * r).max(1e-6))
}

/// Thin obstacle `φ`, right-hand side `f` and Dirichlet datum `g`.
#[derive(Clone)]
pub struct ScenarioRhs {
    pub obstacle: ScalarFn,
    pub rhs: ScalarFn,
    pub boundary: ScalarFn,
    /// Declared bound on `‖f‖_∞`.
    pub rhs_bound: f64,
}

impl fmt::Debug for ScenarioRhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScenarioRhs")
            .field("rhs_bound", &self.rhs_bound)
            .finish()
    }
}

impl ScenarioRhs {
    pub fn new(
        obstacle: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        rhs: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        boundary: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        rhs_bound: f64,
    ) -> Self {
        Self {
            obstacle: Arc::new(obstacle),
            rhs: Arc::new(rhs),
            boundary: Arc::new(boundary),
            rhs_bound,
        }
    }

    /// Zero obstacle, zero right-hand side.
    pub fn homogeneous(boundary: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(|_| 0.0, |_| 0.0, boundary, 0.0)
    }

    /// Checks `g ≥ φ` at the thin nodes on the box boundary.
    pub fn check_compatibility(&self, grid: &Grid) -> Result<()> {
        for p in grid.thin_nodes() {
            if grid.is_box_boundary(p) {
                let x = grid.point(p);
                let g = (self.boundary)(&x);
                let phi = (self.obstacle)(&x);
                if g < phi - 1e-12 * (1.0 + phi.abs()) {
                    return Err(Error::Infeasible(format!(
                        "boundary datum {g:.4e} below obstacle {phi:.4e} at {x:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest second difference of `φ` over thin nodes (step `hstep`).
    pub fn obstacle_second_difference(&self, grid: &Grid) -> f64 {
        let h = grid.hstep();
        let mut out: f64 = 0.0;
        for p in grid.thin_nodes() {
            let x = grid.point(p);
            for a in 0..grid.dim() - 1 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += h;
                xm[a] -= h;
                let d = ((self.obstacle)(&xp) - 2.0 * (self.obstacle)(&x) + (self.obstacle)(&xm)) / (h * h);
                out = out.max(d.abs());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag_field() -> CoefficientField {
        CoefficientField::new(2, 0.5, 2.0, "diag", |x| SymMat::diag(&[1.0, 1.0 + x[0] * x[0]]))
    }

    #[test]
    fn identity_validates_with_zero_margins() {
        let r = validate(&CoefficientField::identity(3), 200).unwrap();
        assert_eq!(r.symmetry_defect, 0.0);
        assert_eq!(r.lipschitz_quotient, 0.0);
        assert_eq!(r.thin_offdiagonal, 0.0);
        assert_eq!(r.min_eigenvalue, 1.0);
        assert_eq!(r.ellipticity_margin, 0.0);
    }

    #[test]
    fn diagonal_field_passes() {
        assert!(validate(&diag_field(), 500).is_ok());
    }

    #[test]
    fn thin_offdiagonal_rejected() {
        let f = CoefficientField::new(2, 0.5, 1.0, "offdiag", |_| {
            SymMat::from_rows(&[&[1.0, 0.1], &[0.1, 1.0]])
        });
        let err = validate(&f, 10).unwrap_err();
        assert!(matches!(err, Error::Assumption(ref s) if s.starts_with("thin plane")));
    }

    #[test]
    fn lipschitz_violation_detected() {
        let f = CoefficientField::new(2, 0.5, 0.5, "steep", |x| SymMat::diag(&[1.0, 1.0 + 0.4 * x[0].sin() * 2.0]));
        assert!(validate(&f, 100).is_err());
    }

    #[test]
    fn conformal_factor_examples() {
        let id = CoefficientField::identity(2);
        assert_eq!(conformal_mu(&id, &[0.3, -0.2, 0.0]), 1.0);
        let f = diag_field();
        let s = 0.5f64.sqrt();
        assert_relative_eq!(conformal_mu(&f, &[s, s, 0.0]), 1.25, epsilon = 1e-14);
        assert_relative_eq!(conformal_mu(&f, &[1.0, 0.0, 0.0]), 1.0, epsilon = 1e-14);
        assert_eq!(conformal_mu(&f, &[0.0; 3]), 1.0);
    }

    #[test]
    fn vector_z_examples() {
        let c = CoefficientField::constant(SymMat::diag(&[1.0, 2.0]), 0.5);
        assert_eq!(vector_z(&c, &[1.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
        assert_eq!(vector_z(&c, &[0.0, 1.0, 0.0]), [0.0, 1.0, 0.0]);
        let x = [0.3, -0.4, 0.0];
        assert_eq!(vector_z(&CoefficientField::identity(2), &x), x);
    }

    #[test]
    fn square_roots() {
        let id = CoefficientField::identity(2);
        let s = matrix_sqrt(&id, &[0.0; 3]).unwrap();
        assert!(s.max_abs_diff(&SymMat::identity(2)) < 1e-15);
        let d = SymMat::diag(&[4.0, 9.0]).sqrt().unwrap();
        assert!(d.max_abs_diff(&SymMat::diag(&[2.0, 3.0])) < 1e-14);
        // 2×2 closed form: √A = (A + √det I)/√(tr + 2√det)
        let a = SymMat::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let sd = 3f64.sqrt();
        let t = (4.0 + 2.0 * sd).sqrt();
        let oracle = SymMat::from_rows(&[&[(2.0 + sd) / t, 1.0 / t], &[1.0 / t, (2.0 + sd) / t]]);
        let r = a.sqrt().unwrap();
        assert!(r.max_abs_diff(&oracle) < 1e-13);
        assert!(r.mul(&r).max_abs_diff(&a) < 1e-12 * a.max_abs());
        let bad = SymMat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert_eq!(bad.sqrt(), Err(Error::NotSpd));
    }

    #[test]
    fn divergence_of_radial_flux() {
        let id2 = CoefficientField::identity(2);
        let id3 = CoefficientField::identity(3);
        assert!((div_a_grad_r(&id2, &[0.3, 0.4, 0.0]).unwrap() - 2.0).abs() < 1e-4);
        assert!((div_a_grad_r(&id3, &[0.0, 0.25, 0.0]).unwrap() - 8.0).abs() < 1e-4);
        assert!((div_a_grad_r_step(&id2, &[0.3, 0.4, 0.0], 1e-3).unwrap() - 2.0).abs() < 1e-4);
        assert_eq!(div_a_grad_r(&id2, &[0.0; 3]), Err(Error::Origin));
    }

    #[test]
    fn divergence_matches_dense_oracle() {
        let f = CoefficientField::new(2, 0.8, 0.2, "tilt", |x| {
            SymMat::diag(&[1.0 + 0.1 * x[0], 1.0 + 0.1 * x[0]])
        });
        let x = [0.2, 0.1, 0.0];
        let v = div_a_grad_r(&f, &x).unwrap();
        // dense oracle: (1+0.1x1)(n−1)/|x| + 0.1·x1/|x|
        let r = norm(&x, 2);
        let exact = (1.0 + 0.1 * x[0]) / r + 0.1 * x[0] / r;
        let fine = div_a_grad_r_step(&f, &x, 1e-5).unwrap();
        assert!((v - exact).abs() < 0.01 * exact);
        assert!((fine - exact).abs() < 0.01 * exact);
    }

    #[test]
    fn compatibility_check() {
        let g = Grid::new(2, 33).unwrap();
        let ok = ScenarioRhs::homogeneous(|x| x[0] * x[0]);
        assert!(ok.check_compatibility(&g).is_ok());
        let bad = ScenarioRhs::homogeneous(|x| -x[0].abs());
        assert!(matches!(bad.check_compatibility(&g), Err(Error::Infeasible(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mu_within_ellipticity(x0 in -1.0..1.0f64, x1 in -1.0..1.0f64) {
                let f = diag_field();
                let x = [x0, x1, 0.0];
                prop_assume!(norm(&x, 2) > 1e-6);
                let mu = conformal_mu(&f, &x);
                prop_assert!(mu >= f.lambda - 1e-12 && mu <= 1.0 / f.lambda + 1e-12);
            }

            #[test]
            fn sqrt_round_trip(a in 0.2..5.0f64, b in 0.2..5.0f64, c in -0.9..0.9f64) {
                let off = c * (a * b).sqrt();
                let m = SymMat::from_rows(&[&[a, off], &[off, b]]);
                let s = m.sqrt().unwrap();
                prop_assert!(s.mul(&s).max_abs_diff(&m) <= 1e-12 * m.max_abs());
            }

            #[test]
            fn validation_monotone_in_samples(k in 1usize..50, extra in 1usize..50) {
                let f = CoefficientField::new(2, 0.5, 0.05, "steep", |x| SymMat::diag(&[1.0, 1.0 + 0.3 * x[0]]));
                if validate(&f, k).is_err() {
                    prop_assert!(validate(&f, k + extra).is_err());
                }
            }
        }
    }
}
