//! Coincidence set and free boundary on the thin plane, cone inclusion,
//! local graph fits and Hölder exponents of the blowup parameters.

use crate::blowup::{direction_angle, BlowupFit, Label};
use crate::epiperimetric::eval_h_nu;
use crate::error::{Error, Result};
use crate::fit::power_fit;
use crate::geometry::{Grid, GridField, Point};
use crate::solver::SignoriniSolution;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;

/// Trace `v − φ` and flux jump at every thin node, by thin ordinal.
#[derive(Clone, Debug)]
pub struct ThinData {
    pub grid: Grid,
    pub trace: Vec<f64>,
    pub jump: Vec<f64>,
    pub scale: f64,
    /// Radius of the thin ball on which the data are trusted.
    pub radius: f64,
}

impl ThinData {
    /// Uses the discrete flux jump of the solver.
    pub fn from_solution(sol: &SignoriniSolution) -> Self {
        let g = sol.field.grid;
        let trace = (0..g.thin_count())
            .map(|k| sol.field.values[g.thin_node(k)] - sol.obstacle[k])
            .collect();
        Self {
            grid: g,
            trace,
            jump: sol.discrete_jump.clone(),
            scale: sol.residuals.scale.max(sol.field.max_abs()),
            radius: sol.analysis_radius,
        }
    }

    /// Uses one-sided normal derivatives of a field with zero obstacle;
    /// `a_nn` scales the jump.
    pub fn from_field(field: &GridField, a_nn: impl Fn(&Point) -> f64, radius: f64) -> Self {
        let g = field.grid;
        let layers = field
            .layers
            .clone()
            .unwrap_or_else(|| field.clone().with_layers().layers.expect("layers"));
        let trace = (0..g.thin_count()).map(|k| field.values[g.thin_node(k)]).collect();
        let jump = (0..g.thin_count())
            .map(|k| a_nn(&g.point(g.thin_node(k))) * (layers.minus[k] - layers.plus[k]))
            .collect();
        Self {
            grid: g,
            trace,
            jump,
            scale: field.max_abs(),
            radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartStatus {
    /// Both contact and non-contact nodes present.
    FreeBoundary,
    /// No contact node in the window.
    EmptyContact,
    /// Every node of the window is in contact.
    FullContact,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaPoint {
    pub x: Point,
    /// Thin ordinals of the contact and non-contact ends of the edge.
    pub inner: usize,
    pub outer: usize,
    pub label: Option<Label>,
    pub fit: Option<BlowupFit>,
}

#[derive(Clone, Debug)]
pub struct FreeBoundaryChart {
    pub grid: Grid,
    pub data: ThinData,
    /// Thin nodes inside the window.
    pub window: Vec<bool>,
    pub contact: Vec<bool>,
    pub gamma: Vec<GammaPoint>,
    pub status: ChartStatus,
    pub zero_tol: f64,
    pub jump_tol: f64,
}

fn thin_coords(grid: &Grid, k: usize) -> [usize; 2] {
    let mi = grid.multi_index(grid.thin_node(k));
    [mi[0], if grid.dim() == 3 { mi[1] } else { 0 }]
}

fn thin_point(grid: &Grid, k: usize) -> Point {
    grid.point(grid.thin_node(k))
}

/// Thin neighbour of ordinal `k` along thin axis `a` with step `±1`.
fn neighbour(grid: &Grid, k: usize, a: usize, up: bool) -> Option<usize> {
    let c = thin_coords(grid, k);
    let n = grid.nodes_per_axis();
    if up && c[a] + 1 < n {
        Some(k + grid.stride(a))
    } else if !up && c[a] > 0 {
        Some(k - grid.stride(a))
    } else {
        None
    }
}

fn thin_norm(x: &Point, dim: usize) -> f64 {
    x[..dim - 1].iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Thresholds the trace and the flux jump, then locates `Γ` on every thin
/// edge joining a contact node to a non-contact node.
///
/// Contact: `trace ≤ 10⁻⁶·scale` and `jump ≥ 10⁻⁵·scale`. The subgrid
/// position averages two extrapolations that are linear in the distance
/// to `Γ` for the model profile: `trace^{2/3}` from the non-contact side
/// and `jump²` from the contact side.
pub fn extract_data(data: ThinData) -> FreeBoundaryChart {
    let g = data.grid;
    let dim = g.dim();
    let h = g.hstep();
    let zero_tol = 1e-6 * data.scale;
    let jump_tol = 10.0 * zero_tol;
    let tc = g.thin_count();
    let window: Vec<bool> = (0..tc)
        .map(|k| thin_norm(&thin_point(&g, k), dim) < data.radius - 2.0 * h)
        .collect();
    let contact: Vec<bool> = (0..tc)
        .map(|k| window[k] && data.trace[k] <= zero_tol && data.jump[k] >= jump_tol)
        .collect();
    let positive = |k: usize| window[k] && !contact[k];
    let mut gamma = Vec::new();
    for p in 0..tc {
        if !contact[p] {
            continue;
        }
        for a in 0..dim - 1 {
            for up in [false, true] {
                let Some(q) = neighbour(&g, p, a, up) else { continue };
                if !positive(q) {
                    continue;
                }
                let sign = if up { 1.0 } else { -1.0 };
                let mut estimates = Vec::new();
                // distance from p towards q
                if let Some(q2) = neighbour(&g, q, a, up).filter(|&q2| positive(q2)) {
                    let tq = data.trace[q].max(0.0).powf(2.0 / 3.0);
                    let tq2 = data.trace[q2].max(0.0).powf(2.0 / 3.0);
                    if tq2 > tq {
                        estimates.push((h - tq * h / (tq2 - tq)).clamp(0.0, h));
                    }
                }
                if let Some(p2) = neighbour(&g, p, a, !up).filter(|&p2| contact[p2]) {
                    let jp = data.jump[p].powi(2);
                    let jp2 = data.jump[p2].powi(2);
                    if jp2 > jp {
                        estimates.push((jp * h / (jp2 - jp)).clamp(0.0, h));
                    }
                }
                let s = if estimates.is_empty() {
                    0.5 * h
                } else {
                    estimates.iter().sum::<f64>() / estimates.len() as f64
                };
                let mut x = thin_point(&g, p);
                x[a] += sign * s;
                gamma.push(GammaPoint {
                    x,
                    inner: p,
                    outer: q,
                    label: None,
                    fit: None,
                });
            }
        }
    }
    let any_contact = contact.iter().any(|c| *c);
    let any_positive = (0..tc).any(positive);
    let status = match (any_contact, any_positive) {
        (false, _) => ChartStatus::EmptyContact,
        (true, false) => ChartStatus::FullContact,
        _ => ChartStatus::FreeBoundary,
    };
    FreeBoundaryChart {
        grid: g,
        data,
        window,
        contact,
        gamma,
        status,
        zero_tol,
        jump_tol,
    }
}

pub fn extract(sol: &SignoriniSolution) -> FreeBoundaryChart {
    extract_data(ThinData::from_solution(sol))
}

impl FreeBoundaryChart {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn contact_count(&self) -> usize {
        self.contact.iter().filter(|c| **c).count()
    }

    /// `Γ` point closest to `x`.
    pub fn nearest(&self, x: &Point) -> Option<usize> {
        let dim = self.dim();
        (0..self.gamma.len()).min_by(|a, b| {
            let da = thin_norm(&crate::geometry::sub(&self.gamma[*a].x, x), dim);
            let db = thin_norm(&crate::geometry::sub(&self.gamma[*b].x, x), dim);
            da.total_cmp(&db)
        })
    }

    /// Up to `count` `Γ` points within `radius` of `x`, spread evenly
    /// along the list ordered by their first thin coordinate(s).
    pub fn sample(&self, x: &Point, radius: f64, count: usize) -> Vec<usize> {
        let dim = self.dim();
        let mut idx: Vec<usize> = (0..self.gamma.len())
            .filter(|&i| thin_norm(&crate::geometry::sub(&self.gamma[i].x, x), dim) <= radius)
            .collect();
        idx.sort_by(|a, b| {
            let pa = self.gamma[*a].x;
            let pb = self.gamma[*b].x;
            (pa[0] + pa[1] * if dim == 3 { 1e-3 } else { 0.0 })
                .total_cmp(&(pb[0] + pb[1] * if dim == 3 { 1e-3 } else { 0.0 }))
        });
        if idx.len() <= count {
            return idx;
        }
        (0..count)
            .map(|j| idx[(j * (idx.len() - 1)) / (count - 1).max(1)])
            .collect()
    }

    /// Every `Γ` point sits on an edge joining a contact node to a
    /// non-contact node, at most one cell from each.
    pub fn adjacency_holds(&self) -> bool {
        let h = self.grid.hstep();
        let dim = self.dim();
        self.gamma.iter().all(|gp| {
            let pi = thin_point(&self.grid, gp.inner);
            let po = thin_point(&self.grid, gp.outer);
            self.contact[gp.inner]
                && !self.contact[gp.outer]
                && thin_norm(&crate::geometry::sub(&gp.x, &pi), dim) <= h + 1e-12
                && thin_norm(&crate::geometry::sub(&gp.x, &po), dim) <= h + 1e-12
        })
    }

    /// Flood fill from the contact set over thin edges that do not carry a
    /// `Γ` point never reaches a non-contact node of the window.
    pub fn separates(&self) -> bool {
        let g = self.grid;
        let dim = self.dim();
        let tc = g.thin_count();
        let cut: std::collections::HashSet<(usize, usize)> = self
            .gamma
            .iter()
            .map(|gp| (gp.inner.min(gp.outer), gp.inner.max(gp.outer)))
            .collect();
        let mut seen = vec![false; tc];
        let mut queue: VecDeque<usize> = (0..tc).filter(|&k| self.contact[k]).collect();
        for &k in &queue {
            seen[k] = true;
        }
        while let Some(k) = queue.pop_front() {
            if !self.contact[k] {
                return false;
            }
            for a in 0..dim - 1 {
                for up in [false, true] {
                    if let Some(q) = neighbour(&g, k, a, up) {
                        if !self.window[q] || seen[q] || cut.contains(&(k.min(q), k.max(q))) {
                            continue;
                        }
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConeResult {
    /// Every node in `x̄ + C_ε(ν)` has positive trace.
    pub positive_side: bool,
    /// Every node in `x̄ − C_ε(ν)` is a contact node.
    pub contact_side: bool,
    pub positive_nodes: usize,
    pub contact_nodes: usize,
    /// Worst offending node and its trace (positive side).
    pub worst_positive: Option<(Point, f64)>,
    /// Worst offending node and its trace (contact side).
    pub worst_contact: Option<(Point, f64)>,
}

impl ConeResult {
    pub fn passed(&self) -> bool {
        self.positive_side && self.contact_side
    }
}

/// Cone inclusion around `x̄` for `C_ε(ν) = {y : ⟨y,ν⟩ ≥ ε|y|}` within
/// `B'_r`. Nodes closer than `2·hstep` to the apex are skipped, since the
/// subgrid position of `x̄` is only known to within a fraction of a cell.
pub fn cone_test(chart: &FreeBoundaryChart, xbar: &Point, nu: &Point, eps: f64, r: f64) -> Result<ConeResult> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Parameter(format!("cone opening {eps} outside (0,1)")));
    }
    let g = chart.grid;
    let dim = g.dim();
    let skip = 2.0 * g.hstep();
    let mut out = ConeResult {
        positive_side: true,
        contact_side: true,
        positive_nodes: 0,
        contact_nodes: 0,
        worst_positive: None,
        worst_contact: None,
    };
    for k in 0..g.thin_count() {
        if !chart.window[k] {
            continue;
        }
        let x = thin_point(&g, k);
        let y = crate::geometry::sub(&x, xbar);
        let d = thin_norm(&y, dim);
        if d < skip || d > r {
            continue;
        }
        let s = (0..dim - 1).map(|a| y[a] * nu[a]).sum::<f64>();
        let t = chart.data.trace[k];
        if s >= eps * d {
            out.positive_nodes += 1;
            if t <= chart.zero_tol {
                out.positive_side = false;
                if out.worst_positive.is_none_or(|(_, w)| t < w) {
                    out.worst_positive = Some((x, t));
                }
            }
        } else if -s >= eps * d {
            out.contact_nodes += 1;
            if !chart.contact[k] {
                out.contact_side = false;
                if out.worst_contact.is_none_or(|(_, w)| t > w) {
                    out.worst_contact = Some((x, t));
                }
            }
        }
    }
    if out.positive_nodes == 0 && out.contact_nodes == 0 {
        return Err(Error::EmptyCone);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphFit {
    pub center: Point,
    /// Thin direction used as the graph axis.
    pub axis: Point,
    /// `t = c0 + c1 s + c2 s²` with `t = ⟨y,ν⟩`, `s = ⟨y,ν^⊥⟩`, `y = x − x̄`.
    pub coefficients: [f64; 3],
    /// Largest `|g'(s)|` over the window.
    pub sup_slope: f64,
    /// Largest absolute residual.
    pub residual: f64,
    pub points: usize,
    /// Unit normal of the fitted graph at `x̄` in original thin coordinates.
    pub normal: Point,
    /// Residual within `2·hstep`.
    pub accepted: bool,
}

/// Quadratic graph fit of the `Γ` points within `window` of `x̄`, in the
/// frame where `ν` is the last thin axis (`n = 3` only).
pub fn graph_fit(chart: &FreeBoundaryChart, xbar: &Point, nu: &Point, window: f64) -> Result<GraphFit> {
    let dim = chart.dim();
    if dim != 3 {
        return Err(Error::Dimension(dim));
    }
    let nl = (nu[0] * nu[0] + nu[1] * nu[1]).sqrt();
    let nu = [nu[0] / nl, nu[1] / nl, 0.0];
    let perp = [-nu[1], nu[0], 0.0];
    let pts: Vec<(f64, f64)> = chart
        .gamma
        .iter()
        .filter_map(|gp| {
            let y = crate::geometry::sub(&gp.x, xbar);
            if thin_norm(&y, dim) > window {
                return None;
            }
            Some((y[0] * perp[0] + y[1] * perp[1], y[0] * nu[0] + y[1] * nu[1]))
        })
        .collect();
    if pts.len() < 5 {
        return Err(Error::TooFewPoints(format!("{} free boundary points in window", pts.len())));
    }
    let mut m = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (s, t) in &pts {
        let phi = Vector3::new(1.0, *s, s * s);
        m += phi * phi.transpose();
        rhs += phi * *t;
    }
    let c = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("free boundary points are collinear across the graph axis".into()))?;
    let coefficients = [c[0], c[1], c[2]];
    let g = |s: f64| c[0] + c[1] * s + c[2] * s * s;
    let residual = pts.iter().fold(0.0f64, |m, (s, t)| m.max((t - g(*s)).abs()));
    let sup_slope = pts.iter().fold(0.0f64, |m, (s, _)| m.max((c[1] + 2.0 * c[2] * s).abs()));
    let (ns, nt) = (-c[1], 1.0);
    let l = (ns * ns + nt * nt).sqrt();
    let normal = [
        (ns * perp[0] + nt * nu[0]) / l,
        (ns * perp[1] + nt * nu[1]) / l,
        0.0,
    ];
    Ok(GraphFit {
        center: *xbar,
        axis: nu,
        coefficients,
        sup_slope,
        residual,
        points: pts.len(),
        normal,
        accepted: residual <= 2.0 * chart.grid.hstep(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HolderEstimate {
    /// Every pairwise difference is below the noise floor.
    FlatWithinNoise { floor: f64 },
    Fitted { exponent: f64, constant: f64, pairs: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderReport {
    pub points: usize,
    pub amplitude: HolderEstimate,
    pub direction: HolderEstimate,
}

/// Noise floors: relative amplitude differences below `a_floor` and angle
/// differences below `nu_floor` (radians) are discarded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderFloors {
    pub a_floor: f64,
    pub nu_floor: f64,
}

impl Default for HolderFloors {
    fn default() -> Self {
        Self {
            a_floor: 0.02,
            nu_floor: 1f64.to_radians(),
        }
    }
}

fn holder_estimate(dist: &[f64], diff: &[f64], floor: f64) -> HolderEstimate {
    let (d, v): (Vec<f64>, Vec<f64>) = dist
        .iter()
        .zip(diff)
        .filter(|(d, v)| **d > 0.0 && **v > floor)
        .map(|(d, v)| (*d, *v))
        .unzip();
    if d.len() < 3 {
        return HolderEstimate::FlatWithinNoise { floor };
    }
    match power_fit(&d, &v) {
        Some(f) => HolderEstimate::Fitted {
            exponent: f.exponent.max(0.0),
            constant: f.constant,
            pairs: f.points,
        },
        None => HolderEstimate::FlatWithinNoise { floor },
    }
}

/// Log-log regression of `|a_x − a_y|` and `|ν_x − ν_y|` against `|x − y|`
/// over all pairs of regular `Γ` points with fits.
pub fn holder_fit(chart: &FreeBoundaryChart, floors: &HolderFloors) -> Result<HolderReport> {
    let dim = chart.dim();
    let pts: Vec<(&Point, &BlowupFit)> = chart
        .gamma
        .iter()
        .filter(|gp| gp.label == Some(Label::Regular))
        .filter_map(|gp| gp.fit.as_ref().map(|f| (&gp.x, f)))
        .collect();
    if pts.len() < 6 {
        return Err(Error::TooFewPoints(format!("{} regular points with fits", pts.len())));
    }
    let mean_a = pts.iter().map(|(_, f)| f.amplitude).sum::<f64>() / pts.len() as f64;
    let mut dist = Vec::new();
    let mut da = Vec::new();
    let mut dn = Vec::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            dist.push(thin_norm(&crate::geometry::sub(pts[i].0, pts[j].0), dim));
            da.push((pts[i].1.amplitude - pts[j].1.amplitude).abs() / mean_a.max(f64::MIN_POSITIVE));
            dn.push(direction_angle(&pts[i].1.direction, &pts[j].1.direction));
        }
    }
    Ok(HolderReport {
        points: pts.len(),
        amplitude: holder_estimate(&dist, &da, floors.a_floor),
        direction: holder_estimate(&dist, &dn, floors.nu_floor),
    })
}

/// `∫_{S'_1}|a_x h_{ν_x} − a_y h_{ν_y}|` over the unit sphere of the thin
/// space (two points for `n = 2`, a circle for `n = 3`).
pub fn blowup_distance(fx: Option<&BlowupFit>, fy: Option<&BlowupFit>, dim: usize) -> Result<f64> {
    let (Some(fx), Some(fy)) = (fx, fy) else {
        return Err(Error::MissingFit("both points need a blowup fit".into()));
    };
    let diff = |x: &Point| (fx.amplitude * eval_h_nu(x, dim, &fx.direction) - fy.amplitude * eval_h_nu(x, dim, &fy.direction)).abs();
    if dim == 2 {
        return Ok(diff(&[1.0, 0.0, 0.0]) + diff(&[-1.0, 0.0, 0.0]));
    }
    let m = 3600;
    let w = 2.0 * PI / m as f64;
    Ok((0..m)
        .map(|k| {
            let t = (k as f64 + 0.5) * w;
            w * diff(&[t.cos(), t.sin(), 0.0])
        })
        .sum())
}

/// Least-squares line through the `Γ` points (`n = 3`): unit normal and
/// largest distance of a point from the line.
pub fn line_fit(chart: &FreeBoundaryChart, center: &Point, window: f64) -> Result<(Point, f64)> {
    let dim = chart.dim();
    if dim != 3 {
        return Err(Error::Dimension(dim));
    }
    let pts: Vec<Point> = chart
        .gamma
        .iter()
        .map(|gp| gp.x)
        .filter(|x| thin_norm(&crate::geometry::sub(x, center), dim) <= window)
        .collect();
    if pts.len() < 2 {
        return Err(Error::TooFewPoints(format!("{} free boundary points", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // direction of largest spread; the normal is perpendicular to it
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let normal = [-theta.sin(), theta.cos(), 0.0];
    let residual = pts
        .iter()
        .fold(0.0f64, |m, p| m.max(((p[0] - mx) * normal[0] + (p[1] - my) * normal[1]).abs()));
    Ok((normal, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;

    fn h_chart(dim: usize, n: usize, nu: Point) -> FreeBoundaryChart {
        let g = build_grid(dim, n).unwrap();
        let f = GridField::from_fn(g, |x| eval_h_nu(x, dim, &nu)).with_layers();
        extract_data(ThinData::from_field(&f, |_| 1.0, 1.0))
    }

    #[test]
    fn gamma_of_h_in_two_dimensions() {
        let c = h_chart(2, 65, [1.0, 0.0, 0.0]);
        assert_eq!(c.status, ChartStatus::FreeBoundary);
        assert_eq!(c.gamma.len(), 1);
        assert!(c.gamma[0].x[0].abs() < 0.1 * c.grid.hstep(), "{:?}", c.gamma[0].x);
        assert!(c.adjacency_holds());
        assert!(c.separates());
        for k in 0..c.grid.thin_count() {
            let x = thin_point(&c.grid, k);
            // the node at the origin is ambiguous and may go either way
            if c.window[k] && x[0] != 0.0 {
                assert_eq!(c.contact[k], x[0] < 0.0);
            }
        }
    }

    #[test]
    fn gamma_line_in_three_dimensions() {
        let c = h_chart(3, 33, [1.0, 0.0, 0.0]);
        assert!(c.gamma.iter().all(|gp| gp.x[0].abs() < c.grid.hstep()));
        assert!(c.gamma.len() > 20);
        assert!(c.separates());
        let t = 20f64.to_radians();
        let nu = [t.cos(), t.sin(), 0.0];
        let c = h_chart(3, 65, nu);
        let (normal, res) = line_fit(&c, &[0.0; 3], 0.6).unwrap();
        assert!(res <= 2.0 * c.grid.hstep(), "{res}");
        assert!(direction_angle(&normal, &nu).min(PI - direction_angle(&normal, &nu)) < 3f64.to_radians());
        let gf = graph_fit(&c, &[0.0; 3], &nu, 0.5).unwrap();
        assert!(gf.accepted);
        assert!(gf.coefficients[1].abs() < 0.05);
        assert!(direction_angle(&gf.normal, &nu) < 3f64.to_radians());
        let gf0 = graph_fit(&c, &[0.0; 3], &[1.0, 0.0, 0.0], 0.5).unwrap();
        assert!((gf0.coefficients[1] + t.tan()).abs() < 0.05, "{:?}", gf0.coefficients);
    }

    #[test]
    fn positive_trace_has_no_contact() {
        let g = build_grid(2, 33).unwrap();
        let f = GridField::from_fn(g, |x| 1.0 + x[0] * x[0]).with_layers();
        let c = extract_data(ThinData::from_field(&f, |_| 1.0, 1.0));
        assert_eq!(c.status, ChartStatus::EmptyContact);
        assert!(c.gamma.is_empty());
    }

    #[test]
    fn cones() {
        let c = h_chart(2, 65, [1.0, 0.0, 0.0]);
        let e1 = [1.0, 0.0, 0.0];
        let r = cone_test(&c, &[0.0; 3], &e1, 0.5, 0.3).unwrap();
        assert!(r.passed());
        let w = cone_test(&c, &[0.0; 3], &[-1.0, 0.0, 0.0], 0.5, 0.3).unwrap();
        assert!(!w.positive_side && !w.contact_side);
        let h = c.grid.hstep();
        assert!(cone_test(&c, &[0.0; 3], &e1, 0.99, 3.0 * h).unwrap().passed());
        assert!(matches!(cone_test(&c, &[0.0; 3], &e1, 0.5, h), Err(Error::EmptyCone)));
        let c3 = h_chart(3, 33, e1);
        for (eps, r) in [(0.3, 0.4), (0.5, 0.3), (0.8, 0.2)] {
            assert!(cone_test(&c3, &[0.0, 0.1, 0.0], &e1, eps, r).unwrap().passed());
        }
    }

    #[test]
    fn graph_fit_needs_points() {
        let mut c = h_chart(3, 33, [1.0, 0.0, 0.0]);
        c.gamma.truncate(2);
        assert!(matches!(graph_fit(&c, &[0.0; 3], &[1.0, 0.0, 0.0], 1.0), Err(Error::TooFewPoints(_))));
        let c2 = h_chart(2, 33, [1.0, 0.0, 0.0]);
        assert!(matches!(graph_fit(&c2, &[0.0; 3], &[1.0, 0.0, 0.0], 1.0), Err(Error::Dimension(2))));
    }

    fn fit(a: f64, t: f64) -> BlowupFit {
        BlowupFit {
            amplitude: a,
            direction: [t.cos(), t.sin(), 0.0],
            residual: 0.0,
            norm: 1.0,
            radius: 0.1,
        }
    }

    #[test]
    fn holder_estimates() {
        let mut c = h_chart(3, 33, [1.0, 0.0, 0.0]);
        for gp in c.gamma.iter_mut() {
            gp.label = Some(Label::Regular);
            gp.fit = Some(fit(1.0, 0.0));
        }
        let r = holder_fit(&c, &HolderFloors::default()).unwrap();
        assert!(matches!(r.amplitude, HolderEstimate::FlatWithinNoise { .. }));
        assert!(matches!(r.direction, HolderEstimate::FlatWithinNoise { .. }));
        for gp in c.gamma.iter_mut() {
            let y = gp.x[1];
            gp.fit = Some(fit(1.0, 0.3 * y.signum() * y.abs().sqrt()));
        }
        match holder_fit(&c, &HolderFloors::default()).unwrap().direction {
            HolderEstimate::Fitted { exponent, .. } => assert!(exponent > 0.0),
            other => panic!("{other:?}"),
        }
        c.gamma.truncate(3);
        assert!(matches!(holder_fit(&c, &HolderFloors::default()), Err(Error::TooFewPoints(_))));
    }

    #[test]
    fn distances_between_blowups() {
        let a = fit(1.0, 0.0);
        assert_eq!(blowup_distance(Some(&a), Some(&a), 3).unwrap(), 0.0);
        let d1 = blowup_distance(Some(&a), Some(&fit(1.0, 0.01)), 3).unwrap();
        let d2 = blowup_distance(Some(&a), Some(&fit(1.0, 0.02)), 3).unwrap();
        assert!((d2 / d1 - 2.0).abs() < 0.05);
        // first order: ∫ |d/dφ cos₊^{3/2}(t−φ)| = ∫ (3/2)cos^{1/2}|sin| over |t| < π/2
        let slope = 1.5 * 2.0 * (2.0 / 3.0);
        assert!((d1 / 0.01 - slope).abs() < 0.05 * slope);
        let c = (0..3600)
            .map(|k| {
                let t = (k as f64 + 0.5) * 2.0 * PI / 3600.0;
                t.cos().max(0.0).powf(1.5) * 2.0 * PI / 3600.0
            })
            .sum::<f64>();
        let d = blowup_distance(Some(&a), Some(&fit(2.0, 0.0)), 3).unwrap();
        assert!((d - c).abs() < 1e-9);
        assert!((blowup_distance(Some(&fit(1.0, 0.0)), Some(&fit(2.0, 0.0)), 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(blowup_distance(None, Some(&a), 2).is_err());
    }
}
