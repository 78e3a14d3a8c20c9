//! Tensor grid on the box `[-1,1]^n`, grid fields, interpolation and
//! sphere/ball quadrature.
//!
//! Points are stored as `[f64; 3]`; for `n = 2` the third slot is zero and the
//! thin normal coordinate `x_n` lives in slot 1.

use crate::error::{Error, Result};
use std::f64::consts::PI;

pub type Point = [f64; 3];

/// Euclidean norm of the first `dim` components.
pub fn norm(x: &Point, dim: usize) -> f64 {
    x[..dim].iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn dot(x: &Point, y: &Point, dim: usize) -> f64 {
    (0..dim).map(|i| x[i] * y[i]).sum()
}

pub fn scale(x: &Point, s: f64) -> Point {
    [x[0] * s, x[1] * s, x[2] * s]
}

pub fn add(x: &Point, y: &Point) -> Point {
    [x[0] + y[0], x[1] + y[1], x[2] + y[2]]
}

pub fn sub(x: &Point, y: &Point) -> Point {
    [x[0] - y[0], x[1] - y[1], x[2] - y[2]]
}

/// Uniform grid with `nodes` points per axis on `[-1,1]^dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    nodes: usize,
    hstep: f64,
}

/// Builds a grid; `nodes` must be odd so that `x_n = 0` is a node layer.
pub fn build_grid(dim: usize, nodes: usize) -> Result<Grid> {
    Grid::new(dim, nodes)
}

impl Grid {
    pub const MIN_NODES: usize = 33;

    pub fn new(dim: usize, nodes: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Dimension(dim));
        }
        if nodes % 2 == 0 {
            return Err(Error::EvenNodeCount(nodes));
        }
        if nodes < Self::MIN_NODES {
            return Err(Error::TooFewNodes(nodes));
        }
        Ok(Self {
            dim,
            nodes,
            hstep: 2.0 / (nodes - 1) as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes
    }

    pub fn hstep(&self) -> f64 {
        self.hstep
    }

    pub fn node_count(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    /// Index of the middle layer along every axis (the coordinate 0).
    pub fn mid(&self) -> usize {
        (self.nodes - 1) / 2
    }

    pub fn thin_axis(&self) -> usize {
        self.dim - 1
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.nodes.pow(axis as u32)
    }

    /// Coordinate of layer `i`; the middle layer is exactly zero.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.mid() as f64) * self.hstep
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let n = self.nodes;
        match self.dim {
            2 => [idx % n, idx / n, 0],
            _ => [idx % n, (idx / n) % n, idx / (n * n)],
        }
    }

    pub fn index(&self, mi: &[usize; 3]) -> usize {
        let n = self.nodes;
        match self.dim {
            2 => mi[0] + n * mi[1],
            _ => mi[0] + n * (mi[1] + n * mi[2]),
        }
    }

    pub fn point(&self, idx: usize) -> Point {
        let mi = self.multi_index(idx);
        let mut x = [0.0; 3];
        for (a, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = self.coord(mi[a]);
        }
        x
    }

    pub fn is_thin(&self, idx: usize) -> bool {
        self.multi_index(idx)[self.thin_axis()] == self.mid()
    }

    pub fn is_box_boundary(&self, idx: usize) -> bool {
        let mi = self.multi_index(idx);
        (0..self.dim).any(|a| mi[a] == 0 || mi[a] == self.nodes - 1)
    }

    /// Node lies in the closed unit ball.
    pub fn in_ball(&self, idx: usize) -> bool {
        norm(&self.point(idx), self.dim) <= 1.0 + 1e-12
    }

    pub fn thin_count(&self) -> usize {
        self.nodes.pow(self.dim as u32 - 1)
    }

    /// Ordinal of a thin-layer node inside the thin layer, `None` off the layer.
    pub fn thin_ordinal(&self, idx: usize) -> Option<usize> {
        if self.is_thin(idx) {
            Some(idx - self.mid() * self.stride(self.thin_axis()))
        } else {
            None
        }
    }

    pub fn thin_node(&self, ordinal: usize) -> usize {
        ordinal + self.mid() * self.stride(self.thin_axis())
    }

    pub fn thin_nodes(&self) -> Vec<usize> {
        (0..self.thin_count()).map(|k| self.thin_node(k)).collect()
    }

    /// Nodes in the closed unit ball.
    pub fn ball_mask(&self) -> Vec<bool> {
        (0..self.node_count()).map(|i| self.in_ball(i)).collect()
    }

    pub fn contains(&self, x: &Point) -> bool {
        x[..self.dim].iter().all(|c| c.abs() <= 1.0 + 1e-12)
    }

    /// Lower cell index and local coordinate along one axis.
    fn locate(&self, c: f64) -> (usize, f64) {
        let t = (c + 1.0) / self.hstep;
        let i = (t.floor().max(0.0) as usize).min(self.nodes - 2);
        (i, (t - i as f64).clamp(0.0, 1.0))
    }

    /// Geometric radius ladder `r_max * ratio^k`, descending, down to `r_min`.
    pub fn ladder(&self, r_max: f64, ratio: f64, r_min: f64) -> Vec<f64> {
        radius_ladder(r_max, ratio, r_min)
    }

    /// Default ladder: 0.9·0.93^k down to 4·hstep.
    pub fn default_ladder(&self) -> Vec<f64> {
        radius_ladder(0.9, 0.93, 4.0 * self.hstep)
    }
}

pub fn radius_ladder(r_max: f64, ratio: f64, r_min: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= r_min * (1.0 - 1e-12) {
        out.push(r);
        r *= ratio;
    }
    out
}

/// One-sided normal derivatives on the thin layer, indexed by thin ordinal.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalLayers {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub layers: Option<NormalLayers>,
}

impl GridField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.node_count()],
            layers: None,
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64 + Sync) -> Self {
        use rayon::prelude::*;
        let values = (0..grid.node_count())
            .into_par_iter()
            .map(|i| f(&grid.point(i)))
            .collect();
        Self {
            grid,
            values,
            layers: None,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Parameter(format!(
                "expected {} values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        Ok(Self {
            grid,
            values,
            layers: None,
        })
    }

    /// Attaches second-order one-sided normal derivatives on the thin layer.
    pub fn with_layers(mut self) -> Self {
        self.layers = Some(self.one_sided_layers());
        self
    }

    fn one_sided_layers(&self) -> NormalLayers {
        let g = &self.grid;
        let s = g.stride(g.thin_axis());
        let h = g.hstep();
        let v = &self.values;
        let mut plus = Vec::with_capacity(g.thin_count());
        let mut minus = Vec::with_capacity(g.thin_count());
        for k in 0..g.thin_count() {
            let p = g.thin_node(k);
            plus.push((-3.0 * v[p] + 4.0 * v[p + s] - v[p + 2 * s]) / (2.0 * h));
            minus.push((3.0 * v[p] - 4.0 * v[p - s] + v[p - 2 * s]) / (2.0 * h));
        }
        NormalLayers { plus, minus }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation; the enclosing cell never straddles the thin
    /// plane because the plane is a node layer and cells are chosen on the
    /// side of `x`.
    pub fn interpolate(&self, x: &Point) -> Result<f64> {
        if !self.grid.contains(x) {
            return Err(Error::OutOfBox(*x));
        }
        Ok(self.interpolate_unchecked(x))
    }

    pub(crate) fn interpolate_unchecked(&self, x: &Point) -> f64 {
        let g = &self.grid;
        let dim = g.dim();
        let mut base = 0usize;
        let mut t = [0.0; 3];
        for a in 0..dim {
            let (i, f) = g.locate(x[a]);
            base += i * g.stride(a);
            t[a] = f;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut idx = base;
            for (a, ta) in t.iter().enumerate().take(dim) {
                if corner >> a & 1 == 1 {
                    w *= ta;
                    idx += g.stride(a);
                } else {
                    w *= 1.0 - ta;
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }

    /// Gradient estimate at `x` by differences of the interpolant with step
    /// `hstep/2`; along the normal axis near the plane the difference stays in
    /// the half-space of `x` (upper side when `x_n = 0`).
    pub fn gradient(&self, x: &Point) -> Result<Point> {
        if !self.grid.contains(x) {
            return Err(Error::OutOfBox(*x));
        }
        let g = &self.grid;
        let s = 0.5 * g.hstep();
        let thin = g.thin_axis();
        let mut out = [0.0; 3];
        for a in 0..g.dim() {
            let near_plane = a == thin && x[a].abs() < g.hstep();
            let (lo, hi) = if near_plane {
                if x[a] >= 0.0 {
                    (x[a], x[a] + s)
                } else {
                    (x[a] - s, x[a])
                }
            } else {
                ((x[a] - s).max(-1.0), (x[a] + s).min(1.0))
            };
            let mut xl = *x;
            let mut xh = *x;
            xl[a] = lo;
            xh[a] = hi;
            out[a] = (self.interpolate_unchecked(&xh) - self.interpolate_unchecked(&xl)) / (hi - lo);
        }
        Ok(out)
    }

    /// Interpolated one-sided normal derivatives `(∂n⁺, ∂n⁻)` at a thin point.
    pub fn normal_derivatives(&self, x: &Point) -> Option<(f64, f64)> {
        let layers = self.layers.as_ref()?;
        let g = &self.grid;
        let dim = g.dim();
        let mut base = 0usize;
        let mut t = [0.0; 3];
        for a in 0..dim - 1 {
            let (i, f) = g.locate(x[a]);
            base += i * g.stride(a);
            t[a] = f;
        }
        let mut plus = 0.0;
        let mut minus = 0.0;
        for corner in 0..(1usize << (dim - 1)) {
            let mut w = 1.0;
            let mut k = base;
            for (a, ta) in t.iter().enumerate().take(dim - 1) {
                if corner >> a & 1 == 1 {
                    w *= ta;
                    k += g.stride(a);
                } else {
                    w *= 1.0 - ta;
                }
            }
            plus += w * layers.plus[k];
            minus += w * layers.minus[k];
        }
        Some((plus, minus))
    }
}

/// Quadrature nodes and weights on a sphere of radius `r`.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub dim: usize,
    pub radius: f64,
    pub resolution: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

pub const DEFAULT_RESOLUTION_2D: usize = 720;
pub const DEFAULT_RESOLUTION_3D: usize = 64 * 128;

pub fn default_resolution(dim: usize) -> usize {
    if dim == 2 {
        DEFAULT_RESOLUTION_2D
    } else {
        DEFAULT_RESOLUTION_3D
    }
}

/// Sphere rule checked against the grid: `2·hstep ≤ r ≤ 1`.
pub fn sphere_rule(grid: &Grid, r: f64, resolution: usize) -> Result<SphereRule> {
    let min = 2.0 * grid.hstep();
    if r < min * (1.0 - 1e-12) || r > 1.0 + 1e-12 {
        return Err(Error::Radius {
            radius: r,
            min,
            max: 1.0,
        });
    }
    Ok(SphereRule::unit(grid.dim(), resolution)?.scaled(r))
}

impl SphereRule {
    /// Unit sphere rule. For `n = 3` the resolution is met by a Gauss–Legendre
    /// rule in the cosine of the polar angle (polar axis `x_2`, tangent to the
    /// thin plane) times twice as many uniform longitudes.
    pub fn unit(dim: usize, resolution: usize) -> Result<Self> {
        match dim {
            2 => {
                let k = resolution.max(8);
                let dt = 2.0 * PI / k as f64;
                let points = (0..k)
                    .map(|i| {
                        let t = (i as f64 + 0.5) * dt;
                        [t.cos(), t.sin(), 0.0]
                    })
                    .collect();
                Ok(Self {
                    dim,
                    radius: 1.0,
                    resolution: k,
                    points,
                    weights: vec![dt; k],
                })
            }
            3 => {
                let nlat = ((resolution as f64 / 2.0).sqrt().ceil() as usize).max(4);
                let nlon = 2 * nlat;
                let (z, wz) = gauss_legendre(nlat);
                let dphi = 2.0 * PI / nlon as f64;
                let mut points = Vec::with_capacity(nlat * nlon);
                let mut weights = Vec::with_capacity(nlat * nlon);
                for (zi, wi) in z.iter().zip(&wz) {
                    let s = (1.0 - zi * zi).max(0.0).sqrt();
                    for j in 0..nlon {
                        let phi = (j as f64 + 0.5) * dphi;
                        // (x_1, x_3) on the latitude circle, x_2 = polar
                        points.push([s * phi.cos(), *zi, s * phi.sin()]);
                        weights.push(wi * dphi);
                    }
                }
                Ok(Self {
                    dim,
                    radius: 1.0,
                    resolution: nlat * nlon,
                    points,
                    weights,
                })
            }
            d => Err(Error::Dimension(d)),
        }
    }

    pub fn scaled(&self, r: f64) -> Self {
        let s = r / self.radius;
        let ws = s.powi(self.dim as i32 - 1);
        Self {
            dim: self.dim,
            radius: r,
            resolution: self.resolution,
            points: self.points.iter().map(|p| scale(p, s)).collect(),
            weights: self.weights.iter().map(|w| w * ws).collect(),
        }
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    pub fn integrate_field(&self, field: &GridField) -> Result<f64> {
        let mut acc = 0.0;
        for (p, w) in self.points.iter().zip(&self.weights) {
            acc += w * field.interpolate(p)?;
        }
        Ok(acc)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Gauss–Legendre nodes and weights on `[-1,1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Cells (by lower-corner node index) intersecting `B_r`, with the fraction
/// of each cell inside, and the induced node weights.
#[derive(Clone, Debug)]
pub struct BallQuadrature {
    pub radius: f64,
    pub cells: Vec<(usize, f64)>,
    pub node_weights: Vec<(usize, f64)>,
}

impl BallQuadrature {
    pub fn new(grid: &Grid, r: f64) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0 + 1e-12) {
            return Err(Error::Radius {
                radius: r,
                min: 0.0,
                max: 1.0,
            });
        }
        let dim = grid.dim();
        let h = grid.hstep();
        let m: usize = if dim == 2 { 16 } else { 6 };
        let sub_vol = h.powi(dim as i32) / (m.pow(dim as u32)) as f64;
        let corner_vol = h.powi(dim as i32) / (1usize << dim) as f64;
        let n = grid.nodes_per_axis();
        let lo = (((1.0 - r) / h).floor().max(0.0) as usize).min(n - 2);
        let hi = (((1.0 + r) / h).ceil() as usize).min(n - 1);
        let mut dense = vec![0.0; grid.node_count()];
        let mut cells = Vec::new();
        let ranges: Vec<std::ops::Range<usize>> = (0..3)
            .map(|a| if a < dim { lo..hi } else { 0..1 })
            .collect();
        for i2 in ranges[2].clone() {
            for i1 in ranges[1].clone() {
                for i0 in ranges[0].clone() {
                    let mi = [i0, i1, i2];
                    let base = grid.index(&mi);
                    let mut near = 0.0;
                    let mut far = 0.0;
                    for a in 0..dim {
                        let c0 = grid.coord(mi[a]);
                        let c1 = c0 + h;
                        let nearest = if c0 > 0.0 {
                            c0
                        } else if c1 < 0.0 {
                            c1
                        } else {
                            0.0
                        };
                        near += nearest * nearest;
                        let fa = c0.abs().max(c1.abs());
                        far += fa * fa;
                    }
                    if near.sqrt() >= r {
                        continue;
                    }
                    if far.sqrt() <= r {
                        cells.push((base, 1.0));
                        for corner in 0..(1usize << dim) {
                            dense[corner_index(grid, base, corner)] += corner_vol;
                        }
                        continue;
                    }
                    let mut inside = 0usize;
                    let total = m.pow(dim as u32);
                    for s in 0..total {
                        let mut t = [0.0; 3];
                        let mut rest = s;
                        let mut rr = 0.0;
                        for a in 0..dim {
                            t[a] = ((rest % m) as f64 + 0.5) / m as f64;
                            rest /= m;
                            let c = grid.coord(mi[a]) + t[a] * h;
                            rr += c * c;
                        }
                        if rr.sqrt() <= r {
                            inside += 1;
                            for corner in 0..(1usize << dim) {
                                let mut w = 1.0;
                                for (a, ta) in t.iter().enumerate().take(dim) {
                                    w *= if corner >> a & 1 == 1 { *ta } else { 1.0 - ta };
                                }
                                dense[corner_index(grid, base, corner)] += w * sub_vol;
                            }
                        }
                    }
                    if inside > 0 {
                        cells.push((base, inside as f64 / total as f64));
                    }
                }
            }
        }
        let node_weights = dense
            .into_iter()
            .enumerate()
            .filter(|(_, w)| *w > 0.0)
            .collect();
        Ok(Self {
            radius: r,
            cells,
            node_weights,
        })
    }

    pub fn integrate(&self, field: &GridField) -> f64 {
        self.node_weights
            .iter()
            .map(|(i, w)| w * field.values[*i])
            .sum()
    }

    pub fn integrate_nodes(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.node_weights.iter().map(|(i, w)| w * f(*i)).sum()
    }

    pub fn volume(&self) -> f64 {
        self.node_weights.iter().map(|(_, w)| w).sum()
    }
}

/// Node index of a cell corner; bit `a` of `corner` selects the upper node
/// along axis `a`.
pub fn corner_index(grid: &Grid, base: usize, corner: usize) -> usize {
    let mut idx = base;
    for a in 0..grid.dim() {
        if corner >> a & 1 == 1 {
            idx += grid.stride(a);
        }
    }
    idx
}

pub fn ball_integral(field: &GridField, r: f64) -> Result<f64> {
    Ok(BallQuadrature::new(&field.grid, r)?.integrate(field))
}
