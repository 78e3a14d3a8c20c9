//! Acceptance suite: eleven criteria, each reduced to one pass/fail result.
//!
//! Solves and center analyses are cached in a [`Lab`] so criteria sharing a
//! scenario reuse one solve, also when they run on different threads.

use anyhow::{anyhow, bail, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use signorini_core::analysis::{analyze_center, analyze_point, solve_scenario, PointAnalysis, Solved};
use signorini_core::blowup::{direction_angle, BlowupParams, Label};
use signorini_core::epiperimetric::{epi_batch, model_dirichlet, variation_batch, EpiParams};
use signorini_core::freeboundary::{cone_test, line_fit};
use signorini_core::monitors::{
    fit_negative_part, identity_audit_hprime, monotonicity_audit, slack_from_residual, MonotonicityReport,
    RadialProfile,
};
use signorini_core::scenarios::{self, ScenarioParams};
use signorini_core::solver::SolverParams;
use signorini_core::{Grid, Point};
use std::sync::OnceLock;
use std::time::Instant;

pub const TITLES: [&str; 11] = [
    "exact-solution reproduction",
    "frequency plateau",
    "Weiss vanishing",
    "height derivative identity",
    "truncated-frequency monotonicity",
    "Weiss almost-monotonicity",
    "epiperimetric inequality",
    "blowup uniqueness and decay",
    "nondegeneracy",
    "free boundary geometry",
    "frequency gap",
];

/// Every threshold the suite applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub exact_error: f64,
    /// Band for `error(coarse)/error(fine)`.
    pub error_ratio: [f64; 2],
    pub solve_seconds: f64,
    pub plateau_radii: [f64; 2],
    pub plateau_band: [f64; 2],
    /// `|W|` bound as a fraction of `D(h,1)`.
    pub weiss_fraction: f64,
    pub identity_residual: f64,
    /// Largest radius of the frequency monotonicity prefix.
    pub monotone_prefix: f64,
    pub min_kappa: f64,
    pub variation_gap: f64,
    pub epi_seconds: f64,
    pub decay_exponent: f64,
    pub stability_amplitude: f64,
    pub stability_angle_deg: f64,
    /// Line fit residual in units of `hstep`.
    pub line_residual_steps: f64,
    pub normal_angle_deg: f64,
    pub cone_eps: f64,
    pub cone_radius: f64,
    pub sample_points: usize,
    pub rotation_deg: f64,
    /// `Ñ(0+)` must avoid this open interval.
    pub gap: [f64; 2],
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            exact_error: 0.03,
            error_ratio: [1.4, 2.6],
            solve_seconds: 60.0,
            plateau_radii: [0.1, 0.5],
            plateau_band: [1.45, 1.55],
            weiss_fraction: 0.05,
            identity_residual: 0.05,
            monotone_prefix: 0.5,
            min_kappa: 0.01,
            variation_gap: 0.03,
            epi_seconds: 600.0,
            decay_exponent: 0.1,
            stability_amplitude: 0.03,
            stability_angle_deg: 3.0,
            line_residual_steps: 2.0,
            normal_angle_deg: 3.0,
            cone_eps: 0.5,
            cone_radius: 0.2,
            sample_points: 10,
            rotation_deg: 20.0,
            gap: [1.6, 1.65],
        }
    }
}

impl Tolerances {
    /// Looser set for the reduced resolutions of quick mode.
    pub fn quick() -> Self {
        Self {
            plateau_band: [1.4, 1.6],
            weiss_fraction: 0.1,
            identity_residual: 0.1,
            variation_gap: 0.05,
            decay_exponent: 0.05,
            stability_amplitude: 0.06,
            stability_angle_deg: 6.0,
            normal_angle_deg: 5.0,
            ..Self::default()
        }
    }
}

/// Grid sizes of a suite run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scale {
    pub nodes_2d: usize,
    /// Coarse grid of the convergence check.
    pub coarse_2d: usize,
    pub nodes_3d: usize,
    pub epi_nodes: usize,
}

impl Scale {
    pub fn full() -> Self {
        Self {
            nodes_2d: 129,
            coarse_2d: 65,
            nodes_3d: 65,
            epi_nodes: 129,
        }
    }

    pub fn quick() -> Self {
        Self {
            nodes_2d: 65,
            coarse_2d: 33,
            nodes_3d: 49,
            epi_nodes: 65,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {}  {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    Laplace,
    LaplaceCoarse,
    Lipschitz,
    Nonzero,
    FrequencyTwo,
    Laplace3d,
}

impl Case {
    /// The scenario library at its natural dimension.
    pub const LIBRARY: [Case; 5] = [Case::Laplace, Case::Laplace3d, Case::Lipschitz, Case::Nonzero, Case::FrequencyTwo];

    fn slot(self) -> usize {
        self as usize
    }

    fn scenario(self) -> &'static str {
        match self {
            Case::Laplace | Case::LaplaceCoarse => "laplace-exact",
            Case::Lipschitz => "lipschitz-perturbed",
            Case::Nonzero => "nonzero-obstacle",
            Case::FrequencyTwo => "frequency-two",
            Case::Laplace3d => "laplace-exact-3d",
        }
    }
}

type Memo<T> = OnceLock<std::result::Result<T, String>>;

/// A sampled `Γ` point and its analysis.
pub type SamplePoint = (Point, std::result::Result<PointAnalysis, String>);

/// Shared solves and analyses for one suite run.
pub struct Lab {
    pub scale: Scale,
    pub tol: Tolerances,
    pub solver: SolverParams,
    pub blowup: BlowupParams,
    pub epi: EpiParams,
    pub scenario_params: ScenarioParams,
    solves: [Memo<(Solved, f64)>; 6],
    centers: [Memo<PointAnalysis>; 6],
    samples: Memo<Vec<SamplePoint>>,
}

fn memo<T>(cell: &Memo<T>, f: impl FnOnce() -> Result<T>) -> Result<&T> {
    cell.get_or_init(|| f().map_err(|e| format!("{e:#}")))
        .as_ref()
        .map_err(|e| anyhow!("{e}"))
}

impl Lab {
    pub fn new(scale: Scale, tol: Tolerances) -> Self {
        Self {
            scale,
            tol,
            solver: SolverParams::default(),
            blowup: BlowupParams::default(),
            epi: EpiParams {
                nodes: scale.epi_nodes,
                ..EpiParams::default()
            },
            scenario_params: ScenarioParams::default(),
            solves: Default::default(),
            centers: Default::default(),
            samples: OnceLock::new(),
        }
    }

    pub fn full() -> Self {
        Self::new(Scale::full(), Tolerances::default())
    }

    pub fn quick() -> Self {
        Self::new(Scale::quick(), Tolerances::quick())
    }

    /// Solved scenario and its wall-clock solve time (grid validation
    /// included).
    pub fn solved(&self, case: Case) -> Result<&(Solved, f64)> {
        memo(&self.solves[case.slot()], || {
            let mut p = self.scenario_params.clone();
            let nodes = match case {
                Case::LaplaceCoarse => self.scale.coarse_2d,
                Case::Laplace3d => {
                    p.dim = 3;
                    p.thin_rotation_deg = self.tol.rotation_deg;
                    self.scale.nodes_3d
                }
                _ => self.scale.nodes_2d,
            };
            let s = scenarios::build(case.scenario(), &p)?;
            let t = Instant::now();
            let solved = solve_scenario(&s, nodes, &self.solver)?;
            Ok((solved, t.elapsed().as_secs_f64()))
        })
    }

    pub fn center(&self, case: Case) -> Result<&PointAnalysis> {
        memo(&self.centers[case.slot()], || {
            let (s, _) = self.solved(case)?;
            Ok(analyze_center(s, &self.blowup)?)
        })
    }

    /// `Γ` points of the rotated 3D scenario sampled around the origin,
    /// each analyzed at its own position.
    pub fn samples(&self) -> Result<&Vec<SamplePoint>> {
        memo(&self.samples, || {
            let (s, _) = self.solved(Case::Laplace3d)?;
            let picks = s.chart.sample(&[0.0; 3], 0.5, self.tol.sample_points);
            Ok(picks
                .par_iter()
                .map(|&k| {
                    let x = s.chart.gamma[k].x;
                    (x, analyze_point(s, &x, &self.blowup).map_err(|e| e.to_string()))
                })
                .collect())
        })
    }

    pub fn run(&self, id: u8) -> CriterionResult {
        let outcome = match id {
            1 => self.exact_reproduction(),
            2 => self.frequency_plateau(),
            3 => self.weiss_vanishing(),
            4 => self.derivative_identity(),
            5 => self.frequency_monotonicity(),
            6 => self.weiss_monotonicity(),
            7 => self.epiperimetric(),
            8 => self.blowup_decay(),
            9 => self.nondegeneracy(),
            10 => self.free_boundary_geometry(),
            11 => self.gap_check(),
            _ => Err(anyhow!("no criterion {id}")),
        };
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e:#}")));
        CriterionResult {
            id,
            title: TITLES.get(id as usize - 1).copied().unwrap_or("unknown").into(),
            passed,
            detail,
        }
    }

    fn exact_reproduction(&self) -> Result<(bool, String)> {
        let (fine, seconds) = self.solved(Case::Laplace)?;
        let (coarse, _) = self.solved(Case::LaplaceCoarse)?;
        let err = |s: &Solved| crate::run::relative_l2_error(s).ok_or_else(|| anyhow!("no exact solution"));
        let (ef, ec) = (err(fine)?, err(coarse)?);
        let ratio = ec / ef;
        let t = &self.tol;
        let ok = ef <= t.exact_error && ratio >= t.error_ratio[0] && ratio <= t.error_ratio[1] && *seconds <= t.solve_seconds;
        Ok((
            ok,
            format!(
                "error {ef:.3e} at N={} (≤ {}), {ec:.3e} at N={}, ratio {ratio:.3} (band [{}, {}]), solve {seconds:.2} s (≤ {} s)",
                self.scale.nodes_2d, t.exact_error, self.scale.coarse_2d, t.error_ratio[0], t.error_ratio[1], t.solve_seconds
            ),
        ))
    }

    fn plateau_indices(&self, p: &RadialProfile) -> Result<Vec<usize>> {
        let idx = p.indices_in(self.tol.plateau_radii[0], self.tol.plateau_radii[1]);
        if idx.is_empty() {
            bail!("no ladder radius in {:?}", self.tol.plateau_radii);
        }
        Ok(idx)
    }

    fn frequency_plateau(&self) -> Result<(bool, String)> {
        let p = &self.center(Case::Laplace)?.stack.profile;
        let idx = self.plateau_indices(p)?;
        let (lo, hi) = idx
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &k| (a.min(p.n_tilde[k]), b.max(p.n_tilde[k])));
        let band = self.tol.plateau_band;
        Ok((
            lo >= band[0] && hi <= band[1],
            format!("Ñ in [{lo:.4}, {hi:.4}] over {} radii (band [{}, {}])", idx.len(), band[0], band[1]),
        ))
    }

    fn weiss_vanishing(&self) -> Result<(bool, String)> {
        let p = &self.center(Case::Laplace)?.stack.profile;
        let idx = self.plateau_indices(p)?;
        let bound = self.tol.weiss_fraction * model_dirichlet(p.dim);
        let max = idx.iter().fold(0.0f64, |m, &k| m.max(p.w[k].abs()));
        let (largest, smallest) = (p.w[idx[0]].abs(), p.w[*idx.last().unwrap()].abs());
        Ok((
            max <= bound && smallest <= largest,
            format!("max |W| {max:.3e} (≤ {bound:.3e}); |W| {smallest:.3e} at the smallest radius, {largest:.3e} at the largest"),
        ))
    }

    fn derivative_identity(&self) -> Result<(bool, String)> {
        let mut ok = true;
        let mut parts = Vec::new();
        for case in [Case::Laplace, Case::Lipschitz] {
            let p = &self.center(case)?.stack.profile;
            let res = identity_audit_hprime(p)?;
            let worst = res[1..res.len() - 1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            ok &= worst <= self.tol.identity_residual;
            parts.push(format!("{} max {worst:.3e}", case.scenario()));
        }
        parts.push(format!("bound {}", self.tol.identity_residual));
        Ok((ok, parts.join(", ")))
    }

    fn frequency_monotonicity(&self) -> Result<(bool, String)> {
        let p = &self.center(Case::Lipschitz)?.stack.profile;
        let res = identity_audit_hprime(p)?;
        let slack = slack_from_residual(&res, &p.n);
        let idx = p.indices_in(0.0, self.tol.monotone_prefix);
        if idx.len() < 2 {
            bail!("fewer than two radii below {}", self.tol.monotone_prefix);
        }
        let k0 = idx[0];
        let k1 = *idx.last().unwrap() + 1;
        let report = monotonicity_audit(&p.radii[k0..k1], &p.n[k0..k1], None, &slack[k0..k1 - 1]);
        Ok((
            report.count() == 0,
            format!("{} violations over {} adjacent pairs with r ≤ {}", report.count(), report.pairs, self.tol.monotone_prefix),
        ))
    }

    fn weiss_monotonicity(&self) -> Result<(bool, String)> {
        let mut ok = true;
        let mut parts = Vec::new();
        for case in [Case::Lipschitz, Case::Nonzero] {
            let p = &self.center(case)?.stack.profile;
            let (report, c_hat, lower) = weiss_audit(p)?;
            ok &= report.count() == 0 && lower;
            parts.push(format!(
                "{}: Ĉ {c_hat:.3e}, {} violations over {} pairs (monotone up to r = {:.3}), lower bound {}",
                case.scenario(),
                report.count(),
                report.pairs,
                report.monotone_up_to,
                if lower { "holds" } else { "fails" }
            ));
        }
        Ok((ok, parts.join("; ")))
    }

    fn epiperimetric(&self) -> Result<(bool, String)> {
        let t0 = Instant::now();
        let batch = epi_batch(&self.epi)?;
        let seconds = t0.elapsed().as_secs_f64();
        let kappas: Vec<f64> = batch.entries.iter().filter_map(|e| e.report.kappa).collect();
        let complete = kappas.len() == self.epi.batch;
        let min = kappas.iter().copied().fold(f64::INFINITY, f64::min);
        let grid = Grid::new(self.epi.dim, self.epi.nodes)?;
        let bumps = variation_batch(grid, self.epi.bumps, self.epi.seed)?;
        let gap = bumps.iter().fold(0.0f64, |m, b| m.max(b.relative_gap()));
        let t = &self.tol;
        let ok = complete
            && kappas.iter().all(|k| *k > 0.0)
            && min >= t.min_kappa
            && bumps.len() == self.epi.bumps
            && gap <= t.variation_gap
            && seconds <= t.epi_seconds;
        Ok((
            ok,
            format!(
                "{} traces from {} candidates, min κ {min:.4} (≥ {}), {} nonpositive; first variation max gap {gap:.2e} over {} bumps (≤ {}); batch {seconds:.1} s",
                kappas.len(),
                batch.attempts,
                t.min_kappa,
                kappas.iter().filter(|k| **k <= 0.0).count(),
                bumps.len(),
                t.variation_gap
            ),
        ))
    }

    fn blowup_decay(&self) -> Result<(bool, String)> {
        let a = self.center(Case::Lipschitz)?;
        let label = a.classification.label;
        let limit = a.limit.as_ref().ok_or_else(|| anyhow!("no blowup limit at the center"))?;
        let gamma = limit.decay.gamma_hat;
        let (da, dn) = limit.stability().ok_or_else(|| anyhow!("only one reliable radius"))?;
        let t = &self.tol;
        let ok = label == Label::Regular
            && gamma >= t.decay_exponent
            && da <= t.stability_amplitude
            && dn.to_degrees() <= t.stability_angle_deg;
        Ok((
            ok,
            format!(
                "label {label:?}, γ̂ {gamma:.3} (≥ {}), Δa {:.2}% (≤ {}%), Δν {:.3}° (≤ {}°)",
                t.decay_exponent,
                100.0 * da,
                100.0 * t.stability_amplitude,
                dn.to_degrees(),
                t.stability_angle_deg
            ),
        ))
    }

    fn nondegeneracy(&self) -> Result<(bool, String)> {
        let mut checked = 0;
        let mut bad = Vec::new();
        let mut visit = |name: String, a: &PointAnalysis| {
            if a.classification.label != Label::Regular {
                return;
            }
            checked += 1;
            match &a.limit {
                Some(l) if l.nondegenerate => {}
                Some(l) => bad.push(format!("{name}: a {:.3e} ≤ a_min {:.3e}", l.fit.amplitude, l.a_min)),
                None => bad.push(format!("{name}: no fit")),
            }
        };
        for case in Case::LIBRARY {
            visit(case.scenario().into(), self.center(case)?);
        }
        for (x, a) in self.samples()? {
            if let Ok(a) = a {
                visit(format!("Γ point {:?}", &x[..2]), a);
            }
        }
        Ok((
            checked > 0 && bad.is_empty(),
            if bad.is_empty() {
                format!("a > a_min at all {checked} regular points")
            } else {
                bad.join("; ")
            },
        ))
    }

    fn free_boundary_geometry(&self) -> Result<(bool, String)> {
        let (s, _) = self.solved(Case::Laplace3d)?;
        let t = &self.tol;
        let truth = s.scenario.direction.ok_or_else(|| anyhow!("no reference direction"))?;
        let hstep = s.solution.field.grid.hstep();
        let (normal, residual) = line_fit(&s.chart, &[0.0; 3], 0.5)?;
        let angle = direction_angle(&normal, &truth).to_degrees();
        let angle = angle.min(180.0 - angle);
        let samples = self.samples()?;
        let mut cones = 0;
        let mut regular = 0;
        for (x, a) in samples {
            if cone_test(&s.chart, x, &truth, t.cone_eps, t.cone_radius).is_ok_and(|c| c.passed()) {
                cones += 1;
            }
            if a.as_ref().is_ok_and(|a| a.classification.label == Label::Regular) {
                regular += 1;
            }
        }
        let n = samples.len();
        let ok = residual <= t.line_residual_steps * hstep
            && angle <= t.normal_angle_deg
            && n == t.sample_points
            && cones == n
            && regular == n;
        Ok((
            ok,
            format!(
                "line residual {residual:.4} (≤ {:.4}), normal off by {angle:.3}° (≤ {}°), cone passed at {cones}/{n}, regular at {regular}/{n} of {} requested",
                t.line_residual_steps * hstep,
                t.normal_angle_deg,
                t.sample_points
            ),
        ))
    }

    fn gap_check(&self) -> Result<(bool, String)> {
        let gap = self.tol.gap;
        let mut ok = true;
        let mut parts = Vec::new();
        for case in Case::LIBRARY {
            let c = &self.center(case)?.classification;
            match c.n_tilde_0 {
                Some(n0) => {
                    let inside = n0 > gap[0] && n0 < gap[1];
                    ok &= !inside;
                    parts.push(format!("{} {n0:.3}", case.scenario()));
                }
                None => {
                    ok = false;
                    parts.push(format!("{} undetermined", case.scenario()));
                }
            }
        }
        parts.push(format!("excluded ({}, {})", gap[0], gap[1]));
        Ok((ok, parts.join(", ")))
    }
}

/// Weiss audit on the full ladder: violations of the compensated series,
/// the fitted `Ĉ`, and whether `W ≥ −1.5·Ĉ·r^{1/2}` everywhere.
pub fn weiss_audit(p: &RadialProfile) -> Result<(MonotonicityReport, f64, bool)> {
    let res = identity_audit_hprime(p)?;
    let c_hat = fit_negative_part(&p.radii, &p.w);
    let unit: Vec<f64> = (0..p.len()).map(|k| p.h[k] / p.radii[k].powi(p.dim as i32 + 2)).collect();
    let slack = slack_from_residual(&res, &unit);
    let report = monotonicity_audit(&p.radii, &p.w, Some((c_hat, 0.5)), &slack);
    let lower = (0..p.len()).all(|k| p.w[k] >= -1.5 * c_hat * p.radii[k].sqrt());
    Ok((report, c_hat, lower))
}

/// Runs the listed criteria (all when empty) concurrently; results come
/// back in criterion order. Criteria run on plain threads rather than rayon
/// tasks, so a worker waiting on a shared solve never picks up another
/// criterion that waits on the same solve.
pub fn run_suite(lab: &Lab, criteria: &[u8]) -> Vec<CriterionResult> {
    let ids: Vec<u8> = if criteria.is_empty() {
        (1..=11).collect()
    } else {
        criteria.to_vec()
    };
    std::thread::scope(|scope| {
        let handles: Vec<_> = ids.iter().map(|&id| scope.spawn(move || lab.run(id))).collect();
        handles
            .into_iter()
            .zip(&ids)
            .map(|(h, &id)| {
                h.join().unwrap_or_else(|_| CriterionResult {
                    id,
                    title: TITLES.get(id as usize - 1).copied().unwrap_or("unknown").into(),
                    passed: false,
                    detail: "panicked".into(),
                })
            })
            .collect()
    })
}
