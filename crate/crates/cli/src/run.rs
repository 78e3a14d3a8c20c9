//! Stage orchestration and output files.

use crate::config::{ExperimentConfig, Stage};
use crate::manifest::{RunManifest, StageRecord, StageStatus};
use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use signorini_core::analysis::{analyze_center, analyze_point, solve_scenario, Solved};
use signorini_core::blowup::{direction_angle, recenter_solution, Label};
use signorini_core::epiperimetric::{epi_batch, variation_batch};
use signorini_core::freeboundary::{cone_test, graph_fit, holder_fit, line_fit, ChartStatus};
use signorini_core::monitors::{
    growth_audit, identity_audit_hprime, monotonicity_audit, slack_from_residual, RadialProfile,
};
use signorini_core::scenarios;
use signorini_core::solver::normalize;
use signorini_core::Grid;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const PROFILE_FILE: &str = "profile.csv";
pub const EPI_FILE: &str = "epi_batch.csv";
pub const GAMMA_FILE: &str = "gamma_points.csv";
pub const SOLUTION_FILE: &str = "solution.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Caps the worker count; `None` uses the ambient pool.
    pub threads: Option<usize>,
    /// Single worker, so every parallel reduction runs in a fixed order.
    pub deterministic: bool,
    /// Subcommand name recorded in the manifest.
    pub command: String,
}

/// Requested stages plus everything they need, in dependency order.
pub fn plan(requested: &[Stage]) -> Vec<Stage> {
    let mut out: Vec<Stage> = Vec::new();
    for s in requested {
        out.extend_from_slice(s.needs());
        out.push(*s);
    }
    out.sort();
    out.dedup();
    out
}

/// Runs `stages` (closed under dependencies) and writes every output into
/// `opts.out`. Stage failures are recorded in the manifest; the files that
/// were written before a failure are kept.
pub fn run(cfg: &ExperimentConfig, stages: &[Stage], opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let workers = if opts.deterministic { Some(1) } else { opts.threads };
    match workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()?
            .install(|| run_inner(cfg, stages, opts)),
        None => run_inner(cfg, stages, opts),
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    manifest: RunManifest,
    summary: Map<String, Value>,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
        self.manifest.record_file(self.dir, name)
    }

    fn flush(&mut self) -> Result<()> {
        let text = serde_json::to_string_pretty(&Value::Object(self.summary.clone()))? + "\n";
        self.write(SUMMARY_FILE, text.as_bytes())?;
        self.manifest.write(self.dir)
    }
}

fn run_inner(cfg: &ExperimentConfig, stages: &[Stage], opts: &RunOptions) -> Result<RunManifest> {
    std::fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    let threads = rayon::current_num_threads();
    let mut out = Outputs {
        dir: &opts.out,
        manifest: RunManifest::new(&opts.command, cfg.sha256(), opts.deterministic, threads),
        summary: Map::new(),
    };
    out.summary.insert("config_sha256".into(), json!(cfg.sha256()));
    out.summary.insert("scenario".into(), json!(cfg.scenario));
    let mut solved: Option<Solved> = None;
    for stage in plan(stages) {
        let blocked = stage
            .needs()
            .iter()
            .any(|n| out.manifest.stages.iter().any(|r| r.stage == n.name() && matches!(r.status, StageStatus::Failed | StageStatus::Skipped)));
        if blocked {
            out.manifest.stages.push(StageRecord {
                stage: stage.name().into(),
                status: StageStatus::Skipped,
                seconds: 0.0,
                error: Some("a required stage failed".into()),
                failed_checks: Vec::new(),
            });
            continue;
        }
        let t = Instant::now();
        let result = match stage {
            Stage::Solve => stage_solve(cfg, &mut out).map(|(s, checks)| {
                solved = Some(s);
                checks
            }),
            Stage::Monitor => stage_monitor(cfg, solved.as_ref().expect("solve ran"), &mut out),
            Stage::Blowup => stage_blowup(cfg, solved.as_ref().expect("solve ran"), &mut out),
            Stage::Epi => stage_epi(cfg, &mut out),
            Stage::Fb => stage_fb(cfg, solved.as_ref().expect("solve ran"), &mut out),
        };
        let seconds = t.elapsed().as_secs_f64();
        let record = match result {
            Ok(failed_checks) => StageRecord {
                stage: stage.name().into(),
                status: if failed_checks.is_empty() {
                    StageStatus::Passed
                } else {
                    StageStatus::ChecksFailed
                },
                seconds,
                error: None,
                failed_checks,
            },
            Err(e) => StageRecord {
                stage: stage.name().into(),
                status: StageStatus::Failed,
                seconds,
                error: Some(format!("{e:#}")),
                failed_checks: Vec::new(),
            },
        };
        out.manifest.stages.push(record);
        out.flush()?;
    }
    out.flush()?;
    Ok(out.manifest)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Failed check names, from `(name, holds)` pairs.
fn failed(checks: &[(&str, bool)]) -> Vec<String> {
    checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.to_string()).collect()
}

pub fn relative_l2_error(solved: &Solved) -> Option<f64> {
    let exact = solved.scenario.exact.as_ref()?;
    let f = &solved.solution.field;
    let (mut e2, mut h2) = (0.0, 0.0);
    for i in 0..f.grid.node_count() {
        let x = f.grid.point(i);
        let h = exact(&x);
        e2 += (f.values[i] - h).powi(2);
        h2 += h * h;
    }
    (h2 > 0.0).then(|| (e2 / h2).sqrt())
}

fn stage_solve(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Solved, Vec<String>)> {
    let scenario = scenarios::build(&cfg.scenario, &cfg.scenario_params)?;
    let solved = solve_scenario(&scenario, cfg.nodes, &cfg.solver)?;
    let sol = &solved.solution;
    let grid = sol.field.grid;
    let dim = grid.dim();
    let axes = ["x1", "x2", "x3"];
    let mut header: Vec<&str> = axes[..dim].to_vec();
    header.push("u");
    let rows = (0..grid.node_count()).map(|i| {
        let x = grid.point(i);
        let mut r: Vec<String> = x[..dim].iter().map(|c| num(*c)).collect();
        r.push(num(sol.field.values[i]));
        r
    });
    out.write(SOLUTION_FILE, &csv_bytes(&header, rows)?)?;
    let error = relative_l2_error(&solved);
    let certified = sol.residuals.certified();
    out.summary.insert(
        "solve".into(),
        json!({
            "dim": dim,
            "nodes": grid.nodes_per_axis(),
            "hstep": grid.hstep(),
            "iterations": sol.iterations,
            "energy": sol.energy,
            "certified": certified,
            "residuals": sol.residuals,
            "relative_l2_error": error,
            "contact_nodes": solved.chart.contact_count(),
            "gamma_points": solved.chart.gamma.len(),
            "chart_status": solved.chart.status,
        }),
    );
    Ok((solved, failed(&[("complementarity certified", certified)])))
}

fn stage_monitor(cfg: &ExperimentConfig, solved: &Solved, out: &mut Outputs) -> Result<Vec<String>> {
    let center = solved.center()?;
    let normalized = normalize(&solved.solution, &solved.problem, &center)?;
    let rec = recenter_solution(&normalized, &center)?;
    let p = RadialProfile::compute(rec.view(), &cfg.monitor)?;
    let rows = (0..p.len()).map(|k| {
        [p.radii[k], p.h[k], p.d[k], p.i[k], p.g[k], p.psi[k], p.sigma[k], p.m[k], p.j[k], p.n[k], p.n_tilde[k], p.w[k]]
            .iter()
            .map(|v| num(*v))
            .collect()
    });
    out.write(
        PROFILE_FILE,
        &csv_bytes(&["r", "H", "D", "I", "G", "psi", "sigma", "M", "J", "N", "Ntilde", "W"], rows)?,
    )?;
    let residual = identity_audit_hprime(&p)?;
    let n_slack = slack_from_residual(&residual, &p.n);
    let n_audit = monotonicity_audit(&p.radii, &p.n, None, &n_slack);
    let (w_audit, c_hat, lower) = crate::verify::weiss_audit(&p)?;
    let finite = p.n_tilde.iter().chain(&p.w).all(|v| v.is_finite());
    out.summary.insert(
        "monitor".into(),
        json!({
            "center": center,
            "offset_b": normalized.offset_b,
            "recenter_b": rec.b,
            "valid_radius": rec.valid_radius,
            "radii": p.len(),
            "alpha": p.alpha,
            "beta_hat": p.beta_hat,
            "identity_residual_max": residual.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            "frequency_violations": n_audit.violations,
            "frequency_monotone_up_to": n_audit.monotone_up_to,
            "weiss_c_hat": c_hat,
            "weiss_violations": w_audit.violations,
            "weiss_monotone_up_to": w_audit.monotone_up_to,
            "weiss_lower_bound_holds": lower,
        }),
    );
    Ok(failed(&[("finite profile", finite)]))
}

fn stage_blowup(cfg: &ExperimentConfig, solved: &Solved, out: &mut Outputs) -> Result<Vec<String>> {
    let a = analyze_center(solved, &cfg.blowup)?;
    let growth = growth_audit(&a.stack.profile).ok();
    let decided = a.classification.label != Label::Undecided;
    let nondegenerate = a.classification.label != Label::Regular || a.limit.as_ref().is_some_and(|l| l.nondegenerate);
    out.summary.insert(
        "blowup".into(),
        json!({
            "center": a.center,
            "classification": a.classification,
            "limit": a.limit,
            "stability": a.limit.as_ref().and_then(|l| l.stability()).map(|(da, dn)| json!({"amplitude": da, "angle_deg": dn.to_degrees()})),
            "growth": growth,
        }),
    );
    Ok(failed(&[("classified", decided), ("nondegenerate", nondegenerate)]))
}

fn stage_epi(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>> {
    let batch = epi_batch(&cfg.epi)?;
    let rows = batch.entries.iter().map(|e| {
        let r = &e.report;
        vec![
            e.attempt.to_string(),
            num(e.perturbation.eta),
            num(r.distance_h),
            num(r.distance_fit),
            num(r.fit.amplitude),
            num(r.w_energy),
            num(r.zeta_energy),
            opt_num(r.kappa),
            r.in_hypothesis.to_string(),
            r.certified.to_string(),
        ]
    });
    out.write(
        EPI_FILE,
        &csv_bytes(
            &["attempt", "eta", "distance_h", "distance_fit", "a", "W_w", "W_zeta", "kappa", "in_hypothesis", "certified"],
            rows,
        )?,
    )?;
    let grid = Grid::new(cfg.epi.dim, cfg.epi.nodes)?;
    let bumps = variation_batch(grid, cfg.epi.bumps, cfg.epi.seed)?;
    let gaps: Vec<f64> = bumps.iter().map(|b| b.relative_gap()).collect();
    let complete = batch.entries.len() == cfg.epi.batch;
    let positive = batch.failures.is_empty() && batch.entries.iter().all(|e| e.report.kappa.is_some_and(|k| k > 0.0));
    out.summary.insert(
        "epi".into(),
        json!({
            "attempts": batch.attempts,
            "accepted": batch.entries.len(),
            "below_tol": batch.below_tol,
            "min_kappa": batch.min_kappa,
            "failures": batch.failures,
            "first_variation": bumps,
            "first_variation_max_gap": gaps.iter().fold(0.0f64, |m, v| m.max(*v)),
        }),
    );
    Ok(failed(&[("batch complete", complete), ("kappa positive", positive)]))
}

fn stage_fb(cfg: &ExperimentConfig, solved: &Solved, out: &mut Outputs) -> Result<Vec<String>> {
    let fb = &cfg.fb;
    let mut chart = solved.chart.clone();
    let dim = chart.dim();
    let center = solved.center()?;
    let picks = chart.sample(&center, fb.window, fb.points);
    let analyses: Vec<_> = picks
        .par_iter()
        .map(|&k| analyze_point(solved, &chart.gamma[k].x, &cfg.blowup))
        .collect();
    let mut cones: Vec<Option<bool>> = vec![None; chart.gamma.len()];
    let mut point_errors = Vec::new();
    for (&k, a) in picks.iter().zip(&analyses) {
        match a {
            Ok(a) => {
                chart.gamma[k].label = Some(a.classification.label);
                chart.gamma[k].fit = a.limit.as_ref().map(|l| l.fit);
                let nu = solved.scenario.direction.or(chart.gamma[k].fit.map(|f| f.direction));
                if let Some(nu) = nu {
                    cones[k] = cone_test(&chart, &chart.gamma[k].x, &nu, fb.cone_eps, fb.cone_radius)
                        .ok()
                        .map(|c| c.passed());
                }
            }
            Err(e) => point_errors.push(json!({"x": chart.gamma[k].x, "error": e.to_string()})),
        }
    }
    let axes = ["x1", "x2", "x3"];
    let mut header: Vec<&str> = axes[..dim].to_vec();
    header.extend(["sampled", "label", "a", "nu1", "nu2", "relative_residual", "cone"]);
    let rows = chart.gamma.iter().enumerate().map(|(k, gp)| {
        let mut r: Vec<String> = gp.x[..dim].iter().map(|c| num(*c)).collect();
        r.push(picks.contains(&k).to_string());
        r.push(
            gp.label
                .map(|l| serde_json::to_value(l).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
                .unwrap_or_default(),
        );
        r.push(opt_num(gp.fit.map(|f| f.amplitude)));
        r.push(opt_num(gp.fit.map(|f| f.direction[0])));
        r.push(opt_num(gp.fit.map(|f| f.direction[1])));
        r.push(opt_num(gp.fit.map(|f| f.relative_residual())));
        r.push(cones[k].map(|c| c.to_string()).unwrap_or_default());
        r
    });
    out.write(GAMMA_FILE, &csv_bytes(&header, rows)?)?;

    let holder = holder_fit(&chart, &fb.holder).ok();
    let (line, graph) = if dim == 3 {
        let line = line_fit(&chart, &center, fb.window).ok().map(|(nrm, res)| {
            let truth = solved.scenario.direction.map(|d| {
                let a = direction_angle(&nrm, &d).to_degrees();
                a.min(180.0 - a)
            });
            json!({"normal": nrm, "residual": res, "angle_to_truth_deg": truth})
        });
        let nu = solved.scenario.direction.unwrap_or([1.0, 0.0, 0.0]);
        (line, graph_fit(&chart, &center, &nu, fb.window).ok())
    } else {
        (None, None)
    };
    let sampled_cones: Vec<bool> = picks.iter().filter_map(|&k| cones[k]).collect();
    let labels: Vec<Option<Label>> = picks.iter().map(|&k| chart.gamma[k].label).collect();
    let has_boundary = chart.status == ChartStatus::FreeBoundary;
    let cones_pass = sampled_cones.len() == picks.len() && sampled_cones.iter().all(|c| *c);
    out.summary.insert(
        "fb".into(),
        json!({
            "status": chart.status,
            "gamma_points": chart.gamma.len(),
            "sampled": picks.len(),
            "labels": labels,
            "cone_passed": sampled_cones.iter().filter(|c| **c).count(),
            "adjacency_holds": chart.adjacency_holds(),
            "separates": chart.separates(),
            "holder": holder,
            "line_fit": line,
            "graph_fit": graph,
            "point_errors": point_errors,
        }),
    );
    Ok(failed(&[
        ("free boundary present", has_boundary),
        ("every sampled point analyzed", point_errors_empty(&analyses)),
        ("cone tests", cones_pass),
    ]))
}

fn point_errors_empty<T, E>(a: &[std::result::Result<T, E>]) -> bool {
    a.iter().all(|r| r.is_ok())
}

/// Prints a one-line status per stage.
pub fn report(manifest: &RunManifest, w: &mut impl Write) -> std::io::Result<()> {
    for s in &manifest.stages {
        let tag = match s.status {
            StageStatus::Passed => "ok",
            StageStatus::ChecksFailed => "checks failed",
            StageStatus::Failed => "failed",
            StageStatus::Skipped => "skipped",
        };
        write!(w, "{:<8} {:<14} {:>8.2}s", s.stage, tag, s.seconds)?;
        if let Some(e) = &s.error {
            write!(w, "  {e}")?;
        }
        if !s.failed_checks.is_empty() {
            write!(w, "  [{}]", s.failed_checks.join(", "))?;
        }
        writeln!(w)?;
    }
    Ok(())
}
