use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use signorini_cli::config::{ExperimentConfig, Stage};
use signorini_cli::manifest::{RunManifest, StageRecord, StageStatus};
use signorini_cli::run::{self, RunOptions};
use signorini_cli::verify::{run_suite, Lab, Scale, Tolerances};
use signorini_core::epiperimetric::EpiParams;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "signorini", version, about = "Thin obstacle laboratory: solve, monitor, blow up, check")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// One worker thread, so reruns give byte-identical outputs.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the scenario and extract its free boundary.
    Solve,
    /// Radial profile at the center (writes profile.csv).
    Monitor,
    /// Classification and blowup limit at the center.
    Blowup,
    /// Empirical epiperimetric batch (writes epi_batch.csv).
    Epi,
    /// Free boundary sampling, cone tests and fits (writes gamma_points.csv).
    Fb,
    /// Every stage listed in the configuration.
    All,
    /// Acceptance suite.
    Verify {
        /// Reduced resolutions with the looser tolerance set.
        #[arg(long)]
        quick: bool,
        /// Criteria to run (repeatable); all when omitted.
        #[arg(long = "criterion")]
        criteria: Vec<u8>,
    },
    /// Print the full default configuration.
    Defaults,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    let (command, stages) = match &cli.command {
        Command::Defaults => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
            return Ok(true);
        }
        Command::Verify { quick, criteria } => {
            if *quick {
                cfg.verify.quick = true;
            }
            if !criteria.is_empty() {
                cfg.verify.criteria = criteria.clone();
            }
            cfg.validate()?;
            return verify(&cfg, cli.threads, cli.deterministic);
        }
        Command::Solve => ("solve", vec![Stage::Solve]),
        Command::Monitor => ("monitor", vec![Stage::Monitor]),
        Command::Blowup => ("blowup", vec![Stage::Blowup]),
        Command::Epi => ("epi", vec![Stage::Epi]),
        Command::Fb => ("fb", vec![Stage::Fb]),
        Command::All => ("all", cfg.stages.clone()),
    };
    let opts = RunOptions {
        out: cfg.output.clone(),
        threads: cli.threads,
        deterministic: cli.deterministic,
        command: command.into(),
    };
    let manifest = run::run(&cfg, &stages, &opts)?;
    run::report(&manifest, &mut std::io::stdout())?;
    println!("outputs in {}", opts.out.display());
    Ok(manifest.passed())
}

fn verify(cfg: &ExperimentConfig, threads: Option<usize>, deterministic: bool) -> Result<bool> {
    let workers = if deterministic { Some(1) } else { threads };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build()?;
    pool.install(|| verify_inner(cfg, deterministic))
}

fn verify_inner(cfg: &ExperimentConfig, deterministic: bool) -> Result<bool> {
    let v = &cfg.verify;
    let (scale, default_tol) = if v.quick {
        (Scale::quick(), Tolerances::quick())
    } else {
        (Scale::full(), Tolerances::default())
    };
    let mut lab = Lab::new(scale, v.tolerances.clone().unwrap_or(default_tol));
    lab.solver = cfg.solver.clone();
    lab.blowup = cfg.blowup.clone();
    lab.epi = EpiParams {
        dim: 2,
        nodes: scale.epi_nodes,
        ..cfg.epi.clone()
    };
    lab.scenario_params = signorini_core::scenarios::ScenarioParams {
        dim: 2,
        ..cfg.scenario_params.clone()
    };
    let t = Instant::now();
    let results = run_suite(&lab, &v.criteria);
    let seconds = t.elapsed().as_secs_f64();
    for r in &results {
        println!("{}", r.line());
    }
    let passed = results.iter().all(|r| r.passed);
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| format!("criterion {}", r.id)).collect();
    println!(
        "{} of {} criteria passed in {seconds:.1} s",
        results.len() - failed.len(),
        results.len()
    );
    let dir: &Path = &cfg.output;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let report = serde_json::json!({
        "quick": v.quick,
        "scale": scale,
        "tolerances": lab.tol,
        "results": results,
        "passed": passed,
    });
    std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let mut manifest = RunManifest::new("verify", cfg.sha256(), deterministic, rayon::current_num_threads());
    manifest.stages.push(StageRecord {
        stage: "verify".into(),
        status: if passed { StageStatus::Passed } else { StageStatus::ChecksFailed },
        seconds,
        error: None,
        failed_checks: failed,
    });
    manifest.record_file(dir, "verify.json")?;
    manifest.write(dir)?;
    Ok(passed)
}
