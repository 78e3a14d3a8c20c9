//! Experiment configuration: one JSON document, unknown keys rejected.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use signorini_core::blowup::BlowupParams;
use signorini_core::epiperimetric::EpiParams;
use signorini_core::freeboundary::HolderFloors;
use signorini_core::monitors::MonitorParams;
use signorini_core::scenarios::{self, ScenarioParams};
use signorini_core::solver::SolverParams;
use signorini_core::Grid;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Solve,
    Monitor,
    Blowup,
    Epi,
    Fb,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Solve, Stage::Monitor, Stage::Blowup, Stage::Epi, Stage::Fb];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Solve => "solve",
            Stage::Monitor => "monitor",
            Stage::Blowup => "blowup",
            Stage::Epi => "epi",
            Stage::Fb => "fb",
        }
    }

    /// Stages whose results this one consumes.
    pub fn needs(self) -> &'static [Stage] {
        match self {
            Stage::Solve | Stage::Epi => &[],
            Stage::Monitor | Stage::Blowup | Stage::Fb => &[Stage::Solve],
        }
    }
}

/// Free boundary stage: `Γ` points sampled around the center are classified
/// and cone-tested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbParams {
    /// Thin radius around the center from which `Γ` points are sampled.
    pub window: f64,
    pub points: usize,
    pub cone_eps: f64,
    pub cone_radius: f64,
    pub holder: HolderFloors,
}

impl Default for FbParams {
    fn default() -> Self {
        Self {
            window: 0.5,
            points: 10,
            cone_eps: 0.5,
            cone_radius: 0.2,
            holder: HolderFloors::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyParams {
    /// Reduced resolutions with the looser tolerance set.
    pub quick: bool,
    /// Criteria to run (1 to 11); empty runs all of them.
    pub criteria: Vec<u8>,
    /// Replaces the tolerance set of the chosen scale.
    pub tolerances: Option<crate::verify::Tolerances>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub scenario_params: ScenarioParams,
    /// Nodes per axis of the grid on `[−1,1]^n`.
    pub nodes: usize,
    pub solver: SolverParams,
    pub monitor: MonitorParams,
    pub blowup: BlowupParams,
    pub epi: EpiParams,
    pub fb: FbParams,
    /// Stages run by `all`; single-stage subcommands ignore this list.
    pub stages: Vec<Stage>,
    pub verify: VerifyParams,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "laplace-exact".into(),
            scenario_params: ScenarioParams::default(),
            nodes: 129,
            solver: SolverParams::default(),
            monitor: MonitorParams::default(),
            blowup: BlowupParams::default(),
            epi: EpiParams::default(),
            fb: FbParams::default(),
            stages: Stage::ALL.to_vec(),
            verify: VerifyParams::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Checks every field without building the grid or solving.
    pub fn validate(&self) -> Result<()> {
        if !scenarios::NAMES.contains(&self.scenario.as_str()) {
            bail!("unknown scenario {:?}; expected one of {:?}", self.scenario, scenarios::NAMES);
        }
        let scenario = scenarios::build(&self.scenario, &self.scenario_params)?;
        Grid::new(scenario.dim, self.nodes)?;
        Grid::new(self.epi.dim, self.epi.nodes)?;
        self.solver.check()?;
        self.monitor.check()?;
        self.blowup.monitor().check()?;
        self.epi.check()?;
        let fb = &self.fb;
        if !(fb.window > 0.0 && fb.window <= 1.0) || fb.points == 0 {
            bail!("fb.window must lie in (0,1] and fb.points be positive");
        }
        if !(fb.cone_eps > 0.0 && fb.cone_eps < 1.0) || !(fb.cone_radius > 0.0) {
            bail!("fb.cone_eps must lie in (0,1) and fb.cone_radius be positive");
        }
        if let Some(k) = self.verify.criteria.iter().find(|k| !(1..=11).contains(*k)) {
            bail!("verify.criteria entry {k} outside 1..=11");
        }
        Ok(())
    }

    /// Canonical JSON (field order fixed by the struct).
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&c.canonical()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.sha256(), c.sha256());
    }

    #[test]
    fn partial_documents_take_defaults() {
        let c = ExperimentConfig::from_json(r#"{"scenario":"lipschitz-perturbed","nodes":65,"stages":["solve","monitor"]}"#).unwrap();
        assert_eq!(c.nodes, 65);
        assert_eq!(c.stages, vec![Stage::Solve, Stage::Monitor]);
        assert_eq!(c.solver, SolverParams::default());
    }

    #[test]
    fn rejects_bad_documents() {
        for text in [
            r#"{"scenario":"no-such-thing"}"#,
            r#"{"nodez":65}"#,
            r#"{"solver":{"omega":1.7,"sweeps":3}}"#,
            r#"{"nodes":64}"#,
            r#"{"nodes":17}"#,
            r#"{"solver":{"omega":2.5}}"#,
            r#"{"stages":["plot"]}"#,
            r#"{"verify":{"criteria":[12]}}"#,
            r#"{"fb":{"cone_eps":1.5}}"#,
        ] {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
    }
}
