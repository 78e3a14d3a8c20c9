//! Scenario pipeline: solve, locate a free boundary point, normalize and
//! recenter there, then build the scaling stack and classify.

use crate::blowup::{blowup_limit, classify, recenter_solution, BlowupLimit, BlowupParams, Classification, ScalingStack};
use crate::error::{Error, Result};
use crate::freeboundary::{extract, FreeBoundaryChart};
use crate::geometry::{Grid, Point};
use crate::scenarios::Scenario;
use crate::solver::{normalize, solve, ProblemSpec, SignoriniSolution, SolverParams, ValidatedProblem, DEFAULT_VALIDATION_SAMPLES};
use std::time::Instant;

/// A solved scenario with its free boundary chart.
pub struct Solved {
    pub scenario: Scenario,
    pub problem: ValidatedProblem,
    pub solution: SignoriniSolution,
    pub chart: FreeBoundaryChart,
    pub seconds: f64,
}

pub fn solve_scenario(scenario: &Scenario, nodes: usize, params: &SolverParams) -> Result<Solved> {
    let grid = Grid::new(scenario.dim, nodes)?;
    scenario.data.check_compatibility(&grid)?;
    let problem = ProblemSpec::new(grid, scenario.coefficients.clone(), scenario.data.clone())
        .validate(DEFAULT_VALIDATION_SAMPLES)?;
    let t = Instant::now();
    let solution = solve(&problem, params)?;
    let seconds = t.elapsed().as_secs_f64();
    let chart = extract(&solution);
    Ok(Solved {
        scenario: scenario.clone(),
        problem,
        solution,
        chart,
        seconds,
    })
}

impl Solved {
    /// The scenario's declared center, or the extracted free boundary point
    /// nearest the origin.
    pub fn center(&self) -> Result<Point> {
        if let Some(c) = self.scenario.center {
            return Ok(c);
        }
        let k = self
            .chart
            .nearest(&[0.0; 3])
            .ok_or_else(|| Error::NotFreeBoundary("no free boundary point was extracted".into()))?;
        Ok(self.chart.gamma[k].x)
    }
}

/// Blowup analysis at one free boundary point.
pub struct PointAnalysis {
    pub center: Point,
    pub normalized: SignoriniSolution,
    pub stack: ScalingStack,
    pub classification: Classification,
    pub limit: Option<BlowupLimit>,
}

pub fn analyze_point(solved: &Solved, x0: &Point, params: &BlowupParams) -> Result<PointAnalysis> {
    let normalized = normalize(&solved.solution, &solved.problem, x0)?;
    let recentered = recenter_solution(&normalized, x0)?;
    let stack = ScalingStack::build(recentered, params)?;
    let classification = classify(&stack);
    let limit = blowup_limit(&stack).ok();
    Ok(PointAnalysis {
        center: *x0,
        normalized,
        stack,
        classification,
        limit,
    })
}

pub fn analyze_center(solved: &Solved, params: &BlowupParams) -> Result<PointAnalysis> {
    let c = solved.center()?;
    analyze_point(solved, &c, params)
}
