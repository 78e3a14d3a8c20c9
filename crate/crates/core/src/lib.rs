//! Numerical laboratory for the thin obstacle (Signorini) problem with
//! variable coefficients: a projected SOR solver, radial monitors (height,
//! energy, truncated frequency, Weiss functional), blowup fits to the
//! 3/2-homogeneous family, an empirical epiperimetric check and free
//! boundary extraction.

pub mod analysis;
pub mod blowup;
pub mod coefficients;
pub mod epiperimetric;
pub mod error;
pub mod fit;
pub mod freeboundary;
pub mod geometry;
pub mod monitors;
pub mod scenarios;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{build_grid, Grid, GridField, Point};
