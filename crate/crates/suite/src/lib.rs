//! Host package for the `acceptance` test target. The criteria themselves
//! live in `signorini_cli::verify`; this package only exists so that the
//! suite runs after every other test binary of the workspace.
