//! Operating characteristics from the integral equations of the recursion
//! `V_n = xi(V_{n-1}) Lambda_n`, discretized on `[0, A]`.

pub mod calibrate;
pub mod fredholm;
pub mod grid;
pub mod kernel;
pub mod oc;
pub mod report;

pub use calibrate::{
    calibrate, calibrate_kind, equalizing_head_start, richardson, CalibrateOptions, Calibrated, Calibration,
    EqualizedHeadStart, Richardson,
};
pub use fredholm::{solve_fredholm, FredholmOperator};
pub use grid::{Grid, GridFunction, GridSampler, Mesh};
pub use kernel::{Kernel, KernelRule};
pub use oc::{AddCurve, BayesOc, LocalPfa, OcConfig, OcSolver, QuasiStationary, Start, DEFAULT_GRID};
pub use report::{Diagnostics, OcReport, ReportOptions};
