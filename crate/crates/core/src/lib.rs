pub mod asymptotics;
pub mod error;
pub mod exactsolve;
pub mod models;
pub mod montecarlo;
pub mod numeric;
pub mod ocsolve;
pub mod procedures;
pub mod rng;

pub use error::{Error, Result};
pub use models::{make_model, ChangePointModel, ModelParams, Regime};
pub use procedures::{ProcedureKind, ProcedureSpec};
