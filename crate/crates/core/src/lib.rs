//! Flow-map surrogate modeling with transfer-learning model correction.
//!
//! The workflow: approximate an imperfect ("low-fidelity") dynamical model
//! with a neural flow-map surrogate trained on cheap mass-generated data,
//! then correct that surrogate using a scarce set of high-fidelity
//! observations by re-training only its trailing layers. For one-step data
//! the last-layer case reduces to an exact least-squares solve; for
//! observations on a coarser time grid the network is composed inside the
//! loss so the corrected model still predicts on the fine step.
//!
//! Modules:
//! - [`dynsys`] — benchmark system catalog, RK4 stepping, flow maps.
//! - [`nnet`] — the MLP, exact reverse-mode gradients, Adam, checkpoints.
//! - [`fml`] — dataset generation and prior-surrogate training.
//! - [`correction`] — transfer learning, least-squares solve, recurrent
//!   composition for coarse data, additive-correction baseline.
//! - [`eval`] — rollouts, ensemble error curves, CSV export.

pub mod correction;
pub mod dynsys;
pub mod error;
pub mod eval;
pub mod fml;
mod linalg;
pub mod nnet;
pub mod numfmt;
pub mod parallel;

pub use error::{Error, Result};
