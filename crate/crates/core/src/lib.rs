//! Observer-based event-triggered and self-triggered boundary control of
//! 1-D reaction-diffusion PDEs via PDE backstepping.
//!
//! The crate is organised around six modules:
//!
//! * [`kernels`] — backstepping kernel solver (Goursat problems by successive
//!   approximation), inverse kernels, control/observer gains and derived norms.
//! * [`pde_core`] — implicit-Euler integration of the coupled plant–observer
//!   system with zero-order-hold boundary input.
//! * [`trigger_params`] — derivation of every event-trigger constant
//!   (alphas, betas, rho, minimal dwell time) and feasibility checks.
//! * [`triggering`] — the CETC / PETC / STC schedulers and the closed-loop
//!   driver `run_scheme`.
//! * [`verify`] — independent oracles: matrix-exponential reference stepping,
//!   Volterra composition residuals, lemma-bound monitors, decay fitting.
//! * [`harness`] — scenario configuration, CSV emission and the CLI pipeline.

// Indexed loops and NaN-rejecting `!(x > 0.0)` guards are used deliberately
// throughout the numerical code; a few derivation routines take the full
// parameter tuple by design.
#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::vec_init_then_push
)]

pub mod harness;
pub mod kernels;
pub mod pde_core;
pub mod trigger_params;
pub mod triggering;
pub mod verify;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("kernel solver did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible trigger parameters: {0}")]
    Infeasible(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("monitor violation: {0}")]
    MonitorViolation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
