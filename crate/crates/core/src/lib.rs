//! Maximum-entropy ensembles from partial information.
//!
//! A macrostate `(v, Q)` fixes only the mean values of a set of commuting
//! observables. This crate fits the maximum-entropy ensemble to such partial
//! information and answers thermodynamic questions about it:
//!
//! - [`spectra`]: observables, macrostates, diagonal states, dephasing, entropy.
//! - [`maxent`]: canonical and generalized Gibbs ensembles, free energy and free entropy.
//! - [`transitions`]: reachability oracles, work bounds, ergotropy and the rescaled swap.
//! - [`gpmaps`]: Gibbs-preserving stochastic maps, the LP constants and the
//!   breakdown scan under exact energy conservation.
//! - [`distill`]: exact simulation of ensemble distillation by per-eigenspace randomization.
//! - [`macrolimit`]: cumulant bookkeeping for the energy change of many independent subsystems.

pub mod distill;
pub mod error;
pub mod gpmaps;
pub mod lp;
pub mod macrolimit;
pub mod maxent;
pub mod spectra;
pub mod transitions;

pub use error::{Error, Result};
