//! Deep ensembles, ensembles of ensembles, and the collapse of their
//! epistemic uncertainty as sub-ensembles grow.
//!
//! The crate covers a small MLP trained by SGD, mutual-information and
//! variance-based uncertainty measures, the chain-rule decomposition of a
//! partitioned ensemble, single-feature random forests, implicit ensemble
//! extraction via weight masks or tile pooling, and the metrics used to
//! compare them.

pub mod data;
pub mod ensembles;
pub mod error;
pub mod eval;
pub mod extraction;
pub mod forest;
pub mod nn;
pub mod seed;
pub mod uncertainty;

pub use error::{Error, Result};
