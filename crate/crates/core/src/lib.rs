//! Two-stage video depression-severity estimation.
//!
//! The short-term stage learns per-slice depression features with a
//! multi-scale temporal backbone ([`mtb`]), mutual temporal attention and
//! noise separation ([`dfe`]). The video-level stage summarises the per-slice
//! features as spectral or sequential graphs ([`encoders`]) and regresses a
//! BDI-II score with a graph attention network ([`regressor`]).

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dfe;
pub mod encoders;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mtb;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod regressor;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
