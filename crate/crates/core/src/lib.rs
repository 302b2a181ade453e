//! Absolute efficiency calibration of mode-multiplexed photon-number-resolving
//! detectors from the joint click statistics of a twin-beam source.
//!
//! The pieces, bottom up:
//!
//! * [`detector`]: binomial loss [`LossMatrix`](detector::LossMatrix) and the
//!   multiplexing response [`ConvolutionMatrix`](detector::ConvolutionMatrix).
//! * [`forward`]: joint photon statistics in, joint click statistics out.
//! * [`estimation`]: the Klyshko baseline and the generalized fit
//!   [`estimate_efficiencies`](estimation::estimate_efficiencies), residual
//!   landscapes and full joint-statistics reconstruction.
//! * [`background`]: Poissonian background, its loss equivalence, and
//!   subtraction of a measured background.
//! * [`simulation`]: exact and Monte Carlo click histograms.
//! * [`io`] and [`cli`]: file formats and the batch commands of the `pnrcal`
//!   binary.
//!
//! ```
//! use pnrcal::estimation::{estimate_efficiencies, EstimatorOptions};
//! use pnrcal::simulation::{simulate_clicks_exact, ExperimentConfig, SourceKind};
//!
//! let config = ExperimentConfig::simple(
//!     SourceKind::TwoModeSqueezedVacuum { lambda: 0.5 },
//!     0.35,
//!     0.55,
//!     1,
//!     0,
//! )?;
//! let (c1, c2) = config.convolution_matrices()?;
//! let fit = estimate_efficiencies(
//!     &simulate_clicks_exact(&config)?,
//!     &c1,
//!     &c2,
//!     &EstimatorOptions::default(),
//! )?;
//! assert!((fit.eta1 - 0.35).abs() < 1e-4);
//! # Ok::<(), pnrcal::error::Error>(())
//! ```
//!
//! The guide in `book/` walks through each module with runnable examples.

pub mod background;
pub mod cli;
pub mod detector;
pub mod error;
pub mod estimation;
pub mod forward;
pub mod io;
pub mod nnls;
pub mod optimize;
pub mod simulation;

// mdbook cannot run snippets that depend on this crate, so every chapter is
// compiled and run as a doctest instead.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/detectors.md")]
    mod detectors {}
    #[doc = include_str!("../../../book/src/forward-model.md")]
    mod forward_model {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/background.md")]
    mod background {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
