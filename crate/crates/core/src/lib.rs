//! Low-rank compression of layered models by whitened truncated SVD with
//! residual compensation, and planning of which trailing layers to compress.
//!
//! The pieces, bottom-up:
//!
//! - [`linalg`]: dense matrices, a Jacobi SVD, truncation into factor pairs
//!   and the per-matrix rank budget.
//! - [`calibration`]: calibration batches, activation capture and the
//!   Cholesky whitening matrix `S`.
//! - [`compensation`]: the two-stage truncation `W ≈ W_{r_i} + R_{r_r}`.
//! - [`model`]: sequential models, forward passes, layer-wise errors and
//!   parameter / MAC counts.
//! - [`planner`]: choosing how many trailing layers to compress.
//! - [`oracle`]: independent checks of the approximation guarantees.
//! - [`io`]: on-disk formats for models, calibration data and reports.
//!
//! ```
//! use residual_svd::calibration::{default_ridge, whiten};
//! use residual_svd::compensation::{compress_matrix, direct_truncate_matrix, CompensationConfig};
//! use residual_svd::linalg::{frobenius_error, DenseMatrix};
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
//! let w = DenseMatrix::gaussian(32, 32, &mut rng);
//! let x = DenseMatrix::gaussian(128, 32, &mut rng);
//! let ctx = whiten(&x, default_ridge(&x))?;
//!
//! let cfg = CompensationConfig::new("0.3".parse()?);
//! let compensated = compress_matrix(&w, &ctx, &cfg)?;
//! let direct = direct_truncate_matrix(&w, &ctx, compensated.rank())?;
//! assert!(frobenius_error(&w, &compensated.product())? <= frobenius_error(&w, &direct.product())?);
//! # Ok::<(), residual_svd::Error>(())
//! ```

pub mod calibration;
pub mod cli;
pub mod compensation;
pub mod demo;
mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod planner;
mod ratio;

pub use error::{Error, ErrorKind, Result};
pub use ratio::Ratio;

// Compile and run the guide's and README's snippets as doctests so they cannot drift.
#[cfg(doctest)]
mod book {
    macro_rules! chapters {
        ($($name:ident => $file:literal),* $(,)?) => {
            $(
                #[doc = include_str!(concat!("../../../book/src/", $file))]
                mod $name {}
            )*
        };
    }
    chapters! {
        introduction => "introduction.md",
        svd => "svd.md",
        whitening => "whitening.md",
        compensation => "compensation.md",
        budget => "budget.md",
        planning => "planning.md",
        error_propagation => "error-propagation.md",
        accounting => "accounting.md",
        verification => "verification.md",
        cli => "cli.md",
    }

    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
