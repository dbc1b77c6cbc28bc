//! DRAM power-up fingerprint simulation and CNN-based device authentication.
//!
//! The crate simulates per-cell power-up bias fields for synthetic DRAM
//! chips, captures measurements under six operating conditions, renders them
//! as grayscale fingerprint images, and trains a small convolutional network
//! from scratch to classify which device produced a fingerprint — the whole
//! pipeline deterministic down to the byte from a handful of seeds.
//!
//! Module map:
//! - [`sim`] — device models, conditions, measurement sampling, datasets.
//! - [`imaging`] — bit matrices → grayscale rasters, crops, PGM I/O.
//! - [`nn`] — tensors, layers with hand-written backward passes, shape
//!   inference, model files.
//! - [`train`] — splits, optimizers, LR schedule, the training loop, presets.
//! - [`eval`] — confusion matrices, ROC/AUC, authentication decisions.
//! - [`pipeline`] — one-call gen/train/eval runs shared by the CLI.
//!
//! The `book/` directory of the repository walks through each concept; its
//! code snippets compile and run as doctests of this crate.

pub mod bits;
pub mod digest;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::{Error, Result};

// Run the guide's code blocks as doctests so the book cannot drift from the
// library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Fingerprints, "../../../book/src/fingerprints.md");
    chapter!(Images, "../../../book/src/images.md");
    chapter!(Network, "../../../book/src/network.md");
    chapter!(Training, "../../../book/src/training.md");
    chapter!(Evaluation, "../../../book/src/evaluation.md");
    chapter!(Cli, "../../../book/src/cli.md");
}
