//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values are evaluated eagerly and recorded on a [`Tape`]; a single reverse
//! sweep accumulates exact analytic gradients. Parameters live in a
//! [`ParamStore`], are updated with [`Adam`], and persist through the `CKPT`
//! container in [`checkpoint`].

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adam_step, clip_grad_norm, Adam, AdamConfig, AdamState};
pub use params::{Bound, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
