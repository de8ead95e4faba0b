//! Retention operators for vision retention networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`rng`] and [`accounting`] form a small deterministic dense-array
//!   substrate with allocation accounting.
//! * [`retention1d`] implements causal retention over token sequences in parallel,
//!   recurrent and chunkwise form, plus analytic gradients of the parallel form.
//! * [`retention2d`] implements retention over a patch grid with an L1 decay law,
//!   in parallel, inclusion-exclusion recurrent and row-state recurrent form.
//! * [`encoder`] assembles an isotropic encoder (patch embedding, multi-head
//!   retention, MLP blocks, classifier) on top of those operators, together with
//!   a bit-exact weight container.
//!
//! Decay is a single scalar per head; no rotary or xPos rotation is applied, so the
//! per-step transition of every recurrence is multiplication by `gamma`.

pub mod accounting;
pub mod encoder;
pub mod error;
pub mod retention1d;
pub mod retention2d;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{DType, Element, Tensor};
