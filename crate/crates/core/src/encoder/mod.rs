//! Isotropic vision retention encoder.
//!
//! An `H×W×C` image is cut into `P×P` patches in raster order, each patch is
//! projected to width `D` and offset by a learned position embedding, and a
//! class token is appended as the last token so that, under the causal decay
//! mask, it retains every patch. `L` pre-norm blocks of multi-head retention
//! and MLP follow; the classifier reads the final class-token row.

mod config;
mod mhr;
mod model;
mod weights;

pub use config::{default_gamma_schedule, EncoderConfig, ExecMode, MaskMode};
pub use mhr::{layout_mask, multi_head_retention, summary_mask_2d, MhrState, MhrWeights, TokenLayout};
pub use model::{
    assemble_sequence, block_forward, classify, encoder_forward, encoder_forward_streaming, gather_patch, mlp,
    patchify_embed, retention_map, BlockWeights, EncoderOutput, StreamSession,
};
pub use weights::{
    expected_shapes, layer_key, load_weights, save_weights, ManifestEntry, WeightStore, INIT_BOUND, MAGIC, VERSION,
};
