//! Network specifications and forward/backward implementations.
//!
//! Everything is generic over the scalar type: pipelines train in f32,
//! verification (finite-difference gradient checks) runs in f64. Specs and
//! checkpoints are immutable; forward passes are reentrant.

mod checkpoint;
mod conv;
mod layer;
mod loss;
mod models;
mod optim;
mod scalar;
mod spec;

pub use checkpoint::{peek_meta, Checkpoint, CheckpointMeta};
pub use conv::{
    conv2d_backward, conv2d_forward, conv_out_side, conv_transpose2d_backward,
    conv_transpose2d_forward, conv_transpose_out_side,
};
pub use layer::{
    instance_norm_backward, instance_norm_forward, Conv2d, ConvTranspose2d, GradStore, Layer,
    LayerCache, Net, ResidualBlock, SeqCache, Sequential,
};
pub use loss::{
    bce_with_logits, logit_to_probability, lsgan, mae, weighted_bce_logit, LOGIT_CLAMP,
};
pub use models::{
    chw_to_hwc, feature_to_input, hwc_to_chw, output_to_pixels, patch_to_input, Classifier,
    ClassifierKind, Discriminator, GenCache, Generator,
};
pub use optim::{Adam, AdamConfig};
pub use scalar::Scalar;
pub use spec::{
    BaselineClassifierSpec, DiscriminatorSpec, FeatureClassifierSpec, GeneratorSpec,
};
