//! Dense tensors, a reverse-mode tape, MLP layers, spectral normalization,
//! and the parameter checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod layer;
pub mod spectral;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use checkpoint::{
    check_version, load_mlp, mlp_from_records, mlp_to_records, save_mlp, LayerRecord,
    CHECKPOINT_VERSION,
};
pub use layer::{Activation, DenseLayer, Forward, LayerVars, Mlp, DEFAULT_LEAKY_SLOPE};
pub use spectral::{
    power_iteration_sigma, refine_singular_vector, top_singular_value, SPECTRAL_EPS,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
