//! Fixed-composite differentiable building blocks.
//!
//! Everything here is written for the handful of network shapes the POAM
//! learner needs: dense blocks with layer normalization, a GRU cell, a
//! recurrent trunk, categorical utilities and Adam. Backward passes are
//! hand-derived per layer and accumulate into a [`ParamStore`].

mod categorical;
mod checkpoint;
mod error;
mod gradcheck;
mod init;
mod layers;
mod net;
mod params;
mod real;
mod tensor;

pub use categorical::{categorical_log_prob, entropy_row, log_softmax_row, sample_row, softmax_row};
pub use checkpoint::{read_tensors, write_tensors, FORMAT_VERSION};
pub use error::{Error, Result};
pub use gradcheck::finite_diff_check;
pub use init::orthogonal;
pub use layers::{
    layer_norm, Activation, Dense, DenseCache, GruCache, GruCell, LayerNorm, LayerNormCache, Linear,
    LN_EPS,
};
pub use net::{Mlp, MlpCache, RecurrentCache, RecurrentNet};
pub use params::{AdamConfig, ParamEntry, ParamId, ParamStore};
pub use real::{FloatWidth, Real};
pub use tensor::{gemm, Tensor};
