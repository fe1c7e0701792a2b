//! Loss models: the noisy quadratic, the synthetic classification task and the
//! MLP trained on it, plus minibatch sampling.

mod dataset;
mod mlp;
mod quadratic;
mod sampler;

pub use dataset::{DatasetSpec, SyntheticDataset};
pub use mlp::{
    ghost_bn_backward, ghost_bn_forward, BnStats, Evaluation, GhostBnOutput, LossGrad, MlpConfig, MlpModel,
    MlpTask, Mode, Normalization, BN_EPS, BN_MOMENTUM,
};
pub use quadratic::{QuadraticModel, Spectrum};
pub use sampler::{BatchSampler, SamplingMode};

use crate::numkit::Vector;

/// A finite-sum loss `C(w) = (1/N) sum_j C_j(w)`.
pub trait LossModel {
    fn dim(&self) -> usize;
    fn num_examples(&self) -> usize;
    fn loss(&self, params: &[f64]) -> f64;
    /// Gradient of the `index`-th per-example loss.
    fn example_grad(&self, index: usize, params: &[f64]) -> Vector;
}
