//! Gated-MLP blocks: dense reference, thresholded oracle, the two sparse
//! kernels and cost accounting.

mod cost;
mod forward;
mod mask;
mod weights;

pub use cost::{active_channels, cost_model, CostCount};
pub use forward::{
    cats_mlp_compacted, cats_mlp_compacted_with, cats_mlp_masked, cats_mlp_masked_with, cats_mlp_reference,
    cats_mlp_reference_with, dense_mlp_forward, dense_mlp_forward_with, optimal_baseline_forward, KernelOptions,
    SparseOutput,
};
pub use mask::Mask;
pub use weights::{optimal_width, GatedMlpWeights};
