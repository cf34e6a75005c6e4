//! Weight-sharing supernet searched with Gumbel-Softmax relaxation: hard
//! single-path forward, top-K multi-path architecture gradients, and
//! hardware-cost gradients on the activated operators.

mod child;
mod dnas;
mod gumbel;
mod ops;

pub use child::{candidate_layers, layer_descs, LayerEntry, NetDescription, CHILD_FORMAT, CHILD_VERSION};
pub use dnas::{
    backward_multi_path, combine, cost_gradient, cost_gradient_relaxed, cost_gradient_with, derive_child,
    ArchOptimizer, CostGradMode, SearchGrads, Supernet,
};
pub use gumbel::{
    anneal_temperature, argmax, gumbel_softmax, gumbel_softmax_jacobian, gumbel_softmax_with_noise, sample_gumbel,
    ArchParams, GumbelSample, TemperatureSchedule,
};
pub use ops::OperatorKind;
