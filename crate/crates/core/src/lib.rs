//! Coverage path planning workbench: a grid-world coverage environment,
//! DQN-style agents with prioritized replay, classical zigzag/A*/BA*
//! baselines, a hybrid zigzag+RL controller, a tabular lab for sampled
//! Bellman-operator convergence, and a reproducible experiment harness.

pub mod agent;
pub mod contraction;
pub mod encoder;
pub mod env;
pub mod harness;
pub mod net;
pub mod planners;
pub mod scalar;

pub use scalar::Scalar;

/// Scalar used by the simulator, trainer, and CLI.
pub type Real = f64;

/// Q-network at the default precision.
pub type QNet = net::QNetwork<Real>;

/// State tensor at the default precision.
pub type Tensor = encoder::StateTensor<Real>;
