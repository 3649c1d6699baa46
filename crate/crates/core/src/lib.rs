//! Deep Warehouse: a deterministic grid ASRS simulator plus a model-based
//! reinforcement learning pipeline that learns a predictive model from an
//! expert's transitions and trains a Q-learning controller on rollouts of
//! that model alone.

pub mod approx;
pub mod data;
pub mod dvae2;
pub mod sim;
pub mod expert;
pub mod policy;
pub mod metrics;
pub mod harness;
