//! Function approximation backends: tabular, linear-in-features, and a dense
//! rectifier network with hand-written backpropagation, trained with Adam.

mod adam;
mod model;
mod net;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use model::{
    fit_regression, random_vec, Backend, FeatureMap, LinearSolver, ModelConfig, ModelWorkspace,
    QModel, Regressor, Sample,
};
pub use net::{DenseNet, Workspace};
