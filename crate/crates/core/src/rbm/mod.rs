//! Reduced-basis surrogates: greedy basis construction, projected operators
//! and the online solvers.

pub mod basis;
pub mod container;
pub mod greedy;
pub mod model;

pub use basis::{angle_to_space, orthonormalize, pod1, supremizer};
pub use container::{read_model, read_model_file, write_model, write_model_file};
pub use greedy::{build_reduced_model, error_steps, pod_angle_greedy_american, pod_greedy_european, GreedyConfig, TrainingSet};
pub use model::{GreedyRecord, ReducedModel, ReducedSurface};
