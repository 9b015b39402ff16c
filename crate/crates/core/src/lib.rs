//! Class-incremental learning with SVM-selected support data.
//!
//! A feed-forward network is trained one class batch at a time. After every
//! increment a linear one-vs-rest SVM is fitted on the learned
//! representations; the examples behind its support vectors are kept as a
//! bounded rehearsal set, and two consolidation penalties (a feature anchor
//! on the kept examples and an EWC penalty) limit drift on old classes.

pub mod error;
pub mod math;
pub mod data;
pub mod network;
pub mod svm;
pub mod selector;
pub mod consolidation;
pub mod metrics;
pub mod checkpoint;
pub mod config;
pub mod engine;

pub use error::{Error, Result};
pub use math::{Matrix, SeededRng};
pub use data::{ClassBatchSchedule, Dataset, LabeledExample, Split};
pub use network::{Activation, GradientSet, NetworkParams};
pub use config::{ExperimentConfig, Method, MethodConfig};
pub use engine::ExperimentLog;
pub use checkpoint::Checkpoint;
