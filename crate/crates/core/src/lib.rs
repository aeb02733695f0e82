//! Conditional variable selection.
//!
//! A learned feature mask weighs candidate variables while a fixed set of
//! preselected variables is always fed to the network through its own
//! encoder. After joint training, the mask computed over the training set
//! ranks the candidates *given* the preselected ones. An exhaustive subset
//! search and planted-feature generators provide ground truth to check the
//! ranking against.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod mask;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod select;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use data::{load_csv, split, standardize, ColumnManifest, Dataset, Role, Standardizer, Task};
pub use error::{Error, Result};
pub use mask::{apply_mask, FeatureMask};
pub use model::{Architecture, CondSelModel, Mlp, Prediction, Trainable};
pub use oracle::{
    enumerate_combinations, evaluate_subset, exhaustive_search, ComboRecord, EvalConfig,
    SearchOptions,
};
pub use select::{select_top_k, SelectionReport};
pub use tensor::{Activation, Matrix, Parameterized};
pub use train::{train, TrainConfig, TrainHistory};
