//! Minimum-correct (MC) and minimum-incorrect (MI) filter explanations for a
//! frozen CNN classifier, computed over its post-GAP features.
//!
//! An MC head learns, per image, the smallest set of final-convolution
//! filters that keeps the classifier on its prediction. An MI head learns
//! the smallest non-negative boost to filter activations that flips the
//! prediction to a chosen alternative class.

pub mod analysis;
pub mod bundle;
pub mod error;
pub mod explain;
pub mod head;
pub mod io;
pub mod loss;
pub mod model;
pub mod oracle;
pub mod train;

pub use bundle::{FeatureBundle, ImageRecord, ValidationOptions};
pub use error::{Error, Result};
pub use head::{mc_forward_infer, mc_forward_train, mi_forward, DenseLayer, McHead, MiHead};
pub use io::{CfeCheckpoint, DatasetManifest, HeadKind, Split};
pub use loss::{LogitsTerm, LossBreakdown, McObjective};
pub use model::{additive_classify, classify, masked_classify, ClassifierHead, Prediction};
pub use train::{select_subset, train_classifier_head, train_mc, train_mi, SubsetPolicy, TrainConfig, TrainReport};
