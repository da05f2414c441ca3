//! Binary and JSON persistence. All binary floats are f32 little-endian;
//! values are widened to f64 in memory.

mod bytes;
pub mod cfe;
pub mod chd;
pub mod fex;
pub mod manifest;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub use cfe::{read_checkpoint, write_checkpoint, CfeCheckpoint, HeadKind};
pub use chd::{read_classifier_head, write_classifier_head};
pub use fex::{read_feature_bundle, write_feature_bundle};
pub use manifest::{DatasetManifest, Split};

use crate::bundle::FeatureBundle;
use crate::error::Result;
use crate::model::ClassifierHead;

pub fn load_bundle(path: &Path) -> Result<FeatureBundle> {
    read_feature_bundle(BufReader::new(File::open(path)?))
}

pub fn save_bundle(bundle: &FeatureBundle, path: &Path) -> Result<usize> {
    write_feature_bundle(bundle, BufWriter::new(File::create(path)?))
}

pub fn load_head(path: &Path) -> Result<ClassifierHead> {
    read_classifier_head(BufReader::new(File::open(path)?))
}

pub fn save_head(head: &ClassifierHead, path: &Path) -> Result<usize> {
    write_classifier_head(head, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<CfeCheckpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

pub fn save_checkpoint(ckpt: &CfeCheckpoint, path: &Path) -> Result<usize> {
    write_checkpoint(ckpt, BufWriter::new(File::create(path)?))
}
