//! Synthetic GAP-feature datasets with known class structure.
//!
//! Each class owns a small set of "prototype" filters with graded
//! magnitudes; every sample is `max(0, prototype * visible + noise)`, where
//! each prototype filter is hidden with probability `dropout` (a part that
//! is occluded in that image), up to half of the support. Hiding parts makes
//! different images of a class rely on different filters. With `n >= C` the
//! prototype supports are disjoint (`k % C == c`).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sgd::seeded_rng;
use super::{relabel_inferred, train_classifier_head, TrainConfig};
use crate::bundle::{quantize_in_place, FeatureBundle, ImageRecord};
use crate::error::{Error, Result};
use crate::model::ClassifierHead;

const PROTOTYPE_STREAM: u64 = 1 << 40;
const TRAIN_STREAM: u64 = (1 << 40) + 1;
const TEST_STREAM: u64 = (1 << 40) + 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_filters: usize,
    pub n_classes: usize,
    pub per_class: usize,
    /// Mean prototype magnitude, in units of the noise standard deviation.
    pub separation: f64,
    pub noise: f64,
    /// Prototype filters per class.
    pub support: usize,
    /// Probability that a prototype filter is absent from a sample.
    pub dropout: f64,
    pub seed: u64,
    pub test_per_class: usize,
    /// `(hs, ws)` spatial maps to synthesise alongside the features.
    pub spatial: Option<(usize, usize)>,
}

impl SynthConfig {
    pub fn new(n_filters: usize, n_classes: usize, per_class: usize, separation: f64, seed: u64) -> Self {
        Self {
            n_filters,
            n_classes,
            per_class,
            separation,
            noise: DEFAULT_NOISE,
            support: DEFAULT_SUPPORT,
            dropout: DEFAULT_DROPOUT,
            seed,
            test_per_class: 0,
            spatial: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_filters == 0 || self.n_classes == 0 || self.per_class == 0 || self.support == 0 {
            return Err(Error::InvalidArgument(
                "n_filters, n_classes, per_class and support must all be >= 1".into(),
            ));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "separation {} must be > 0",
                self.separation
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise {} must be >= 0", self.noise)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} must be in [0, 1)", self.dropout)));
        }
        if let Some((hs, ws)) = self.spatial {
            if hs == 0 || ws == 0 {
                return Err(Error::InvalidArgument("spatial dims must be positive".into()));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_NOISE: f64 = 0.1;
pub const DEFAULT_DROPOUT: f64 = 0.3;
pub const DEFAULT_SUPPORT: usize = 3;

/// Prototype support of class `c`: up to `support` filters `c + j * C`.
/// The remaining filters carry only noise.
pub fn prototype_filters(n: usize, classes: usize, support: usize, c: usize) -> Vec<usize> {
    if n >= classes {
        (0..n).filter(|k| k % classes == c).take(support.max(1)).collect()
    } else {
        let mut v = vec![c % n, (c + 1 + c / n) % n];
        v.dedup();
        v
    }
}

fn prototypes(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(cfg.seed, PROTOTYPE_STREAM);
    (0..cfg.n_classes)
        .map(|c| {
            let mut proto = vec![0.0; cfg.n_filters];
            let support = prototype_filters(cfg.n_filters, cfg.n_classes, cfg.support, c);
            let s = support.len() as f64;
            for (j, &k) in support.iter().enumerate() {
                // Graded from 1.5x down to 0.5x the separation, with jitter.
                let grade = 1.5 - j as f64 / s.max(1.0);
                let jitter: f64 = rng.random_range(0.9..1.1);
                proto[k] = cfg.separation * cfg.noise.max(1e-3) * grade * jitter;
            }
            proto
        })
        .collect()
}

fn sample_split(cfg: &SynthConfig, protos: &[Vec<f64>], per_class: usize, stream: u64, tag: &str) -> Result<FeatureBundle> {
    let mut rng = seeded_rng(cfg.seed, stream);
    let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut bundle = FeatureBundle::new(cfg.n_filters, cfg.n_classes);
    bundle.spatial_dims = cfg.spatial;
    for i in 0..per_class {
        for (c, proto) in protos.iter().enumerate() {
            let hidden = hidden_filters(proto, cfg.dropout, &mut rng);
            let mut g: Vec<f64> = proto
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let shown = if hidden.contains(&k) { 0.0 } else { p };
                    (shown + normal.sample(&mut rng)).max(0.0)
                })
                .collect();
            quantize_in_place(&mut g);
            let spatial = cfg.spatial.map(|(hs, ws)| spatial_maps(&g, hs, ws, &mut rng));
            bundle.images.push(ImageRecord {
                true_label: c,
                inferred_label: c,
                features: g,
                spatial,
                source_path: format!("synthetic/{tag}/class{c:03}/img{i:05}.png"),
            });
        }
    }
    Ok(bundle)
}

/// Prototype filters hidden in one sample: each with probability
/// `dropout`, but never more than half of the support.
fn hidden_filters<R: Rng>(proto: &[f64], dropout: f64, rng: &mut R) -> Vec<usize> {
    let mut support: Vec<usize> = (0..proto.len()).filter(|&k| proto[k] > 0.0).collect();
    let count = support.iter().filter(|_| rng.random_bool(dropout)).count().min(support.len() / 2);
    support.shuffle(rng);
    support.truncate(count);
    support
}

/// One Gaussian blob per filter, rescaled so its mean equals the feature.
fn spatial_maps<R: Rng>(g: &[f64], hs: usize, ws: usize, rng: &mut R) -> Vec<f64> {
    let n = g.len();
    let mut maps = vec![0.0; hs * ws * n];
    for (k, &gk) in g.iter().enumerate() {
        if gk == 0.0 {
            continue;
        }
        let cy = rng.random_range(0.0..hs as f64);
        let cx = rng.random_range(0.0..ws as f64);
        let sigma = 0.25 * hs.max(ws) as f64 + 0.5;
        let mut field = Vec::with_capacity(hs * ws);
        for r in 0..hs {
            for c in 0..ws {
                let d2 = (r as f64 + 0.5 - cy).powi(2) + (c as f64 + 0.5 - cx).powi(2);
                field.push((-d2 / (2.0 * sigma * sigma)).exp() + 0.05);
            }
        }
        let mean = field.iter().sum::<f64>() / field.len() as f64;
        for (cell, v) in field.into_iter().enumerate() {
            maps[cell * n + k] = f64::from((v * gk / mean) as f32);
        }
    }
    maps
}

/// Train and test bundles sharing one set of prototypes. Inferred labels
/// equal the true labels until [`relabel_inferred`] is applied.
pub fn generate(cfg: &SynthConfig) -> Result<(FeatureBundle, FeatureBundle)> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    let train = sample_split(cfg, &protos, cfg.per_class, TRAIN_STREAM, "train")?;
    let test = if cfg.test_per_class > 0 {
        sample_split(cfg, &protos, cfg.test_per_class, TEST_STREAM, "test")?
    } else {
        FeatureBundle {
            spatial_dims: cfg.spatial,
            ..FeatureBundle::new(cfg.n_filters, cfg.n_classes)
        }
    };
    Ok((train, test))
}

/// Training split of [`generate`], labelled by a classifier head fitted on it
/// with [`TrainConfig::classifier_default`] and the same seed.
pub fn synth_dataset(n: usize, classes: usize, per_class: usize, separation: f64, seed: u64) -> Result<FeatureBundle> {
    let (mut train, _) = generate(&SynthConfig::new(n, classes, per_class, separation, seed))?;
    let head = train_classifier_head(&train, classes, &TrainConfig::classifier_default().with_seed(seed))?;
    relabel_inferred(&mut train, &head)?;
    Ok(train)
}

/// A labelled synthetic problem: train/test bundles plus the fitted head.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub train: FeatureBundle,
    pub test: FeatureBundle,
    pub classifier: ClassifierHead,
}

pub fn synth_problem(cfg: &SynthConfig, head_config: &TrainConfig) -> Result<SyntheticProblem> {
    let (mut train, mut test) = generate(cfg)?;
    let classifier = train_classifier_head(&train, cfg.n_classes, head_config)?;
    relabel_inferred(&mut train, &classifier)?;
    relabel_inferred(&mut test, &classifier)?;
    Ok(SyntheticProblem {
        train,
        test,
        classifier,
    })
}
