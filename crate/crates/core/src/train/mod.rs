//! Training loops for the MC and MI explainer heads and for a baseline
//! softmax classifier, all on the same mini-batch SGD-with-momentum core.
//!
//! The bundle and the classifier head are only ever borrowed immutably, so
//! the frozen parts of the model cannot change during training.

mod sgd;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use sgd::{epoch_permutation, sgd_momentum_step};

use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};
use crate::head::{DenseLayer, McHead, MiHead, DEFAULT_THRESHOLD};
use crate::io::HeadKind;
use crate::loss::{grad_mc, grad_mi, mc_total_loss, mi_total_loss, Example, LogitsTerm, LossBreakdown, McObjective};
use crate::model::{additive_classify, argmax, masked_classify, softmax, ClassifierHead};
pub(crate) use sgd::seeded_rng;
use sgd::{run_sgd, LoopSettings, INIT_STREAM};

/// Which images of a bundle a head is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "source")]
pub enum SubsetPolicy {
    InferredEqualsTarget,
    InferredNotTarget,
    InferredEqualsSource(usize),
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    pub subset_policy: SubsetPolicy,
    /// MC threshold on the sigmoid score.
    pub threshold: f64,
    pub logits_term: LogitsTerm,
    /// Initial value of every explainer bias entry.
    pub init_bias: f64,
}

impl TrainConfig {
    /// lr 0.001, momentum 0.9, batch 32, 200 epochs, lambda 2.
    pub fn mc_default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 32,
            epochs: 200,
            lambda: 2.0,
            seed: 0,
            subset_policy: SubsetPolicy::InferredEqualsTarget,
            threshold: DEFAULT_THRESHOLD,
            logits_term: LogitsTerm::Signed,
            init_bias: MC_INIT_BIAS,
        }
    }

    /// As [`mc_default`](Self::mc_default) with lambda 1.
    pub fn mi_default() -> Self {
        Self {
            lambda: 1.0,
            subset_policy: SubsetPolicy::InferredNotTarget,
            init_bias: MI_INIT_BIAS,
            ..Self::mc_default()
        }
    }

    /// Settings for fitting the baseline softmax classifier on unit-scale
    /// synthetic features (lr 0.5, 200 epochs). Real backbone features
    /// usually want a smaller learning rate.
    pub fn classifier_default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            lambda: 0.0,
            subset_policy: SubsetPolicy::All,
            init_bias: 0.0,
            ..Self::mc_default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be > 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} must be in (0, 1)", self.threshold));
        }
        if !self.init_bias.is_finite() {
            return bad("init bias must be finite".into());
        }
        Ok(())
    }

    fn loop_settings(&self) -> LoopSettings {
        LoopSettings {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

/// Initial MC bias. Pre-activations start small, so scores sit near the 0.5
/// threshold and roughly half the units receive gradient from the start.
pub const MC_INIT_BIAS: f64 = 0.0;
/// Initial MI bias: a small uniform addition so every unit starts active.
pub const MI_INIT_BIAS: f64 = 0.1;

/// Quality of a trained head on a set of images, using the binarised MC
/// mask (or the MI addition) for predictions and the soft mask for losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadEvaluation {
    pub images: usize,
    /// Fraction whose modified prediction is the target class.
    pub accuracy: f64,
    pub loss: LossBreakdown,
    /// MC: mean binarised-mask cardinality. MI: mean number of filters with
    /// a non-zero addition.
    pub mean_filters: f64,
    /// MI only: mean l1 norm of the addition.
    pub mean_addition_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: HeadKind,
    pub target_class: usize,
    pub config: TrainConfig,
    pub subset: Vec<usize>,
    pub epochs: Vec<LossBreakdown>,
    pub evaluation: HeadEvaluation,
}

pub fn select_subset(bundle: &FeatureBundle, policy: SubsetPolicy, target: usize) -> Result<Vec<usize>> {
    if target >= bundle.n_classes {
        return Err(Error::OutOfRange {
            what: "target class",
            index: target,
            limit: bundle.n_classes,
        });
    }
    let keep = |inferred: usize| match policy {
        SubsetPolicy::InferredEqualsTarget => inferred == target,
        SubsetPolicy::InferredNotTarget => inferred != target,
        SubsetPolicy::InferredEqualsSource(source) => inferred == source,
        SubsetPolicy::All => true,
    };
    let out: Vec<usize> = bundle
        .images
        .iter()
        .enumerate()
        .filter(|(_, img)| keep(img.inferred_label))
        .map(|(i, _)| i)
        .collect();
    if out.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no images match {policy:?} for class {target}"
        )));
    }
    Ok(out)
}

fn check_shapes(bundle: &FeatureBundle, classifier: &ClassifierHead, target: usize) -> Result<()> {
    classifier.validate()?;
    if bundle.n_filters != classifier.n_filters || bundle.n_classes != classifier.n_classes {
        return Err(Error::Invariant(format!(
            "bundle is {}x{} (filters x classes) but classifier is {}x{}",
            bundle.n_filters, bundle.n_classes, classifier.n_filters, classifier.n_classes
        )));
    }
    if target >= classifier.n_classes {
        return Err(Error::OutOfRange {
            what: "target class",
            index: target,
            limit: classifier.n_classes,
        });
    }
    Ok(())
}

fn examples<'a>(bundle: &'a FeatureBundle, indices: &[usize], target: usize) -> Vec<Example<'a>> {
    indices.iter().map(|&i| (bundle.features(i), target)).collect()
}

pub fn train_mc(
    bundle: &FeatureBundle,
    classifier: &ClassifierHead,
    target_class: usize,
    config: &TrainConfig,
) -> Result<(McHead, TrainReport)> {
    config.validate()?;
    check_shapes(bundle, classifier, target_class)?;
    let subset = select_subset(bundle, config.subset_policy, target_class)?;
    let data = examples(bundle, &subset, target_class);
    let n = bundle.n_filters;
    let objective = McObjective {
        lambda: config.lambda,
        logits: config.logits_term,
    };
    let threshold = config.threshold;

    let mut params = DenseLayer::random(n, config.init_bias, &mut seeded_rng(config.seed, INIT_STREAM)).flatten();
    let epochs = run_sgd(&mut params, data.len(), &config.loop_settings(), |batch, p| {
        let head = McHead {
            dense: DenseLayer::from_flat(n, p)?,
            threshold,
        };
        let picked: Vec<Example<'_>> = batch.iter().map(|&i| data[i]).collect();
        let (loss, grad) = grad_mc(&picked, &head, classifier, &objective)?;
        Ok((loss, grad.total.flatten()))
    })?;

    let mut dense = DenseLayer::from_flat(n, &params)?;
    dense.quantize();
    let head = McHead::new(dense, threshold)?;
    let evaluation = evaluate_mc(bundle, &subset, classifier, &head, target_class, &objective)?;
    Ok((
        head,
        TrainReport {
            kind: HeadKind::Mc,
            target_class,
            config: config.clone(),
            subset,
            epochs,
            evaluation,
        },
    ))
}

pub fn train_mi(
    bundle: &FeatureBundle,
    classifier: &ClassifierHead,
    alter_class: usize,
    config: &TrainConfig,
) -> Result<(MiHead, TrainReport)> {
    config.validate()?;
    check_shapes(bundle, classifier, alter_class)?;
    let subset = select_subset(bundle, config.subset_policy, alter_class)?;
    let data = examples(bundle, &subset, alter_class);
    let n = bundle.n_filters;
    let lambda = config.lambda;

    let mut params = DenseLayer::random(n, config.init_bias, &mut seeded_rng(config.seed, INIT_STREAM)).flatten();
    let epochs = run_sgd(&mut params, data.len(), &config.loop_settings(), |batch, p| {
        let head = MiHead {
            dense: DenseLayer::from_flat(n, p)?,
        };
        let picked: Vec<Example<'_>> = batch.iter().map(|&i| data[i]).collect();
        let (loss, grad) = grad_mi(&picked, &head, classifier, lambda)?;
        Ok((loss, grad.total.flatten()))
    })?;

    let mut dense = DenseLayer::from_flat(n, &params)?;
    dense.quantize();
    let head = MiHead::new(dense)?;
    let evaluation = evaluate_mi(bundle, &subset, classifier, &head, alter_class, lambda)?;
    Ok((
        head,
        TrainReport {
            kind: HeadKind::Mi,
            target_class: alter_class,
            config: config.clone(),
            subset,
            epochs,
            evaluation,
        },
    ))
}

pub fn evaluate_mc(
    bundle: &FeatureBundle,
    indices: &[usize],
    classifier: &ClassifierHead,
    head: &McHead,
    target: usize,
    objective: &McObjective,
) -> Result<HeadEvaluation> {
    if indices.is_empty() {
        return Err(Error::EmptySelection("no images to evaluate".into()));
    }
    let data = examples(bundle, indices, target);
    let loss = mc_total_loss(&data, head, classifier, objective)?;
    let mut hits = 0usize;
    let mut filters = 0usize;
    for (g, _) in &data {
        let mask = head.forward_infer(g)?;
        filters += mask.iter().filter(|&&m| m == 1.0).count();
        if masked_classify(g, &mask, classifier)?.top_class == target {
            hits += 1;
        }
    }
    let m = data.len() as f64;
    Ok(HeadEvaluation {
        images: data.len(),
        accuracy: hits as f64 / m,
        loss,
        mean_filters: filters as f64 / m,
        mean_addition_l1: 0.0,
    })
}

pub fn evaluate_mi(
    bundle: &FeatureBundle,
    indices: &[usize],
    classifier: &ClassifierHead,
    head: &MiHead,
    target: usize,
    lambda: f64,
) -> Result<HeadEvaluation> {
    if indices.is_empty() {
        return Err(Error::EmptySelection("no images to evaluate".into()));
    }
    let data = examples(bundle, indices, target);
    let loss = mi_total_loss(&data, head, classifier, lambda)?;
    let mut hits = 0usize;
    let mut filters = 0usize;
    for (g, _) in &data {
        let addition = head.forward(g)?;
        filters += addition.iter().filter(|&&a| a > 0.0).count();
        if additive_classify(g, &addition, classifier)?.top_class == target {
            hits += 1;
        }
    }
    let m = data.len() as f64;
    Ok(HeadEvaluation {
        images: data.len(),
        accuracy: hits as f64 / m,
        loss,
        mean_filters: filters as f64 / m,
        mean_addition_l1: loss.l1,
    })
}

/// Fits a multinomial logistic-regression head on `(features, true_label)`
/// from zero initialisation; `lambda` and the head-specific fields of the
/// config are ignored.
pub fn train_classifier_head(bundle: &FeatureBundle, n_classes: usize, config: &TrainConfig) -> Result<ClassifierHead> {
    config.validate()?;
    if bundle.is_empty() {
        return Err(Error::EmptySelection("bundle has no images".into()));
    }
    if n_classes != bundle.n_classes {
        return Err(Error::DimensionMismatch {
            what: "class count",
            expected: bundle.n_classes,
            found: n_classes,
        });
    }
    let n = bundle.n_filters;
    let c = n_classes;
    let mut params = vec![0.0; n * c + c];
    run_sgd(&mut params, bundle.len(), &config.loop_settings(), |batch, p| {
        let (w, b) = p.split_at(n * c);
        let mut grad = vec![0.0; n * c + c];
        let mut ce = 0.0;
        for &i in batch {
            let g = bundle.features(i);
            let y = bundle.images[i].true_label;
            let mut z = b.to_vec();
            for (row, &gk) in w.chunks_exact(c).zip(g) {
                for (zc, wc) in z.iter_mut().zip(row) {
                    *zc += gk * wc;
                }
            }
            let mut dz = softmax(&z);
            ce -= dz[y].max(crate::loss::PROB_FLOOR).ln();
            dz[y] -= 1.0;
            let (gw, gb) = grad.split_at_mut(n * c);
            for (row, &gk) in gw.chunks_exact_mut(c).zip(g) {
                for (r, d) in row.iter_mut().zip(&dz) {
                    *r += gk * d;
                }
            }
            for (r, d) in gb.iter_mut().zip(&dz) {
                *r += d;
            }
        }
        let m = batch.len() as f64;
        grad.iter_mut().for_each(|v| *v /= m);
        let loss = LossBreakdown {
            ce: ce / m,
            total: ce / m,
            ..Default::default()
        };
        Ok((loss, grad))
    })?;
    let bias = params.split_off(n * c);
    let mut head = ClassifierHead::new(n, c, params, bias)?;
    head.quantize();
    Ok(head)
}

/// Fraction of images whose plain prediction equals the true label.
pub fn classifier_accuracy(bundle: &FeatureBundle, classifier: &ClassifierHead) -> Result<f64> {
    if bundle.is_empty() {
        return Err(Error::EmptySelection("bundle has no images".into()));
    }
    let mut hits = 0usize;
    for img in &bundle.images {
        if argmax(&classifier.logits(&img.features)?) == img.true_label {
            hits += 1;
        }
    }
    Ok(hits as f64 / bundle.len() as f64)
}

/// Overwrites every image's inferred label with the classifier's top-1.
pub fn relabel_inferred(bundle: &mut FeatureBundle, classifier: &ClassifierHead) -> Result<()> {
    for img in &mut bundle.images {
        img.inferred_label = argmax(&classifier.logits(&img.features)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::ImageRecord;

    fn bundle_with(inferred: &[usize], classes: usize) -> FeatureBundle {
        let mut b = FeatureBundle::new(2, classes);
        for (i, &c) in inferred.iter().enumerate() {
            b.images.push(ImageRecord {
                true_label: c,
                inferred_label: c,
                features: vec![i as f64, 1.0],
                spatial: None,
                source_path: format!("img{i}.png"),
            });
        }
        b
    }

    #[test]
    fn subset_policies() {
        let b = bundle_with(&[0, 1, 2, 1, 0], 4);
        assert_eq!(select_subset(&b, SubsetPolicy::All, 3).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(select_subset(&b, SubsetPolicy::InferredEqualsTarget, 1).unwrap(), vec![1, 3]);
        assert!(matches!(
            select_subset(&b, SubsetPolicy::InferredEqualsTarget, 3),
            Err(Error::EmptySelection(_))
        ));
        let eq = select_subset(&b, SubsetPolicy::InferredEqualsTarget, 0).unwrap();
        let ne = select_subset(&b, SubsetPolicy::InferredNotTarget, 0).unwrap();
        let mut all: Vec<usize> = eq.iter().chain(&ne).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..5).collect::<Vec<_>>());
        assert!(eq.iter().all(|i| !ne.contains(i)));
        assert_eq!(
            select_subset(&b, SubsetPolicy::InferredEqualsSource(2), 0).unwrap(),
            vec![2]
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::mc_default().validate().is_ok());
        let mut c = TrainConfig::mc_default();
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c = TrainConfig::mc_default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        c = TrainConfig::mc_default().with_lambda(-1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_features_learn_the_class_prior() {
        let mut b = FeatureBundle::new(3, 3);
        for (i, y) in [0, 1, 1, 1, 2, 1].into_iter().enumerate() {
            b.images.push(ImageRecord {
                true_label: y,
                inferred_label: y,
                features: vec![0.0; 3],
                spatial: None,
                source_path: format!("z{i}"),
            });
        }
        let head = train_classifier_head(&b, 3, &TrainConfig::classifier_default()).unwrap();
        let acc = classifier_accuracy(&b, &head).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let mut b = FeatureBundle::new(1, 2);
        for (i, y) in [0, 0].into_iter().enumerate() {
            b.images.push(ImageRecord {
                true_label: y,
                inferred_label: y,
                features: vec![1e30],
                spatial: None,
                source_path: format!("{i}"),
            });
        }
        let mut cfg = TrainConfig::classifier_default();
        cfg.learning_rate = 1e300;
        assert!(matches!(
            train_classifier_head(&b, 2, &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn exploding_explainer_is_a_divergence() {
        let b = synth::synth_dataset(8, 2, 10, 4.0, 0).unwrap();
        let head = train_classifier_head(&b, 2, &TrainConfig::classifier_default()).unwrap();
        let mut cfg = TrainConfig::mc_default();
        cfg.learning_rate = 1e300;
        let r = train_mc(&b, &head, 0, &cfg).map(|(h, _)| h);
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
        cfg.init_bias = MI_INIT_BIAS;
        assert!(matches!(train_mi(&b, &head, 0, &cfg), Err(Error::Divergence { .. })));
    }
}
