//! Inference through the frozen classification layer: plain, masked and
//! additively modified predictions over GAP features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frozen dense layer mapping `n` GAP features to `C` class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub n_filters: usize,
    pub n_classes: usize,
    /// Row-major `(filter, class)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(n_filters: usize, n_classes: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let head = Self {
            n_filters,
            n_classes,
            weights,
            bias,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn zeros(n_filters: usize, n_classes: usize) -> Self {
        Self {
            n_filters,
            n_classes,
            weights: vec![0.0; n_filters * n_classes],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_filters == 0 || self.n_classes == 0 {
            return Err(Error::Invariant("classifier head must have positive shape".into()));
        }
        check_len("classifier weights", self.n_filters * self.n_classes, self.weights.len())?;
        check_len("classifier bias", self.n_classes, self.bias.len())?;
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Invariant("classifier head has non-finite entries".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, filter: usize, class: usize) -> f64 {
        self.weights[filter * self.n_classes + class]
    }

    /// Weights from every filter into one class.
    pub fn class_column(&self, class: usize) -> Vec<f64> {
        (0..self.n_filters).map(|k| self.weight(k, class)).collect()
    }

    /// `z_c = sum_k h_k W[k][c] + b_c`.
    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        check_len("feature vector", self.n_filters, h.len())?;
        Ok(self.logits_unchecked(h))
    }

    pub(crate) fn logits_unchecked(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (row, &hk) in self.weights.chunks_exact(self.n_classes).zip(h) {
            if hk == 0.0 {
                continue;
            }
            for (zc, &w) in z.iter_mut().zip(row) {
                *zc += hk * w;
            }
        }
        z
    }

    /// Rounds parameters to f32 precision, matching a CHD1 round trip.
    pub fn quantize(&mut self) {
        crate::bundle::quantize_in_place(&mut self.weights);
        crate::bundle::quantize_in_place(&mut self.bias);
    }
}

/// Class probabilities together with the logits they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub top_class: usize,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        let top_class = argmax(&probs);
        Self {
            logits,
            probs,
            top_class,
        }
    }

    pub fn top_prob(&self) -> f64 {
        self.probs[self.top_class]
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify(features: &[f64], head: &ClassifierHead) -> Result<Prediction> {
    Ok(Prediction::from_logits(head.logits(features)?))
}

/// Prediction with each filter scaled by `mask` (1 keeps, 0 disables).
pub fn masked_classify(features: &[f64], mask: &[f64], head: &ClassifierHead) -> Result<Prediction> {
    check_len("mask", features.len(), mask.len())?;
    if let Some(bad) = mask.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::InvalidArgument(format!("mask entry {bad} outside [0, 1]")));
    }
    let h: Vec<f64> = features.iter().zip(mask).map(|(g, m)| g * m).collect();
    classify(&h, head)
}

/// Prediction after adding a non-negative amount to each filter.
pub fn additive_classify(features: &[f64], addition: &[f64], head: &ClassifierHead) -> Result<Prediction> {
    check_len("addition", features.len(), addition.len())?;
    if let Some(bad) = addition.iter().find(|a| a.is_nan() || **a < 0.0) {
        return Err(Error::InvalidArgument(format!("addition entry {bad} is negative")));
    }
    let h: Vec<f64> = features.iter().zip(addition).map(|(g, a)| g + a).collect();
    classify(&h, head)
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity(n: usize) -> ClassifierHead {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        ClassifierHead::new(n, n, w, vec![0.0; n]).unwrap()
    }

    // Direct scalar evaluation: e^2 / (e^2 + e^1).
    fn two_class(a: f64, b: f64) -> [f64; 2] {
        let pa = a.exp() / (a.exp() + b.exp());
        [pa, 1.0 - pa]
    }

    #[test]
    fn symmetric_features_give_uniform_probs() {
        let p = classify(&[1.0, 1.0], &identity(2)).unwrap();
        assert!((p.probs[0] - 0.5).abs() < 1e-15);
        assert_eq!(p.top_class, 0);
    }

    #[test]
    fn zero_features_give_softmax_of_bias() {
        let head = ClassifierHead::new(2, 3, vec![1.0; 6], vec![0.1, -0.3, 0.7]).unwrap();
        let p = classify(&[0.0, 0.0], &head).unwrap();
        assert_eq!(p.probs, softmax(&head.bias));
        assert_eq!(p.top_class, 2);
    }

    #[test]
    fn classify_two_one() {
        let p = classify(&[2.0, 1.0], &identity(2)).unwrap();
        assert_eq!(p.logits, vec![2.0, 1.0]);
        let expected = two_class(2.0, 1.0);
        assert!((p.probs[0] - expected[0]).abs() < 1e-12);
        assert!((p.probs[0] - 0.7311).abs() < 1e-4);
        assert!((p.probs[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn masked_examples() {
        let head = identity(2);
        let g = [0.3, 1.7];
        assert_eq!(
            masked_classify(&g, &[1.0, 1.0], &head).unwrap(),
            classify(&g, &head).unwrap()
        );
        let off = masked_classify(&g, &[0.0, 0.0], &head).unwrap();
        assert_eq!(off.probs, softmax(&head.bias));

        let w2 = ClassifierHead::new(2, 2, vec![2.0, 0.0, 0.0, 2.0], vec![0.0; 2]).unwrap();
        let p = masked_classify(&[1.0, 1.0], &[1.0, 0.0], &w2).unwrap();
        assert_eq!(p.logits, vec![2.0, 0.0]);
        assert!((p.probs[0] - two_class(2.0, 0.0)[0]).abs() < 1e-12);
        assert!((p.probs[0] - 0.8808).abs() < 1e-4);
        assert!(masked_classify(&g, &[1.5, 0.0], &head).is_err());
    }

    #[test]
    fn additive_examples() {
        let head = identity(2);
        let p = additive_classify(&[1.0, 0.0], &[0.0, 1.5], &head).unwrap();
        assert_eq!(p.logits, vec![1.0, 1.5]);
        assert_eq!(p.top_class, 1);
        assert_eq!(
            additive_classify(&[1.0, 0.0], &[0.0, 0.0], &head).unwrap(),
            classify(&[1.0, 0.0], &head).unwrap()
        );
        assert!(matches!(
            additive_classify(&[1.0, 0.0], &[-0.1, 0.0], &head),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            classify(&[1.0], &identity(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    fn head_strategy() -> impl Strategy<Value = ClassifierHead> {
        (1usize..6, 2usize..5).prop_flat_map(|(n, c)| {
            (
                prop::collection::vec(-3.0f64..3.0, n * c),
                prop::collection::vec(-1.0f64..1.0, c),
            )
                .prop_map(move |(w, b)| ClassifierHead::new(n, c, w, b).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in prop::collection::vec(-1e4f64..1e4, 1..12)) {
            let p = softmax(&z);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn additive_logits_are_affine(head in head_strategy(), seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<f64> = (0..head.n_filters).map(|_| rng.random_range(0.0..2.0)).collect();
            let a: Vec<f64> = (0..head.n_filters).map(|_| rng.random_range(0.0..2.0)).collect();
            let zg = classify(&g, &head).unwrap().logits;
            let zga = additive_classify(&g, &a, &head).unwrap().logits;
            let za = classify(&a, &head).unwrap().logits;
            for c in 0..head.n_classes {
                prop_assert!(((zga[c] - zg[c]) - (za[c] - head.bias[c])).abs() < 1e-9);
            }
        }

        #[test]
        fn binary_mask_equals_zeroing(head in head_strategy(), bits in any::<u32>()) {
            let g: Vec<f64> = (0..head.n_filters).map(|k| 0.5 + k as f64).collect();
            let mask: Vec<f64> = (0..head.n_filters).map(|k| ((bits >> k) & 1) as f64).collect();
            let mut zeroed = g.clone();
            for k in 0..head.n_filters {
                if (bits >> k) & 1 == 0 {
                    zeroed[k] = 0.0;
                }
            }
            prop_assert_eq!(
                masked_classify(&g, &mask, &head).unwrap(),
                classify(&zeroed, &head).unwrap()
            );
        }
    }
}
