//! MC and MI objectives with hand-derived gradients.
//!
//! For one image with features `g`, target class `y` and explainer
//! pre-activation `u = D g + d`:
//!
//! * MC: `s = sigmoid(u)`, `f = relu_t(s)`, `z = W^T (g * f) + b`,
//!   `L = ce(softmax(z), y) + lambda * sum(f) - sum(f * g * W[:, y])`.
//! * MI: `a = relu(u)`, `z = W^T (g + a) + b`,
//!   `L = ce(softmax(z), y) + lambda * sum(a)`.
//!
//! Every component is a mean over the batch.

pub mod gradcheck;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{sigmoid, McHead, MiHead};
use crate::model::{check_len, softmax, ClassifierHead};

/// Floor applied to the target probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// One training example: features and the class the objective pushes toward.
pub type Example<'a> = (&'a [f64], usize);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub l1: f64,
    /// Mean retained-filter contribution to the target logit. Always
    /// reported for MC, zero for MI.
    pub logits_term: f64,
    pub total: f64,
}

/// How the logits term enters the MC objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogitsTerm {
    /// Subtract `sum f_k g_k W[k][y]`.
    #[default]
    Signed,
    /// Subtract `sum |f_k g_k W[k][y]|`.
    Absolute,
    /// Report the signed value but leave it out of the total.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McObjective {
    pub lambda: f64,
    pub logits: LogitsTerm,
}

impl McObjective {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            logits: LogitsTerm::Signed,
        }
    }
}

/// Gradient with respect to the explainer layer, same layout as
/// [`DenseLayer`](crate::head::DenseLayer).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadGradient {
    pub fn zeros(n: usize) -> Self {
        Self {
            weights: vec![0.0; n * n],
            bias: vec![0.0; n],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.weights.clone();
        out.extend_from_slice(&self.bias);
        out
    }

    fn accumulate(&mut self, delta: &[f64], g: &[f64]) {
        let n = delta.len();
        for (k, &dk) in delta.iter().enumerate() {
            if dk == 0.0 {
                continue;
            }
            for (w, &gj) in self.weights[k * n..(k + 1) * n].iter_mut().zip(g) {
                *w += dk * gj;
            }
            self.bias[k] += dk;
        }
    }

    fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *v *= factor;
        }
    }
}

/// Per-component gradients; `total = ce + l1 - logits` (the logits part is
/// already zero when the term is disabled, and already carries the sign
/// flip of the absolute variant).
#[derive(Debug, Clone, PartialEq)]
pub struct McGradient {
    pub ce: HeadGradient,
    pub l1: HeadGradient,
    pub logits: HeadGradient,
    pub total: HeadGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiGradient {
    pub ce: HeadGradient,
    pub l1: HeadGradient,
    pub total: HeadGradient,
}

/// Categorical cross-entropy `-ln(max(p[target], 1e-12))`.
pub fn ce_loss(probs: &[f64], target: usize) -> Result<f64> {
    let p = *probs.get(target).ok_or(Error::OutOfRange {
        what: "target class",
        index: target,
        limit: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Sum of a non-negative filter map.
pub fn l1_loss(f: &[f64]) -> Result<f64> {
    if let Some(bad) = f.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "l1 input must be non-negative, found {bad}"
        )));
    }
    Ok(f.iter().sum())
}

/// Signed contribution of the retained filters to the target logit,
/// `sum_k f_k g_k W[k][target]`.
pub fn logits_contribution(f: &[f64], g: &[f64], head: &ClassifierHead, target: usize) -> Result<f64> {
    check_len("filter map", head.n_filters, f.len())?;
    check_len("feature vector", head.n_filters, g.len())?;
    check_class(target, head)?;
    Ok(f.iter()
        .zip(g)
        .enumerate()
        .map(|(k, (fk, gk))| fk * gk * head.weight(k, target))
        .sum())
}

fn check_class(class: usize, head: &ClassifierHead) -> Result<()> {
    if class >= head.n_classes {
        return Err(Error::OutOfRange {
            what: "class",
            index: class,
            limit: head.n_classes,
        });
    }
    Ok(())
}

fn check_batch(batch: &[Example<'_>], n: usize, classifier: &ClassifierHead) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_len("explainer width", classifier.n_filters, n)?;
    for (g, y) in batch {
        check_len("feature vector", n, g.len())?;
        check_class(*y, classifier)?;
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be >= 0")));
    }
    Ok(())
}

/// `dCE/dz = p - onehot(y)`, zero where the probability floor is active.
fn ce_logit_grad(probs: &[f64], target: usize) -> Vec<f64> {
    if probs[target] < PROB_FLOOR {
        return vec![0.0; probs.len()];
    }
    let mut out = probs.to_vec();
    out[target] -= 1.0;
    out
}

/// `sum_c W[k][c] * v[c]` for every filter `k`.
fn back_through_classifier(classifier: &ClassifierHead, v: &[f64]) -> Vec<f64> {
    classifier
        .weights
        .chunks_exact(classifier.n_classes)
        .map(|row| row.iter().zip(v).map(|(w, x)| w * x).sum())
        .collect()
}

struct McSample {
    loss: LossBreakdown,
    subtracted: f64,
    d_ce: Vec<f64>,
    d_l1: Vec<f64>,
    d_logits: Vec<f64>,
}

fn mc_sample(
    g: &[f64],
    y: usize,
    head: &McHead,
    classifier: &ClassifierHead,
    objective: &McObjective,
    want_grad: bool,
) -> McSample {
    let n = head.n();
    let t = head.threshold;
    let s: Vec<f64> = head.dense.pre_activation_unchecked(g).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = s.iter().map(|&v| if v >= t { v } else { 0.0 }).collect();
    let h: Vec<f64> = g.iter().zip(&f).map(|(a, b)| a * b).collect();
    let probs = softmax(&classifier.logits_unchecked(&h));

    let ce = -probs[y].max(PROB_FLOOR).ln();
    let l1: f64 = f.iter().sum();
    let signed: f64 = (0..n).map(|k| f[k] * g[k] * classifier.weight(k, y)).sum();
    let logits_term = signed;
    let subtracted = match objective.logits {
        LogitsTerm::Signed => signed,
        LogitsTerm::Absolute => (0..n).map(|k| (f[k] * g[k] * classifier.weight(k, y)).abs()).sum(),
        LogitsTerm::Disabled => 0.0,
    };
    let loss = LossBreakdown {
        ce,
        l1,
        logits_term,
        total: ce + objective.lambda * l1 - subtracted,
    };
    if !want_grad {
        return McSample {
            loss,
            subtracted,
            d_ce: Vec::new(),
            d_l1: Vec::new(),
            d_logits: Vec::new(),
        };
    }

    let back = back_through_classifier(classifier, &ce_logit_grad(&probs, y));
    let mut d_ce = vec![0.0; n];
    let mut d_l1 = vec![0.0; n];
    let mut d_logits = vec![0.0; n];
    for k in 0..n {
        if s[k] < t {
            continue;
        }
        let ds = s[k] * (1.0 - s[k]);
        d_ce[k] = g[k] * back[k] * ds;
        d_l1[k] = objective.lambda * ds;
        let w = classifier.weight(k, y);
        d_logits[k] = match objective.logits {
            LogitsTerm::Signed => g[k] * w * ds,
            LogitsTerm::Absolute => (g[k] * w).abs() * ds,
            LogitsTerm::Disabled => 0.0,
        };
    }
    McSample {
        loss,
        subtracted,
        d_ce,
        d_l1,
        d_logits,
    }
}

/// Batch means of the components; `total` is recomposed from the means
/// rather than averaged, so e.g. `lambda = 0` gives `total == ce` exactly.
/// `sum.total` carries the sum of the subtracted logits term.
fn mean_breakdown(sum: LossBreakdown, m: usize, lambda: f64) -> LossBreakdown {
    let m = m as f64;
    let ce = sum.ce / m;
    let l1 = sum.l1 / m;
    LossBreakdown {
        ce,
        l1,
        logits_term: sum.logits_term / m,
        total: ce + lambda * l1 - sum.total / m,
    }
}

fn add_breakdown(acc: &mut LossBreakdown, x: &LossBreakdown, subtracted: f64) {
    acc.ce += x.ce;
    acc.l1 += x.l1;
    acc.logits_term += x.logits_term;
    acc.total += subtracted;
}

pub fn mc_total_loss(
    batch: &[Example<'_>],
    head: &McHead,
    classifier: &ClassifierHead,
    objective: &McObjective,
) -> Result<LossBreakdown> {
    check_lambda(objective.lambda)?;
    check_batch(batch, head.n(), classifier)?;
    let mut sum = LossBreakdown::default();
    for (g, y) in batch {
        let sample = mc_sample(g, *y, head, classifier, objective, false);
        add_breakdown(&mut sum, &sample.loss, sample.subtracted);
    }
    Ok(mean_breakdown(sum, batch.len(), objective.lambda))
}

pub fn grad_mc(
    batch: &[Example<'_>],
    head: &McHead,
    classifier: &ClassifierHead,
    objective: &McObjective,
) -> Result<(LossBreakdown, McGradient)> {
    check_lambda(objective.lambda)?;
    check_batch(batch, head.n(), classifier)?;
    let n = head.n();
    let mut sum = LossBreakdown::default();
    let mut ce = HeadGradient::zeros(n);
    let mut l1 = HeadGradient::zeros(n);
    let mut logits = HeadGradient::zeros(n);
    for (g, y) in batch {
        let sample = mc_sample(g, *y, head, classifier, objective, true);
        add_breakdown(&mut sum, &sample.loss, sample.subtracted);
        ce.accumulate(&sample.d_ce, g);
        l1.accumulate(&sample.d_l1, g);
        logits.accumulate(&sample.d_logits, g);
    }
    let inv = 1.0 / batch.len() as f64;
    ce.scale(inv);
    l1.scale(inv);
    logits.scale(inv);
    let total = combine(&[(&ce, 1.0), (&l1, 1.0), (&logits, -1.0)]);
    Ok((
        mean_breakdown(sum, batch.len(), objective.lambda),
        McGradient {
            ce,
            l1,
            logits,
            total,
        },
    ))
}

struct MiSample {
    loss: LossBreakdown,
    d_ce: Vec<f64>,
    d_l1: Vec<f64>,
}

fn mi_sample(g: &[f64], y: usize, head: &MiHead, classifier: &ClassifierHead, lambda: f64, want_grad: bool) -> MiSample {
    let n = head.n();
    let u = head.dense.pre_activation_unchecked(g);
    let a: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
    let h: Vec<f64> = g.iter().zip(&a).map(|(x, y)| x + y).collect();
    let probs = softmax(&classifier.logits_unchecked(&h));
    let ce = -probs[y].max(PROB_FLOOR).ln();
    let l1: f64 = a.iter().sum();
    let loss = LossBreakdown {
        ce,
        l1,
        logits_term: 0.0,
        total: ce + lambda * l1,
    };
    if !want_grad {
        return MiSample {
            loss,
            d_ce: Vec::new(),
            d_l1: Vec::new(),
        };
    }
    let back = back_through_classifier(classifier, &ce_logit_grad(&probs, y));
    let mut d_ce = vec![0.0; n];
    let mut d_l1 = vec![0.0; n];
    for k in 0..n {
        if u[k] > 0.0 {
            d_ce[k] = back[k];
            d_l1[k] = lambda;
        }
    }
    MiSample { loss, d_ce, d_l1 }
}

pub fn mi_total_loss(
    batch: &[Example<'_>],
    head: &MiHead,
    classifier: &ClassifierHead,
    lambda: f64,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    check_batch(batch, head.n(), classifier)?;
    let mut sum = LossBreakdown::default();
    for (g, y) in batch {
        add_breakdown(&mut sum, &mi_sample(g, *y, head, classifier, lambda, false).loss, 0.0);
    }
    Ok(mean_breakdown(sum, batch.len(), lambda))
}

pub fn grad_mi(
    batch: &[Example<'_>],
    head: &MiHead,
    classifier: &ClassifierHead,
    lambda: f64,
) -> Result<(LossBreakdown, MiGradient)> {
    check_lambda(lambda)?;
    check_batch(batch, head.n(), classifier)?;
    let n = head.n();
    let mut sum = LossBreakdown::default();
    let mut ce = HeadGradient::zeros(n);
    let mut l1 = HeadGradient::zeros(n);
    for (g, y) in batch {
        let sample = mi_sample(g, *y, head, classifier, lambda, true);
        add_breakdown(&mut sum, &sample.loss, 0.0);
        ce.accumulate(&sample.d_ce, g);
        l1.accumulate(&sample.d_l1, g);
    }
    let inv = 1.0 / batch.len() as f64;
    ce.scale(inv);
    l1.scale(inv);
    let total = combine(&[(&ce, 1.0), (&l1, 1.0)]);
    Ok((mean_breakdown(sum, batch.len(), lambda), MiGradient { ce, l1, total }))
}

fn combine(parts: &[(&HeadGradient, f64)]) -> HeadGradient {
    let mut out = HeadGradient::zeros(parts[0].0.bias.len());
    for (part, sign) in parts {
        for (o, v) in out.weights.iter_mut().zip(&part.weights) {
            *o += sign * v;
        }
        for (o, v) in out.bias.iter_mut().zip(&part.bias) {
            *o += sign * v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{mc_forward_train, mi_forward, DenseLayer};
    use crate::model::{additive_classify, classify, masked_classify};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, c: usize, m: usize, seed: u64) -> (ClassifierHead, DenseLayer, Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        let classifier = ClassifierHead::new(n, c, w, b).unwrap();
        let mut dense = DenseLayer::random(n, 0.0, &mut rng);
        for v in &mut dense.bias {
            *v = rng.random_range(-1.0..1.0);
        }
        let gs = (0..m)
            .map(|_| (0..n).map(|_| rng.random_range(0.0..2.0)).collect())
            .collect();
        let ys = (0..m).map(|_| rng.random_range(0..c)).collect();
        (classifier, dense, gs, ys)
    }

    fn batch<'a>(gs: &'a [Vec<f64>], ys: &[usize]) -> Vec<Example<'a>> {
        gs.iter().map(|g| g.as_slice()).zip(ys.iter().copied()).collect()
    }

    #[test]
    fn ce_examples() {
        assert_eq!(ce_loss(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((ce_loss(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        // -ln(0.7311) evaluated directly.
        assert!((ce_loss(&[0.7311, 0.2689], 0).unwrap() - 0.3133).abs() < 1e-4);
        assert!((ce_loss(&[0.0, 1.0], 0).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
        assert!(matches!(ce_loss(&[1.0], 3), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_loss(&[0.0; 5]).unwrap(), 0.0);
        assert_eq!(l1_loss(&[0.5; 4]).unwrap(), 2.0);
        assert!(l1_loss(&[0.5, -0.1]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..17).map(|_| rng.random_range(0.0..3.0)).collect();
        let mut acc = 0.0;
        for x in &v {
            acc += x;
        }
        assert_eq!(l1_loss(&v).unwrap(), acc);
    }

    #[test]
    fn logits_contribution_examples() {
        let head = ClassifierHead::new(2, 2, vec![0.5, 9.0, -1.0, 9.0], vec![0.3, 0.0]).unwrap();
        assert_eq!(logits_contribution(&[0.0, 0.0], &[2.0, 3.0], &head, 0).unwrap(), 0.0);
        assert_eq!(logits_contribution(&[1.0, 0.0], &[2.0, 3.0], &head, 0).unwrap(), 1.0);
        let g = [2.0, 3.0];
        let z = classify(&g, &head).unwrap().logits;
        let full = logits_contribution(&[1.0, 1.0], &g, &head, 0).unwrap();
        assert!((full - (z[0] - head.bias[0])).abs() < 1e-12);
        let half = logits_contribution(&[0.5, 0.5], &g, &head, 0).unwrap();
        assert!((half - 0.5 * full).abs() < 1e-12);
    }

    #[test]
    fn mc_total_is_compositional() {
        let (classifier, dense, gs, ys) = random_problem(6, 3, 5, 21);
        let head = McHead::new(dense, 0.5).unwrap();
        let obj = McObjective::new(2.0);
        let got = mc_total_loss(&batch(&gs, &ys), &head, &classifier, &obj).unwrap();
        let (mut ce, mut l1, mut lg) = (0.0, 0.0, 0.0);
        for (g, &y) in gs.iter().zip(&ys) {
            let f = mc_forward_train(&head, g).unwrap();
            ce += ce_loss(&masked_classify(g, &f, &classifier).unwrap().probs, y).unwrap();
            l1 += l1_loss(&f).unwrap();
            lg += logits_contribution(&f, g, &classifier, y).unwrap();
        }
        let m = gs.len() as f64;
        assert!((got.ce - ce / m).abs() < 1e-10);
        assert!((got.l1 - l1 / m).abs() < 1e-10);
        assert!((got.logits_term - lg / m).abs() < 1e-10);
        assert!((got.total - (ce / m + 2.0 * l1 / m - lg / m)).abs() < 1e-10);

        let zero = mc_total_loss(&batch(&gs, &ys), &head, &classifier, &McObjective::new(0.0)).unwrap();
        assert_eq!(zero.total, zero.ce - zero.logits_term);
    }

    #[test]
    fn all_ones_mask_matches_plain_classification() {
        // Huge bias drives every score to ~1 so the soft mask is all ones.
        let (classifier, mut dense, gs, ys) = random_problem(4, 3, 1, 2);
        dense.weights.iter_mut().for_each(|w| *w = 0.0);
        dense.bias = vec![60.0; 4];
        let head = McHead::new(dense, 0.5).unwrap();
        let got = mc_total_loss(&batch(&gs, &ys), &head, &classifier, &McObjective::new(1.0)).unwrap();
        let p = classify(&gs[0], &classifier).unwrap();
        assert!((got.ce - ce_loss(&p.probs, ys[0]).unwrap()).abs() < 1e-12);
        assert!((got.l1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn disabled_logits_term_equals_zero_weight() {
        let (classifier, dense, gs, ys) = random_problem(5, 3, 4, 8);
        let head = McHead::new(dense, 0.5).unwrap();
        let obj = McObjective {
            lambda: 2.0,
            logits: LogitsTerm::Disabled,
        };
        let got = mc_total_loss(&batch(&gs, &ys), &head, &classifier, &obj).unwrap();
        assert!((got.total - (got.ce + 2.0 * got.l1)).abs() < 1e-12);
        let (_, grad) = grad_mc(&batch(&gs, &ys), &head, &classifier, &obj).unwrap();
        assert!(grad.logits.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mi_total_is_compositional() {
        let (classifier, dense, gs, ys) = random_problem(6, 3, 5, 33);
        let head = MiHead::new(dense).unwrap();
        let got = mi_total_loss(&batch(&gs, &ys), &head, &classifier, 1.5).unwrap();
        let (mut ce, mut l1) = (0.0, 0.0);
        for (g, &y) in gs.iter().zip(&ys) {
            let a = mi_forward(&head, g).unwrap();
            ce += ce_loss(&additive_classify(g, &a, &classifier).unwrap().probs, y).unwrap();
            l1 += l1_loss(&a).unwrap();
        }
        let m = gs.len() as f64;
        assert!((got.ce - ce / m).abs() < 1e-10);
        assert!((got.total - (ce / m + 1.5 * l1 / m)).abs() < 1e-10);
        let zero = mi_total_loss(&batch(&gs, &ys), &head, &classifier, 0.0).unwrap();
        assert_eq!(zero.total, zero.ce);
    }

    #[test]
    fn mi_zero_addition_gives_baseline_ce() {
        let (classifier, _, gs, _) = random_problem(4, 3, 1, 5);
        let head = MiHead::new(DenseLayer::zeros(4)).unwrap();
        let p = classify(&gs[0], &classifier).unwrap();
        let b = [(gs[0].as_slice(), p.top_class)];
        let got = mi_total_loss(&b, &head, &classifier, 1.0).unwrap();
        assert!((got.ce - ce_loss(&p.probs, p.top_class).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn dead_units_have_no_gradient() {
        let (classifier, mut dense, gs, ys) = random_problem(5, 3, 3, 9);
        dense.bias = vec![-10.0; 5];
        dense.weights.iter_mut().for_each(|w| *w = 0.0);
        let head = McHead::new(dense, 0.5).unwrap();
        let (_, grad) = grad_mc(&batch(&gs, &ys), &head, &classifier, &McObjective::new(2.0)).unwrap();
        assert!(grad.total.flatten().iter().all(|&v| v == 0.0));

        let mut dense = DenseLayer::zeros(5);
        dense.bias = vec![-1.0; 5];
        let head = MiHead::new(dense).unwrap();
        let (_, grad) = grad_mi(&batch(&gs, &ys), &head, &classifier, 1.0).unwrap();
        assert!(grad.total.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l1_gradient_is_linear_in_lambda() {
        let (classifier, dense, gs, ys) = random_problem(6, 3, 4, 12);
        let mc = McHead::new(dense.clone(), 0.5).unwrap();
        let b = batch(&gs, &ys);
        let (_, g1) = grad_mc(&b, &mc, &classifier, &McObjective::new(1.5)).unwrap();
        let (_, g2) = grad_mc(&b, &mc, &classifier, &McObjective::new(3.0)).unwrap();
        let doubled: Vec<f64> = g1.l1.flatten().iter().map(|v| 2.0 * v).collect();
        assert_eq!(g2.l1.flatten(), doubled);
        assert_eq!(g1.ce, g2.ce);

        let mi = MiHead::new(dense).unwrap();
        let (_, g1) = grad_mi(&b, &mi, &classifier, 1.5).unwrap();
        let (_, g2) = grad_mi(&b, &mi, &classifier, 3.0).unwrap();
        let doubled: Vec<f64> = g1.l1.flatten().iter().map(|v| 2.0 * v).collect();
        assert_eq!(g2.l1.flatten(), doubled);
    }

    #[test]
    fn empty_batch_and_bad_lambda_rejected() {
        let (classifier, dense, gs, ys) = random_problem(3, 2, 1, 1);
        let head = McHead::new(dense, 0.5).unwrap();
        assert!(matches!(
            mc_total_loss(&[], &head, &classifier, &McObjective::new(1.0)),
            Err(Error::EmptyBatch)
        ));
        assert!(mc_total_loss(&batch(&gs, &ys), &head, &classifier, &McObjective::new(-1.0)).is_err());
    }
}
