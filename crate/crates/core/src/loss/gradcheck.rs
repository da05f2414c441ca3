//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{grad_mc, grad_mi, mc_total_loss, mi_total_loss, Example, LogitsTerm, McObjective};
use crate::error::{Error, Result};
use crate::head::{sigmoid, DenseLayer, McHead, MiHead};
use crate::model::ClassifierHead;

/// Denominator floor for the relative error, so that gradients that are
/// zero on both sides compare as exact rather than 0/0.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat parameter index of the worst entry, if any was checked.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub excluded: usize,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic` against central differences of `loss` around
/// `params`, skipping entries flagged in `excluded`.
pub fn finite_diff_check<F>(mut loss: F, params: &[f64], analytic: &[f64], step: f64, excluded: &[bool]) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        excluded: 0,
    };
    for i in 0..params.len() {
        if excluded.get(i).copied().unwrap_or(false) {
            report.excluded += 1;
            continue;
        }
        probe[i] = params[i] + step;
        let up = loss(&probe);
        probe[i] = params[i] - step;
        let down = loss(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}

/// Flags every parameter feeding a unit whose activation sits within `band`
/// of its kink for some example in the batch.
fn exclusion_mask<P>(dense: &DenseLayer, batch: &[Example<'_>], near_kink: P) -> Vec<bool>
where
    P: Fn(f64) -> bool,
{
    let n = dense.n;
    let mut unit_excluded = vec![false; n];
    for (g, _) in batch {
        for (k, u) in dense.pre_activation_unchecked(g).into_iter().enumerate() {
            if near_kink(u) {
                unit_excluded[k] = true;
            }
        }
    }
    let mut mask = Vec::with_capacity(dense.param_count());
    for &ex in &unit_excluded {
        mask.extend(std::iter::repeat_n(ex, n));
    }
    mask.extend_from_slice(&unit_excluded);
    mask
}

pub fn check_mc_gradient(
    batch: &[Example<'_>],
    head: &McHead,
    classifier: &ClassifierHead,
    objective: &McObjective,
    step: f64,
    band: f64,
) -> Result<GradCheckReport> {
    let (_, grad) = grad_mc(batch, head, classifier, objective)?;
    let t = head.threshold;
    let excluded = exclusion_mask(&head.dense, batch, |u| (sigmoid(u) - t).abs() < band);
    let params = head.dense.flatten();
    let n = head.n();
    Ok(finite_diff_check(
        |p| {
            let probe = McHead {
                dense: DenseLayer::from_flat(n, p).expect("flat length"),
                threshold: t,
            };
            mc_total_loss(batch, &probe, classifier, objective)
                .expect("validated batch")
                .total
        },
        &params,
        &grad.total.flatten(),
        step,
        &excluded,
    ))
}

pub fn check_mi_gradient(
    batch: &[Example<'_>],
    head: &MiHead,
    classifier: &ClassifierHead,
    lambda: f64,
    step: f64,
    band: f64,
) -> Result<GradCheckReport> {
    let (_, grad) = grad_mi(batch, head, classifier, lambda)?;
    let excluded = exclusion_mask(&head.dense, batch, |u| u.abs() < band);
    let params = head.dense.flatten();
    let n = head.n();
    Ok(finite_diff_check(
        |p| {
            let probe = MiHead {
                dense: DenseLayer::from_flat(n, p).expect("flat length"),
            };
            mi_total_loss(batch, &probe, classifier, lambda)
                .expect("validated batch")
                .total
        },
        &params,
        &grad.total.flatten(),
        step,
        &excluded,
    ))
}

/// A random classifier, feature batch and explainer layer for checking
/// gradients away from any trained state.
#[derive(Debug, Clone)]
pub struct GradCheckProblem {
    pub classifier: ClassifierHead,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Shared by the MC and MI heads; biases are spread over [-1, 1] so
    /// units land on both sides of their kinks.
    pub dense: DenseLayer,
}

impl GradCheckProblem {
    pub fn random(n: usize, classes: usize, batch: usize, seed: u64) -> Result<Self> {
        if n == 0 || classes == 0 || batch == 0 {
            return Err(Error::InvalidArgument("n, classes and batch must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..n * classes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = (0..classes).map(|_| rng.random_range(-0.5..0.5)).collect();
        let classifier = ClassifierHead::new(n, classes, weights, bias)?;
        let features = (0..batch).map(|_| (0..n).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let mut dense = DenseLayer::random(n, 0.0, &mut rng);
        for b in &mut dense.bias {
            *b = rng.random_range(-1.0..1.0);
        }
        Ok(Self {
            classifier,
            features,
            labels,
            dense,
        })
    }

    pub fn examples(&self) -> Vec<Example<'_>> {
        self.features.iter().map(|g| g.as_slice()).zip(self.labels.iter().copied()).collect()
    }

    /// MC checks under every logits mode (lambda 2, threshold 0.5), then
    /// the MI check (lambda 1).
    pub fn check_all(&self, step: f64, band: f64) -> Result<Vec<(String, GradCheckReport)>> {
        let batch = self.examples();
        let mc = McHead::new(self.dense.clone(), 0.5)?;
        let mut out = Vec::new();
        for logits in [LogitsTerm::Signed, LogitsTerm::Absolute, LogitsTerm::Disabled] {
            let objective = McObjective { lambda: 2.0, logits };
            let r = check_mc_gradient(&batch, &mc, &self.classifier, &objective, step, band)?;
            out.push((format!("mc/{logits:?}").to_lowercase(), r));
        }
        let mi = MiHead::new(self.dense.clone())?;
        out.push(("mi".into(), check_mi_gradient(&batch, &mi, &self.classifier, 1.0, step, band)?));
        Ok(out)
    }
}
