//! Dataset-level studies: MC filter statistics, disable-filter ablation,
//! sparsity sweeps, the logits-term ablation and misclassification reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};
use crate::explain::{explain_mc, explain_mi, top_activating_images, ExplanationReport, ImageActivation};
use crate::head::McHead;
use crate::io::CfeCheckpoint;
use crate::loss::{LogitsTerm, McObjective};
use crate::model::{argmax, masked_classify, ClassifierHead};
use crate::train::{evaluate_mc, select_subset, seeded_rng, train_mc, HeadEvaluation, TrainConfig};

const ABLATION_STREAM: u64 = 1 << 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub class_index: usize,
    pub image_count: usize,
    /// How many of the class's images keep each filter in their mask.
    pub counts: Vec<usize>,
    /// Mean `g_k` over the images whose mask keeps `k`, divided by the
    /// largest such mean.
    pub magnitudes: Vec<f64>,
}

fn class_images(bundle: &FeatureBundle, class: usize) -> Result<Vec<usize>> {
    if class >= bundle.n_classes {
        return Err(Error::OutOfRange {
            what: "class",
            index: class,
            limit: bundle.n_classes,
        });
    }
    let out: Vec<usize> = (0..bundle.len())
        .filter(|&i| bundle.images[i].true_label == class)
        .collect();
    if out.is_empty() {
        return Err(Error::EmptySelection(format!("class {class} has no images")));
    }
    Ok(out)
}

fn check_classifier(bundle: &FeatureBundle, classifier: &ClassifierHead) -> Result<()> {
    if classifier.n_filters != bundle.n_filters || classifier.n_classes != bundle.n_classes {
        return Err(Error::Invariant(format!(
            "bundle is {}x{} (filters x classes) but classifier is {}x{}",
            bundle.n_filters, bundle.n_classes, classifier.n_filters, classifier.n_classes
        )));
    }
    Ok(())
}

/// Accumulates binarised MC masks over the images whose true label is
/// `class`.
pub fn global_filter_stats(
    bundle: &FeatureBundle,
    classifier: &ClassifierHead,
    mc_head: &McHead,
    class: usize,
) -> Result<FilterStats> {
    check_classifier(bundle, classifier)?;
    let images = class_images(bundle, class)?;
    let n = bundle.n_filters;
    let mut counts = vec![0usize; n];
    let mut sums = vec![0.0; n];
    for &i in &images {
        let g = bundle.features(i);
        let mask = mc_head.forward_infer(g)?;
        for k in (0..n).filter(|&k| mask[k] == 1.0) {
            counts[k] += 1;
            sums[k] += g[k];
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let top = means.iter().copied().fold(0.0, f64::max);
    let magnitudes = means.iter().map(|&m| if top > 0.0 { m / top } else { 0.0 }).collect();
    Ok(FilterStats {
        class_index: class,
        image_count: images.len(),
        counts,
        magnitudes,
    })
}

/// Filters kept by at least `min_count` images.
pub fn global_mc_set(stats: &FilterStats, min_count: usize) -> Result<Vec<usize>> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }
    Ok((0..stats.counts.len()).filter(|&k| stats.counts[k] >= min_count).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub class_index: usize,
    pub disabled: Vec<usize>,
    /// Per-class recall; `None` for classes without images.
    pub recall_before: Vec<Option<f64>>,
    pub recall_after: Vec<Option<f64>>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub random_disabled: Vec<usize>,
    pub random_recall_after: Vec<Option<f64>>,
    pub random_accuracy_after: f64,
}

impl AblationResult {
    pub fn class_recall_drop(&self) -> f64 {
        let c = self.class_index;
        self.recall_before[c].unwrap_or(0.0) - self.recall_after[c].unwrap_or(0.0)
    }

    pub fn random_recall_drop(&self) -> f64 {
        let c = self.class_index;
        self.recall_before[c].unwrap_or(0.0) - self.random_recall_after[c].unwrap_or(0.0)
    }

    pub fn accuracy_drop(&self) -> f64 {
        self.accuracy_before - self.accuracy_after
    }
}

/// Per-class recall and overall accuracy against true labels.
fn recall_and_accuracy(bundle: &FeatureBundle, classifier: &ClassifierHead, mask: &[f64]) -> Result<(Vec<Option<f64>>, f64)> {
    let c = bundle.n_classes;
    let mut hits = vec![0usize; c];
    let mut totals = vec![0usize; c];
    for img in &bundle.images {
        totals[img.true_label] += 1;
        if masked_classify(&img.features, mask, classifier)?.top_class == img.true_label {
            hits[img.true_label] += 1;
        }
    }
    let recall = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let accuracy = hits.iter().sum::<usize>() as f64 / bundle.len().max(1) as f64;
    Ok((recall, accuracy))
}

fn complement_mask(n: usize, disabled: &[usize]) -> Vec<f64> {
    let mut mask = vec![1.0; n];
    for &k in disabled {
        mask[k] = 0.0;
    }
    mask
}

/// Zeroes the `disabled` filters for every image and measures recall and
/// accuracy, next to a seeded random set of the same size.
pub fn disable_filters_eval(
    bundle: &FeatureBundle,
    classifier: &ClassifierHead,
    disabled: &[usize],
    class: usize,
    baseline_seed: u64,
) -> Result<AblationResult> {
    check_classifier(bundle, classifier)?;
    if bundle.is_empty() {
        return Err(Error::EmptySelection("bundle has no images".into()));
    }
    if class >= bundle.n_classes {
        return Err(Error::OutOfRange {
            what: "class",
            index: class,
            limit: bundle.n_classes,
        });
    }
    let n = bundle.n_filters;
    let set: BTreeSet<usize> = disabled.iter().copied().collect();
    if let Some(&k) = set.iter().find(|&&k| k >= n) {
        return Err(Error::OutOfRange {
            what: "disabled filter",
            index: k,
            limit: n,
        });
    }
    let disabled: Vec<usize> = set.into_iter().collect();
    let (recall_before, accuracy_before) = recall_and_accuracy(bundle, classifier, &vec![1.0; n])?;
    let (recall_after, accuracy_after) = recall_and_accuracy(bundle, classifier, &complement_mask(n, &disabled))?;
    let mut random_disabled = sample(&mut seeded_rng(baseline_seed, ABLATION_STREAM), n, disabled.len()).into_vec();
    random_disabled.sort_unstable();
    let (random_recall_after, random_accuracy_after) =
        recall_and_accuracy(bundle, classifier, &complement_mask(n, &random_disabled))?;
    Ok(AblationResult {
        class_index: class,
        disabled,
        recall_before,
        recall_after,
        accuracy_before,
        accuracy_after,
        random_disabled,
        random_recall_after,
        random_accuracy_after,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub images: usize,
    pub accuracy: f64,
    pub ce: f64,
    pub l1: f64,
    pub logits: f64,
    pub filters: f64,
}

impl From<HeadEvaluation> for SplitMetrics {
    fn from(e: HeadEvaluation) -> Self {
        Self {
            images: e.images,
            accuracy: e.accuracy,
            ce: e.loss.ce,
            l1: e.loss.l1,
            logits: e.loss.logits_term,
            filters: e.mean_filters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub train: SplitMetrics,
    pub test: Option<SplitMetrics>,
}

/// One MC training run, measured on the training subset and, when given,
/// on the matching subset of `test`.
pub fn sweep_row(
    train: &FeatureBundle,
    test: Option<&FeatureBundle>,
    classifier: &ClassifierHead,
    target: usize,
    lambda: f64,
    config: &TrainConfig,
) -> Result<SweepRow> {
    let config = config.clone().with_lambda(lambda);
    let (head, report) = train_mc(train, classifier, target, &config)?;
    let test = match test {
        Some(bundle) if !bundle.is_empty() => {
            let objective = McObjective {
                lambda,
                logits: config.logits_term,
            };
            let indices = select_subset(bundle, config.subset_policy, target)?;
            Some(evaluate_mc(bundle, &indices, classifier, &head, target, &objective)?.into())
        }
        _ => None,
    };
    Ok(SweepRow {
        lambda,
        train: report.evaluation.into(),
        test,
    })
}

/// One fresh, identically seeded run per `lambda`, in list order.
pub fn sparsity_sweep(
    train: &FeatureBundle,
    test: Option<&FeatureBundle>,
    classifier: &ClassifierHead,
    target: usize,
    lambdas: &[f64],
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("lambda list is empty".into()));
    }
    lambdas
        .iter()
        .map(|&l| sweep_row(train, test, classifier, target, l, config))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsAblation {
    pub with_logits: SweepRow,
    pub without_logits: SweepRow,
}

/// Two runs that differ only in whether the logits term is used.
pub fn logits_ablation(
    train: &FeatureBundle,
    test: Option<&FeatureBundle>,
    classifier: &ClassifierHead,
    target: usize,
    config: &TrainConfig,
) -> Result<LogitsAblation> {
    let mut with = config.clone();
    if with.logits_term == LogitsTerm::Disabled {
        with.logits_term = LogitsTerm::Signed;
    }
    let mut without = config.clone();
    without.logits_term = LogitsTerm::Disabled;
    Ok(LogitsAblation {
        with_logits: sweep_row(train, test, classifier, target, config.lambda, &with)?,
        without_logits: sweep_row(train, test, classifier, target, config.lambda, &without)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterImages {
    pub filter: usize,
    pub images: Vec<ImageActivation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassificationReport {
    pub image_index: usize,
    pub true_label: usize,
    pub inferred_label: usize,
    /// Filters that keep the wrong prediction.
    pub mc: ExplanationReport,
    /// Inferred-class images that activate the MC top filters the most.
    pub mc_top_images: Vec<FilterImages>,
    /// Additions that recover the true class.
    pub mi: ExplanationReport,
    /// True-class images that activate the MI top filters the most.
    pub mi_top_images: Vec<FilterImages>,
}

pub fn misclassification_report(
    index: usize,
    bundle: &FeatureBundle,
    classifier: &ClassifierHead,
    mc_for_inferred: &CfeCheckpoint,
    mi_for_true: &CfeCheckpoint,
    images_per_filter: usize,
) -> Result<MisclassificationReport> {
    let img = bundle.image(index)?;
    let inferred = argmax(&classifier.logits(&img.features)?);
    if inferred == img.true_label {
        return Err(Error::NotMisclassified(index));
    }
    if mc_for_inferred.target_class != inferred {
        return Err(Error::InvalidArgument(format!(
            "MC checkpoint targets class {}, image is inferred as {inferred}",
            mc_for_inferred.target_class
        )));
    }
    let mc = explain_mc(index, bundle, classifier, mc_for_inferred)?;
    let mi = explain_mi(index, bundle, classifier, mi_for_true, img.true_label)?;
    let listing = |report: &ExplanationReport, class: usize| -> Result<Vec<FilterImages>> {
        if !bundle.images.iter().any(|i| i.true_label == class) {
            return Ok(Vec::new());
        }
        report
            .top_k
            .iter()
            .map(|&filter| {
                Ok(FilterImages {
                    filter,
                    images: top_activating_images(bundle, filter, class, images_per_filter)?,
                })
            })
            .collect()
    };
    Ok(MisclassificationReport {
        image_index: index,
        true_label: img.true_label,
        inferred_label: inferred,
        mc_top_images: listing(&mc, inferred)?,
        mi_top_images: listing(&mi, img.true_label)?,
        mc,
        mi,
    })
}

/// Plain-text table with right-aligned columns.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(headers.to_vec(), &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), pct)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let headers = ["Split", "Lambda", "Accuracy", "CE loss", "L1 loss", "Filters"];
    let mut body = Vec::new();
    for (split, pick) in [("train", 0), ("test", 1)] {
        for row in rows {
            let m = if pick == 0 { Some(row.train) } else { row.test };
            if let Some(m) = m {
                body.push(vec![
                    split.to_string(),
                    format!("{}", row.lambda),
                    pct(m.accuracy),
                    format!("{:.3}", m.ce),
                    format!("{:.3}", m.l1),
                    format!("{:.1}", m.filters),
                ]);
            }
        }
    }
    render_table(&headers, &body)
}

pub fn logits_table(ablation: &LogitsAblation) -> String {
    let headers = ["Logits loss", "Accuracy", "CE loss", "L1 loss", "Logits", "Filters"];
    let body = [("with", &ablation.with_logits), ("without", &ablation.without_logits)]
        .into_iter()
        .map(|(name, row)| {
            let m = row.train;
            vec![
                name.to_string(),
                pct(m.accuracy),
                format!("{:.3}", m.ce),
                format!("{:.3}", m.l1),
                format!("{:.3}", m.logits),
                format!("{:.1}", m.filters),
            ]
        })
        .collect::<Vec<_>>();
    render_table(&headers, &body)
}

pub fn ablation_table(results: &[AblationResult]) -> String {
    let headers = [
        "Class",
        "Disabled",
        "Recall before",
        "Recall after",
        "Random recall after",
        "Acc. before",
        "Acc. after",
    ];
    let body: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let c = r.class_index;
            vec![
                c.to_string(),
                r.disabled.len().to_string(),
                opt_pct(r.recall_before[c]),
                opt_pct(r.recall_after[c]),
                opt_pct(r.random_recall_after[c]),
                pct(r.accuracy_before),
                pct(r.accuracy_after),
            ]
        })
        .collect();
    render_table(&headers, &body)
}

/// Filters with a non-zero count, most frequent first.
pub fn stats_table(stats: &FilterStats) -> String {
    let mut order: Vec<usize> = (0..stats.counts.len()).filter(|&k| stats.counts[k] > 0).collect();
    order.sort_by(|&a, &b| stats.counts[b].cmp(&stats.counts[a]).then(a.cmp(&b)));
    let body: Vec<Vec<String>> = order
        .into_iter()
        .map(|k| {
            vec![
                k.to_string(),
                stats.counts[k].to_string(),
                format!("{:.3}", stats.magnitudes[k]),
            ]
        })
        .collect();
    render_table(&["Filter", "Count", "Magnitude"], &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::ImageRecord;
    use crate::head::DenseLayer;

    fn bundle_from(rows: &[(&[f64], usize)], classes: usize) -> FeatureBundle {
        let mut b = FeatureBundle::new(rows[0].0.len(), classes);
        for (i, (g, y)) in rows.iter().enumerate() {
            b.images.push(ImageRecord {
                true_label: *y,
                inferred_label: *y,
                features: g.to_vec(),
                spatial: None,
                source_path: format!("{i}"),
            });
        }
        b
    }

    // Unit k is on exactly when g_k > 0.5: weight 10 on itself, bias -5.
    fn gate_head(n: usize) -> McHead {
        let mut d = DenseLayer::zeros(n);
        for k in 0..n {
            d.weights[k * n + k] = 10.0;
        }
        d.bias = vec![-5.0; n];
        McHead::new(d, 0.5).unwrap()
    }

    fn identity(n: usize) -> ClassifierHead {
        let mut w = vec![0.0; n * n];
        for k in 0..n {
            w[k * n + k] = 1.0;
        }
        ClassifierHead::new(n, n, w, vec![0.0; n]).unwrap()
    }

    #[test]
    fn single_image_counts() {
        let mut g = vec![0.0; 8];
        g[3] = 1.0;
        g[7] = 2.0;
        let b = bundle_from(&[(&g, 0)], 8);
        let s = global_filter_stats(&b, &identity(8), &gate_head(8), 0).unwrap();
        let mut expected = vec![0; 8];
        expected[3] = 1;
        expected[7] = 1;
        assert_eq!(s.counts, expected);
        assert_eq!(s.magnitudes[7], 1.0);
        assert_eq!(s.magnitudes[3], 0.5);
    }

    #[test]
    fn hand_tallied_counts_and_sets() {
        // masks {0,1}, {1,2}, {1}
        let b = bundle_from(
            &[(&[1.0, 2.0, 0.0, 0.0], 1), (&[0.0, 4.0, 1.0, 0.0], 1), (&[0.0, 3.0, 0.0, 0.0], 1), (&[9.0, 9.0, 9.0, 9.0], 0)],
            4,
        );
        let s = global_filter_stats(&b, &identity(4), &gate_head(4), 1).unwrap();
        assert_eq!(s.image_count, 3);
        assert_eq!(s.counts, vec![1, 3, 1, 0]);
        // means 1, 3, 1, 0 -> divided by 3
        assert!((s.magnitudes[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.magnitudes[1], 1.0);
        assert_eq!(global_mc_set(&s, 1).unwrap(), vec![0, 1, 2]);
        assert_eq!(global_mc_set(&s, 2).unwrap(), vec![1]);
        assert!(global_mc_set(&s, 4).unwrap().is_empty());
        assert!(global_mc_set(&s, 0).is_err());
        assert!(global_filter_stats(&b, &identity(4), &gate_head(4), 2).is_err());
    }

    #[test]
    fn empty_disable_is_a_no_op() {
        let b = bundle_from(&[(&[1.0, 0.2, 0.0], 0), (&[0.0, 1.0, 0.3], 1), (&[0.5, 0.6, 0.0], 0)], 3);
        let r = disable_filters_eval(&b, &identity(3), &[], 0, 1).unwrap();
        assert_eq!(r.recall_before, r.recall_after);
        assert_eq!(r.accuracy_before, r.accuracy_after);
        assert_eq!(r.random_accuracy_after, r.accuracy_before);
        assert_eq!(r.recall_before[2], None);
    }

    #[test]
    fn disabling_everything_predicts_bias_argmax() {
        let mut head = identity(3);
        head.bias = vec![0.0, 0.5, 0.1];
        let b = bundle_from(&[(&[1.0, 0.2, 0.0], 0), (&[0.0, 1.0, 0.3], 1), (&[0.0, 0.1, 2.0], 2), (&[0.0, 2.0, 0.0], 1)], 3);
        let r = disable_filters_eval(&b, &head, &[0, 1, 2], 1, 0).unwrap();
        assert_eq!(r.accuracy_after, 0.5);
        assert_eq!(r.recall_after, vec![Some(0.0), Some(1.0), Some(0.0)]);
        assert_eq!(r.random_disabled, vec![0, 1, 2]);
        assert!(disable_filters_eval(&b, &head, &[3], 1, 0).is_err());
    }

    #[test]
    fn table_alignment() {
        let t = render_table(&["a", "long"], &[vec!["123".into(), "x".into()]]);
        assert_eq!(t, "  a  long\n---  ----\n123     x\n");
    }
}
