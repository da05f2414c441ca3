//! Per-image explanations from trained heads, top-k filter listings,
//! receptive-field heatmaps and top-activating images.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};
use crate::io::{CfeCheckpoint, HeadKind};
use crate::model::{additive_classify, classify, masked_classify, ClassifierHead};

/// Listing length used for the `top_k` field of reports.
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub image_index: usize,
    pub source_path: String,
    pub true_label: usize,
    pub inferred_class: usize,
    pub inferred_probability: f64,
    pub kind: HeadKind,
    /// MC: the class the mask must preserve. MI: the alter class.
    pub target_class: usize,
    /// Binary MC mask.
    pub mask: Option<Vec<f64>>,
    /// MI addition vector.
    pub addition: Option<Vec<f64>>,
    /// Active (MC) or non-zero (MI) filters by descending magnitude, ties to
    /// the lower index.
    pub filters: Vec<usize>,
    /// `g_k` (MC) or the addition amount (MI), aligned with `filters`.
    pub magnitudes: Vec<f64>,
    pub modified_class: usize,
    pub modified_probability: f64,
    /// Probability of `target_class` under the modified prediction.
    pub target_probability: f64,
    pub top_k: Vec<usize>,
}

/// Indices where `values` is selected, ordered by descending `values`,
/// ties to the lower index.
fn ranked(indices: impl Iterator<Item = usize>, values: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = indices.collect();
    out.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    out
}

fn check_checkpoint(bundle: &FeatureBundle, classifier: &ClassifierHead, ckpt: &CfeCheckpoint) -> Result<()> {
    if ckpt.n() != bundle.n_filters || classifier.n_filters != bundle.n_filters {
        return Err(Error::DimensionMismatch {
            what: "filter count",
            expected: bundle.n_filters,
            found: if ckpt.n() != bundle.n_filters { ckpt.n() } else { classifier.n_filters },
        });
    }
    if ckpt.target_class >= classifier.n_classes {
        return Err(Error::OutOfRange {
            what: "checkpoint class",
            index: ckpt.target_class,
            limit: classifier.n_classes,
        });
    }
    Ok(())
}

pub fn explain_mc(
    index: usize,
    bundle: &FeatureBundle,
    classifier: &ClassifierHead,
    checkpoint: &CfeCheckpoint,
) -> Result<ExplanationReport> {
    let head = checkpoint.mc_head()?;
    check_checkpoint(bundle, classifier, checkpoint)?;
    let img = bundle.image(index)?;
    let g = &img.features;
    let base = classify(g, classifier)?;
    let mask = head.forward_infer(g)?;
    let modified = masked_classify(g, &mask, classifier)?;
    let filters = ranked((0..g.len()).filter(|&k| mask[k] == 1.0), g);
    let magnitudes = filters.iter().map(|&k| g[k]).collect();
    let target = checkpoint.target_class;
    Ok(ExplanationReport {
        image_index: index,
        source_path: img.source_path.clone(),
        true_label: img.true_label,
        inferred_class: base.top_class,
        inferred_probability: base.top_prob(),
        kind: HeadKind::Mc,
        target_class: target,
        mask: Some(mask),
        addition: None,
        top_k: filters.iter().take(DEFAULT_TOP_K).copied().collect(),
        filters,
        magnitudes,
        modified_class: modified.top_class,
        modified_probability: modified.top_prob(),
        target_probability: modified.probs[target],
    })
}

pub fn explain_mi(
    index: usize,
    bundle: &FeatureBundle,
    classifier: &ClassifierHead,
    checkpoint: &CfeCheckpoint,
    alter_class: usize,
) -> Result<ExplanationReport> {
    let head = checkpoint.mi_head()?;
    check_checkpoint(bundle, classifier, checkpoint)?;
    if alter_class != checkpoint.target_class {
        return Err(Error::InvalidArgument(format!(
            "checkpoint was trained for alter class {}, not {alter_class}",
            checkpoint.target_class
        )));
    }
    let img = bundle.image(index)?;
    let g = &img.features;
    let base = classify(g, classifier)?;
    let addition = head.forward(g)?;
    let modified = additive_classify(g, &addition, classifier)?;
    let filters = ranked((0..g.len()).filter(|&k| addition[k] > 0.0), &addition);
    let magnitudes = filters.iter().map(|&k| addition[k]).collect();
    Ok(ExplanationReport {
        image_index: index,
        source_path: img.source_path.clone(),
        true_label: img.true_label,
        inferred_class: base.top_class,
        inferred_probability: base.top_prob(),
        kind: HeadKind::Mi,
        target_class: alter_class,
        mask: None,
        addition: Some(addition),
        top_k: filters.iter().take(DEFAULT_TOP_K).copied().collect(),
        filters,
        magnitudes,
        modified_class: modified.top_class,
        modified_probability: modified.top_prob(),
        target_probability: modified.probs[alter_class],
    })
}

/// The first `k` report filters; fewer when fewer are active.
pub fn topk_filters(report: &ExplanationReport, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    Ok(report.filters.iter().take(k).copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`.
    pub values: Vec<f64>,
    pub filter: usize,
    pub image_index: usize,
    pub source_path: String,
}

impl Heatmap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// 8-bit binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut sink: W) -> Result<()> {
        write!(sink, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        sink.write_all(&bytes)?;
        Ok(())
    }
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn bilinear_resize(src: &[f64], hs: usize, ws: usize, th: usize, tw: usize) -> Vec<f64> {
    let coord = |i: usize, from: usize, to: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * from as f64 / to as f64 - 0.5).clamp(0.0, (from - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(from - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Vec::with_capacity(th * tw);
    for r in 0..th {
        let (r0, r1, fr) = coord(r, hs, th);
        for c in 0..tw {
            let (c0, c1, fc) = coord(c, ws, tw);
            let top = src[r0 * ws + c0] * (1.0 - fc) + src[r0 * ws + c1] * fc;
            let bottom = src[r1 * ws + c0] * (1.0 - fc) + src[r1 * ws + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Min-max normalisation; a constant input maps to zeros.
pub fn normalize_min_max(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Approximate receptive field of one filter on one image: its spatial
/// activation map upsampled to the target size and min-max normalised.
pub fn rf_heatmap(index: usize, bundle: &FeatureBundle, filter: usize, target_h: usize, target_w: usize) -> Result<Heatmap> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument("heatmap size must be positive".into()));
    }
    let (hs, ws, slice) = bundle.spatial_slice(index, filter)?;
    let mut values = bilinear_resize(&slice, hs, ws, target_h, target_w);
    normalize_min_max(&mut values);
    Ok(Heatmap {
        height: target_h,
        width: target_w,
        values,
        filter,
        image_index: index,
        source_path: bundle.image(index)?.source_path.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageActivation {
    pub image_index: usize,
    pub source_path: String,
    pub activation: f64,
}

/// The `k` images of `class` (by true label) with the largest `g_filter`.
pub fn top_activating_images(bundle: &FeatureBundle, filter: usize, class: usize, k: usize) -> Result<Vec<ImageActivation>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if filter >= bundle.n_filters {
        return Err(Error::OutOfRange {
            what: "filter",
            index: filter,
            limit: bundle.n_filters,
        });
    }
    let values: Vec<f64> = bundle.images.iter().map(|img| img.features[filter]).collect();
    let members = (0..bundle.len()).filter(|&i| bundle.images[i].true_label == class);
    let order = ranked(members, &values);
    if order.is_empty() {
        return Err(Error::EmptySelection(format!("class {class} has no images")));
    }
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| ImageActivation {
            image_index: i,
            source_path: bundle.images[i].source_path.clone(),
            activation: values[i],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::ImageRecord;
    use crate::head::{DenseLayer, McHead, MiHead};

    fn tiny() -> (FeatureBundle, ClassifierHead) {
        let mut b = FeatureBundle::new(4, 2);
        b.spatial_dims = Some((2, 2));
        for (i, g) in [[0.0, 3.0, 1.0, 3.0], [2.0, 0.5, 0.0, 1.0]].iter().enumerate() {
            // Each filter's map is constant and equal to its feature.
            let spatial = (0..4).flat_map(|_| g.iter().copied()).collect();
            b.images.push(ImageRecord {
                true_label: i,
                inferred_label: i,
                features: g.to_vec(),
                spatial: Some(spatial),
                source_path: format!("img{i}.png"),
            });
        }
        let head = ClassifierHead::new(4, 2, vec![1.0, 0.0, 0.5, -0.5, 0.2, 0.1, 0.3, 0.0], vec![0.0, 0.1]).unwrap();
        (b, head)
    }

    fn report_with(filters: Vec<usize>, magnitudes: Vec<f64>) -> ExplanationReport {
        ExplanationReport {
            image_index: 0,
            source_path: String::new(),
            true_label: 0,
            inferred_class: 0,
            inferred_probability: 1.0,
            kind: HeadKind::Mc,
            target_class: 0,
            mask: None,
            addition: None,
            top_k: vec![],
            filters,
            magnitudes,
            modified_class: 0,
            modified_probability: 1.0,
            target_probability: 1.0,
        }
    }

    #[test]
    fn ranking_breaks_ties_to_lower_index() {
        let mags = [0.0, 3.0, 1.0, 3.0];
        let order = ranked([1, 2, 3].into_iter(), &mags);
        assert_eq!(order, vec![1, 3, 2]);
        let r = report_with(order, vec![3.0, 3.0, 1.0]);
        assert_eq!(topk_filters(&r, 2).unwrap(), vec![1, 3]);
        assert_eq!(topk_filters(&r, 10).unwrap(), vec![1, 3, 2]);
        assert!(topk_filters(&r, 0).is_err());
    }

    #[test]
    fn all_ones_mask_keeps_baseline_probability() {
        let (b, head) = tiny();
        let mut dense = DenseLayer::zeros(4);
        dense.bias = vec![5.0; 4];
        let ckpt = CfeCheckpoint::from_mc(&McHead::new(dense, 0.5).unwrap(), 1, 2.0, 1);
        let r = explain_mc(0, &b, &head, &ckpt).unwrap();
        assert_eq!(r.mask.as_deref(), Some(&[1.0; 4][..]));
        assert_eq!(r.modified_probability, r.inferred_probability);
        // filter 0 has g = 0 but is still in the mask
        assert_eq!(r.filters, vec![1, 3, 2, 0]);
        assert_eq!(r.magnitudes, vec![3.0, 3.0, 1.0, 0.0]);
        assert_eq!(r.top_k, vec![1, 3, 2]);
    }

    #[test]
    fn zero_addition_keeps_baseline_prediction() {
        let (b, head) = tiny();
        let ckpt = CfeCheckpoint::from_mi(&MiHead::new(DenseLayer::zeros(4)).unwrap(), 0, 1.0, 1);
        let r = explain_mi(1, &b, &head, &ckpt, 0).unwrap();
        assert_eq!(r.modified_class, r.inferred_class);
        assert_eq!(r.modified_probability, r.inferred_probability);
        assert!(r.filters.is_empty());
        assert!(explain_mi(1, &b, &head, &ckpt, 1).is_err());
    }

    #[test]
    fn kind_and_range_errors() {
        let (b, head) = tiny();
        let mi = CfeCheckpoint::from_mi(&MiHead::new(DenseLayer::zeros(4)).unwrap(), 0, 1.0, 1);
        assert!(matches!(explain_mc(0, &b, &head, &mi), Err(Error::KindMismatch { .. })));
        let mc = CfeCheckpoint::from_mc(&McHead::new(DenseLayer::zeros(4), 0.5).unwrap(), 0, 1.0, 1);
        assert!(matches!(explain_mc(9, &b, &head, &mc), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn constant_slice_gives_zero_heatmap() {
        let (b, _) = tiny();
        let h = rf_heatmap(0, &b, 1, 5, 7).unwrap();
        assert_eq!(h.values, vec![0.0; 35]);
    }

    #[test]
    fn same_size_resample_is_identity() {
        let mut v = bilinear_resize(&[0.0, 1.0, 0.0, 1.0], 2, 2, 2, 2);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0]);
        normalize_min_max(&mut v);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn upsampled_corner_matches_hand_weights() {
        // Source coordinates along each axis are 0, 0.25, 0.75, 1.
        let mut v = bilinear_resize(&[0.0, 0.0, 0.0, 4.0], 2, 2, 4, 4);
        assert!((v[5] - 0.25).abs() < 1e-12);
        assert!((v[10] - 2.25).abs() < 1e-12);
        assert!((v[6] - 0.75).abs() < 1e-12);
        assert_eq!(v[15], 4.0);
        normalize_min_max(&mut v);
        assert!((v[5] - 0.0625).abs() < 1e-12);
        assert!((v[10] - 0.5625).abs() < 1e-12);
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn missing_spatial_maps_is_an_error() {
        let (mut b, _) = tiny();
        b.spatial_dims = None;
        assert!(matches!(rf_heatmap(0, &b, 0, 4, 4), Err(Error::NoSpatialMaps)));
    }

    #[test]
    fn pgm_layout() {
        let h = Heatmap {
            height: 1,
            width: 3,
            values: vec![0.0, 0.5, 1.0],
            filter: 0,
            image_index: 0,
            source_path: String::new(),
        };
        let mut buf = Vec::new();
        h.write_pgm(&mut buf).unwrap();
        assert_eq!(buf, b"P5\n3 1\n255\n\x00\x80\xff");
    }

    #[test]
    fn top_activating_images_by_class() {
        let (mut b, _) = tiny();
        b.images.push(ImageRecord {
            features: vec![2.0, 0.0, 0.0, 0.0],
            source_path: "img2.png".into(),
            ..b.images[1].clone()
        });
        let top = top_activating_images(&b, 0, 1, 5).unwrap();
        assert_eq!(top.iter().map(|t| t.image_index).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(top_activating_images(&b, 0, 0, 1).unwrap()[0].image_index, 0);
        assert!(top_activating_images(&b, 0, 3, 1).is_err());
    }
}
