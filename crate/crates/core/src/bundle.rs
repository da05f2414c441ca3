//! Per-image GAP features exported from a frozen backbone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the spatial-mean consistency check.
pub const SPATIAL_MEAN_RTOL: f64 = 1e-4;

/// One exported image: post-GAP features plus labels and an optional copy of
/// the final convolution maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub true_label: usize,
    pub inferred_label: usize,
    /// Post-ReLU GAP output, one entry per filter.
    pub features: Vec<f64>,
    /// Spatial maps in (row, col, filter) order, `hs * ws * n` entries.
    pub spatial: Option<Vec<f64>>,
    pub source_path: String,
}

/// How strictly loaded features are validated.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationOptions {
    /// Downgrade negative feature values from an error to a warning. Only
    /// useful for backbones whose final block is not ReLU-terminated.
    pub allow_negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub n_filters: usize,
    pub n_classes: usize,
    /// `(hs, ws)` when spatial maps are present.
    pub spatial_dims: Option<(usize, usize)>,
    pub images: Vec<ImageRecord>,
}

impl FeatureBundle {
    pub fn new(n_filters: usize, n_classes: usize) -> Self {
        Self {
            n_filters,
            n_classes,
            spatial_dims: None,
            images: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.images[index].features
    }

    pub fn image(&self, index: usize) -> Result<&ImageRecord> {
        self.images.get(index).ok_or(Error::OutOfRange {
            what: "image",
            index,
            limit: self.images.len(),
        })
    }

    /// Spatial slice `(hs, ws)` of one filter, row-major.
    pub fn spatial_slice(&self, index: usize, filter: usize) -> Result<(usize, usize, Vec<f64>)> {
        let (hs, ws) = self.spatial_dims.ok_or(Error::NoSpatialMaps)?;
        if filter >= self.n_filters {
            return Err(Error::OutOfRange {
                what: "filter",
                index: filter,
                limit: self.n_filters,
            });
        }
        let maps = self.image(index)?.spatial.as_ref().ok_or(Error::NoSpatialMaps)?;
        let n = self.n_filters;
        let slice = (0..hs * ws).map(|cell| maps[cell * n + filter]).collect();
        Ok((hs, ws, slice))
    }

    /// Copies the selected images, in the given order, into a new bundle.
    pub fn subset(&self, indices: &[usize]) -> Result<FeatureBundle> {
        let mut out = FeatureBundle {
            n_filters: self.n_filters,
            n_classes: self.n_classes,
            spatial_dims: self.spatial_dims,
            images: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            out.images.push(self.image(i)?.clone());
        }
        Ok(out)
    }

    /// Rounds every stored value to f32 precision, i.e. what a FEX1 round
    /// trip would produce.
    pub fn quantize(&mut self) {
        for img in &mut self.images {
            quantize_in_place(&mut img.features);
            if let Some(s) = img.spatial.as_mut() {
                quantize_in_place(s);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(ValidationOptions::default())
    }

    pub fn validate_with(&self, opts: ValidationOptions) -> Result<()> {
        if self.n_filters == 0 || self.n_classes == 0 {
            return Err(Error::Invariant(
                "filter and class counts must be positive".into(),
            ));
        }
        if let Some((hs, ws)) = self.spatial_dims {
            if hs == 0 || ws == 0 {
                return Err(Error::Invariant(format!(
                    "spatial dims must both be positive, got {hs}x{ws}"
                )));
            }
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.true_label >= self.n_classes || img.inferred_label >= self.n_classes {
                return Err(Error::Invariant(format!(
                    "image {i}: label out of range for {} classes",
                    self.n_classes
                )));
            }
            if img.features.len() != self.n_filters {
                return Err(Error::DimensionMismatch {
                    what: "feature vector",
                    expected: self.n_filters,
                    found: img.features.len(),
                });
            }
            for (k, &v) in img.features.iter().enumerate() {
                check_feature_value(v, opts, || format!("image {i}, filter {k}"))?;
            }
            self.validate_spatial(i, img, opts)?;
        }
        Ok(())
    }

    fn validate_spatial(&self, i: usize, img: &ImageRecord, opts: ValidationOptions) -> Result<()> {
        match (self.spatial_dims, img.spatial.as_ref()) {
            (None, None) => Ok(()),
            (None, Some(_)) | (Some(_), None) => Err(Error::Invariant(format!(
                "image {i}: spatial maps must be present on all images or none"
            ))),
            (Some((hs, ws)), Some(maps)) => {
                let n = self.n_filters;
                if maps.len() != hs * ws * n {
                    return Err(Error::DimensionMismatch {
                        what: "spatial maps",
                        expected: hs * ws * n,
                        found: maps.len(),
                    });
                }
                for &v in maps {
                    check_feature_value(v, opts, || format!("image {i} spatial map"))?;
                }
                let means = spatial_means(maps, n, hs * ws);
                for (k, (&mean, &g)) in means.iter().zip(&img.features).enumerate() {
                    if !spatial_mean_matches(mean, g) {
                        return Err(Error::Invariant(format!(
                            "image {i}, filter {k}: spatial mean {mean} disagrees with feature {g}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

fn check_feature_value(v: f64, opts: ValidationOptions, at: impl Fn() -> String) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Invariant(format!("{}: non-finite value {v}", at())));
    }
    if v < 0.0 {
        if opts.allow_negative {
            log::warn!("{}: negative feature value {v}", at());
        } else {
            return Err(Error::Invariant(format!("{}: negative feature value {v}", at())));
        }
    }
    Ok(())
}

/// Per-filter mean over `cells` spatial positions of a (cell, filter) array.
pub fn spatial_means(maps: &[f64], n_filters: usize, cells: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n_filters];
    for cell in maps.chunks_exact(n_filters) {
        for (s, &v) in sums.iter_mut().zip(cell) {
            *s += v;
        }
    }
    sums.iter().map(|s| s / cells as f64).collect()
}

/// Relative comparison with a tiny absolute floor so that all-zero channels
/// compare equal to a zero feature.
pub fn spatial_mean_matches(mean: f64, feature: f64) -> bool {
    let scale = mean.abs().max(feature.abs());
    (mean - feature).abs() <= SPATIAL_MEAN_RTOL * scale + 1e-12
}

pub(crate) fn quantize_in_place(values: &mut [f64]) {
    for v in values {
        *v = f64::from(*v as f32);
    }
}
