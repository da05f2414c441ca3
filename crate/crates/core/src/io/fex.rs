//! FEX1 feature bundles.
//!
//! ```text
//! "FEX1" | u32 version=1 | u32 n | u32 C | u32 m | u32 hs | u32 ws
//! m x { u32 true_label | u32 inferred_label | u16 path_len | path (UTF-8)
//!       | f32 x n features | (hs > 0) f32 x (hs*ws*n) spatial (row, col, filter) }
//! ```

use std::io::{Read, Write};

use super::bytes::{to_u32, ByteReader, CountingWriter};
use crate::bundle::{spatial_mean_matches, spatial_means, FeatureBundle, ImageRecord, ValidationOptions};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FEX1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

pub fn write_feature_bundle<W: Write>(bundle: &FeatureBundle, sink: W) -> Result<usize> {
    bundle.validate()?;
    let (hs, ws) = bundle.spatial_dims.unwrap_or((0, 0));
    let mut w = CountingWriter::new(sink);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(to_u32(bundle.n_filters, "filter count")?)?;
    w.u32(to_u32(bundle.n_classes, "class count")?)?;
    w.u32(to_u32(bundle.len(), "image count")?)?;
    w.u32(to_u32(hs, "spatial height")?)?;
    w.u32(to_u32(ws, "spatial width")?)?;
    for img in &bundle.images {
        w.u32(img.true_label as u32)?;
        w.u32(img.inferred_label as u32)?;
        let path = img.source_path.as_bytes();
        let len = u16::try_from(path.len()).map_err(|_| {
            Error::Invariant(format!("source path of {} bytes exceeds u16", path.len()))
        })?;
        w.u16(len)?;
        w.bytes(path)?;
        w.f32_slice(&img.features)?;
        if let Some(s) = &img.spatial {
            w.f32_slice(s)?;
        }
    }
    w.finish()
}

pub fn read_feature_bundle<R: Read>(mut source: R) -> Result<FeatureBundle> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    decode_feature_bundle(&buf, ValidationOptions::default())
}

pub fn decode_feature_bundle(buf: &[u8], opts: ValidationOptions) -> Result<FeatureBundle> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.u32()? as usize;
    let c = r.u32()? as usize;
    let header_at = r.offset();
    let m = r.u32()? as usize;
    let hs = r.u32()? as usize;
    let ws = r.u32()? as usize;
    if n == 0 || c == 0 {
        return Err(Error::Malformed {
            offset: 8,
            reason: format!("filter count {n} and class count {c} must be positive"),
        });
    }
    if (hs == 0) != (ws == 0) {
        return Err(Error::Malformed {
            offset: header_at + 4,
            reason: format!("spatial dims {hs}x{ws} must both be zero or both positive"),
        });
    }
    let cells = hs * ws;
    // Smallest possible record: labels + path length + features (+ spatial).
    let min_record = 10 + 4 * n * (1 + cells);
    r.require(m, min_record)?;

    let mut images = Vec::with_capacity(m);
    for _ in 0..m {
        let true_label = read_label(&mut r, c)?;
        let inferred_label = read_label(&mut r, c)?;
        let path_len = r.u16()? as usize;
        let path_at = r.offset();
        let source_path = std::str::from_utf8(r.take(path_len)?)
            .map_err(|e| Error::Malformed {
                offset: path_at,
                reason: format!("source path is not UTF-8: {e}"),
            })?
            .to_owned();
        let features_at = r.offset();
        let features = r.f32_vec(n)?;
        check_non_negative(&features, features_at, opts)?;
        let spatial = if cells > 0 {
            let spatial_at = r.offset();
            let maps = r.f32_vec(cells * n)?;
            check_non_negative(&maps, spatial_at, opts)?;
            for (k, (mean, g)) in spatial_means(&maps, n, cells).into_iter().zip(&features).enumerate() {
                if !spatial_mean_matches(mean, *g) {
                    return Err(Error::Malformed {
                        offset: features_at + 4 * k,
                        reason: format!("spatial mean {mean} disagrees with feature {g} for filter {k}"),
                    });
                }
            }
            Some(maps)
        } else {
            None
        };
        images.push(ImageRecord {
            true_label,
            inferred_label,
            features,
            spatial,
            source_path,
        });
    }
    r.finish()?;
    Ok(FeatureBundle {
        n_filters: n,
        n_classes: c,
        spatial_dims: (cells > 0).then_some((hs, ws)),
        images,
    })
}

fn read_label(r: &mut ByteReader<'_>, classes: usize) -> Result<usize> {
    let offset = r.offset();
    let label = r.u32()? as usize;
    if label >= classes {
        return Err(Error::Malformed {
            offset,
            reason: format!("label {label} out of range for {classes} classes"),
        });
    }
    Ok(label)
}

fn check_non_negative(values: &[f64], base: usize, opts: ValidationOptions) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        if opts.allow_negative {
            log::warn!("negative feature value {v} at offset {}", base + 4 * i);
        } else {
            return Err(Error::Malformed {
                offset: base + 4 * i,
                reason: format!("negative feature value {v}"),
            });
        }
    }
    Ok(())
}
