//! Ground truth for tiny instances: exhaustive minimum sufficient masks and
//! closed-form minimum single-coordinate additions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, ClassifierHead};

/// Largest `n` accepted by [`min_sufficient_mask`].
pub const MAX_ENUMERATION_FILTERS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub feasible: bool,
    /// Optimal binary mask (mask search only).
    pub mask: Option<Vec<f64>>,
    /// Optimal coordinate and amount (single-addition search only).
    pub coordinate: Option<usize>,
    pub amount: Option<f64>,
    /// Mask cardinality or addition amount; `NaN` when infeasible.
    pub objective: f64,
    pub enumerated: u64,
}

/// Minimum-cardinality binary mask whose masked logits still pick `target`.
///
/// Ties on cardinality go to the larger target logit, then to the
/// lexicographically smallest 0/1 vector.
pub fn min_sufficient_mask(g: &[f64], classifier: &ClassifierHead, target: usize) -> Result<OracleResult> {
    let n = classifier.n_filters;
    if n > MAX_ENUMERATION_FILTERS {
        return Err(Error::InvalidArgument(format!(
            "mask enumeration needs n <= {MAX_ENUMERATION_FILTERS}, got {n}"
        )));
    }
    crate::model::check_len("feature vector", n, g.len())?;
    if target >= classifier.n_classes {
        return Err(Error::OutOfRange {
            what: "target class",
            index: target,
            limit: classifier.n_classes,
        });
    }
    let total = 1u64 << n;
    // (cardinality, target logit, mask as a 0/1 vector)
    let mut best: Option<(u32, f64, Vec<u8>)> = None;
    let mut h = vec![0.0; n];
    for bits in 0..total {
        for (k, hk) in h.iter_mut().enumerate() {
            *hk = if bits >> k & 1 == 1 { g[k] } else { 0.0 };
        }
        let z = classifier.logits_unchecked(&h);
        if argmax(&z) != target {
            continue;
        }
        let card = bits.count_ones();
        let vector: Vec<u8> = (0..n).map(|k| (bits >> k & 1) as u8).collect();
        let better = match &best {
            None => true,
            Some((bc, bz, bv)) => {
                card < *bc || (card == *bc && (z[target] > *bz || (z[target] == *bz && vector < *bv)))
            }
        };
        if better {
            best = Some((card, z[target], vector));
        }
    }
    Ok(match best {
        Some((card, _, vector)) => OracleResult {
            feasible: true,
            mask: Some(vector.into_iter().map(f64::from).collect()),
            coordinate: None,
            amount: None,
            objective: f64::from(card),
            enumerated: total,
        },
        None => OracleResult {
            feasible: false,
            mask: None,
            coordinate: None,
            amount: None,
            objective: f64::NAN,
            enumerated: total,
        },
    })
}

/// Smallest `delta >= 0` added to a single filter that makes `alter` the
/// top class; `delta` is the boundary value, so any larger amount flips.
///
/// A coordinate is infeasible when some competitor can never be overtaken,
/// or when overtaking the leaders would let another class overtake `alter`.
pub fn min_single_addition(g: &[f64], classifier: &ClassifierHead, alter: usize) -> Result<OracleResult> {
    let z = classifier.logits(g)?;
    let c = classifier.n_classes;
    if alter >= c {
        return Err(Error::OutOfRange {
            what: "alter class",
            index: alter,
            limit: c,
        });
    }
    if argmax(&z) == alter {
        return Err(Error::InvalidArgument(format!(
            "class {alter} is already the prediction"
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for k in 0..classifier.n_filters {
        let mut lower = 0.0f64;
        let mut upper = f64::INFINITY;
        let mut feasible = true;
        for j in (0..c).filter(|&j| j != alter) {
            let gap = z[j] - z[alter];
            let den = classifier.weight(k, alter) - classifier.weight(k, j);
            if den > 0.0 {
                lower = lower.max(gap / den);
            } else if gap >= 0.0 {
                feasible = false;
                break;
            } else if den < 0.0 {
                upper = upper.min(gap / den);
            }
        }
        if !feasible || lower >= upper {
            continue;
        }
        if best.is_none_or(|(_, d)| lower < d) {
            best = Some((k, lower));
        }
    }
    let enumerated = classifier.n_filters as u64;
    Ok(match best {
        Some((k, delta)) => OracleResult {
            feasible: true,
            mask: None,
            coordinate: Some(k),
            amount: Some(delta),
            objective: delta,
            enumerated,
        },
        None => OracleResult {
            feasible: false,
            mask: None,
            coordinate: None,
            amount: None,
            objective: f64::NAN,
            enumerated,
        },
    })
}
