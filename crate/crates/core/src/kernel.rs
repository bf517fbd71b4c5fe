//! Proximity weights for perturbation samples.

use crate::error::{Error, Result};
use crate::model::CombineRule;
use crate::perturb::{Mask, PerturbationBatch};

/// `1 - a·b / (|a| |b|)` on binary masks. A zero `b` is at distance 1.
pub fn cosine_distance(a: &Mask, b: &Mask) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "cosine_distance: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    let na = a.count_active();
    let nb = b.count_active();
    if na == 0 {
        return Err(Error::Argument(
            "cosine_distance: reference mask must not be all zeros".into(),
        ));
    }
    if nb == 0 {
        return Ok(1.0);
    }
    let dot = a
        .bits()
        .iter()
        .zip(b.bits())
        .filter(|(x, y)| **x && **y)
        .count();
    // sqrt of an exact integer product keeps identical masks at exactly 0
    let sim = dot as f64 / ((na as f64) * (nb as f64)).sqrt();
    Ok((1.0 - sim).clamp(0.0, 1.0))
}

/// `exp(-d² / σ²)`, floored at the smallest positive normal so weights stay
/// strictly positive for very narrow kernels.
pub fn kernel_weight(distance: f64, width: f64) -> Result<f64> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::Argument(format!("kernel width must be > 0 (got {width})")));
    }
    if !(0.0..=1.0).contains(&distance) {
        return Err(Error::Argument(format!(
            "distance must be in [0, 1] (got {distance})"
        )));
    }
    Ok((-(distance * distance) / (width * width))
        .exp()
        .max(f64::MIN_POSITIVE))
}

fn check_unit(w: f64) -> Result<()> {
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::Argument(format!("weight must be in (0, 1] (got {w})")));
    }
    Ok(())
}

/// Sum of the two modality weights, halved back into (0, 1].
pub fn combine_modal_weights(w_text: f64, w_visual: f64) -> Result<f64> {
    check_unit(w_text)?;
    check_unit(w_visual)?;
    Ok((w_text + w_visual) / 2.0)
}

/// Kernel weight of every row of `batch` against the all-ones original.
pub fn batch_weights(batch: &PerturbationBatch, width: f64) -> Result<Vec<f64>> {
    let reference = Mask::ones(batch.feature_count());
    batch
        .masks()
        .iter()
        .map(|m| kernel_weight(cosine_distance(&reference, m)?, width))
        .collect()
}

/// Combines paired per-modality weights under `rule`.
///
/// `BatchMinMax` rescales the summed weights to `[min, max] -> [0, 1]` over
/// the batch, floored at the smallest positive normal; when all sums are
/// equal every weight is 1.
pub fn combine_batch(text: &[f64], visual: &[f64], rule: CombineRule) -> Result<Vec<f64>> {
    if text.len() != visual.len() {
        return Err(Error::Argument(format!(
            "weight vectors differ in length: {} vs {}",
            text.len(),
            visual.len()
        )));
    }
    match rule {
        CombineRule::Halve => text
            .iter()
            .zip(visual)
            .map(|(t, v)| combine_modal_weights(*t, *v))
            .collect(),
        CombineRule::BatchMinMax => {
            for w in text.iter().chain(visual) {
                check_unit(*w)?;
            }
            let sums: Vec<f64> = text.iter().zip(visual).map(|(t, v)| t + v).collect();
            let lo = sums.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                return Ok(vec![1.0; sums.len()]);
            }
            Ok(sums
                .iter()
                .map(|s| ((s - lo) / (hi - lo)).max(f64::MIN_POSITIVE))
                .collect())
        }
    }
}
