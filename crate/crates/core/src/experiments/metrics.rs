//! Multi-class F1 computation.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Micro,
    Macro,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction/gold length mismatch: {predictions} vs {gold}")]
    LengthMismatch { predictions: usize, gold: usize },
}

/// Standard multi-class F1 over aligned prediction/gold label lists.
///
/// Micro-averaged F1 over single-label decisions reduces to accuracy.
/// Macro averaging uses the zero-support convention: classes absent from
/// both gold and predictions are excluded from the average; classes that
/// occur on only one side contribute an F1 of 0.
pub fn compute_f1(
    predictions: &[u32],
    gold: &[u32],
    averaging: Averaging,
) -> Result<f64, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    match averaging {
        Averaging::Micro => {
            // One prediction per decision: global TP equals the number of
            // exact matches, and FP = FN, so micro F1 = accuracy.
            let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
            Ok(correct as f64 / predictions.len() as f64)
        }
        Averaging::Macro => {
            let mut classes: Vec<u32> = predictions.iter().chain(gold).copied().collect();
            classes.sort_unstable();
            classes.dedup();
            let mut total = 0.0;
            for &class in &classes {
                let mut tp = 0usize;
                let mut fp = 0usize;
                let mut fne = 0usize;
                for (p, g) in predictions.iter().zip(gold) {
                    match (*p == class, *g == class) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fne += 1,
                        _ => {}
                    }
                }
                let denom = 2 * tp + fp + fne;
                total += if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
            }
            Ok(total / classes.len() as f64)
        }
    }
}
