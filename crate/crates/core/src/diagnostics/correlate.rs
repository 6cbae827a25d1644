use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::DiagnosticsError;
use crate::image_metrics::ImageMetrics;
use crate::trajectory_metrics::ErrorSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// Pearson coefficient; 0 when `undefined`.
    pub r: f64,
    /// One of the series has zero variance.
    pub undefined: bool,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return Correlation { r: 0.0, undefined: true };
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Correlation { r: 0.0, undefined: true };
    }
    Correlation { r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0), undefined: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub timestamp_ns: u64,
    pub error_m: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub tenengrad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub rows: Vec<CorrelationRow>,
    pub brightness: Correlation,
    pub contrast: Correlation,
    pub tenengrad: Correlation,
}

/// Joins per-frame ATE residuals with image metrics by timestamp, restricted to
/// the inclusive timestamp `window` when given, and correlates each metric with
/// the error.
pub fn correlate(
    errors: &ErrorSeries,
    metrics: &HashMap<u64, ImageMetrics>,
    window: Option<(u64, u64)>,
) -> Result<CorrelationTable, DiagnosticsError> {
    let rows: Vec<CorrelationRow> = errors
        .records
        .iter()
        .filter(|r| window.is_none_or(|(a, b)| a <= r.timestamp_ns && r.timestamp_ns <= b))
        .filter_map(|r| {
            metrics.get(&r.timestamp_ns).map(|m| CorrelationRow {
                timestamp_ns: r.timestamp_ns,
                error_m: r.ate_residual_m,
                brightness: m.brightness,
                contrast: m.contrast,
                tenengrad: m.tenengrad,
            })
        })
        .collect();
    if rows.len() < 2 {
        return Err(DiagnosticsError::InsufficientData(format!("{} overlapping rows, need 2", rows.len())));
    }
    let err: Vec<f64> = rows.iter().map(|r| r.error_m).collect();
    let col = |f: fn(&CorrelationRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(CorrelationTable {
        brightness: pearson(&col(|r| r.brightness), &err),
        contrast: pearson(&col(|r| r.contrast), &err),
        tenengrad: pearson(&col(|r| r.tenengrad), &err),
        rows,
    })
}
