use serde::Serialize;

use super::RunHistory;
use crate::error::{ApdError, Result};

/// Minimum number of usable rows for [`fit_rate`].
pub const MIN_FIT_ROWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Ordinary least squares `y = slope * x + intercept`, returning
/// `(slope, intercept, r_squared)`.
pub fn least_squares_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(ApdError::Fit(format!(
            "need at least two paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(ApdError::Fit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok((slope, intercept, r2))
}

/// Log-log fit of the objective gap against the step column over
/// `window = (start, end)`, inclusive. Only rows with a positive gap count.
pub fn fit_rate(history: &RunHistory, window: (f64, f64)) -> Result<RateFit> {
    let (start, end) = window;
    if !(start > 0.0 && end >= start) {
        return Err(ApdError::Fit(format!("bad window ({start}, {end})")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in &history.rows {
        if r.step < start || r.step > end {
            continue;
        }
        if let Some(g) = r.objective_gap {
            if g > 0.0 && g.is_finite() {
                xs.push(r.step.ln());
                ys.push(g.ln());
            }
        }
    }
    if xs.len() < MIN_FIT_ROWS {
        return Err(ApdError::Fit(format!(
            "{} rows with positive gap in [{start}, {end}], need {MIN_FIT_ROWS}",
            xs.len()
        )));
    }
    let (slope, intercept, r_squared) = least_squares_line(&xs, &ys)?;
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        window,
        points: xs.len(),
    })
}
