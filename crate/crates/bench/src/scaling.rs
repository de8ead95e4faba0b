use anyhow::{ensure, Result};

use crate::spec::BenchRecord;

/// Least-squares slope of `ln(median_seconds)` against `ln(N)` over the
/// successful records.
pub fn fit_scaling_exponent(records: &[BenchRecord]) -> Result<f64> {
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.is_ok() && r.median_seconds > 0.0)
        .map(|r| (r.n as f64, r.median_seconds))
        .collect();
    fit_log_log(&points)
}

/// Slope of `ln(y)` against `ln(x)`; needs at least three distinct `x`.
pub fn fit_log_log(points: &[(f64, f64)]) -> Result<f64> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ensure!(xs.len() >= 3, "need at least 3 distinct N, got {}", xs.len());
    ensure!(
        points.iter().all(|&(x, y)| x > 0.0 && y > 0.0),
        "log-log fit needs positive values"
    );
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
