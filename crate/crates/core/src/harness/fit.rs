use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Least-squares line through `(ln T, ln error)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% half-width of the slope across seeds; 0 without seed replicates.
    pub half_width: f64,
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn log_points(points: &[(usize, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(t, e) in points {
        if t == 0 {
            return Err(Error::invalid("trajectory length must be positive"));
        }
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::invalid(format!("error {e} at T = {t} is not positive")));
        }
        xs.push((t as f64).ln());
        ys.push(e.ln());
    }
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::invalid("rate fit needs at least two distinct T values"));
    }
    Ok((xs, ys))
}

/// Fits `ln error = slope·ln T + intercept`.
pub fn rate_fit(points: &[(usize, f64)]) -> Result<RateFit> {
    let (xs, ys) = log_points(points)?;
    let (slope, intercept) = ols(&xs, &ys);
    Ok(RateFit { slope, intercept, half_width: 0.0 })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median error per `T` across seeds, fitted by [`rate_fit`]; the slope
/// half-width is the Student-t 95% interval of the per-seed slopes.
///
/// Returns the fit and the per-seed slopes.
pub fn rate_fit_seeds(points: &[(usize, u64, f64)]) -> Result<(RateFit, Vec<(u64, f64)>)> {
    let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut by_seed: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    for &(t, seed, e) in points {
        by_t.entry(t).or_default().push(e);
        by_seed.entry(seed).or_default().push((t, e));
    }
    let medians: Vec<(usize, f64)> = by_t.into_iter().map(|(t, mut es)| (t, median(&mut es))).collect();
    let mut fit = rate_fit(&medians)?;
    let seed_slopes: Vec<(u64, f64)> =
        by_seed.into_iter().filter_map(|(seed, pts)| rate_fit(&pts).ok().map(|f| (seed, f.slope))).collect();
    let n = seed_slopes.len();
    if n >= 2 {
        let mean = seed_slopes.iter().map(|s| s.1).sum::<f64>() / n as f64;
        let var = seed_slopes.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?.inverse_cdf(0.975);
        fit.half_width = t * var.sqrt() / (n as f64).sqrt();
    }
    Ok((fit, seed_slopes))
}
