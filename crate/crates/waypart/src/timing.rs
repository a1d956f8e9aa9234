//! Phase-timing model: `T = c0 + c1*u1 + ... + cn*un` with `u_i = U_1 * ... * U_i`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const RIDGE: f64 = 1e-12;
const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimingError {
    #[error("training set is rank deficient for a depth-{depth} model ({samples} samples)")]
    FitSingular { depth: usize, samples: usize },
    #[error("expected {expected} loop bounds, got {got}")]
    ArityError { expected: usize, got: usize },
    #[error("every observed time is zero; accuracy is undefined")]
    AccuracyUndefined,
    #[error("training sample {index} has {got} bounds, expected {expected}")]
    InconsistentSample { index: usize, expected: usize, got: usize },
    #[error("training sample {index} has invalid time {time}")]
    InvalidTime { index: usize, time: f64 },
}

/// Cumulative products of the loop bounds, outermost first.
pub fn make_features(bounds: &[u64]) -> Vec<f64> {
    bounds
        .iter()
        .scan(1.0f64, |acc, &b| {
            *acc *= b as f64;
            Some(*acc)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub bounds: Vec<u64>,
    pub observed_ns: f64,
}

impl TrainingSample {
    pub fn new(bounds: Vec<u64>, observed_ns: f64) -> Self {
        Self { bounds, observed_ns }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    /// `c0..cn`; the model depth is `coefficients.len() - 1`.
    pub coefficients: Vec<f64>,
    /// Root-mean-square error on the training set.
    pub fit_residual: f64,
}

impl TimingModel {
    pub fn new(coefficients: Vec<f64>) -> Self {
        assert!(!coefficients.is_empty(), "a timing model needs an intercept");
        Self { coefficients, fit_residual: 0.0 }
    }

    pub fn depth(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Unclamped `c . (1, u)`.
    pub fn evaluate(&self, bounds: &[u64]) -> Result<f64, TimingError> {
        if bounds.len() != self.depth() {
            return Err(TimingError::ArityError { expected: self.depth(), got: bounds.len() });
        }
        let u = make_features(bounds);
        Ok(self.coefficients[0] + self.coefficients[1..].iter().zip(&u).map(|(c, x)| c * x).sum::<f64>())
    }
}

/// Predicted phase duration in ns; negative predictions clamp to zero.
pub fn predict_phase_time(model: &TimingModel, bounds: &[u64]) -> Result<f64, TimingError> {
    Ok(model.evaluate(bounds)?.max(0.0))
}

/// Ordinary least squares over the cumulative-product features.
///
/// Solved through the normal equations on column-scaled features with a
/// tiny ridge, followed by one refinement step against the raw residual.
pub fn fit_timing(samples: &[TrainingSample]) -> Result<TimingModel, TimingError> {
    let depth = samples.first().map_or(0, |s| s.bounds.len());
    for (index, s) in samples.iter().enumerate() {
        if s.bounds.len() != depth {
            return Err(TimingError::InconsistentSample { index, expected: depth, got: s.bounds.len() });
        }
        if !s.observed_ns.is_finite() || s.observed_ns < 0.0 {
            return Err(TimingError::InvalidTime { index, time: s.observed_ns });
        }
    }
    let cols = depth + 1;
    let singular = TimingError::FitSingular { depth, samples: samples.len() };
    if samples.len() < cols {
        return Err(singular);
    }

    let rows: Vec<Vec<f64>> =
        samples.iter().map(|s| std::iter::once(1.0).chain(make_features(&s.bounds)).collect()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.observed_ns).collect();
    let scale: Vec<f64> = (0..cols).map(|j| rows.iter().map(|r| r[j].abs()).fold(0.0, f64::max)).collect();
    if scale.contains(&0.0) {
        return Err(singular);
    }
    let z: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&scale).map(|(x, s)| x / s).collect()).collect();

    let mut gram = vec![vec![0.0; cols]; cols];
    for r in &z {
        for i in 0..cols {
            for j in 0..cols {
                gram[i][j] += r[i] * r[j];
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += RIDGE;
    }
    let chol = cholesky(&gram).ok_or(singular)?;

    let project =
        |resid: &[f64]| -> Vec<f64> { (0..cols).map(|j| z.iter().zip(resid).map(|(r, e)| r[j] * e).sum()).collect() };
    let mut w = chol_solve(&chol, &project(&y));
    let resid: Vec<f64> = z.iter().zip(&y).map(|(r, yi)| yi - dot(r, &w)).collect();
    let dw = chol_solve(&chol, &project(&resid));
    for (wi, d) in w.iter_mut().zip(dw) {
        *wi += d;
    }

    let coefficients: Vec<f64> = w.iter().zip(&scale).map(|(wi, s)| wi / s).collect();
    let sse: f64 = z.iter().zip(&y).map(|(r, yi)| (yi - dot(r, &w)).powi(2)).sum();
    Ok(TimingModel { coefficients, fit_residual: (sse / samples.len() as f64).sqrt() })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular factor, or `None` when a pivot collapses.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let max_diag = (0..n).map(|i| a[i][i]).fold(0.0, f64::max);
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= PIVOT_TOLERANCE * max_diag {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

/// Mean relative accuracy in percent, skipping samples observed at zero.
pub fn timing_accuracy(model: &TimingModel, tests: &[TrainingSample]) -> Result<f64, TimingError> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for s in tests {
        let predicted = predict_phase_time(model, &s.bounds)?;
        if s.observed_ns == 0.0 {
            continue;
        }
        total += (1.0 - (predicted - s.observed_ns).abs() / s.observed_ns).max(0.0);
        counted += 1;
    }
    if counted == 0 {
        return Err(TimingError::AccuracyUndefined);
    }
    Ok(total / counted as f64 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_are_cumulative_products() {
        assert_eq!(make_features(&[10, 20]), vec![10.0, 200.0]);
        assert_eq!(make_features(&[1, 1, 1]), vec![1.0, 1.0, 1.0]);
        assert_eq!(make_features(&[0, 5]), vec![0.0, 0.0]);
        assert!(make_features(&[]).is_empty());
    }

    #[test]
    fn exact_line() {
        let samples: Vec<_> = (1..=3).map(|u| TrainingSample::new(vec![u], 2.0 + 3.0 * u as f64)).collect();
        let m = fit_timing(&samples).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((m.coefficients[1] - 3.0).abs() < 1e-9);
        assert!(m.fit_residual < 1e-9);
    }

    #[test]
    fn duplicate_samples_are_singular() {
        let samples = vec![TrainingSample::new(vec![4], 9.0), TrainingSample::new(vec![4], 9.0)];
        assert!(matches!(fit_timing(&samples), Err(TimingError::FitSingular { .. })));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(fit_timing(&[TrainingSample::new(vec![4, 2], 1.0)]), Err(TimingError::FitSingular { .. })));
    }

    #[test]
    fn prediction() {
        let m = TimingModel::new(vec![1.0, 0.5, 0.01]);
        assert!((predict_phase_time(&m, &[10, 20]).unwrap() - 8.0).abs() < 1e-12);
        assert_eq!(predict_phase_time(&TimingModel::new(vec![5.0]), &[]).unwrap(), 5.0);
        assert_eq!(predict_phase_time(&TimingModel::new(vec![-10.0, 0.1]), &[10]).unwrap(), 0.0);
        assert_eq!(predict_phase_time(&m, &[1]), Err(TimingError::ArityError { expected: 2, got: 1 }));
    }

    #[test]
    fn accuracy() {
        let m = TimingModel::new(vec![0.0, 1.0]);
        let same = vec![TrainingSample::new(vec![10], 10.0), TrainingSample::new(vec![5], 5.0)];
        assert_eq!(timing_accuracy(&m, &same).unwrap(), 100.0);
        let half = TimingModel::new(vec![0.0, 0.5]);
        assert!((timing_accuracy(&half, &same).unwrap() - 50.0).abs() < 1e-12);
        let mixed = vec![TrainingSample::new(vec![9], 10.0), TrainingSample::new(vec![10], 10.0)];
        assert!((timing_accuracy(&m, &mixed).unwrap() - 95.0).abs() < 1e-12);
        assert_eq!(timing_accuracy(&m, &[TrainingSample::new(vec![3], 0.0)]), Err(TimingError::AccuracyUndefined));
    }
}
