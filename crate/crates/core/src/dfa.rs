//! Detrended fluctuation analysis.
//!
//! For each channel the demeaned signal is integrated into a profile, the
//! profile is cut into non-overlapping windows of each scale (the trailing
//! remainder is dropped), a least-squares line is removed from each window and
//! the RMS of the residuals is averaged over windows to give `F(s)`. The Hurst
//! exponent is the slope of `ln F(s)` against `ln s`. A trial's channel-mean
//! exponent is then passed through a Gaussian tuning curve centred on
//! `h_opt`.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::PreprocessedTrial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfaConfig {
    pub window_sizes: Vec<usize>,
    pub h_opt: f64,
    pub sigma_h: f64,
}

impl Default for DfaConfig {
    fn default() -> Self {
        Self {
            window_sizes: vec![4, 8, 16, 32],
            h_opt: 0.7,
            sigma_h: 0.15,
        }
    }
}

impl DfaConfig {
    /// Checks the configuration for series of length `t`.
    pub fn validate(&self, t: usize) -> Result<()> {
        let sizes = &self.window_sizes;
        if sizes.len() < 2 {
            return Err(Error::Config(
                "at least two window sizes are needed for a log-log slope".into(),
            ));
        }
        if sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "window sizes must be strictly increasing: {sizes:?}"
            )));
        }
        if sizes[0] < 4 {
            return Err(Error::Config(format!(
                "smallest window {} is below 4",
                sizes[0]
            )));
        }
        let largest = *sizes.last().unwrap();
        if largest > t / 2 {
            return Err(Error::Config(format!(
                "largest window {largest} exceeds T/2 = {}",
                t / 2
            )));
        }
        if !(self.sigma_h > 0.0 && self.sigma_h.is_finite()) {
            return Err(Error::Config(format!("sigma_h must be positive, got {}", self.sigma_h)));
        }
        if !self.h_opt.is_finite() {
            return Err(Error::Config("h_opt must be finite".into()));
        }
        Ok(())
    }
}

/// Fluctuation function and slope for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDfa {
    pub h: f64,
    /// `(s, F(s))` for every configured scale.
    pub fluctuations: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfaResult {
    pub per_channel_h: Vec<f64>,
    pub h_raw: f64,
    pub h_eff: f64,
    /// `F_i(s)`, channels by scales.
    pub fluctuation_table: Array2<f64>,
}

/// Residual RMS of a least-squares line through `y` at abscissae `0..n`.
fn detrended_rms(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (v - y_mean);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let ss: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let r = v - (y_mean + slope * (i as f64 - x_mean));
            r * r
        })
        .sum();
    (ss / n).sqrt()
}

/// Ordinary least-squares slope of `y` on `x`.
pub(crate) fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let x_mean = x.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let (sxy, sxx) = x.iter().zip(y).fold((0.0, 0.0), |(sxy, sxx), (&a, &b)| {
        (sxy + (a - x_mean) * (b - y_mean), sxx + (a - x_mean) * (a - x_mean))
    });
    sxy / sxx
}

pub fn dfa_channel(signal: &[f64], config: &DfaConfig) -> Result<ChannelDfa> {
    let t = signal.len();
    config.validate(t)?;

    let mean = signal.iter().sum::<f64>() / t as f64;
    let variance = signal.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t as f64;
    if !(variance > 0.0) {
        return Err(Error::DegenerateSignal("signal has zero variance".into()));
    }
    let profile: Vec<f64> = signal
        .iter()
        .scan(0.0, |acc, &x| {
            *acc += x - mean;
            Some(*acc)
        })
        .collect();

    let mut fluctuations = Vec::with_capacity(config.window_sizes.len());
    for &s in &config.window_sizes {
        let windows = t / s;
        let total: f64 = profile.chunks_exact(s).map(detrended_rms).sum();
        let f = total / windows as f64;
        if !(f > 0.0) {
            return Err(Error::DegenerateSignal(format!(
                "fluctuation at scale {s} is zero (profile is piecewise linear)"
            )));
        }
        fluctuations.push((s, f));
    }

    let log_s: Vec<f64> = fluctuations.iter().map(|&(s, _)| (s as f64).ln()).collect();
    let log_f: Vec<f64> = fluctuations.iter().map(|&(_, f)| f.ln()).collect();
    Ok(ChannelDfa {
        h: ols_slope(&log_s, &log_f),
        fluctuations,
    })
}

/// Mean summed in ascending value order, so it is independent of both
/// scheduling and channel order.
pub(crate) fn order_free_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Tuning curve `exp(-(h - h_opt)^2 / (2 sigma^2))`.
pub fn gaussian_tuning(h_raw: f64, h_opt: f64, sigma_h: f64) -> f64 {
    debug_assert!(sigma_h > 0.0);
    let d = h_raw - h_opt;
    (-(d * d) / (2.0 * sigma_h * sigma_h)).exp()
}

pub fn dfa_trial(trial: &PreprocessedTrial, config: &DfaConfig) -> Result<DfaResult> {
    let data = trial.data();
    config.validate(data.nrows())?;
    let columns: Vec<Vec<f64>> = data.axis_iter(Axis(1)).map(|c| c.to_vec()).collect();
    let per_channel: Vec<ChannelDfa> = columns
        .par_iter()
        .enumerate()
        .map(|(j, col)| dfa_channel(col, config).map_err(|e| e.in_channel(j)))
        .collect::<Result<_>>()?;

    let n_scales = config.window_sizes.len();
    let mut table = Array2::zeros((per_channel.len(), n_scales));
    for (j, ch) in per_channel.iter().enumerate() {
        for (k, &(_, f)) in ch.fluctuations.iter().enumerate() {
            table[[j, k]] = f;
        }
    }
    let per_channel_h: Vec<f64> = per_channel.iter().map(|c| c.h).collect();
    let h_raw = order_free_mean(&per_channel_h);
    Ok(DfaResult {
        h_eff: gaussian_tuning(h_raw, config.h_opt, config.sigma_h),
        per_channel_h,
        h_raw,
        fluctuation_table: table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuning_values() {
        assert_eq!(gaussian_tuning(0.7, 0.7, 0.15), 1.0);
        let e = (-0.5f64).exp();
        assert!((gaussian_tuning(0.85, 0.7, 0.15) - e).abs() < 1e-12);
        assert!((gaussian_tuning(0.55, 0.7, 0.15) - e).abs() < 1e-12);
        assert!((e - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        let ok = DfaConfig::default();
        assert!(ok.validate(256).is_ok());
        assert!(ok.validate(63).is_err());
        assert!(ok.validate(64).is_ok());
        let mut bad = DfaConfig::default();
        bad.window_sizes = vec![4, 4, 8];
        assert!(bad.validate(256).is_err());
        bad.window_sizes = vec![2, 8];
        assert!(bad.validate(256).is_err());
        bad.window_sizes = vec![8];
        assert!(bad.validate(256).is_err());
        let mut bad = DfaConfig::default();
        bad.sigma_h = 0.0;
        assert!(bad.validate(256).is_err());
    }

    #[test]
    fn detrend_removes_lines_exactly() {
        let line: Vec<f64> = (0..8).map(|i| 3.0 - 0.5 * i as f64).collect();
        assert!(detrended_rms(&line) < 1e-12);
        // fit 0.2 + 0.2 i, residuals -0.2, 0.6, -0.6, 0.2
        assert!((detrended_rms(&[0.0, 1.0, 0.0, 1.0]) - 0.2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let flat = vec![2.0; 64];
        assert!(matches!(
            dfa_channel(&flat, &DfaConfig::default()),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn single_spike_is_accepted() {
        let mut x = vec![0.0; 64];
        x[10] = 1.0;
        assert!(dfa_channel(&x, &DfaConfig::default()).is_ok());
    }

    #[test]
    fn scale_invariance() {
        let x: Vec<f64> = (0..256).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        let cfg = DfaConfig::default();
        let h = dfa_channel(&x, &cfg).unwrap().h;
        for c in [0.001, 3.0, 1e4] {
            let y: Vec<f64> = x.iter().map(|v| v * c).collect();
            assert!((dfa_channel(&y, &cfg).unwrap().h - h).abs() < 1e-10);
        }
    }
}
