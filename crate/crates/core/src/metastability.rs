//! Kuramoto order parameter over channels and its temporal variability.

use ndarray::Axis;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{analytic_phase, design_butterworth_bandpass, filtfilt, BandpassSpec, IirCoefficients};
use crate::trial::{mean_and_pop_sd, PreprocessedTrial};

/// Samples dropped at each end when trimming is requested.
pub const TRIM_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncSeries {
    /// Order parameter per token step, in `[0, 1]`.
    pub r: Vec<f64>,
    /// Population standard deviation of `r` (over the trimmed span, if any).
    pub m: f64,
}

/// `|mean_j exp(i theta_j)|`. Phasors are summed in ascending phase order so
/// the result does not depend on channel order.
pub fn kuramoto_r(phases: &[f64]) -> f64 {
    let n = phases.len() as f64;
    let mut sorted = phases.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sum: Complex64 = sorted.iter().map(|&p| Complex64::from_polar(1.0, p)).sum();
    (sum / n).norm().min(1.0)
}

/// Per-channel phase series (channels by time) for an already-designed filter.
pub fn channel_phases(trial: &PreprocessedTrial, coeffs: &IirCoefficients) -> Result<Vec<Vec<f64>>> {
    let columns: Vec<Vec<f64>> = trial.data().axis_iter(Axis(1)).map(|c| c.to_vec()).collect();
    columns
        .par_iter()
        .enumerate()
        .map(|(j, col)| {
            filtfilt(coeffs, col)
                .and_then(|band| analytic_phase(&band))
                .map_err(|e| e.in_channel(j))
        })
        .collect()
}

/// Order parameter at every time step from channel-major phases.
pub fn order_parameter_series(phases: &[Vec<f64>]) -> Vec<f64> {
    let t = phases.first().map_or(0, Vec::len);
    let mut buf = vec![0.0; phases.len()];
    (0..t)
        .map(|k| {
            for (slot, ch) in buf.iter_mut().zip(phases) {
                *slot = ch[k];
            }
            kuramoto_r(&buf)
        })
        .collect()
}

pub fn metastability_trial(trial: &PreprocessedTrial, band: &BandpassSpec, trim: bool) -> Result<SyncSeries> {
    let coeffs = design_butterworth_bandpass(band)?;
    metastability_with(trial, &coeffs, trim)
}

/// As [`metastability_trial`] with a filter designed once by the caller.
pub fn metastability_with(trial: &PreprocessedTrial, coeffs: &IirCoefficients, trim: bool) -> Result<SyncSeries> {
    let phases = channel_phases(trial, coeffs)?;
    let r = order_parameter_series(&phases);
    let span = if trim {
        if r.len() <= 2 * TRIM_SAMPLES + 1 {
            return Err(Error::Length {
                len: r.len(),
                min: 2 * TRIM_SAMPLES + 1,
            });
        }
        &r[TRIM_SAMPLES..r.len() - TRIM_SAMPLES]
    } else {
        &r[..]
    };
    let (_, m) = mean_and_pop_sd(span.iter());
    Ok(SyncSeries { r, m })
}
