//! Band isolation and instantaneous phase.
//!
//! The bandpass is a digital Butterworth design: an analog lowpass prototype
//! of the requested order is shifted to a bandpass around the prewarped band
//! edges and mapped through the bilinear transform, giving `2 * order` poles.
//! Filtering runs forward and backward with odd-reflection padding and
//! steady-state initial conditions, so the net response has zero phase and
//! squared magnitude. Phase comes from the FFT analytic signal.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum `high_cut / low_cut` ratio accepted by the designer.
pub const MIN_BAND_RATIO: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    /// Lower -3 dB edge, cycles per token.
    pub low_cut: f64,
    /// Upper -3 dB edge, cycles per token.
    pub high_cut: f64,
    /// Order of the lowpass prototype.
    pub order: usize,
    /// Samples per token. Only 1.0 is meaningful for token-indexed data.
    pub sample_rate: f64,
}

impl Default for BandpassSpec {
    fn default() -> Self {
        Self::new(0.05, 0.15)
    }
}

impl BandpassSpec {
    pub fn new(low_cut: f64, high_cut: f64) -> Self {
        Self {
            low_cut,
            high_cut,
            order: 3,
            sample_rate: 1.0,
        }
    }

    /// Slower alternate band for sensitivity checks.
    pub fn slow() -> Self {
        Self::new(0.03, 0.10)
    }

    /// Faster alternate band for sensitivity checks.
    pub fn fast() -> Self {
        Self::new(0.10, 0.25)
    }

    /// Geometric centre of the band, cycles per token.
    pub fn centre(&self) -> f64 {
        (self.low_cut * self.high_cut).sqrt()
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config(format!("sample rate {} is invalid", self.sample_rate)));
        }
        if !(self.low_cut > 0.0 && self.low_cut < self.high_cut && self.high_cut < self.nyquist())
        {
            return Err(Error::Config(format!(
                "band edges must satisfy 0 < low ({}) < high ({}) < Nyquist ({})",
                self.low_cut,
                self.high_cut,
                self.nyquist()
            )));
        }
        if self.order == 0 {
            return Err(Error::Config("filter order must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of transfer-function coefficients, `2 * order + 1`.
    pub fn n_coefficients(&self) -> usize {
        2 * self.order + 1
    }
}

/// Transfer-function realisation `B(z) / A(z)` with `a[0] == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirCoefficients {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    #[serde(skip)]
    poles: Vec<Complex64>,
}

impl IirCoefficients {
    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.poles.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Complex response at `freq` cycles per sample.
    pub fn response(&self, freq: f64) -> Complex64 {
        let w = -2.0 * PI * freq;
        let eval = |coeffs: &[f64]| -> Complex64 {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| Complex64::from_polar(c, w * k as f64))
                .sum()
        };
        eval(&self.b) / eval(&self.a)
    }

    pub fn magnitude(&self, freq: f64) -> f64 {
        self.response(freq).norm()
    }
}

fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * r;
        }
        coeffs = next;
    }
    coeffs
}

pub fn design_butterworth_bandpass(spec: &BandpassSpec) -> Result<IirCoefficients> {
    spec.validate()?;
    if spec.high_cut / spec.low_cut < MIN_BAND_RATIO {
        return Err(Error::Design(format!(
            "band {}..{} is narrower than a {MIN_BAND_RATIO} ratio",
            spec.low_cut, spec.high_cut
        )));
    }
    let n = spec.order;

    // Bilinear transform with sampling constant 2 * fs_internal, where the
    // edges are normalised to Nyquist and fs_internal = 2.
    let bilinear_k = 4.0;
    let warp = |f: f64| {
        let wn = f / spec.nyquist();
        bilinear_k * (PI * wn / 2.0).tan()
    };
    let (w_lo, w_hi) = (warp(spec.low_cut), warp(spec.high_cut));
    let bw = w_hi - w_lo;
    let w0 = (w_lo * w_hi).sqrt();

    // Analog lowpass prototype poles on the left half of the unit circle.
    let proto: Vec<Complex64> = (0..n)
        .map(|k| {
            let m = 2.0 * k as f64 - n as f64 + 1.0;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n as f64))
        })
        .collect();

    // Lowpass -> bandpass: each pole splits into a pair; n zeros at the origin.
    let mut analog_poles = Vec::with_capacity(2 * n);
    for &p in &proto {
        let p_lp = p * (bw / 2.0);
        let disc = (p_lp * p_lp - w0 * w0).sqrt();
        analog_poles.push(p_lp + disc);
    }
    for &p in &proto {
        let p_lp = p * (bw / 2.0);
        let disc = (p_lp * p_lp - w0 * w0).sqrt();
        analog_poles.push(p_lp - disc);
    }
    let analog_zeros = vec![Complex64::new(0.0, 0.0); n];
    let analog_gain = bw.powi(n as i32);

    // Bilinear transform; zeros at infinity land on z = -1.
    let to_z = |s: Complex64| (bilinear_k + s) / (bilinear_k - s);
    let poles: Vec<Complex64> = analog_poles.iter().map(|&p| to_z(p)).collect();
    let mut zeros: Vec<Complex64> = analog_zeros.iter().map(|&z| to_z(z)).collect();
    zeros.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), n));
    let num: Complex64 = analog_zeros.iter().map(|&z| bilinear_k - z).product();
    let den: Complex64 = analog_poles.iter().map(|&p| bilinear_k - p).product();
    let gain = analog_gain * (num / den).re;

    if let Some(p) = poles.iter().find(|p| !(p.norm() < 1.0)) {
        return Err(Error::Design(format!("unstable pole at radius {}", p.norm())));
    }

    let b = poly_from_roots(&zeros).iter().map(|c| gain * c.re).collect();
    let a = poly_from_roots(&poles).iter().map(|c| c.re).collect();
    Ok(IirCoefficients { b, a, poles })
}

/// Initial state giving the step-response steady state for unit input.
fn steady_state_zi(coeffs: &IirCoefficients) -> Vec<f64> {
    let (b, a) = (&coeffs.b, &coeffs.a);
    let order = a.len() - 1;
    // I - companion(a)^T
    let mut m = DMatrix::<f64>::identity(order, order);
    for i in 0..order {
        m[(i, 0)] += a[i + 1];
        if i + 1 < order {
            m[(i, i + 1)] -= 1.0;
        }
    }
    let rhs = DVector::from_iterator(order, (0..order).map(|i| b[i + 1] - a[i + 1] * b[0]));
    m.lu()
        .solve(&rhs)
        .expect("I - A is non-singular for a stable filter")
        .iter()
        .copied()
        .collect()
}

/// Direct form II transposed, starting from state `zi`.
fn lfilter(coeffs: &IirCoefficients, x: &[f64], mut state: Vec<f64>) -> Vec<f64> {
    let (b, a) = (&coeffs.b, &coeffs.a);
    let order = a.len() - 1;
    x.iter()
        .map(|&xn| {
            let y = b[0] * xn + state[0];
            for i in 0..order - 1 {
                state[i] = b[i + 1] * xn + state[i + 1] - a[i + 1] * y;
            }
            state[order - 1] = b[order] * xn - a[order] * y;
            y
        })
        .collect()
}

/// Padding length used at each end by [`filtfilt`].
pub fn padding_len(coeffs: &IirCoefficients) -> usize {
    3 * coeffs.a.len().max(coeffs.b.len())
}

/// Zero-phase forward-backward filtering.
pub fn filtfilt(coeffs: &IirCoefficients, signal: &[f64]) -> Result<Vec<f64>> {
    let edge = padding_len(coeffs);
    let n = signal.len();
    if n <= edge {
        return Err(Error::Length { len: n, min: edge });
    }
    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * edge);
    ext.extend((1..=edge).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=edge).map(|i| 2.0 * last - signal[n - 1 - i]));

    let zi = steady_state_zi(coeffs);
    let scaled = |x0: f64| zi.iter().map(|z| z * x0).collect::<Vec<_>>();

    let mut forward = lfilter(coeffs, &ext, scaled(ext[0]));
    forward.reverse();
    let mut backward = lfilter(coeffs, &forward, scaled(forward[0]));
    backward.reverse();
    Ok(backward[edge..edge + n].to_vec())
}

/// Analytic signal by the one-sided spectrum method.
pub fn analytic_signal(signal: &[f64]) -> Result<Vec<Complex64>> {
    let n = signal.len();
    if n < 8 {
        return Err(Error::Length { len: n, min: 7 });
    }
    if signal.iter().all(|&x| x == 0.0) {
        return Err(Error::UndefinedPhase("signal is identically zero".into()));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // DC (and Nyquist for even n) keep unit weight
    let positive_end = n.div_ceil(2);
    for v in &mut buf[1..positive_end] {
        *v *= 2.0;
    }
    let negative_start = n / 2 + 1;
    for v in &mut buf[negative_start..] {
        *v = Complex64::new(0.0, 0.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.into_iter().map(|v| v * scale).collect())
}

/// Instantaneous phase in `(-pi, pi]`.
pub fn analytic_phase(signal: &[f64]) -> Result<Vec<f64>> {
    Ok(analytic_signal(signal)?
        .into_iter()
        .map(|z| {
            let theta = z.im.atan2(z.re);
            if theta == -PI {
                PI
            } else {
                theta
            }
        })
        .collect())
}

/// Removes `2 pi` jumps from a wrapped phase series.
pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    for (i, &p) in phase.iter().enumerate() {
        if i > 0 {
            let d = p - phase[i - 1];
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        out.push(p + offset);
    }
    out
}
