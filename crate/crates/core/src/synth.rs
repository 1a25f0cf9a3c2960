//! Ground-truth signal generators used as oracles and as a synthetic stand-in
//! for recorded conditions.
//!
//! Randomness comes from ChaCha8 seeded with a `u64`. Streams for individual
//! channels and trials are derived with [`derive_seed`], a SplitMix64 mix of
//! the parent seed and the child index, so every generator is a pure function
//! of its seed and can run in parallel.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::{ActivationTrial, Condition, GenerationParams, TrialMeta};

/// Centre frequency of the default analysis band, cycles per token.
pub const BAND_CENTRE_CYCLES: f64 = 0.1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let k = k as f64;
    let h2 = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Exact fractional Gaussian noise by circulant embedding (Davies-Harte).
pub fn gen_fgn(hurst: f64, t: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng_for(seed);
    fgn_with(hurst, t, &mut rng)
}

fn fgn_with(hurst: f64, t: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::Config(format!("Hurst exponent must be in (0,1), got {hurst}")));
    }
    if t < 2 {
        return Err(Error::Config(format!("series length {t} is too short")));
    }
    let m = 2 * t;
    let mut row: Vec<Complex64> = (0..m)
        .map(|k| {
            let lag = if k <= t { k } else { m - k };
            Complex64::new(fgn_autocovariance(hurst, lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let largest = row.iter().map(|v| v.re).fold(0.0, f64::max);
    let mut scale = Vec::with_capacity(m);
    for (k, v) in row.iter().enumerate() {
        if v.re < -1e-10 * largest {
            return Err(Error::Generation(format!(
                "circulant eigenvalue {k} is negative ({})",
                v.re
            )));
        }
        scale.push((v.re.max(0.0) / m as f64).sqrt());
    }
    let mut buf: Vec<Complex64> = scale
        .iter()
        .map(|&s| Complex64::new(s * normal(rng), s * normal(rng)))
        .collect();
    fft.process(&mut buf);
    Ok(buf[..t].iter().map(|v| v.re).collect())
}

pub fn gen_white(t: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed);
    (0..t).map(|_| normal(&mut rng)).collect()
}

pub fn gen_random_walk(t: usize, seed: u64) -> Vec<f64> {
    gen_white(t, seed)
        .into_iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Parameters of an all-to-all Kuramoto network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KuramotoSpec {
    pub c: usize,
    pub coupling: f64,
    /// Standard deviation of natural frequencies, rad per token.
    pub freq_spread: f64,
    /// Mean natural frequency, rad per token.
    pub centre_freq: f64,
    pub t: usize,
    /// Steps simulated and discarded before recording starts.
    pub burn_in: usize,
    pub seed: u64,
}

impl KuramotoSpec {
    pub fn new(c: usize, coupling: f64, freq_spread: f64, t: usize, seed: u64) -> Self {
        Self {
            c,
            coupling,
            freq_spread,
            centre_freq: 2.0 * PI * BAND_CENTRE_CYCLES,
            t,
            burn_in: 0,
            seed,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }
}

/// Critical coupling of the infinite network for Gaussian frequencies of the
/// given spread, `2 / (pi g(0))`.
pub fn critical_coupling(freq_spread: f64) -> f64 {
    freq_spread * (8.0 / PI).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KuramotoRun {
    /// Unwrapped phases, time by oscillator.
    pub phases: Array2<f64>,
    /// `cos(theta)`, time by oscillator.
    pub signals: Array2<f64>,
}

/// Forward-Euler simulation with a step of one token, random initial phases
/// and Gaussian natural frequencies.
pub fn gen_kuramoto(spec: &KuramotoSpec) -> Result<KuramotoRun> {
    if spec.c < 8 {
        return Err(Error::Config(format!("need at least 8 oscillators, got {}", spec.c)));
    }
    if !(spec.coupling >= 0.0) || !(spec.freq_spread >= 0.0) {
        return Err(Error::Config("coupling and frequency spread must be non-negative".into()));
    }
    let mut rng = rng_for(spec.seed);
    let omega: Vec<f64> = (0..spec.c)
        .map(|_| spec.centre_freq + spec.freq_spread * normal(&mut rng))
        .collect();
    let mut theta: Vec<f64> = (0..spec.c).map(|_| rng.random_range(-PI..PI)).collect();
    let mut phases = Array2::zeros((spec.t, spec.c));
    let n = spec.c as f64;
    for step in 0..spec.burn_in + spec.t {
        if step >= spec.burn_in {
            let row = step - spec.burn_in;
            for (j, &th) in theta.iter().enumerate() {
                phases[[row, j]] = th;
            }
        }
        let (s, c) = theta
            .iter()
            .fold((0.0, 0.0), |(s, c), th| (s + th.sin(), c + th.cos()));
        let (mean_sin, mean_cos) = (s / n, c / n);
        // (K/n) sum_j sin(theta_j - theta_i) via the mean field
        for (th, w) in theta.iter_mut().zip(&omega) {
            let pull = mean_sin * th.cos() - mean_cos * th.sin();
            *th += w + spec.coupling * pull;
        }
    }
    let signals = phases.mapv(f64::cos);
    Ok(KuramotoRun { phases, signals })
}

/// Short-period pattern: fundamental plus second harmonic with per-channel
/// phase, and Gaussian jitter of the given standard deviation.
pub fn gen_periodic(period: usize, t: usize, c: usize, jitter: f64, seed: u64) -> Result<Array2<f64>> {
    if period < 2 {
        return Err(Error::Config(format!("period must be at least 2, got {period}")));
    }
    let mut rng = rng_for(seed);
    let offsets: Vec<(f64, f64)> = (0..c)
        .map(|_| (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let w = 2.0 * PI / period as f64;
    Ok(Array2::from_shape_fn((t, c), |(k, j)| {
        let (p1, p2) = offsets[j];
        let tk = k as f64;
        (w * tk + p1).cos() + 0.5 * (2.0 * w * tk + p2).cos()
    }) + Array2::from_shape_simple_fn((t, c), || jitter * normal(&mut rng)))
}

/// Generator selector, mirroring the command-line `--kind` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    Fgn { hurst: f64 },
    RandomWalk,
    White,
    Periodic { period: usize, jitter: f64 },
    KuramotoNet { coupling: f64, freq_spread: f64 },
    ConditionAnalogue { analogue: Condition },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub t: usize,
    pub c: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t < 32 {
            return Err(Error::Config(format!("t must be at least 32, got {}", self.t)));
        }
        if self.c < 2 {
            return Err(Error::Config(format!("c must be at least 2, got {}", self.c)));
        }
        match &self.kind {
            SynthKind::Fgn { hurst } if !(*hurst > 0.0 && *hurst < 1.0) => Err(Error::Config(
                format!("Hurst exponent must be in (0,1), got {hurst}"),
            )),
            SynthKind::KuramotoNet { coupling, freq_spread }
                if !(*coupling >= 0.0 && *freq_spread >= 0.0) || self.c < 8 =>
            {
                Err(Error::Config(
                    "Kuramoto networks need c >= 8 and non-negative coupling and spread".into(),
                ))
            }
            SynthKind::Periodic { period, jitter } if *period < 2 || !(*jitter >= 0.0) => {
                Err(Error::Config("periodic needs period >= 2 and jitter >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    fn label(&self) -> Condition {
        match &self.kind {
            SynthKind::Fgn { .. } => Condition::Custom("fgn".into()),
            SynthKind::RandomWalk => Condition::Custom("random_walk".into()),
            SynthKind::White => Condition::Custom("white".into()),
            SynthKind::Periodic { .. } => Condition::Custom("periodic".into()),
            SynthKind::KuramotoNet { .. } => Condition::Custom("kuramoto".into()),
            SynthKind::ConditionAnalogue { analogue } => analogue.clone(),
        }
    }
}

/// Independent per-channel series from a single-channel generator.
fn independent_channels(
    t: usize,
    c: usize,
    seed: u64,
    gen: impl Fn(u64) -> Result<Vec<f64>> + Sync,
) -> Result<Array2<f64>> {
    let columns: Vec<Vec<f64>> = (0..c as u64)
        .into_par_iter()
        .map(|j| gen(derive_seed(seed, j)))
        .collect::<Result<_>>()?;
    Ok(Array2::from_shape_fn((t, c), |(k, j)| columns[j][k]))
}

/// Synthetic provenance: four blocks when the channel count allows it,
/// distinct indices inside each block.
fn synthetic_meta(trial_id: String, condition: Condition, c: usize, seed: u64, kind: &str) -> TrialMeta {
    let block_ids = if c.is_multiple_of(4) { vec![1, 4, 7, 10] } else { Vec::new() };
    let per_block = if block_ids.is_empty() { c } else { c / 4 };
    let generation_params = match condition {
        Condition::IntactRepetition => GenerationParams { temperature: 0.7, top_k: 50 },
        Condition::IntactNoisy => GenerationParams { temperature: 2.5, top_k: 200 },
        _ => GenerationParams::default(),
    };
    let mut extra = BTreeMap::new();
    extra.insert("source".into(), serde_json::Value::from("synthetic"));
    extra.insert("generator".into(), serde_json::Value::from(kind));
    TrialMeta {
        trial_id,
        condition,
        block_ids,
        channel_indices: (0..c).map(|j| (j % per_block) as u32).collect(),
        seed,
        generation_params,
        extra,
    }
}

/// Knobs of the synthetic condition analogues.
///
/// Every analogue except repetition mixes per-channel background noise with
/// the `cos(theta)` output of a Kuramoto network whose oscillators are the
/// channels. The complex analogue runs the network at critical coupling;
/// the damaged analogues reuse it with coupling scaled down, which leaves each
/// channel's own temporal statistics unchanged but flattens the
/// synchronisation dynamics. The background Hurst exponent sits below the
/// target because the narrowband oscillator raises the DFA slope of the mix;
/// the complex analogue's combined `H_raw` lands near 0.70.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalogueParams {
    pub hurst: f64,
    pub oscillator_amplitude: f64,
    pub freq_spread: f64,
    /// Coupling as a multiple of the critical coupling.
    pub complex_coupling: f64,
    pub heads_coupling: f64,
    pub noise_coupling: f64,
    pub noisy_coupling: f64,
    pub noisy_oscillator_amplitude: f64,
    pub repetition_period: usize,
    pub repetition_jitter: f64,
    pub burn_in: usize,
}

impl Default for AnalogueParams {
    fn default() -> Self {
        Self {
            hurst: 0.6,
            oscillator_amplitude: 0.4,
            freq_spread: 0.05,
            complex_coupling: 1.0,
            heads_coupling: 0.3,
            noise_coupling: 0.5,
            noisy_coupling: 0.5,
            noisy_oscillator_amplitude: 0.3,
            repetition_period: 8,
            repetition_jitter: 0.02,
            burn_in: 256,
        }
    }
}

fn oscillator_mix(
    background: Array2<f64>,
    amplitude: f64,
    coupling_factor: f64,
    params: &AnalogueParams,
    seed: u64,
) -> Result<Array2<f64>> {
    let (t, c) = background.dim();
    let spec = KuramotoSpec::new(
        c,
        coupling_factor * critical_coupling(params.freq_spread),
        params.freq_spread,
        t,
        derive_seed(seed, u64::MAX),
    )
    .with_burn_in(params.burn_in);
    let run = gen_kuramoto(&spec)?;
    Ok(background + run.signals * amplitude)
}

pub fn gen_condition_analogue_with(
    analogue: &Condition,
    t: usize,
    c: usize,
    seed: u64,
    params: &AnalogueParams,
) -> Result<Array2<f64>> {
    let fgn = |seed| independent_channels(t, c, seed, |s| gen_fgn(params.hurst, t, s));
    match analogue {
        Condition::IntactComplex => {
            oscillator_mix(fgn(seed)?, params.oscillator_amplitude, params.complex_coupling, params, seed)
        }
        Condition::DamagedHeads => {
            oscillator_mix(fgn(seed)?, params.oscillator_amplitude, params.heads_coupling, params, seed)
        }
        Condition::DamagedNoise => {
            oscillator_mix(fgn(seed)?, params.oscillator_amplitude, params.noise_coupling, params, seed)
        }
        Condition::IntactNoisy => {
            let white = independent_channels(t, c, seed, |s| Ok(gen_white(t, s)))?;
            oscillator_mix(white, params.noisy_oscillator_amplitude, params.noisy_coupling, params, seed)
        }
        Condition::IntactRepetition => {
            gen_periodic(params.repetition_period, t, c, params.repetition_jitter, seed)
        }
        Condition::Custom(other) => Err(Error::Config(format!(
            "no synthetic analogue for condition {other}"
        ))),
    }
}

/// One synthetic trial in the shape of a recorded one.
pub fn gen_condition_analogue(analogue: &Condition, t: usize, c: usize, seed: u64) -> Result<ActivationTrial> {
    let spec = SynthSpec {
        kind: SynthKind::ConditionAnalogue { analogue: analogue.clone() },
        t,
        c,
        seed,
    };
    gen_trial(&spec, format!("{analogue}_{seed:016x}"))
}

/// Builds a trial for any generator kind.
pub fn gen_trial(spec: &SynthSpec, trial_id: String) -> Result<ActivationTrial> {
    spec.validate()?;
    let (t, c, seed) = (spec.t, spec.c, spec.seed);
    let (data, kind) = match &spec.kind {
        SynthKind::Fgn { hurst } => (
            independent_channels(t, c, seed, |s| gen_fgn(*hurst, t, s))?,
            "fgn",
        ),
        SynthKind::RandomWalk => (
            independent_channels(t, c, seed, |s| Ok(gen_random_walk(t, s)))?,
            "random_walk",
        ),
        SynthKind::White => (
            independent_channels(t, c, seed, |s| Ok(gen_white(t, s)))?,
            "white",
        ),
        SynthKind::Periodic { period, jitter } => (gen_periodic(*period, t, c, *jitter, seed)?, "periodic"),
        SynthKind::KuramotoNet { coupling, freq_spread } => {
            let spec = KuramotoSpec::new(c, *coupling, *freq_spread, t, seed).with_burn_in(t);
            (gen_kuramoto(&spec)?.signals, "kuramoto")
        }
        SynthKind::ConditionAnalogue { analogue } => (
            gen_condition_analogue_with(analogue, t, c, seed, &AnalogueParams::default())?,
            "condition_analogue",
        ),
    };
    let meta = synthetic_meta(trial_id, spec.label(), c, seed, kind);
    ActivationTrial::new(meta, data)
}

/// `trials_per_condition` analogues of each standard condition, grouped by
/// condition in reporting order.
pub fn gen_battery(trials_per_condition: usize, t: usize, c: usize, seed: u64) -> Result<Vec<ActivationTrial>> {
    gen_battery_with(trials_per_condition, t, c, seed, &AnalogueParams::default())
}

pub fn gen_battery_with(
    trials_per_condition: usize,
    t: usize,
    c: usize,
    seed: u64,
    params: &AnalogueParams,
) -> Result<Vec<ActivationTrial>> {
    let jobs: Vec<(usize, usize)> = (0..Condition::STANDARD.len())
        .flat_map(|ci| (0..trials_per_condition).map(move |k| (ci, k)))
        .collect();
    jobs.par_iter()
        .map(|&(ci, k)| {
            let condition = &Condition::STANDARD[ci];
            let trial_seed = derive_seed(derive_seed(seed, ci as u64), k as u64);
            let data = gen_condition_analogue_with(condition, t, c, trial_seed, params)?;
            let meta = synthetic_meta(
                format!("{condition}_{k:03}"),
                condition.clone(),
                c,
                trial_seed,
                "condition_analogue",
            );
            ActivationTrial::new(meta, data)
        })
        .collect()
}
