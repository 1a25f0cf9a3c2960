//! Per-trial analysis and pooled composite scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composite::{pool_zscore, ComponentScores, PsiPool, PsiWeights};
use crate::dfa::{dfa_trial, DfaConfig, DfaResult};
use crate::error::{Error, Result};
use crate::metastability::{metastability_with, SyncSeries};
use crate::phase::{design_butterworth_bandpass, BandpassSpec, IirCoefficients};
use crate::trial::{preprocess, ActivationTrial, Condition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub band: BandpassSpec,
    pub dfa: DfaConfig,
    pub weights: PsiWeights,
    /// FDR target.
    pub q: f64,
    /// Drop the first and last 16 samples of `R(t)` before taking `M`.
    pub trim: bool,
    /// Worker threads, 0 for the rayon default. Not serialised, so recorded
    /// configurations do not depend on the machine they ran on.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            band: BandpassSpec::default(),
            dfa: DfaConfig::default(),
            weights: PsiWeights::default(),
            q: 0.05,
            trim: false,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, t: usize) -> Result<()> {
        self.band.validate()?;
        self.dfa.validate(t)?;
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Config(format!("q must be in (0,1), got {}", self.q)));
        }
        Ok(())
    }

    /// Runs `f` on a pool with the configured thread count.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        if self.threads == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} threads: {e}", self.threads)))?;
        Ok(pool.install(f))
    }
}

/// Everything computed for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAnalysis {
    pub scores: ComponentScores,
    pub dfa: DfaResult,
    pub sync: SyncSeries,
}

fn analyze_with(trial: &ActivationTrial, config: &RunConfig, coeffs: &IirCoefficients) -> Result<TrialAnalysis> {
    let run = || -> Result<TrialAnalysis> {
        config.dfa.validate(trial.len())?;
        let pre = preprocess(trial)?;
        let dfa = dfa_trial(&pre, &config.dfa)?;
        let sync = metastability_with(&pre, coeffs, config.trim)?;
        Ok(TrialAnalysis {
            scores: ComponentScores {
                trial_id: trial.id().to_string(),
                condition: trial.condition().clone(),
                h_raw: dfa.h_raw,
                h_eff: dfa.h_eff,
                m: sync.m,
            },
            dfa,
            sync,
        })
    };
    run().map_err(|e| e.in_trial(trial.id()))
}

/// Preprocess, DFA and metastability for one trial.
pub fn analyze_trial_detailed(trial: &ActivationTrial, config: &RunConfig) -> Result<TrialAnalysis> {
    let coeffs = design_butterworth_bandpass(&config.band)?;
    analyze_with(trial, config, &coeffs)
}

pub fn analyze_trial(trial: &ActivationTrial, config: &RunConfig) -> Result<ComponentScores> {
    analyze_trial_detailed(trial, config).map(|a| a.scores)
}

/// Component scores for every trial, in input order.
pub fn analyze_trials(trials: &[ActivationTrial], config: &RunConfig) -> Result<Vec<ComponentScores>> {
    let coeffs = design_butterworth_bandpass(&config.band)?;
    trials
        .par_iter()
        .map(|t| analyze_with(t, config, &coeffs).map(|a| a.scores))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutput {
    pub config: RunConfig,
    pub scores: Vec<ComponentScores>,
    pub pool: PsiPool,
}

/// Full pipeline over a pool of trials.
pub fn run_batch(trials: &[ActivationTrial], config: &RunConfig) -> Result<BatchOutput> {
    if trials.len() < 2 {
        return Err(Error::DegeneratePool(format!(
            "need at least 2 trials, got {}",
            trials.len()
        )));
    }
    config.validate(trials[0].len())?;
    let scores = analyze_trials(trials, config)?;
    let pool = pool_zscore(&scores, config.weights)?;
    Ok(BatchOutput {
        config: config.clone(),
        scores,
        pool,
    })
}

/// Ψ′ grouped by condition, groups in condition order, values in pool order.
pub fn psi_by_condition(pool: &PsiPool) -> Vec<(Condition, Vec<f64>)> {
    let mut groups: Vec<(Condition, Vec<f64>)> = Vec::new();
    for r in &pool.results {
        match groups.iter_mut().find(|(c, _)| *c == r.condition) {
            Some((_, v)) => v.push(r.psi),
            None => groups.push((r.condition.clone(), vec![r.psi])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    groups
}

/// Mean of each condition group.
pub fn condition_means(groups: &[(Condition, Vec<f64>)]) -> Vec<(Condition, f64)> {
    groups
        .iter()
        .map(|(c, v)| (c.clone(), v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_condition_analogue;

    #[test]
    fn rejects_small_pool_and_bad_q() {
        let t = gen_condition_analogue(&Condition::IntactComplex, 256, 16, 1).unwrap();
        assert!(matches!(
            run_batch(std::slice::from_ref(&t), &RunConfig::default()),
            Err(Error::DegeneratePool(_))
        ));
        let config = RunConfig { q: 1.0, ..RunConfig::default() };
        assert!(config.validate(256).is_err());
    }

    #[test]
    fn identical_trials_make_a_degenerate_pool() {
        let t = gen_condition_analogue(&Condition::IntactNoisy, 256, 16, 1).unwrap();
        let err = run_batch(&[t.clone(), t], &RunConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegeneratePool(_)));
    }

    #[test]
    fn grouping_is_in_condition_order() {
        let trials: Vec<_> = [Condition::IntactNoisy, Condition::IntactComplex, Condition::IntactNoisy]
            .iter()
            .enumerate()
            .map(|(i, c)| gen_condition_analogue(c, 256, 16, i as u64).unwrap())
            .collect();
        let out = run_batch(&trials, &RunConfig::default()).unwrap();
        let groups = psi_by_condition(&out.pool);
        assert_eq!(groups[0].0, Condition::IntactComplex);
        assert_eq!(groups[1].1.len(), 2);
    }
}
