//! Reruns of the full pipeline on layer subsets and random channel subsets.
//! Every rerun z-scores within its own pool.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{condition_means, psi_by_condition, run_batch, RunConfig};
use crate::synth::{derive_seed, rng_for};
use crate::trial::{ActivationTrial, Condition};

/// Fewest channels a subsample may keep.
pub const MIN_SUBSAMPLE_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessMode {
    Layers,
    Subsample,
    Seeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSubset {
    Early,
    Late,
    All,
}

impl LayerSubset {
    pub fn blocks(self) -> Option<&'static [u32]> {
        match self {
            LayerSubset::Early => Some(&[1, 4]),
            LayerSubset::Late => Some(&[7, 10]),
            LayerSubset::All => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LayerSubset::Early => "early",
            LayerSubset::Late => "late",
            LayerSubset::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRobustness {
    pub condition: Condition,
    pub n_trials: usize,
    /// Mean over seeds of the per-seed condition mean Ψ′.
    pub mean_psi: f64,
    /// Sample standard deviation of the per-seed means, 0 for a single seed.
    pub std_across_seeds: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRun {
    pub label: String,
    pub seeds: Vec<u64>,
    pub channels: usize,
    pub conditions: Vec<ConditionRobustness>,
    /// Per seed: complex highest and repetition lowest, `None` when either
    /// condition is absent.
    pub ordered: Vec<Option<bool>>,
    /// Per seed: complex strictly above every other condition.
    pub complex_separated: Vec<Option<bool>>,
}

impl RobustnessRun {
    pub fn ordering_stable(&self) -> bool {
        !self.ordered.is_empty() && self.ordered.iter().all(|o| *o == Some(true))
    }

    pub fn seeds_ordered(&self) -> usize {
        self.ordered.iter().filter(|o| **o == Some(true)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub mode: RobustnessMode,
    pub runs: Vec<RobustnessRun>,
    pub ordering_stable: bool,
    /// Some condition has fewer than two trials.
    pub low_n: bool,
}

impl RobustnessReport {
    fn new(mode: RobustnessMode, runs: Vec<RobustnessRun>) -> Self {
        let ordering_stable = runs.iter().all(RobustnessRun::ordering_stable);
        let low_n = runs
            .iter()
            .flat_map(|r| &r.conditions)
            .any(|c| c.n_trials < 2);
        Self {
            mode,
            runs,
            ordering_stable,
            low_n,
        }
    }
}

/// Top/bottom ordering of per-condition means.
pub fn ordering_holds(means: &[(Condition, f64)]) -> Option<bool> {
    let find = |c: &Condition| means.iter().find(|(k, _)| k == c).map(|(_, v)| *v);
    let complex = find(&Condition::IntactComplex)?;
    let repetition = find(&Condition::IntactRepetition)?;
    Some(
        means.iter().all(|(c, v)| {
            *c == Condition::IntactComplex || (*v < complex && (*c == Condition::IntactRepetition || *v > repetition))
        }),
    )
}

pub fn complex_separated(means: &[(Condition, f64)]) -> Option<bool> {
    let complex = means.iter().find(|(c, _)| *c == Condition::IntactComplex)?.1;
    Some(
        means
            .iter()
            .filter(|(c, _)| *c != Condition::IntactComplex)
            .all(|(_, v)| *v < complex),
    )
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn restrict(trials: &[ActivationTrial], columns: &[usize]) -> Result<Vec<ActivationTrial>> {
    trials
        .par_iter()
        .map(|t| t.select_channels(columns))
        .collect()
}

/// Per-condition means of one rerun.
fn rerun_means(trials: &[ActivationTrial], config: &RunConfig) -> Result<Vec<(Condition, f64, usize)>> {
    let out = run_batch(trials, config)?;
    let groups = psi_by_condition(&out.pool);
    Ok(condition_means(&groups)
        .into_iter()
        .zip(&groups)
        .map(|((c, m), (_, v))| (c, m, v.len()))
        .collect())
}

fn assemble(label: String, seeds: Vec<u64>, channels: usize, per_seed: Vec<Vec<(Condition, f64, usize)>>) -> RobustnessRun {
    let first = &per_seed[0];
    let conditions = first
        .iter()
        .enumerate()
        .map(|(k, (condition, _, n))| {
            let values: Vec<f64> = per_seed.iter().map(|run| run[k].1).collect();
            ConditionRobustness {
                condition: condition.clone(),
                n_trials: *n,
                mean_psi: values.iter().sum::<f64>() / values.len() as f64,
                std_across_seeds: sample_std(&values),
                per_seed: values,
            }
        })
        .collect();
    let means: Vec<Vec<(Condition, f64)>> = per_seed
        .iter()
        .map(|run| run.iter().map(|(c, m, _)| (c.clone(), *m)).collect())
        .collect();
    RobustnessRun {
        label,
        seeds,
        channels,
        conditions,
        ordered: means.iter().map(|m| ordering_holds(m)).collect(),
        complex_separated: means.iter().map(|m| complex_separated(m)).collect(),
    }
}

/// Columns whose source block belongs to the subset, `None` for all columns.
pub fn layer_columns(trial: &ActivationTrial, subset: LayerSubset) -> Result<Option<Vec<usize>>> {
    let Some(blocks) = subset.blocks() else {
        return Ok(None);
    };
    let attribution = trial.channel_blocks().ok_or_else(|| {
        Error::Metadata(format!("trial {} carries no block attribution", trial.id()))
    })?;
    let columns: Vec<usize> = attribution
        .iter()
        .enumerate()
        .filter(|(_, b)| blocks.contains(b))
        .map(|(j, _)| j)
        .collect();
    if columns.is_empty() {
        return Err(Error::Metadata(format!(
            "trial {} has no channels from blocks {blocks:?}",
            trial.id()
        )));
    }
    Ok(Some(columns))
}

/// The trials restricted to a layer subset. Every trial must share the first
/// trial's block layout.
pub fn layer_subset_trials(trials: &[ActivationTrial], subset: LayerSubset) -> Result<Vec<ActivationTrial>> {
    let first = trials
        .first()
        .ok_or_else(|| Error::DegeneratePool("no trials".into()))?;
    let columns = layer_columns(first, subset)?;
    for t in &trials[1..] {
        if layer_columns(t, subset)? != columns {
            return Err(Error::Metadata(format!(
                "trial {} has a different block layout from {}",
                t.id(),
                first.id()
            )));
        }
    }
    match columns {
        None => Ok(trials.to_vec()),
        Some(cols) => restrict(trials, &cols),
    }
}

pub fn layer_subset_run(trials: &[ActivationTrial], subset: LayerSubset, config: &RunConfig) -> Result<RobustnessRun> {
    let restricted = layer_subset_trials(trials, subset)?;
    let channels = restricted[0].channels();
    let means = rerun_means(&restricted, config)?;
    Ok(assemble(subset.label().into(), Vec::new(), channels, vec![means]))
}

/// Early, late and all-layer reruns.
pub fn layer_report(trials: &[ActivationTrial], config: &RunConfig) -> Result<RobustnessReport> {
    let runs = [LayerSubset::Early, LayerSubset::Late, LayerSubset::All]
        .iter()
        .map(|&s| layer_subset_run(trials, s, config))
        .collect::<Result<_>>()?;
    Ok(RobustnessReport::new(RobustnessMode::Layers, runs))
}

/// Sorted random column subset of size `floor(fraction * c)`.
pub fn subsample_columns(c: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must be in (0,1], got {fraction}")));
    }
    let k = (fraction * c as f64).floor() as usize;
    if k < MIN_SUBSAMPLE_CHANNELS {
        return Err(Error::Arity(format!(
            "fraction {fraction} of {c} channels keeps {k}, fewer than {MIN_SUBSAMPLE_CHANNELS}"
        )));
    }
    let mut columns = sample(&mut rng_for(seed), c, k).into_vec();
    columns.sort_unstable();
    Ok(columns)
}

pub fn channel_subsample_run(
    trials: &[ActivationTrial],
    fraction: f64,
    seeds: &[u64],
    config: &RunConfig,
) -> Result<RobustnessReport> {
    let first = trials
        .first()
        .ok_or_else(|| Error::DegeneratePool("no trials".into()))?;
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let c = first.channels();
    let column_sets: Vec<Vec<usize>> = seeds
        .iter()
        .map(|&s| subsample_columns(c, fraction, s))
        .collect::<Result<_>>()?;
    let per_seed = column_sets
        .iter()
        .map(|cols| rerun_means(&restrict(trials, cols)?, config))
        .collect::<Result<Vec<_>>>()?;
    let label = format!("subsample_{}", (fraction * 100.0).round() as u32);
    let run = assemble(label, seeds.to_vec(), column_sets[0].len(), per_seed);
    Ok(RobustnessReport::new(RobustnessMode::Subsample, vec![run]))
}

pub const MULTI_SEED_FRACTION: f64 = 0.5;
pub const MULTI_SEED_COUNT: usize = 5;

/// Seeds `derive_seed(base_seed, i)` for `i < n`.
pub fn rerun_seeds(base_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(base_seed, i)).collect()
}

/// Half of the channels resampled under five seeds.
pub fn multi_seed_run(trials: &[ActivationTrial], base_seed: u64, config: &RunConfig) -> Result<RobustnessReport> {
    let seeds = rerun_seeds(base_seed, MULTI_SEED_COUNT);
    let mut report = channel_subsample_run(trials, MULTI_SEED_FRACTION, &seeds, config)?;
    report.mode = RobustnessMode::Seeds;
    Ok(report)
}
