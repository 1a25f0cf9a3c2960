//! Pool-relative composite index.
//!
//! `H_eff` and `M` are z-scored against the mean and population standard
//! deviation of the pool they belong to, then combined with fixed weights.
//! Values are only comparable within one pool, so results always carry the
//! pool's trial ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::{mean_and_pop_sd, Condition};

/// Smallest pooled standard deviation accepted for either component.
pub const MIN_POOL_SD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub trial_id: String,
    pub condition: Condition,
    pub h_raw: f64,
    pub h_eff: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiResult {
    pub trial_id: String,
    pub condition: Condition,
    pub h_z: f64,
    pub m_z: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiWeights {
    w_h: f64,
    w_m: f64,
}

impl Default for PsiWeights {
    fn default() -> Self {
        Self { w_h: 0.5, w_m: 0.5 }
    }
}

impl PsiWeights {
    /// Weights must be non-negative and sum to one.
    pub fn new(w_h: f64, w_m: f64) -> Result<Self> {
        if !(w_h >= 0.0 && w_m >= 0.0) || !w_h.is_finite() || !w_m.is_finite() {
            return Err(Error::Config(format!(
                "weights must be non-negative, got ({w_h}, {w_m})"
            )));
        }
        if ((w_h + w_m) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "weights must sum to 1, got {w_h} + {w_m}"
            )));
        }
        Ok(Self { w_h, w_m })
    }

    pub fn w_h(&self) -> f64 {
        self.w_h
    }

    pub fn w_m(&self) -> f64 {
        self.w_m
    }
}

/// Pool statistics used for one z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub h_eff_mean: f64,
    pub h_eff_sd: f64,
    pub m_mean: f64,
    pub m_sd: f64,
}

/// Composite results together with the identity of the pool that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiPool {
    pub trial_ids: Vec<String>,
    pub weights: PsiWeights,
    pub stats: PoolStats,
    pub results: Vec<PsiResult>,
}

pub fn pool_zscore(scores: &[ComponentScores], weights: PsiWeights) -> Result<PsiPool> {
    if scores.len() < 2 {
        return Err(Error::DegeneratePool(format!(
            "need at least 2 trials, got {}",
            scores.len()
        )));
    }
    let h: Vec<f64> = scores.iter().map(|s| s.h_eff).collect();
    let m: Vec<f64> = scores.iter().map(|s| s.m).collect();
    let (h_mean, h_sd) = mean_and_pop_sd(h.iter());
    let (m_mean, m_sd) = mean_and_pop_sd(m.iter());
    if !(h_sd > MIN_POOL_SD) {
        return Err(Error::DegeneratePool(format!(
            "H_eff has pooled standard deviation {h_sd:e} across {} trials",
            scores.len()
        )));
    }
    if !(m_sd > MIN_POOL_SD) {
        return Err(Error::DegeneratePool(format!(
            "M has pooled standard deviation {m_sd:e} across {} trials",
            scores.len()
        )));
    }
    let results = scores
        .iter()
        .map(|s| {
            let h_z = (s.h_eff - h_mean) / h_sd;
            let m_z = (s.m - m_mean) / m_sd;
            PsiResult {
                trial_id: s.trial_id.clone(),
                condition: s.condition.clone(),
                h_z,
                m_z,
                psi: weights.w_h * h_z + weights.w_m * m_z,
            }
        })
        .collect();
    Ok(PsiPool {
        trial_ids: scores.iter().map(|s| s.trial_id.clone()).collect(),
        weights,
        stats: PoolStats {
            h_eff_mean: h_mean,
            h_eff_sd: h_sd,
            m_mean,
            m_sd,
        },
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(id: &str, h_eff: f64, m: f64) -> ComponentScores {
        ComponentScores {
            trial_id: id.into(),
            condition: Condition::IntactComplex,
            h_raw: 0.7,
            h_eff,
            m,
        }
    }

    #[test]
    fn two_point_pool() {
        let pool = pool_zscore(
            &[score("a", 0.9, 0.03), score("b", 1.1, 0.05)],
            PsiWeights::default(),
        )
        .unwrap();
        let r = &pool.results;
        for (res, sign) in r.iter().zip([-1.0, 1.0]) {
            assert!((res.h_z - sign).abs() < 1e-9);
            assert!((res.m_z - sign).abs() < 1e-9);
            assert!((res.psi - sign).abs() < 1e-9);
            assert_eq!(res.psi, 0.5 * res.h_z + 0.5 * res.m_z);
        }
        assert_eq!(pool.trial_ids, vec!["a", "b"]);
    }

    #[test]
    fn identical_pool_is_degenerate() {
        let s = vec![score("a", 0.9, 0.03), score("b", 0.9, 0.03)];
        assert!(matches!(
            pool_zscore(&s, PsiWeights::default()),
            Err(Error::DegeneratePool(_))
        ));
        assert!(pool_zscore(&s[..1], PsiWeights::default()).is_err());
    }

    #[test]
    fn weights_validation_and_projection() {
        assert!(PsiWeights::new(0.6, 0.5).is_err());
        assert!(PsiWeights::new(-0.1, 1.1).is_err());
        let s = vec![score("a", 0.9, 0.03), score("b", 1.0, 0.02), score("c", 0.7, 0.06)];
        let h_only = pool_zscore(&s, PsiWeights::new(1.0, 0.0).unwrap()).unwrap();
        assert!(h_only.results.iter().all(|r| r.psi == r.h_z));
        let m_only = pool_zscore(&s, PsiWeights::new(0.0, 1.0).unwrap()).unwrap();
        assert!(m_only.results.iter().all(|r| r.psi == r.m_z));
        let half = pool_zscore(&s, PsiWeights::new(0.5, 0.5).unwrap()).unwrap();
        assert_eq!(half, pool_zscore(&s, PsiWeights::default()).unwrap());
    }

    #[test]
    fn translation_invariance_of_m() {
        let s = vec![score("a", 0.9, 0.03), score("b", 1.0, 0.02), score("c", 0.7, 0.06)];
        let shifted: Vec<_> = s
            .iter()
            .map(|x| ComponentScores { m: x.m + 5.0, ..x.clone() })
            .collect();
        let a = pool_zscore(&s, PsiWeights::default()).unwrap();
        let b = pool_zscore(&shifted, PsiWeights::default()).unwrap();
        for (x, y) in a.results.iter().zip(&b.results) {
            assert!((x.psi - y.psi).abs() < 1e-9);
        }
    }
}
