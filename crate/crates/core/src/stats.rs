//! Group comparisons on Ψ′: Fisher one-way ANOVA, Welch pairwise tests with
//! Benjamini-Hochberg adjustment, Cohen's d and per-condition summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{f_sf, t_two_sided};
use crate::trial::Condition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
    pub eta_squared: f64,
    pub ss_between: f64,
    pub ss_within: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub condition_a: Condition,
    pub condition_b: Condition,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub cohens_d: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub n: usize,
    pub mean: f64,
    pub sem: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub q: f64,
    pub anova: AnovaTable,
    pub comparisons: Vec<PairwiseComparison>,
    pub summaries: Vec<ConditionSummary>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator).
fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaTable> {
    if groups.len() < 2 {
        return Err(Error::Arity(format!(
            "ANOVA needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    if let Some((i, g)) = groups.iter().enumerate().find(|(_, g)| g.len() < 2) {
        return Err(Error::Arity(format!("group {i} has {} values, need 2", g.len())));
    }
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n_total as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    if !(ss_within > 0.0) {
        return Err(Error::DegenerateSample(
            "within-group variance is zero".into(),
        ));
    }
    let df_between = groups.len() - 1;
    let df_within = n_total - groups.len();
    let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
    let p = f_sf(f, df_between as f64, df_within as f64)?;
    Ok(AnovaTable {
        f,
        df_between,
        df_within,
        p,
        eta_squared: ss_between / (ss_between + ss_within),
        ss_between,
        ss_within,
    })
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Arity(format!(
            "Welch test needs 2+ values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (va, vb) = (sample_variance(a), sample_variance(b));
    if va == 0.0 && vb == 0.0 {
        return Err(Error::DegenerateSample("both samples are constant".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let t = (mean(a) - mean(b)) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = t_two_sided(t, df)?;
    Ok(WelchResult { t, df, p })
}

/// Benjamini-Hochberg step-up procedure. Outputs follow input order.
pub fn bh_fdr(p_values: &[f64], q: f64) -> Result<BhResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("FDR level must be in (0,1), got {q}")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Config(format!("p-value {p} outside [0,1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));

    let cutoff = order
        .iter()
        .enumerate()
        .filter(|&(rank, &i)| p_values[i] <= (rank + 1) as f64 * q / m as f64)
        .map(|(rank, _)| rank + 1)
        .max()
        .unwrap_or(0);

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let scaled = p_values[i] * m as f64 / (rank + 1) as f64;
        running = running.min(scaled).min(1.0);
        // p * m / rank can round just below p when rank == m
        adjusted[i] = running.max(p_values[i]);
    }
    let mut rejected = vec![false; m];
    for &i in &order[..cutoff] {
        rejected[i] = true;
    }
    Ok(BhResult { adjusted, rejected })
}

/// Standardised mean difference with pooled sample standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Arity("Cohen's d needs 2+ values per sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b))
        / (na + nb - 2.0))
        .sqrt();
    if !(pooled > 0.0) {
        return Err(Error::DegenerateSample("pooled standard deviation is zero".into()));
    }
    Ok((mean(a) - mean(b)) / pooled)
}

/// Linear-interpolation quantile of sorted data at position `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn condition_summary(condition: Condition, values: &[f64]) -> Result<ConditionSummary> {
    if values.len() < 2 {
        return Err(Error::Arity(format!(
            "summary of {condition} needs 2+ values, got {}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len();
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(ConditionSummary {
        condition,
        n,
        mean: mean(values),
        sem: sample_variance(values).sqrt() / (n as f64).sqrt(),
        median: quantile_sorted(&sorted, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
    })
}

/// Full battery over condition groups: ANOVA, every pairwise Welch test
/// adjusted together, effect sizes and summaries. Groups are reported in
/// condition order.
pub fn stats_report(groups: &[(Condition, Vec<f64>)], q: f64) -> Result<StatsReport> {
    let mut groups = groups.to_vec();
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    if groups.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Arity("duplicate condition group".into()));
    }
    let values: Vec<Vec<f64>> = groups.iter().map(|(_, v)| v.clone()).collect();
    let anova = one_way_anova(&values)?;

    let mut raw = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (ca, a) = &groups[i];
            let (cb, b) = &groups[j];
            let w = welch_t(a, b)?;
            let d = cohens_d(a, b)?;
            raw.push((ca.clone(), cb.clone(), w, d));
        }
    }
    let p_raw: Vec<f64> = raw.iter().map(|r| r.2.p).collect();
    let bh = bh_fdr(&p_raw, q)?;
    let comparisons = raw
        .into_iter()
        .enumerate()
        .map(|(k, (condition_a, condition_b, w, d))| PairwiseComparison {
            condition_a,
            condition_b,
            t: w.t,
            df: w.df,
            p_raw: w.p,
            p_adjusted: bh.adjusted[k].max(w.p),
            cohens_d: d,
            significant: bh.rejected[k],
        })
        .collect();
    let summaries = groups
        .iter()
        .map(|(c, v)| condition_summary(c.clone(), v))
        .collect::<Result<_>>()?;
    Ok(StatsReport {
        q,
        anova,
        comparisons,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anova_hand_example() {
        let t = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]])
            .unwrap();
        assert_eq!(t.f, 3.0);
        assert_eq!((t.df_between, t.df_within), (2, 6));
        assert_eq!(t.eta_squared, 0.5);
        assert_eq!(t.ss_between, 6.0);
        assert_eq!(t.ss_within, 6.0);
    }

    #[test]
    fn anova_zero_between() {
        let t = one_way_anova(&[vec![1.0, 3.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(t.f, 0.0);
        assert_eq!(t.p, 1.0);
        assert_eq!(t.eta_squared, 0.0);
    }

    #[test]
    fn anova_errors() {
        assert!(matches!(one_way_anova(&[vec![1.0, 2.0]]), Err(Error::Arity(_))));
        assert!(matches!(
            one_way_anova(&[vec![1.0, 1.0], vec![2.0, 2.0]]),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn welch_cases() {
        let w = welch_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(w.t, 0.0);
        assert_eq!(w.p, 1.0);
        assert!(matches!(
            welch_t(&[0.0; 4], &[1.0; 4]),
            Err(Error::DegenerateSample(_))
        ));
        let w = welch_t(&[1.0, 2.0, 3.0, 4.0, 5.0], &[3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!(w.t, -2.0);
        assert_eq!(w.df, 8.0);
    }

    #[test]
    fn bh_hand_example() {
        let r = bh_fdr(&[0.002, 0.01, 0.03, 0.04], 0.05).unwrap();
        assert_eq!(r.adjusted, vec![0.008, 0.02, 0.04, 0.04]);
        assert_eq!(r.rejected, vec![true; 4]);
        // unsorted input keeps its order
        let r = bh_fdr(&[0.04, 0.002, 0.03, 0.01], 0.05).unwrap();
        assert_eq!(r.adjusted, vec![0.04, 0.008, 0.04, 0.02]);
    }

    #[test]
    fn bh_boundaries() {
        for p in [0.01, 0.05, 0.2] {
            let r = bh_fdr(&[p], 0.05).unwrap();
            assert_eq!(r.adjusted, vec![p]);
            assert_eq!(r.rejected, vec![p <= 0.05]);
        }
        let r = bh_fdr(&[1.0; 5], 0.05).unwrap();
        assert_eq!(r.adjusted, vec![1.0; 5]);
        assert!(r.rejected.iter().all(|x| !x));
        assert!(bh_fdr(&[0.5], 1.0).is_err());
        assert!(bh_fdr(&[1.5], 0.05).is_err());
    }

    #[test]
    fn step_up_rejects_below_a_passing_rank() {
        // rank 2 fails its own threshold but rank 3 passes, so all three go
        let r = bh_fdr(&[0.001, 0.04, 0.044, 0.9], 0.06).unwrap();
        assert_eq!(r.rejected, vec![true, true, true, false]);
    }

    #[test]
    fn cohens_d_cases() {
        assert_eq!(cohens_d(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]).unwrap(), -2.0);
        assert_eq!(cohens_d(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(cohens_d(&[1.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn summary_cases() {
        let s = condition_summary(Condition::IntactNoisy, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);
        assert_eq!(s.iqr, 1.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.sem - sd / 2.0).abs() < 1e-12);
        let s = condition_summary(Condition::IntactNoisy, &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.sem, s.iqr), (0.0, 0.0));
    }

    #[test]
    fn two_group_report_has_identity_adjustment() {
        let report = stats_report(
            &[
                (Condition::IntactComplex, vec![1.0, 2.0, 3.5]),
                (Condition::IntactNoisy, vec![0.0, 0.4, 1.0]),
            ],
            0.05,
        )
        .unwrap();
        assert_eq!(report.comparisons.len(), 1);
        let c = &report.comparisons[0];
        assert_eq!(c.p_adjusted, c.p_raw);
    }
}
