use std::f64::consts::PI;

use ndarray::Array2;
use proptest::prelude::*;
use psidyn_core::composite::{pool_zscore, ComponentScores, PsiWeights};
use psidyn_core::dfa::{dfa_channel, gaussian_tuning, DfaConfig};
use psidyn_core::metastability::{kuramoto_r, metastability_trial};
use psidyn_core::phase::{analytic_phase, design_butterworth_bandpass, filtfilt, BandpassSpec};
use psidyn_core::special::reg_inc_beta;
use psidyn_core::stats::{bh_fdr, cohens_d, one_way_anova, welch_t};
use psidyn_core::synth::gen_fgn;
use psidyn_core::trial::{
    load_trial, preprocess, save_trial, ActivationTrial, Condition, GenerationParams, TrialFormat, TrialMeta,
};

fn meta(c: usize, seed: u64) -> TrialMeta {
    TrialMeta {
        trial_id: format!("p{seed}"),
        condition: Condition::IntactNoisy,
        block_ids: vec![],
        channel_indices: (0..c as u32).collect(),
        seed,
        generation_params: GenerationParams::default(),
        extra: Default::default(),
    }
}

/// A `t x c` matrix of finite values with every column non-constant.
fn matrix(t: std::ops::Range<usize>, c: std::ops::Range<usize>) -> impl Strategy<Value = Array2<f64>> {
    (t, c).prop_flat_map(|(t, c)| {
        proptest::collection::vec(-1e3f64..1e3, t * c).prop_map(move |mut v| {
            for j in 0..c {
                v[j] += 1.0;
                v[c + j] -= 1.0;
            }
            Array2::from_shape_vec((t, c), v).unwrap()
        })
    })
}

fn signal(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0f64..10.0, n)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_round_trip_is_quantisation_only(data in matrix(2..40, 2..12), seed in any::<u64>()) {
        let trial = ActivationTrial::new(meta(data.ncols(), seed), data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.psia");
        save_trial(&trial, &path, TrialFormat::Binary).unwrap();
        prop_assert_eq!(load_trial(&path).unwrap(), trial.quantized());
    }

    #[test]
    fn preprocess_is_idempotent(data in matrix(3..60, 2..10)) {
        let once = preprocess(&ActivationTrial::new(meta(data.ncols(), 0), data).unwrap()).unwrap();
        let twice = preprocess(once.trial()).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn preprocess_commutes_with_channel_permutation(data in matrix(3..60, 2..10), rot in 0usize..10) {
        let c = data.ncols();
        let perm: Vec<usize> = (0..c).map(|j| (j + rot) % c).collect();
        let permuted = Array2::from_shape_fn(data.dim(), |(t, j)| data[[t, perm[j]]]);
        let a = preprocess(&ActivationTrial::new(meta(c, 0), data).unwrap()).unwrap();
        let b = preprocess(&ActivationTrial::new(meta(c, 0), permuted).unwrap()).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            prop_assert_eq!(b.data().column(j), a.data().column(p));
        }
    }

    #[test]
    fn dfa_slope_is_scale_invariant(x in signal(64..200), c in 1e-3f64..1e3) {
        let config = DfaConfig { window_sizes: vec![4, 8, 16, 32], ..DfaConfig::default() };
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        match (dfa_channel(&x, &config), dfa_channel(&scaled, &config)) {
            (Ok(a), Ok(b)) => prop_assert!((a.h - b.h).abs() <= 1e-9, "{} vs {}", a.h, b.h),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} / {b:?}"),
        }
    }

    #[test]
    fn tuning_is_reflection_symmetric(h in -1.0f64..3.0, h_opt in 0.2f64..1.2, sigma in 0.01f64..1.0) {
        let a = gaussian_tuning(h, h_opt, sigma);
        let b = gaussian_tuning(2.0 * h_opt - h, h_opt, sigma);
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn tuning_reflection_is_exact_on_dyadic_inputs(h in -1024i32..3072, h_opt in 205i32..1229, sigma in 0.01f64..1.0) {
        // multiples of 2^-10 keep 2*h_opt - h and both deviations exact
        let (h, h_opt) = (h as f64 / 1024.0, h_opt as f64 / 1024.0);
        prop_assert_eq!(gaussian_tuning(h, h_opt, sigma), gaussian_tuning(2.0 * h_opt - h, h_opt, sigma));
    }

    #[test]
    fn tuning_decreases_away_from_optimum(d1 in 0.0f64..1.0, extra in 1e-3f64..1.0) {
        let near = gaussian_tuning(0.7 + d1, 0.7, 0.15);
        let far = gaussian_tuning(0.7 + d1 + extra, 0.7, 0.15);
        prop_assert!(far < near || (near == 0.0 && far == 0.0));
    }

    #[test]
    fn filtfilt_is_linear(x in signal(64..160), seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let c = design_butterworth_bandpass(&BandpassSpec::default()).unwrap();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v * 0.37 + (seed % 97) as f64 + i as f64).sin()).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fx = filtfilt(&c, &x).unwrap();
        let fy = filtfilt(&c, &y).unwrap();
        let combined: Vec<f64> = fx.iter().zip(&fy).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(max_abs_diff(&filtfilt(&c, &mix).unwrap(), &combined) <= 1e-9);
    }

    #[test]
    fn filtfilt_commutes_with_time_reversal(x in signal(64..160)) {
        let c = design_butterworth_bandpass(&BandpassSpec::default()).unwrap();
        let mut reversed = x.clone();
        reversed.reverse();
        let mut expected = filtfilt(&c, &x).unwrap();
        expected.reverse();
        let got = filtfilt(&c, &reversed).unwrap();
        let err = max_abs_diff(&got, &expected);
        prop_assert!(err <= 1e-9, "max deviation {err}");
    }

    #[test]
    fn phase_ignores_power_of_two_gain(x in signal(16..128), k in -20i32..20) {
        prop_assume!(x.iter().any(|&v| v != 0.0));
        let c = 2f64.powi(k);
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        prop_assert_eq!(analytic_phase(&x).unwrap(), analytic_phase(&scaled).unwrap());
    }

    #[test]
    fn phase_ignores_positive_gain(x in signal(16..128), c in 1e-3f64..1e3) {
        prop_assume!(x.iter().map(|v| v.abs()).sum::<f64>() > 1e-3);
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = analytic_phase(&x).unwrap();
        let b = analytic_phase(&scaled).unwrap();
        for (p, q) in a.iter().zip(&b) {
            let d = (p - q).rem_euclid(2.0 * PI);
            prop_assert!(d.min(2.0 * PI - d) <= 1e-6);
        }
    }

    #[test]
    fn order_parameter_is_bounded_and_order_free(phases in proptest::collection::vec(-10.0f64..10.0, 1..64), rot in 0usize..64) {
        let r = kuramoto_r(&phases);
        prop_assert!((0.0..=1.0).contains(&r));
        let n = phases.len();
        let rotated: Vec<f64> = (0..n).map(|i| phases[(i + rot) % n]).collect();
        prop_assert_eq!(kuramoto_r(&rotated), r);
    }

    #[test]
    fn order_parameter_ignores_global_phase_shift(phases in proptest::collection::vec(-PI..PI, 2..64), shift in -PI..PI) {
        let shifted: Vec<f64> = phases.iter().map(|p| p + shift).collect();
        prop_assert!((kuramoto_r(&shifted) - kuramoto_r(&phases)).abs() <= 1e-12);
    }

    #[test]
    fn welch_is_antisymmetric(a in proptest::collection::vec(-100.0f64..100.0, 2..20), b in proptest::collection::vec(-100.0f64..100.0, 2..20)) {
        if let (Ok(ab), Ok(ba)) = (welch_t(&a, &b), welch_t(&b, &a)) {
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p, ba.p);
            prop_assert_eq!(ab.df, ba.df);
        }
    }

    #[test]
    fn anova_ignores_shift_and_scale(
        groups in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 2..12), 2..6),
        shift in -100.0f64..100.0,
        scale in 0.01f64..100.0,
    ) {
        if let Ok(base) = one_way_anova(&groups) {
            prop_assert!(base.f >= 0.0 && (0.0..=1.0).contains(&base.p) && (0.0..=1.0).contains(&base.eta_squared));
            prop_assert!((base.eta_squared - base.ss_between / (base.ss_between + base.ss_within)).abs() <= 1e-12);
            let moved: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| (v + shift) * scale).collect()).collect();
            let other = one_way_anova(&moved).unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
            prop_assert!(rel(base.f, other.f), "F {} vs {}", base.f, other.f);
            prop_assert!((base.p - other.p).abs() <= 1e-9);
            prop_assert!((base.eta_squared - other.eta_squared).abs() <= 1e-9);
        }
    }

    #[test]
    fn cohens_d_ignores_common_scale(
        a in proptest::collection::vec(-50.0f64..50.0, 2..12),
        b in proptest::collection::vec(-50.0f64..50.0, 2..12),
        scale in 0.01f64..100.0,
    ) {
        if let Ok(d) = cohens_d(&a, &b) {
            let sa: Vec<f64> = a.iter().map(|v| v * scale).collect();
            let sb: Vec<f64> = b.iter().map(|v| v * scale).collect();
            prop_assert!((cohens_d(&sa, &sb).unwrap() - d).abs() <= 1e-9 * d.abs().max(1.0));
        }
    }

    #[test]
    fn bh_is_monotone(mut p in proptest::collection::vec(0.0f64..=1.0, 1..30), q1 in 0.001f64..0.5, dq in 0.0f64..0.4) {
        p.sort_by(f64::total_cmp);
        let r = bh_fdr(&p, q1).unwrap();
        prop_assert!(r.adjusted.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.adjusted.iter().zip(&p).all(|(a, raw)| a >= raw && *a <= 1.0));
        let wider = bh_fdr(&p, q1 + dq).unwrap();
        prop_assert!(r.rejected.iter().zip(&wider.rejected).all(|(&narrow, &wide)| !narrow || wide));
    }

    #[test]
    fn incomplete_beta_symmetry(x in 0.0f64..=1.0, a in 0.05f64..200.0, b in 0.05f64..200.0) {
        let lhs = reg_inc_beta(x, a, b).unwrap();
        let rhs = 1.0 - reg_inc_beta(1.0 - x, b, a).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn pooled_scores_are_standardised(
        raw in proptest::collection::vec((0.01f64..1.0, 0.0f64..0.5), 2..40),
        scale in 0.1f64..10.0,
        offset in -1.0f64..1.0,
    ) {
        let scores: Vec<ComponentScores> = raw.iter().enumerate().map(|(i, &(h, m))| ComponentScores {
            trial_id: format!("t{i}"),
            condition: Condition::IntactComplex,
            h_raw: h,
            h_eff: h,
            m,
        }).collect();
        let Ok(pool) = pool_zscore(&scores, PsiWeights::default()) else { return Ok(()) };
        let n = pool.results.len() as f64;
        let mean = |f: &dyn Fn(&psidyn_core::PsiResult) -> f64| pool.results.iter().map(f).sum::<f64>() / n;
        prop_assert!(mean(&|r| r.h_z).abs() <= 1e-9);
        prop_assert!(mean(&|r| r.m_z).abs() <= 1e-9);
        prop_assert!(mean(&|r| r.psi).abs() <= 1e-9);
        prop_assert!((mean(&|r| r.h_z * r.h_z) - 1.0).abs() <= 1e-9);
        for r in &pool.results {
            prop_assert_eq!(r.psi, 0.5 * r.h_z + 0.5 * r.m_z);
        }

        // a positive affine map of one component keeps the ranking
        let mapped: Vec<ComponentScores> = scores.iter().cloned().map(|mut s| { s.m = s.m * scale + offset; s }).collect();
        let other = pool_zscore(&mapped, PsiWeights::default()).unwrap();
        for (a, b) in pool.results.iter().zip(&other.results) {
            prop_assert!((a.psi - b.psi).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn metastability_is_bounded_and_channel_order_free(seed in any::<u64>(), c in 2usize..12, rot in 1usize..12) {
        let columns: Vec<Vec<f64>> = (0..c as u64).map(|j| gen_fgn(0.7, 128, seed.wrapping_add(j)).unwrap()).collect();
        let data = Array2::from_shape_fn((128, c), |(t, j)| columns[j][t]);
        let permuted = Array2::from_shape_fn((128, c), |(t, j)| columns[(j + rot) % c][t]);
        let band = BandpassSpec::default();
        let a = metastability_trial(&preprocess(&ActivationTrial::new(meta(c, 0), data).unwrap()).unwrap(), &band, false).unwrap();
        let b = metastability_trial(&preprocess(&ActivationTrial::new(meta(c, 0), permuted).unwrap()).unwrap(), &band, false).unwrap();
        prop_assert!((0.0..=0.5).contains(&a.m));
        prop_assert!(a.r.iter().all(|r| (0.0..=1.0).contains(r)));
        prop_assert_eq!(a.r, b.r);
        prop_assert_eq!(a.m, b.m);
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), h in 0.05f64..0.95) {
        prop_assert_eq!(gen_fgn(h, 200, seed).unwrap(), gen_fgn(h, 200, seed).unwrap());
    }
}
