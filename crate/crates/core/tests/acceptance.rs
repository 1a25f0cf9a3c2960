//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::time::{Duration, Instant};

use ndarray::Array2;
use psidyn_core::dfa::{dfa_trial, gaussian_tuning, DfaConfig};
use psidyn_core::metastability::{kuramoto_r, metastability_trial};
use psidyn_core::phase::BandpassSpec;
use psidyn_core::pipeline::{condition_means, psi_by_condition, run_batch, RunConfig};
use psidyn_core::report::{result_rows, to_csv};
use psidyn_core::robustness::{channel_subsample_run, layer_subset_run, multi_seed_run, LayerSubset};
use psidyn_core::special::f_sf;
use psidyn_core::stats::{bh_fdr, one_way_anova, stats_report, welch_t};
use psidyn_core::synth::{critical_coupling, derive_seed, gen_battery, gen_fgn, gen_kuramoto, KuramotoSpec};
use psidyn_core::trial::{preprocess, ActivationTrial, Condition, GenerationParams, TrialMeta};
use rayon::prelude::*;

const BATTERY_SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    println!(
        "{} {name}: {} [{:.2?}]",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        start.elapsed()
    );
    out.pass
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let e = start.elapsed();
    (e < limit, format!("{e:.2?} of {limit:?}"))
}

fn plain_trial(id: &str, data: Array2<f64>) -> ActivationTrial {
    let c = data.ncols();
    let meta = TrialMeta {
        trial_id: id.into(),
        condition: Condition::Custom("probe".into()),
        block_ids: vec![],
        channel_indices: (0..c as u32).collect(),
        seed: 0,
        generation_params: GenerationParams::default(),
        extra: Default::default(),
    };
    ActivationTrial::new(meta, data).unwrap()
}

fn f_backend() -> Outcome {
    let start = Instant::now();
    let p = f_sf(3.75, 4.0, 70.0).unwrap();
    let (fast, time) = within(start, Duration::from_secs(1));
    Outcome {
        pass: (p - 0.008).abs() <= 0.001 && fast,
        detail: format!("p = {p:.6}, {time}"),
    }
}

fn dfa_recovery() -> Outcome {
    let start = Instant::now();
    let config = DfaConfig::default();
    let mut parts = Vec::new();
    let mut pass = true;
    for (ti, target) in [0.5, 0.7, 0.9].into_iter().enumerate() {
        let h: Vec<f64> = (0..15u64)
            .into_par_iter()
            .map(|k| {
                let seed = derive_seed(derive_seed(ti as u64, k), 0);
                let columns: Vec<Vec<f64>> =
                    (0..128).map(|j| gen_fgn(target, 256, derive_seed(seed, j)).unwrap()).collect();
                let data = Array2::from_shape_fn((256, 128), |(t, j)| columns[j][t]);
                let pre = preprocess(&plain_trial("fgn", data)).unwrap();
                dfa_trial(&pre, &config).unwrap().h_raw
            })
            .collect();
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        pass &= (mean - target).abs() <= 0.08;
        parts.push(format!("H={target}: {mean:.4} (err {:+.4})", mean - target));
    }
    let (fast, time) = within(start, Duration::from_secs(60));
    Outcome {
        pass: pass && fast,
        detail: format!("{}, tolerance 0.08, {time}", parts.join("; ")),
    }
}

fn tuning_exactness() -> Outcome {
    let a = gaussian_tuning(0.7, 0.7, 0.15);
    let b = gaussian_tuning(0.85, 0.7, 0.15);
    let c = gaussian_tuning(0.55, 0.7, 0.15);
    let pass = (a - 1.0).abs() <= 1e-12 && (b - (-0.5f64).exp()).abs() <= 1e-12 && (b - c).abs() <= 1e-12;
    Outcome {
        pass,
        detail: format!("g(0.7) = {a}, g(0.85) = {b:.15}, g(0.55) = {c:.15}"),
    }
}

fn kuramoto_identities() -> Outcome {
    let equal = kuramoto_r(&[0.3; 16]);
    let antipodal = kuramoto_r(&[0.0, PI]);
    let quarter = kuramoto_r(&[0.0, PI / 2.0]);
    let pass = (equal - 1.0).abs() <= 1e-12 && antipodal <= 1e-12 && (quarter - FRAC_1_SQRT_2).abs() <= 1e-12;
    Outcome {
        pass,
        detail: format!("equal {equal}, antipodal {antipodal:e}, quarter {quarter:.15}"),
    }
}

fn network_m(coupling: f64, seed: u64) -> f64 {
    let spec = KuramotoSpec::new(128, coupling, 0.05, 256, seed).with_burn_in(256);
    let run = gen_kuramoto(&spec).unwrap();
    let pre = preprocess(&plain_trial("kuramoto", run.signals)).unwrap();
    metastability_trial(&pre, &BandpassSpec::default(), false).unwrap().m
}

fn metastability_regimes() -> Outcome {
    let start = Instant::now();
    let kc = critical_coupling(0.05);
    let wins: Vec<(f64, f64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(31, s);
            (network_m(0.0, seed), network_m(kc, seed), network_m(10.0 * kc, seed))
        })
        .collect();
    let ok = wins.iter().filter(|(off, near, strong)| near > off && near > strong).count();
    let mean = |f: fn(&(f64, f64, f64)) -> f64| wins.iter().map(f).sum::<f64>() / wins.len() as f64;
    let (fast, time) = within(start, Duration::from_secs(30));
    Outcome {
        pass: ok >= 9 && fast,
        detail: format!(
            "{ok}/10 seeds; mean M uncoupled {:.4}, near-critical {:.4}, strong {:.4}; {time}",
            mean(|w| w.0),
            mean(|w| w.1),
            mean(|w| w.2)
        ),
    }
}

fn statistics_hand_checks() -> Outcome {
    let anova = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]]).unwrap();
    let welch = welch_t(&[1.0, 2.0, 3.0, 4.0, 5.0], &[3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
    let bh = bh_fdr(&[0.002, 0.01, 0.03, 0.04], 0.05).unwrap();
    let pass = anova.f == 3.0
        && anova.eta_squared == 0.5
        && welch.t == -2.0
        && welch.df == 8.0
        && bh.adjusted == [0.008, 0.02, 0.04, 0.04];
    Outcome {
        pass,
        detail: format!(
            "F = {}, eta2 = {}, t = {}, df = {}, BH = {:?}",
            anova.f, anova.eta_squared, welch.t, welch.df, bh.adjusted
        ),
    }
}

fn mean_of(values: &[(Condition, f64)], c: &Condition) -> f64 {
    values.iter().find(|(k, _)| k == c).map(|(_, v)| *v).unwrap()
}

fn battery(trials: &[ActivationTrial], start: Instant) -> Outcome {
    let config = RunConfig::default();
    let out = run_batch(trials, &config).unwrap();
    let groups = psi_by_condition(&out.pool);
    let stats = stats_report(&groups, config.q).unwrap();
    let psi = condition_means(&groups);

    let per_condition = |f: fn(&psidyn_core::ComponentScores) -> f64| -> Vec<(Condition, f64)> {
        Condition::STANDARD
            .iter()
            .map(|c| {
                let v: Vec<f64> = out.scores.iter().filter(|s| &s.condition == c).map(f).collect();
                (c.clone(), v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    };
    let h = per_condition(|s| s.h_raw);
    let m = per_condition(|s| s.m);

    use Condition::*;
    let top = mean_of(&psi, &IntactComplex);
    let bottom = mean_of(&psi, &IntactRepetition);
    let highest = psi.iter().all(|(c, v)| *c == IntactComplex || *v < top);
    let lowest = psi.iter().all(|(c, v)| *c == IntactRepetition || *v > bottom);
    let mut pass = stats.anova.p < 0.05 && highest && lowest;
    let mut parts = vec![format!("ANOVA p = {:.3e}", stats.anova.p)];
    for damaged in [DamagedHeads, DamagedNoise] {
        let p = mean_of(&psi, &damaged);
        let dh = mean_of(&h, &damaged) - mean_of(&h, &IntactComplex);
        let reduced = mean_of(&m, &damaged) < mean_of(&m, &IntactComplex);
        pass &= p < top && p > bottom && dh.abs() <= 0.05 && reduced;
        parts.push(format!(
            "{damaged}: psi {p:.3}, dH {dh:+.4}, M {:.4} vs {:.4}",
            mean_of(&m, &damaged),
            mean_of(&m, &IntactComplex)
        ));
    }
    let order: Vec<String> = {
        let mut sorted = psi.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
        sorted.iter().map(|(c, v)| format!("{c} {v:.3}")).collect()
    };
    parts.push(format!("order {}", order.join(" > ")));
    let (fast, time) = within(start, Duration::from_secs(300));
    parts.push(time);
    Outcome {
        pass: pass && fast,
        detail: parts.join("; "),
    }
}

fn robustness(trials: &[ActivationTrial]) -> Outcome {
    let config = RunConfig::default();
    let main = condition_means(&psi_by_condition(&run_batch(trials, &config).unwrap().pool));
    let identity_layers = layer_subset_run(trials, LayerSubset::All, &config).unwrap();
    let identity_subsample = channel_subsample_run(trials, 1.0, &[BATTERY_SEED], &config).unwrap();
    let bit_exact = |run: &psidyn_core::robustness::RobustnessRun| {
        run.conditions.len() == main.len()
            && run
                .conditions
                .iter()
                .zip(&main)
                .all(|(r, (c, v))| r.condition == *c && r.per_seed[0].to_bits() == v.to_bits())
    };
    let identical = bit_exact(&identity_layers) && bit_exact(&identity_subsample.runs[0]);
    let seeds = multi_seed_run(trials, BATTERY_SEED, &config).unwrap();
    let ordered = seeds.runs[0].seeds_ordered();
    Outcome {
        pass: identical && ordered >= 4,
        detail: format!("identity subsets bit-exact: {identical}; 50% subsample ordered in {ordered}/5 seeds"),
    }
}

fn serialised_outputs(trials: &[ActivationTrial], threads: usize) -> (String, String) {
    let config = RunConfig { threads, ..RunConfig::default() };
    config
        .install(|| {
            let out = run_batch(trials, &config).unwrap();
            let rows = result_rows(&out.scores, &out.pool).unwrap();
            let stats = stats_report(&psi_by_condition(&out.pool), config.q).unwrap();
            let seeds = multi_seed_run(trials, BATTERY_SEED, &config).unwrap();
            let json = serde_json::to_string_pretty(&(&out.config, &out.pool, &stats, &seeds)).unwrap();
            (to_csv(&rows), json)
        })
        .unwrap()
}

fn determinism(trials: &[ActivationTrial]) -> Outcome {
    let one = serialised_outputs(trials, 1);
    let four = serialised_outputs(trials, 4);
    let again = serialised_outputs(trials, 3);
    let regenerated = gen_battery(15, 256, 128, BATTERY_SEED).unwrap() == trials;
    let pass = one == four && one == again && regenerated;
    Outcome {
        pass,
        detail: format!(
            "CSV {} bytes, JSON {} bytes identical across 1/3/4 threads: {}; battery regenerates identically: {regenerated}",
            one.0.len(),
            one.1.len(),
            one == four && one == again
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let mut results = vec![
        check("F-distribution backend", f_backend),
        check("DFA oracle recovery", dfa_recovery),
        check("Gaussian tuning exactness", tuning_exactness),
        check("Kuramoto identities", kuramoto_identities),
        check("Metastability regime ordering", metastability_regimes),
        check("Statistics hand-checks", statistics_hand_checks),
    ];
    let start = Instant::now();
    let trials = gen_battery(15, 256, 128, BATTERY_SEED).unwrap();
    results.push(check("End-to-end synthetic battery", || battery(&trials, start)));
    results.push(check("Robustness protocol", || robustness(&trials)));
    results.push(check("Determinism", || determinism(&trials)));

    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
