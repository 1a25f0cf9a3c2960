//! Generates the synthetic condition battery and prints per-condition means.
//!
//! `cargo run --release --example battery -- [trials] [channels] [seed]`

use psidyn_core::pipeline::{condition_means, psi_by_condition, run_batch, RunConfig};
use psidyn_core::stats::stats_report;
use psidyn_core::synth::{gen_battery_with, AnalogueParams};

fn main() {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let trials = args.first().copied().unwrap_or(15) as usize;
    let channels = args.get(1).copied().unwrap_or(128) as usize;
    let seed = args.get(2).copied().unwrap_or(7);

    // Analogue parameters may be overridden with a JSON object in PSIDYN_ANALOGUE.
    let params: AnalogueParams = match std::env::var("PSIDYN_ANALOGUE") {
        Ok(json) => serde_json::from_str(&json).expect("analogue parameters"),
        Err(_) => AnalogueParams::default(),
    };
    let battery = gen_battery_with(trials, 256, channels, seed, &params).expect("battery");
    let out = run_batch(&battery, &RunConfig::default()).expect("pipeline");
    println!("{:<18} {:>8} {:>8} {:>8} {:>8}", "condition", "h_raw", "h_eff", "m", "psi");
    let groups = psi_by_condition(&out.pool);
    for (condition, psi) in condition_means(&groups) {
        let rows: Vec<_> = out.scores.iter().filter(|s| s.condition == condition).collect();
        let n = rows.len() as f64;
        let h_raw = rows.iter().map(|s| s.h_raw).sum::<f64>() / n;
        let h_eff = rows.iter().map(|s| s.h_eff).sum::<f64>() / n;
        let m = rows.iter().map(|s| s.m).sum::<f64>() / n;
        println!("{:<18} {h_raw:>8.4} {h_eff:>8.4} {m:>8.4} {psi:>8.3}", condition.to_string());
    }
    let report = stats_report(&groups, 0.05).expect("stats");
    println!("ANOVA F({}, {}) = {:.3}, p = {:.3e}", report.anova.df_between, report.anova.df_within, report.anova.f, report.anova.p);
}
