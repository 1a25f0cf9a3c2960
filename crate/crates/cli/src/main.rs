use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use psidyn_core::composite::PsiWeights;
use psidyn_core::dfa::DfaConfig;
use psidyn_core::error::{Error, ErrorClass, Result};
use psidyn_core::phase::BandpassSpec;
use psidyn_core::pipeline::{analyze_trial, run_batch, RunConfig};
use psidyn_core::report::{
    psi_groups, read_results_csv, result_rows, robustness_markdown, robustness_rows, stats_markdown, to_csv,
    write_report, write_results_csv, ResultRow,
};
use psidyn_core::robustness::{
    channel_subsample_run, layer_report, multi_seed_run, rerun_seeds, RobustnessReport,
};
use psidyn_core::stats::{condition_summary, stats_report, ConditionSummary, StatsReport};
use psidyn_core::synth::{derive_seed, gen_battery, gen_trial, SynthKind, SynthSpec};
use psidyn_core::trial::{
    load_trial, save_trial, ActivationTrial, ManifestEntry, TrialFormat, TrialManifest,
};

const EXIT_FORMAT: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_SOFTWARE: u8 = 70;
const EXIT_IO: u8 = 74;

#[derive(Parser)]
#[command(name = "psidyn", version, about = "Hurst integration, metastability and the composite Ψ′ index")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Component scores for a single trial file (no Ψ′).
    Analyze {
        trial: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Full pipeline over a manifest: results table, summary and pool record.
    Batch {
        manifest: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// ANOVA, pairwise Welch tests with FDR control and summaries from a results CSV.
    Stats {
        results: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        q: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Layer-subset or channel-subsample reruns.
    Robustness {
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Seeds)]
        mode: Mode,
        /// Fraction of channels kept per subsample.
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        /// Number of subsample seeds.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the JSON report and per-panel CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Synthetic trial files and a manifest.
    Synth(SynthArgs),
    /// Markdown report and figure CSV from earlier outputs.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        /// Robustness JSON: one report or a list of reports.
        #[arg(long)]
        robustness: Option<PathBuf>,
        /// Pool record written by `batch`, for the embedded configuration.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Json,
    Csv,
    Md,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Layers,
    Subsample,
    Seeds,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fgn,
    RandomWalk,
    White,
    Periodic,
    Kuramoto,
    Battery,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Binary,
    Csv,
}

#[derive(Args)]
struct AnalysisArgs {
    #[arg(long, default_value_t = 0.05)]
    band_low: f64,
    #[arg(long, default_value_t = 0.15)]
    band_high: f64,
    #[arg(long, default_value_t = 3)]
    filter_order: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    dfa_scales: Vec<usize>,
    #[arg(long, default_value_t = 0.7)]
    h_opt: f64,
    #[arg(long, default_value_t = 0.15)]
    sigma_h: f64,
    /// `w_h,w_m`, non-negative and summing to 1.
    #[arg(long, value_delimiter = ',', num_args = 2, default_value = "0.5,0.5")]
    weights: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Drop 16 samples at each end of R(t) before taking M.
    #[arg(long)]
    trim: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

impl AnalysisArgs {
    fn config(&self) -> Result<RunConfig> {
        let band = BandpassSpec {
            order: self.filter_order,
            ..BandpassSpec::new(self.band_low, self.band_high)
        };
        band.validate()?;
        if self.weights.len() != 2 {
            return Err(Error::Config("--weights takes exactly two values".into()));
        }
        let config = RunConfig {
            band,
            dfa: DfaConfig {
                window_sizes: self.dfa_scales.clone(),
                h_opt: self.h_opt,
                sigma_h: self.sigma_h,
            },
            weights: PsiWeights::new(self.weights[0], self.weights[1])?,
            q: self.q,
            trim: self.trim,
            threads: self.threads,
        };
        if !(config.q > 0.0 && config.q < 1.0) {
            return Err(Error::Config(format!("q must be in (0,1), got {}", config.q)));
        }
        Ok(config)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    /// Trials per kind, or per condition for the battery.
    #[arg(long, default_value_t = 15)]
    trials: usize,
    #[arg(long, default_value_t = 256)]
    t: usize,
    #[arg(long, default_value_t = 128)]
    c: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    hurst: f64,
    /// Absolute coupling K, rad per token.
    #[arg(long, default_value_t = 0.08)]
    coupling: f64,
    #[arg(long, default_value_t = 0.05)]
    freq_spread: f64,
    #[arg(long, default_value_t = 8)]
    period: usize,
    #[arg(long, default_value_t = 0.02)]
    jitter: f64,
    #[arg(long, value_enum, default_value_t = FileFormat::Binary)]
    file_format: FileFormat,
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serialises");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_slice(&raw).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn load_manifest(path: &Path) -> Result<Vec<ActivationTrial>> {
    let manifest = TrialManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest.load_trials(base)
}

/// Summaries for conditions with at least two trials.
fn summaries(rows: &[ResultRow]) -> Result<Vec<ConditionSummary>> {
    psi_groups(rows)
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(c, v)| condition_summary(c, &v))
        .collect()
}

fn summary_markdown(summaries: &[ConditionSummary]) -> String {
    let mut md = String::from("| Condition | n | Ψ′ mean ± SEM | Median | IQR |\n|---|---:|---:|---:|---:|\n");
    for s in summaries {
        md.push_str(&format!(
            "| {} | {} | {:.3} ± {:.3} | {:.3} | {:.3} |\n",
            s.condition, s.n, s.mean, s.sem, s.median, s.iqr
        ));
    }
    md
}

#[derive(Serialize)]
struct PoolRecord<'a> {
    config: &'a RunConfig,
    trial_ids: &'a [String],
    weights: PsiWeights,
    stats: &'a psidyn_core::composite::PoolStats,
}

fn cmd_analyze(trial: &Path, args: &AnalysisArgs) -> Result<String> {
    let config = args.config()?;
    let trial = load_trial(trial)?;
    let scores = config.install(|| analyze_trial(&trial, &config))??;
    Ok(match args.format {
        Format::Csv => to_csv(&[scores]),
        _ => to_json(&scores),
    })
}

fn cmd_batch(manifest: &Path, out: &Path, args: &AnalysisArgs) -> Result<String> {
    let config = args.config()?;
    let output = config.install(|| -> Result<_> {
        let trials = load_manifest(manifest)?;
        run_batch(&trials, &config)
    })??;
    let rows = result_rows(&output.scores, &output.pool)?;
    let summaries = summaries(&rows)?;
    create_dir(out)?;
    write_results_csv(out.join("results.csv"), &rows)?;
    write_file(&out.join("summary.json"), &to_json(&summaries))?;
    write_file(&out.join("summary.md"), &summary_markdown(&summaries))?;
    let record = PoolRecord {
        config: &config,
        trial_ids: &output.pool.trial_ids,
        weights: output.pool.weights,
        stats: &output.pool.stats,
    };
    write_file(&out.join("pool.json"), &to_json(&record))?;
    let groups = psi_groups(&rows);
    if groups.iter().any(|(_, v)| v.len() < 2) {
        eprintln!("warning: some conditions have fewer than 2 trials and are left out of the summary");
    }
    Ok(match args.format {
        Format::Json => to_json(&summaries),
        Format::Csv => to_csv(&summaries),
        Format::Md => summary_markdown(&summaries),
    })
}

fn cmd_stats(results: &Path, q: f64, format: Format) -> Result<String> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("q must be in (0,1), got {q}")));
    }
    let rows = read_results_csv(results)?;
    let report: StatsReport = stats_report(&psi_groups(&rows), q)?;
    Ok(match format {
        Format::Json => to_json(&report),
        Format::Csv => to_csv(&report.comparisons),
        Format::Md => stats_markdown(&report),
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_robustness(
    manifest: &Path,
    mode: Mode,
    fraction: f64,
    n_seeds: usize,
    seed: u64,
    out: Option<&Path>,
    args: &AnalysisArgs,
) -> Result<String> {
    let config = args.config()?;
    let report = config.install(|| -> Result<RobustnessReport> {
        let trials = load_manifest(manifest)?;
        match mode {
            Mode::Layers => layer_report(&trials, &config),
            Mode::Subsample => channel_subsample_run(&trials, fraction, &rerun_seeds(seed, n_seeds), &config),
            Mode::Seeds => multi_seed_run(&trials, seed, &config),
        }
    })??;
    if report.low_n {
        eprintln!("warning: some conditions have fewer than 2 trials");
    }
    if let Some(out) = out {
        create_dir(out)?;
        write_file(&out.join("robustness.json"), &to_json(&report))?;
    }
    Ok(match args.format {
        Format::Json => to_json(&report),
        Format::Csv => to_csv(&robustness_rows(&report)),
        Format::Md => robustness_markdown(std::slice::from_ref(&report)),
    })
}

fn cmd_synth(args: &SynthArgs) -> Result<String> {
    if args.trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let (format, ext) = match args.file_format {
        FileFormat::Binary => (TrialFormat::Binary, "psia"),
        FileFormat::Csv => (TrialFormat::Csv, "csv"),
    };
    let trials: Vec<ActivationTrial> = match args.kind {
        Kind::Battery => gen_battery(args.trials, args.t, args.c, args.seed)?,
        kind => {
            let (kind, name) = match kind {
                Kind::Fgn => (SynthKind::Fgn { hurst: args.hurst }, "fgn"),
                Kind::RandomWalk => (SynthKind::RandomWalk, "random_walk"),
                Kind::White => (SynthKind::White, "white"),
                Kind::Periodic => (
                    SynthKind::Periodic {
                        period: args.period,
                        jitter: args.jitter,
                    },
                    "periodic",
                ),
                Kind::Kuramoto => (
                    SynthKind::KuramotoNet {
                        coupling: args.coupling,
                        freq_spread: args.freq_spread,
                    },
                    "kuramoto",
                ),
                Kind::Battery => unreachable!(),
            };
            (0..args.trials)
                .map(|k| {
                    let spec = SynthSpec {
                        kind: kind.clone(),
                        t: args.t,
                        c: args.c,
                        seed: derive_seed(args.seed, k as u64),
                    };
                    gen_trial(&spec, format!("{name}_{k:03}"))
                })
                .collect::<Result<_>>()?
        }
    };
    create_dir(&args.out)?;
    let mut manifest = TrialManifest::new(args.seed);
    manifest.per_block_channels = args.c / 4;
    manifest.notes = format!("synthetic trials, seed {}", args.seed);
    for trial in &trials {
        let name = PathBuf::from(format!("{}.{ext}", trial.id()));
        save_trial(trial, args.out.join(&name), format)?;
        manifest.trials.push(ManifestEntry {
            path: name,
            condition: trial.condition().clone(),
        });
    }
    let path = args.out.join("manifest.json");
    manifest.save(&path)?;
    Ok(format!("{}\n", path.display()))
}

fn cmd_report(
    results: &Path,
    stats: &Path,
    robustness: Option<&Path>,
    pool: Option<&Path>,
    out: &Path,
) -> Result<String> {
    let rows = read_results_csv(results)?;
    let stats: StatsReport = read_json(stats)?;
    let robustness: Vec<RobustnessReport> = match robustness {
        None => Vec::new(),
        Some(path) => {
            let raw = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            if raw.trim().is_empty() {
                Vec::new()
            } else {
                let value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })?;
                let parsed = if value.is_array() {
                    serde_json::from_value(value)
                } else {
                    serde_json::from_value(value).map(|r| vec![r])
                };
                parsed.map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })?
            }
        }
    };
    let config: Option<RunConfig> = match pool {
        None => None,
        Some(path) => {
            let value: serde_json::Value = read_json(path)?;
            let config = value.get("config").cloned().ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: "missing config".into(),
            })?;
            Some(serde_json::from_value(config).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?)
        }
    };
    let files = write_report(out, &rows, &stats, &robustness, config.as_ref())?;
    Ok(to_json(&files))
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Analyze { trial, analysis } => cmd_analyze(&trial, &analysis),
        Command::Batch { manifest, out, analysis } => cmd_batch(&manifest, &out, &analysis),
        Command::Stats { results, q, format } => cmd_stats(&results, q, format),
        Command::Robustness {
            manifest,
            mode,
            fraction,
            seeds,
            seed,
            out,
            analysis,
        } => cmd_robustness(&manifest, mode, fraction, seeds, seed, out.as_deref(), &analysis),
        Command::Synth(args) => cmd_synth(&args),
        Command::Report {
            results,
            stats,
            robustness,
            pool,
            out,
        } => cmd_report(&results, &stats, robustness.as_deref(), pool.as_deref(), &out),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Format => EXIT_FORMAT,
        ErrorClass::Degenerate => EXIT_DEGENERATE,
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Io => EXIT_IO,
        ErrorClass::Numeric => EXIT_SOFTWARE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
            });
            eprintln!("{body}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
