//! Results tables, figure-ready CSV and markdown reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::composite::{ComponentScores, PsiPool};
use crate::error::{Error, Result};
use crate::pipeline::RunConfig;
use crate::robustness::RobustnessReport;
use crate::stats::{quantile_sorted, StatsReport};
use crate::trial::Condition;

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial_id: String,
    pub condition: Condition,
    pub h_raw: f64,
    pub h_eff: f64,
    pub m: f64,
    pub h_z: f64,
    pub m_z: f64,
    pub psi: f64,
}

pub const RESULT_COLUMNS: [&str; 8] = ["trial_id", "condition", "h_raw", "h_eff", "m", "h_z", "m_z", "psi"];

pub fn result_rows(scores: &[ComponentScores], pool: &PsiPool) -> Result<Vec<ResultRow>> {
    if scores.len() != pool.results.len() {
        return Err(Error::Metadata(format!(
            "{} component rows for a pool of {}",
            scores.len(),
            pool.results.len()
        )));
    }
    scores
        .iter()
        .zip(&pool.results)
        .map(|(s, r)| {
            if s.trial_id != r.trial_id {
                return Err(Error::Metadata(format!(
                    "component row {} does not match pool row {}",
                    s.trial_id, r.trial_id
                )));
            }
            Ok(ResultRow {
                trial_id: s.trial_id.clone(),
                condition: s.condition.clone(),
                h_raw: s.h_raw,
                h_eff: s.h_eff,
                m: s.m,
                h_z: r.h_z,
                m_z: r.m_z,
                psi: r.psi,
            })
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows as CSV text with a header.
pub fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "expected columns {}, found {}",
                RESULT_COLUMNS.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Ψ′ grouped by condition in condition order.
pub fn psi_groups(rows: &[ResultRow]) -> Vec<(Condition, Vec<f64>)> {
    let mut groups: Vec<(Condition, Vec<f64>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(c, _)| *c == row.condition) {
            Some((_, v)) => v.push(row.psi),
            None => groups.push((row.condition.clone(), vec![row.psi])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSemRow {
    pub condition: Condition,
    pub n: usize,
    pub mean: f64,
    pub sem: f64,
}

pub fn mean_sem_rows(stats: &StatsReport) -> Vec<MeanSemRow> {
    stats
        .summaries
        .iter()
        .map(|s| MeanSemRow {
            condition: s.condition.clone(),
            n: s.n,
            mean: s.mean,
            sem: s.sem,
        })
        .collect()
}

/// Box-plot statistics with whiskers at exactly 1.5 IQR beyond the quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub condition: Condition,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub trial_id: String,
    pub condition: Condition,
    pub psi: f64,
    pub outlier: bool,
}

pub fn box_rows(rows: &[ResultRow]) -> Vec<BoxRow> {
    psi_groups(rows)
        .into_iter()
        .map(|(condition, mut v)| {
            v.sort_by(f64::total_cmp);
            let q1 = quantile_sorted(&v, 0.25);
            let q3 = quantile_sorted(&v, 0.75);
            let iqr = q3 - q1;
            BoxRow {
                condition,
                n: v.len(),
                median: quantile_sorted(&v, 0.5),
                q1,
                q3,
                iqr,
                whisker_low: q1 - 1.5 * iqr,
                whisker_high: q3 + 1.5 * iqr,
            }
        })
        .collect()
}

pub fn distribution_rows(rows: &[ResultRow], boxes: &[BoxRow]) -> Vec<DistributionRow> {
    rows.iter()
        .map(|r| {
            let b = boxes
                .iter()
                .find(|b| b.condition == r.condition)
                .expect("every condition has a box");
            DistributionRow {
                trial_id: r.trial_id.clone(),
                condition: r.condition.clone(),
                psi: r.psi,
                outlier: r.psi < b.whisker_low || r.psi > b.whisker_high,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub mode: String,
    pub run: String,
    pub condition: Condition,
    pub n_trials: usize,
    pub channels: usize,
    pub mean_psi: f64,
    pub std_across_seeds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub mode: String,
    pub run: String,
    pub seed: u64,
    pub condition: Condition,
    pub psi: f64,
}

fn mode_label(report: &RobustnessReport) -> String {
    serde_json::to_value(report.mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn robustness_rows(report: &RobustnessReport) -> Vec<RobustnessRow> {
    let mode = mode_label(report);
    report
        .runs
        .iter()
        .flat_map(|run| {
            let mode = mode.clone();
            run.conditions.iter().map(move |c| RobustnessRow {
                mode: mode.clone(),
                run: run.label.clone(),
                condition: c.condition.clone(),
                n_trials: c.n_trials,
                channels: run.channels,
                mean_psi: c.mean_psi,
                std_across_seeds: c.std_across_seeds,
            })
        })
        .collect()
}

pub fn seed_rows(report: &RobustnessReport) -> Vec<SeedRow> {
    let mode = mode_label(report);
    let mut out = Vec::new();
    for run in &report.runs {
        for (k, &seed) in run.seeds.iter().enumerate() {
            for c in &run.conditions {
                out.push(SeedRow {
                    mode: mode.clone(),
                    run: run.label.clone(),
                    seed,
                    condition: c.condition.clone(),
                    psi: c.per_seed[k],
                });
            }
        }
    }
    out
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

/// Per-condition summary, ANOVA line and pairwise table.
pub fn stats_markdown(stats: &StatsReport) -> String {
    let mut md = String::new();
    md.push_str("| Condition | n | Ψ′ mean ± SEM | Median | IQR |\n");
    md.push_str("|---|---:|---:|---:|---:|\n");
    for s in &stats.summaries {
        let _ = writeln!(
            md,
            "| {} | {} | {:.3} ± {:.3} | {:.3} | {:.3} |",
            s.condition, s.n, s.mean, s.sem, s.median, s.iqr
        );
    }
    let a = &stats.anova;
    let _ = writeln!(
        md,
        "\nOne-way ANOVA: F({}, {}) = {:.3}, p = {}, η² = {:.3}\n",
        a.df_between,
        a.df_within,
        a.f,
        fmt_p(a.p),
        a.eta_squared
    );
    let _ = writeln!(md, "Pairwise Welch tests, Benjamini-Hochberg at q = {}:\n", stats.q);
    md.push_str("| A | B | t | df | p | p (BH) | d | significant |\n");
    md.push_str("|---|---|---:|---:|---:|---:|---:|:---:|\n");
    for c in &stats.comparisons {
        let _ = writeln!(
            md,
            "| {} | {} | {:.3} | {:.1} | {} | {} | {:.2} | {} |",
            c.condition_a,
            c.condition_b,
            c.t,
            c.df,
            fmt_p(c.p_raw),
            fmt_p(c.p_adjusted),
            c.cohens_d,
            if c.significant { "yes" } else { "no" }
        );
    }
    md
}

pub fn robustness_markdown(reports: &[RobustnessReport]) -> String {
    let mut md = String::new();
    for report in reports {
        let _ = writeln!(
            md,
            "### {} reruns\n\nOrdering stable across all runs: {}{}\n",
            mode_label(report),
            if report.ordering_stable { "yes" } else { "no" },
            if report.low_n { " (some conditions have fewer than 2 trials)" } else { "" }
        );
        md.push_str("| Run | Channels | Condition | Mean Ψ′ | SD across seeds |\n");
        md.push_str("|---|---:|---|---:|---:|\n");
        for row in robustness_rows(report) {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.3} | {:.3} |",
                row.run, row.channels, row.condition, row.mean_psi, row.std_across_seeds
            );
        }
        for run in &report.runs {
            if run.seeds.len() > 1 {
                let _ = writeln!(
                    md,
                    "\n{}: ordering held in {} of {} seeds.",
                    run.label,
                    run.seeds_ordered(),
                    run.seeds.len()
                );
            }
        }
        md.push('\n');
    }
    md
}

/// Paths written by [`write_report`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub csv: Vec<PathBuf>,
}

/// Writes the markdown report and figure CSVs into `dir`.
pub fn write_report(
    dir: impl AsRef<Path>,
    rows: &[ResultRow],
    stats: &StatsReport,
    robustness: &[RobustnessReport],
    config: Option<&RunConfig>,
) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = Vec::new();

    let fig1 = dir.join("fig1_mean_sem.csv");
    write_rows(&fig1, &mean_sem_rows(stats))?;
    csv.push(fig1);

    let boxes = box_rows(rows);
    let fig2 = dir.join("fig2_box.csv");
    write_rows(&fig2, &boxes)?;
    csv.push(fig2);
    let fig2_trials = dir.join("fig2_trials.csv");
    write_rows(&fig2_trials, &distribution_rows(rows, &boxes))?;
    csv.push(fig2_trials);

    for report in robustness {
        let mode = mode_label(report);
        let path = dir.join(format!("fig3_{mode}.csv"));
        write_rows(&path, &robustness_rows(report))?;
        csv.push(path);
        let seeds = seed_rows(report);
        if !seeds.is_empty() {
            let path = dir.join(format!("fig3_{mode}_per_seed.csv"));
            write_rows(&path, &seeds)?;
            csv.push(path);
        }
    }

    let mut md = String::from("# Ψ′ report\n\n");
    let _ = writeln!(md, "Pool of {} trials. Ψ′ is relative to this pool.\n", rows.len());
    md.push_str("## Conditions\n\n");
    md.push_str(&stats_markdown(stats));
    md.push_str("\n## Distribution\n\n");
    md.push_str("| Condition | Median | Q1 | Q3 | Lower whisker | Upper whisker | Outliers |\n");
    md.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    let dist = distribution_rows(rows, &boxes);
    for b in &boxes {
        let outliers = dist.iter().filter(|d| d.condition == b.condition && d.outlier).count();
        let _ = writeln!(
            md,
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {} |",
            b.condition, b.median, b.q1, b.q3, b.whisker_low, b.whisker_high, outliers
        );
    }
    md.push_str("\n## Robustness\n\n");
    if robustness.is_empty() {
        md.push_str("No robustness results were supplied; this section is omitted.\n");
    } else {
        md.push_str(&robustness_markdown(robustness));
    }
    if let Some(config) = config {
        md.push_str("\n## Configuration\n\n```json\n");
        md.push_str(&serde_json::to_string_pretty(config).expect("config serialises"));
        md.push_str("\n```\n");
    }
    let markdown = dir.join("report.md");
    fs::write(&markdown, md).map_err(|e| Error::io(&markdown, e))?;
    Ok(ReportFiles { markdown, csv })
}
