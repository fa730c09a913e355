//! Seeded replication harness behind `fcubt bench`.
//!
//! Runs independent replications of simulate -> (smooth) -> grow -> join
//! (and optionally predict on a fresh online sample), concurrently up to
//! `jobs`, and reports the distribution of the selected cluster count plus
//! ARI quantiles. Replication r derives its seed from the root seed and r,
//! so the output is identical regardless of `jobs`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fcubt_core::smoothing::Bandwidth;
use fcubt_core::{fcubt, metrics, seed, FcubtConfig, Kernel, MultiFunData, Truncation};
use rayon::prelude::*;

use crate::commands::{generate, prepare};

const REP_TAG: u64 = 0x72_6570;
const ONLINE_TAG: u64 = 0x6f6e_6c69_6e65;

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub scenario: u8,
    pub reps: usize,
    /// Sample size for model-selection mode.
    pub n: Option<usize>,
    /// Learning/online sizes for prediction mode.
    pub n0: Option<usize>,
    pub n1: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
    pub ncomp: Truncation,
    pub k_max: usize,
    pub minsize: usize,
}

#[derive(Clone, Debug)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    pub k_selected: Option<usize>,
    pub ari_fit: Option<f64>,
    pub ari_pred: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<RepOutcome>,
    /// Plot-ready CSV (config echo in `#` comment lines).
    pub csv: String,
    /// Human-readable summary.
    pub summary: String,
}

/// Scenario 1 is observed without noise; scenarios 2 and 3 are smoothed
/// with the default local-linear smoother before clustering.
fn preprocess(scenario: u8, sample: &fcubt_core::ScenarioSample) -> Result<MultiFunData> {
    if scenario == 1 {
        return Ok(sample.data.clone());
    }
    let raws: Vec<fcubt_core::RawCurve> = (0..sample.data.n_curves())
        .map(|n| {
            let curve = sample.data.curve(n);
            fcubt_core::RawCurve::new(
                curve
                    .components
                    .iter()
                    .zip(sample.data.components())
                    .map(|(values, comp)| {
                        fcubt_core::RawComponent::new(
                            comp.grid.points().to_vec(),
                            values.iter().copied().collect(),
                        )
                    })
                    .collect::<fcubt_core::Result<Vec<_>>>()?,
            )
            .map_err(anyhow::Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let grids = sample.data.grids();
    let (data, _) = prepare(
        &raws,
        &grids,
        false,
        Bandwidth::Auto,
        1,
        Kernel::Epanechnikov,
    )?;
    Ok(data)
}

fn run_rep(opts: &BenchOptions, rep: usize) -> RepOutcome {
    let rep_seed = seed::derive2(opts.seed, REP_TAG, rep as u64);
    let mut outcome = RepOutcome {
        rep,
        seed: rep_seed,
        k_selected: None,
        ari_fit: None,
        ari_pred: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let config = FcubtConfig {
            ncomp: opts.ncomp,
            k_max: opts.k_max,
            minsize: opts.minsize,
            em: fcubt_core::EmConfig::new(rep_seed),
        };
        let n_train = opts.n0.or(opts.n).expect("validated");
        let sample = generate(
            opts.scenario,
            n_train,
            rep_seed,
            false,
            fcubt_core::simulate::SCENARIO3_ALPHA,
        )?;
        let data = preprocess(opts.scenario, &sample)?;
        let fit = fcubt::fit(&data, &config)?;
        outcome.k_selected = Some(fit.n_clusters());
        outcome.ari_fit = Some(metrics::ari(&sample.labels, &fit.partition.labels)?);
        if let Some(n1) = opts.n1 {
            let online = generate(
                opts.scenario,
                n1,
                seed::derive2(rep_seed, ONLINE_TAG, 0),
                false,
                fcubt_core::simulate::SCENARIO3_ALPHA,
            )?;
            let online_data = preprocess(opts.scenario, &online)?;
            let prediction = fit.predict(&online_data)?;
            outcome.ari_pred = Some(metrics::ari(&online.labels, &prediction.labels)?);
        }
        Ok(())
    })();
    if let Err(e) = result {
        outcome.error = Some(format!("{e:#}"));
    }
    outcome
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn ncomp_echo(t: Truncation) -> String {
    match t {
        Truncation::Ratio(r) => format!("ratio:{r}"),
        Truncation::Fixed(j) => format!("fixed:{j}"),
    }
}

pub fn run_bench(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.reps < 1 {
        bail!("reps must be at least 1");
    }
    if opts.n.is_none() && (opts.n0.is_none() || opts.n1.is_none()) {
        bail!("pass --n (model selection) or both --n0 and --n1 (prediction)");
    }
    if opts.n.is_some() && opts.n0.is_some() {
        bail!("--n and --n0/--n1 are mutually exclusive");
    }
    let prediction_mode = opts.n0.is_some();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .context("cannot build the worker pool")?;
    let rows: Vec<RepOutcome> =
        pool.install(|| (0..opts.reps).into_par_iter().map(|r| run_rep(opts, r)).collect());

    // --- CSV ---
    let mut csv = String::new();
    writeln!(csv, "# fcubt bench")?;
    match (opts.n, opts.n0, opts.n1) {
        (Some(n), _, _) => writeln!(
            csv,
            "# scenario={} mode=model-selection n={n} reps={} seed={}",
            opts.scenario, opts.reps, opts.seed
        )?,
        (_, Some(n0), Some(n1)) => writeln!(
            csv,
            "# scenario={} mode=prediction n0={n0} n1={n1} reps={} seed={}",
            opts.scenario, opts.reps, opts.seed
        )?,
        _ => unreachable!(),
    }
    writeln!(
        csv,
        "# ncomp={} kmax={} minsize={}",
        ncomp_echo(opts.ncomp),
        opts.k_max,
        opts.minsize
    )?;
    let smoothing_echo = if opts.scenario == 1 {
        "none (noiseless scenario)"
    } else {
        "local-linear, epanechnikov, auto bandwidth"
    };
    writeln!(csv, "# smoothing={smoothing_echo}")?;
    if prediction_mode {
        writeln!(csv, "rep,seed,k_selected,ari_fit,ari_pred,error")?;
    } else {
        writeln!(csv, "rep,seed,k_selected,ari_fit,error")?;
    }
    for row in &rows {
        let k = row.k_selected.map_or(String::new(), |k| k.to_string());
        let af = row.ari_fit.map_or(String::new(), |a| a.to_string());
        let err = row.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        if prediction_mode {
            let ap = row.ari_pred.map_or(String::new(), |a| a.to_string());
            writeln!(csv, "{},{},{k},{af},{ap},{err}", row.rep, row.seed)?;
        } else {
            writeln!(csv, "{},{},{k},{af},{err}", row.rep, row.seed)?;
        }
    }

    // --- summary ---
    let mut summary = String::new();
    let ok: Vec<&RepOutcome> = rows.iter().filter(|r| r.error.is_none()).collect();
    let failed = rows.len() - ok.len();
    writeln!(
        summary,
        "scenario {} | {} replications ({} failed)",
        opts.scenario,
        rows.len(),
        failed
    )?;
    if !ok.is_empty() {
        let mut k_counts = std::collections::BTreeMap::new();
        for r in &ok {
            *k_counts.entry(r.k_selected.unwrap()).or_insert(0usize) += 1;
        }
        writeln!(summary, "selected cluster count:")?;
        for (k, count) in &k_counts {
            writeln!(
                summary,
                "  K = {k}: {count}/{} ({:.3})",
                ok.len(),
                *count as f64 / ok.len() as f64
            )?;
        }
        let mut aris: Vec<f64> = ok.iter().filter_map(|r| r.ari_fit).collect();
        aris.sort_by(|a, b| a.partial_cmp(b).unwrap());
        writeln!(
            summary,
            "ARI(fit vs truth) quantiles: min {:.3} | q25 {:.3} | median {:.3} | q75 {:.3} | max {:.3}",
            quantile(&aris, 0.0),
            quantile(&aris, 0.25),
            quantile(&aris, 0.5),
            quantile(&aris, 0.75),
            quantile(&aris, 1.0)
        )?;
        if prediction_mode {
            let mut preds: Vec<f64> = ok.iter().filter_map(|r| r.ari_pred).collect();
            preds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            writeln!(
                summary,
                "ARI(online truth vs predicted) quantiles: min {:.3} | q25 {:.3} | median {:.3} | q75 {:.3} | max {:.3}",
                quantile(&preds, 0.0),
                quantile(&preds, 0.25),
                quantile(&preds, 0.5),
                quantile(&preds, 0.75),
                quantile(&preds, 1.0)
            )?;
        }
    }

    Ok(BenchReport {
        rows,
        csv,
        summary,
    })
}

pub fn write_report(path: &Path, report: &BenchReport) -> Result<()> {
    std::fs::write(path, &report.csv)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
