//! The `simulate`, `fit`, `predict` and `eval` subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use fcubt_core::smoothing::{interpolate_curve, smooth_curve, Bandwidth};
use fcubt_core::{
    fcubt, metrics, simulate, FcubtConfig, Kernel, MultiFunData, RawCurve, SamplingGrid,
    SmootherConfig, Truncation, UnivariateSample,
};
use fcubt_core::nalgebra::DMatrix;

use crate::curvefile;
use crate::modelfile::{self, ModelFile, PreprocessEcho, FORMAT_VERSION};

/// Parse an `--ncomp` value: an integer fixes the component count, a ratio
/// in (0, 1] sets the explained-variance target.
pub fn parse_ncomp(s: &str) -> Result<Truncation, String> {
    if let Ok(j) = s.parse::<usize>() {
        if j >= 1 {
            return Ok(Truncation::Fixed(j));
        }
        return Err("fixed component count must be at least 1".into());
    }
    match s.parse::<f64>() {
        Ok(r) if r > 0.0 && r <= 1.0 => Ok(Truncation::Ratio(r)),
        _ => Err(format!(
            "expected an integer count or a ratio in (0, 1], got {s:?}"
        )),
    }
}

fn parse_bandwidth(s: &str) -> Result<Bandwidth, String> {
    if s == "auto" {
        return Ok(Bandwidth::Auto);
    }
    match s.parse::<f64>() {
        Ok(h) if h > 0.0 => Ok(Bandwidth::Fixed(h)),
        _ => Err(format!("expected 'auto' or a positive number, got {s:?}")),
    }
}

fn parse_grid_size(s: &str) -> Result<GridSize, String> {
    if s == "auto" {
        return Ok(GridSize::Auto);
    }
    match s.parse::<usize>() {
        Ok(g) if g >= 2 => Ok(GridSize::Fixed(g)),
        _ => Err(format!("expected 'auto' or an integer >= 2, got {s:?}")),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum GridSize {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KernelArg {
    Epanechnikov,
    Gaussian,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Epanechnikov => Kernel::Epanechnikov,
            KernelArg::Gaussian => Kernel::Gaussian,
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario number (1, 2 or 3)
    #[arg(long)]
    pub scenario: u8,
    /// Number of curves
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the observation noise (scenarios 2 and 3; scenario 1 is always
    /// noiseless)
    #[arg(long)]
    pub noiseless: bool,
    /// Cross-component mixing of scenario 3
    #[arg(long, default_value_t = simulate::SCENARIO3_ALPHA)]
    pub alpha: f64,
    /// Output curve CSV
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let sample = generate(args.scenario, args.n, args.seed, args.noiseless, args.alpha)?;
    curvefile::write_curves(&args.out, &sample.data, Some(&sample.labels))?;
    println!(
        "wrote {} curves ({} components) to {}",
        sample.data.n_curves(),
        sample.data.n_components(),
        args.out.display()
    );
    Ok(())
}

pub fn generate(
    scenario: u8,
    n: usize,
    seed: u64,
    noiseless: bool,
    alpha: f64,
) -> Result<simulate::ScenarioSample> {
    let sample = match scenario {
        1 => simulate::scenario1(n, seed)?,
        2 => simulate::scenario2(n, seed, noiseless)?,
        3 => simulate::scenario3(n, seed, alpha, noiseless)?,
        other => bail!("unknown scenario {other} (expected 1, 2 or 3)"),
    };
    Ok(sample)
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Input curve CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Components per node: integer count or explained-variance ratio
    #[arg(long, default_value = "0.95", value_parser = parse_ncomp)]
    pub ncomp: Truncation,
    #[arg(long, default_value_t = 5)]
    pub kmax: usize,
    #[arg(long, default_value_t = 10)]
    pub minsize: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input is dense and noise-free: interpolate instead of smoothing
    #[arg(long)]
    pub noiseless: bool,
    /// Smoothing bandwidth: 'auto' or a positive number
    #[arg(long, default_value = "auto", value_parser = parse_bandwidth)]
    pub bandwidth: Bandwidth,
    /// Local polynomial degree (0, 1 or 2)
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    #[arg(long, value_enum, default_value_t = KernelArg::Epanechnikov)]
    pub kernel: KernelArg,
    /// Output grid size per component: 'auto' keeps a shared observation
    /// grid or falls back to the median observation count
    #[arg(long, default_value = "auto", value_parser = parse_grid_size)]
    pub grid_size: GridSize,
    /// Output model JSON
    #[arg(long)]
    pub model_out: PathBuf,
    /// Output label CSV
    #[arg(long)]
    pub labels_out: PathBuf,
}

/// Pick one output grid per component.
fn choose_grids(curves: &[RawCurve], grid_size: GridSize) -> Result<Vec<SamplingGrid>> {
    let p = curves[0].n_components();
    let mut grids = Vec::with_capacity(p);
    for comp in 0..p {
        let first = &curves[0].components[comp].times;
        let shared = curves
            .iter()
            .all(|c| c.components[comp].times == *first);
        let lo = curves
            .iter()
            .map(|c| c.components[comp].times[0])
            .fold(f64::INFINITY, f64::min);
        let hi = curves
            .iter()
            .map(|c| *c.components[comp].times.last().unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let grid = match grid_size {
            GridSize::Auto if shared => SamplingGrid::new(first.clone())?,
            GridSize::Auto => {
                let mut counts: Vec<usize> =
                    curves.iter().map(|c| c.components[comp].times.len()).collect();
                counts.sort_unstable();
                let median = counts[counts.len() / 2].max(2);
                SamplingGrid::uniform(lo, hi, median)?
            }
            GridSize::Fixed(g) => SamplingGrid::uniform(lo, hi, g)?,
        };
        grids.push(grid);
    }
    Ok(grids)
}

/// Smooth (or interpolate) raw curves onto the chosen grids.
pub fn prepare(
    curves: &[RawCurve],
    grids: &[SamplingGrid],
    noiseless: bool,
    bandwidth: Bandwidth,
    degree: usize,
    kernel: Kernel,
) -> Result<(MultiFunData, PreprocessEcho)> {
    let p = grids.len();
    let mut components = Vec::with_capacity(p);
    let mut smoothers = Vec::with_capacity(p);
    for (comp, grid) in grids.iter().enumerate() {
        let config = SmootherConfig {
            degree,
            bandwidth,
            kernel,
            output_grid: grid.clone(),
        };
        let mut values = DMatrix::zeros(curves.len(), grid.len());
        for (n, curve) in curves.iter().enumerate() {
            let rc = &curve.components[comp];
            let fitted = if noiseless {
                interpolate_curve(&rc.times, &rc.values, grid)?
            } else {
                smooth_curve(&rc.times, &rc.values, &config)
                    .with_context(|| format!("smoothing curve {n}, component {}", comp + 1))?
            };
            values.row_mut(n).copy_from(&fitted.transpose());
        }
        smoothers.push(config);
        components.push(UnivariateSample::new(grid.clone(), values)?);
    }
    let data = MultiFunData::new(components)?;
    let echo = PreprocessEcho {
        noiseless,
        smoothers: if noiseless { None } else { Some(smoothers) },
    };
    Ok((data, echo))
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let loaded = curvefile::read_curves(&args.input)?;
    let grids = choose_grids(&loaded.curves, args.grid_size)?;
    let (data, preprocess) = prepare(
        &loaded.curves,
        &grids,
        args.noiseless,
        args.bandwidth,
        args.degree,
        args.kernel.into(),
    )?;

    let config = FcubtConfig {
        ncomp: args.ncomp,
        k_max: args.kmax,
        minsize: args.minsize,
        em: fcubt_core::EmConfig::new(args.seed),
    };
    config.validate().map_err(anyhow::Error::from)?;
    if data.n_curves() < config.minsize {
        eprintln!(
            "warning: only {} curves (< minsize {}), returning a single cluster",
            data.n_curves(),
            config.minsize
        );
    }
    let fit = fcubt::fit(&data, &config)?;

    curvefile::write_labels(&args.labels_out, &loaded.ids, &fit.partition.labels)?;
    let model = ModelFile {
        format_version: FORMAT_VERSION,
        seed: args.seed,
        config,
        preprocess,
        fit,
    };
    modelfile::save(&args.model_out, &model)?;

    let mut sizes = BTreeMap::new();
    for &l in &model.fit.partition.labels {
        *sizes.entry(l).or_insert(0usize) += 1;
    }
    println!("clusters: {}", model.fit.n_clusters());
    for (c, count) in sizes {
        println!("cluster {c}: {count} curves");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model JSON produced by `fit`
    #[arg(long)]
    pub model: PathBuf,
    /// Input curve CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Output CSV with labels and per-cluster probabilities
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = modelfile::load(&args.model)?;
    let loaded = curvefile::read_curves(&args.input)?;
    if loaded.curves[0].n_components() != model.fit.grids.len() {
        bail!(
            "input has {} components, model expects {}",
            loaded.curves[0].n_components(),
            model.fit.grids.len()
        );
    }
    // resample onto the model grids (identity when grids already match)
    let data = resample_onto(&loaded.curves, &model.fit.grids)?;
    let prediction = model.fit.predict(&data)?;
    write_prediction(&args.out, &loaded.ids, &prediction)?;
    println!(
        "classified {} curves into {} clusters",
        data.n_curves(),
        model.fit.n_clusters()
    );
    Ok(())
}

pub fn resample_onto(curves: &[RawCurve], grids: &[SamplingGrid]) -> Result<MultiFunData> {
    let mut components = Vec::with_capacity(grids.len());
    for (comp, grid) in grids.iter().enumerate() {
        let mut values = DMatrix::zeros(curves.len(), grid.len());
        for (n, curve) in curves.iter().enumerate() {
            let rc = &curve.components[comp];
            let fitted = interpolate_curve(&rc.times, &rc.values, grid)?;
            values.row_mut(n).copy_from(&fitted.transpose());
        }
        components.push(UnivariateSample::new(grid.clone(), values)?);
    }
    Ok(MultiFunData::new(components)?)
}

pub fn write_prediction(
    path: &Path,
    ids: &[u64],
    prediction: &fcubt::Prediction,
) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    let k = prediction.probabilities.ncols();
    write!(out, "curve_id,label")?;
    for c in 0..k {
        write!(out, ",p{c}")?;
    }
    writeln!(out)?;
    for (row, id) in ids.iter().enumerate() {
        write!(out, "{id},{}", prediction.labels[row])?;
        for c in 0..k {
            write!(out, ",{}", prediction.probabilities[(row, c)])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predicted labels: a curve_id,label CSV or a labeled curve file
    #[arg(long)]
    pub labels: PathBuf,
    /// Reference labels in either format
    #[arg(long)]
    pub truth: PathBuf,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (ids_a, labels_a) = curvefile::read_labels(&args.labels)?;
    let (ids_b, labels_b) = curvefile::read_labels(&args.truth)?;
    let by_id: BTreeMap<u64, usize> = ids_b.iter().copied().zip(labels_b.iter().copied()).collect();
    let mut aligned = Vec::with_capacity(labels_a.len());
    for (id, &l) in ids_a.iter().zip(labels_a.iter()) {
        let Some(&truth) = by_id.get(id) else {
            bail!("curve {id} is missing from the truth file");
        };
        aligned.push((l, truth));
    }
    let u: Vec<usize> = aligned.iter().map(|(l, _)| *l).collect();
    let v: Vec<usize> = aligned.iter().map(|(_, t)| *t).collect();
    let ari = metrics::ari(&u, &v)?;
    println!("{ari}");
    Ok(())
}
