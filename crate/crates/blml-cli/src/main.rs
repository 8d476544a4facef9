//! Command-line front end for the band-limited density estimators: single
//! fits, error and timing sweeps, cut-off scans, and conditional-intensity
//! fitting, all emitting plot-ready CSV and JSON artifacts.
//!
//! Every artifact carries the first sixteen hex digits of its
//! configuration hash and the seed (or `none`), so outputs are traceable
//! and reruns are byte-reproducible.

mod io;

use std::hint::black_box;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use blml::bandwidth::{detect_knee, mnll_scan, KneePoint, ScanAlgorithm, ScanConfig};
use blml::fit::{fit_bqp, fit_quick, fit_trivial, BlmlFit};
use blml::kde::{kde_fit, schedule_bandwidth, KdeKind, KdeModel};
use blml::mise::{mise_sweep, EstimatorSpec, MiseConfig, MiseReport, QuadratureSpec};
use blml::pointprocess::{
    build_covariates, covariates_at_events, fit_cif, time_rescale, CifBackend, CifDomain,
    CovariateTrack,
};
use blml::seeding::derive_rng;
use blml::surrogate::{AnalyticPdf, PdfKind};
use blml::{CutoffFrequency, NewtonConfig, SampleSet};

#[derive(Parser)]
#[command(
    name = "blml",
    version,
    about = "Band-limited maximum-likelihood density estimation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one sample file and write the fit as JSON.
    Fit(FitArgs),
    /// Mean integrated squared error sweep over estimators and sizes.
    Mise(MiseArgs),
    /// Cut-off scans: error against the cut-off, or the score knee.
    Fcscan(FcscanArgs),
    /// Wall-clock timing per estimator and sample size.
    BenchTime(BenchArgs),
    /// Conditional-intensity fit with a held-out goodness-of-fit check.
    Cif(CifArgs),
}

fn main() -> Result<()> {
    init_threads()?;
    match Cli::parse().command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Mise(args) => cmd_mise(&args),
        Command::Fcscan(args) => cmd_fcscan(&args),
        Command::BenchTime(args) => cmd_bench_time(&args),
        Command::Cif(args) => cmd_cif(&args),
    }
}

/// `BLML_THREADS` caps the worker pool; unset leaves the default.
fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BLML_THREADS") else {
        return Ok(());
    };
    let count: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow!("BLML_THREADS must be a positive integer, got {raw:?}"))?;
    if count == 0 {
        bail!("BLML_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(count)
        .build_global()
        .context("installing the worker pool")?;
    Ok(())
}

// ---------------------------------------------------------------- fit

#[derive(Args, Serialize)]
struct FitArgs {
    /// Sample CSV with header `x` (one dimension) or `x1,..,xd`.
    #[arg(long)]
    input: PathBuf,
    /// Estimator to run.
    #[arg(long, value_enum)]
    algo: AlgoKind,
    /// Cut-off frequency, one value per coordinate, comma separated.
    #[arg(long, value_delimiter = ',')]
    fc: Vec<f64>,
    /// Kernel bandwidth; required for kde2 and kde6.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Bin rate per coordinate for the binned fit; defaults automatically.
    #[arg(long, value_delimiter = ',')]
    grid_rate: Option<Vec<f64>>,
    /// Newton-solve budget for the sign search.
    #[arg(long, default_value_t = 64)]
    budget: usize,
    /// Fit JSON output path.
    #[arg(long)]
    #[serde(skip_serializing)]
    out: PathBuf,
    /// Optional density-curve CSV (one-dimensional fits only).
    #[arg(long)]
    #[serde(skip_serializing)]
    curve: Option<PathBuf>,
    /// Curve grid as `lo:hi:count`; defaults to the padded sample range.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AlgoKind {
    Trivial,
    Quick,
    Bqp,
    Kde2,
    Kde6,
    Kdesinc,
}

#[derive(Clone, Serialize)]
struct SearchSummary {
    objective: f64,
    solves: usize,
    budget_exhausted: bool,
    ascent_steps: usize,
}

/// Fit artifact; the kernel estimators fill only the header fields.
#[derive(Serialize)]
struct FitArtifact {
    config_hash: String,
    algorithm: String,
    dim: usize,
    sample_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    cutoff: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_rate: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    node_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coefficients: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    likelihood: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    integral: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    search: Option<SearchSummary>,
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let hash = io::config_hash(args)?;
    let samples = io::read_samples(&args.input)?;
    let newton = NewtonConfig::default();

    enum Fitted {
        Band(BlmlFit, Option<SearchSummary>),
        Kernel(KdeModel),
    }
    let fitted = match args.algo {
        AlgoKind::Trivial | AlgoKind::Quick | AlgoKind::Bqp => {
            let fc = cutoff_from(&args.fc, samples.dim())?;
            match args.algo {
                AlgoKind::Trivial => Fitted::Band(fit_trivial(&samples, &fc, &newton)?, None),
                AlgoKind::Quick => Fitted::Band(
                    fit_quick(&samples, &fc, args.grid_rate.as_deref(), &newton)?,
                    None,
                ),
                _ => {
                    let bqp = fit_bqp(&samples, &fc, args.budget, &newton)?;
                    let search = SearchSummary {
                        objective: bqp.state.objective,
                        solves: bqp.state.solves,
                        budget_exhausted: bqp.state.budget_exhausted,
                        ascent_steps: bqp.state.ascent_steps,
                    };
                    Fitted::Band(bqp.fit, Some(search))
                }
            }
        }
        AlgoKind::Kde2 | AlgoKind::Kde6 | AlgoKind::Kdesinc => {
            if samples.dim() != 1 {
                bail!("kernel fits are one-dimensional; {} has {} coordinates", args.input.display(), samples.dim());
            }
            let (kind, parameter) = match args.algo {
                AlgoKind::Kde2 => (KdeKind::Gauss2, args.bandwidth.ok_or_else(|| anyhow!("kde2 needs --bandwidth"))?),
                AlgoKind::Kde6 => (KdeKind::Gauss6, args.bandwidth.ok_or_else(|| anyhow!("kde6 needs --bandwidth"))?),
                _ => (KdeKind::Sinc, *cutoff_from(&args.fc, 1)?.per_dim().first().unwrap()),
            };
            Fitted::Kernel(kde_fit(&samples, kind, parameter)?)
        }
    };

    let artifact = match &fitted {
        Fitted::Band(fit, search) => FitArtifact {
            config_hash: hash.clone(),
            algorithm: fit.algorithm().to_string(),
            dim: fit.dim(),
            sample_count: samples.len(),
            cutoff: Some(fit.cutoff().per_dim().to_vec()),
            bandwidth: None,
            grid_rate: fit.grid_rate().map(<[f64]>::to_vec),
            node_count: Some(fit.len()),
            nodes: Some(fit.nodes().iter_points().map(<[f64]>::to_vec).collect()),
            weights: Some(fit.weights().to_vec()),
            coefficients: Some(fit.coefficients().values().to_vec()),
            residual_norm: Some(fit.residual_norm()),
            likelihood: Some(fit.likelihood()),
            integral: Some(fit.integral_analytic()),
            search: search.clone(),
        },
        Fitted::Kernel(model) => FitArtifact {
            config_hash: hash.clone(),
            algorithm: model.kind().name().to_string(),
            dim: 1,
            sample_count: samples.len(),
            cutoff: (model.kind() == KdeKind::Sinc).then(|| vec![model.parameter()]),
            bandwidth: (model.kind() != KdeKind::Sinc).then(|| model.parameter()),
            grid_rate: None,
            node_count: None,
            nodes: None,
            weights: None,
            coefficients: None,
            residual_norm: None,
            likelihood: None,
            integral: None,
            search: None,
        },
    };
    io::write_json(&args.out, &artifact)?;
    println!("wrote {} ({})", args.out.display(), artifact.algorithm);

    if let Some(curve_path) = &args.curve {
        if samples.dim() != 1 {
            bail!("density curves are one-dimensional; the input has {} coordinates", samples.dim());
        }
        let (lo, hi, count) = match &args.grid {
            Some(spec) => parse_grid_spec(spec)?,
            None => {
                // Default span: the sample range plus a margin where the
                // fitted density still carries visible mass.
                let pad = match &fitted {
                    Fitted::Band(fit, _) => {
                        4.0 / fit.cutoff().per_dim().iter().cloned().fold(f64::INFINITY, f64::min)
                    }
                    Fitted::Kernel(model) => match model.kind() {
                        KdeKind::Sinc => 4.0 / model.parameter(),
                        _ => 4.0 * model.parameter(),
                    },
                };
                let xs = samples.scalars()?;
                let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo - pad, hi + pad, 501)
            }
        };
        let grid = linear_grid(lo, hi, count);
        let density = match &fitted {
            Fitted::Band(fit, _) => fit.eval_density(&grid)?,
            Fitted::Kernel(model) => model.eval_density(&grid),
        };
        let mut body = String::from("x,density\n");
        for (x, f) in grid.iter().zip(&density) {
            body.push_str(&format!("{x},{f}\n"));
        }
        io::write_stamped_csv(curve_path, &hash, None, &body)?;
        println!("wrote {} ({count} points)", curve_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------- mise

#[derive(Args, Serialize)]
struct MiseArgs {
    /// Analytic truth: sinc2, sinc4mix, or gaussian.
    #[arg(long)]
    pdf: String,
    /// Comma list from trivial, quick, bqp, kde2, kde6, kdesinc.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    /// Comma list of sample sizes; `a..b` expands by factors of ten.
    #[arg(long)]
    sizes: String,
    /// Replicates per (estimator, size) cell.
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    /// Cut-off handed to the estimators; defaults to the truth's band edge.
    #[arg(long)]
    fc: Option<f64>,
    /// Bandwidth-schedule scale for the kernel estimators.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Sign-search solve budget when bqp is listed.
    #[arg(long, default_value_t = 64)]
    budget: usize,
    /// Report CSV output path.
    #[arg(long)]
    #[serde(skip_serializing)]
    out: PathBuf,
    /// Optional JSON copy of the report.
    #[arg(long)]
    #[serde(skip_serializing)]
    json: Option<PathBuf>,
}

#[derive(Serialize)]
struct MiseArtifact {
    config_hash: String,
    report: MiseReport,
}

fn cmd_mise(args: &MiseArgs) -> Result<()> {
    let hash = io::config_hash(args)?;
    let kind = PdfKind::from_name(&args.pdf)?;
    let cutoff = resolve_cutoff(kind, args.fc)?;
    let estimators = args
        .estimators
        .iter()
        .map(|name| estimator_spec(name, cutoff, args.scale, args.budget))
        .collect::<Result<Vec<_>>>()?;
    let config = MiseConfig {
        truth: kind,
        estimators,
        sizes: parse_size_list(&args.sizes)?,
        replicates: args.reps,
        seed: args.seed,
        quadrature: QuadratureSpec::default(),
        newton: NewtonConfig::default(),
    };
    let report = mise_sweep(&config)?;
    io::write_stamped_csv(&args.out, &hash, Some(args.seed), &report.csv_string())?;
    println!("wrote {} ({} cells)", args.out.display(), report.cells.len());
    if let Some(json_path) = &args.json {
        io::write_json(json_path, &MiseArtifact { config_hash: hash, report })?;
        println!("wrote {}", json_path.display());
    }
    Ok(())
}

fn resolve_cutoff(kind: PdfKind, flag: Option<f64>) -> Result<f64> {
    if let Some(fc) = flag {
        if !(fc.is_finite() && fc > 0.0) {
            bail!("configuration error: the cut-off must be positive, got {fc}");
        }
        return Ok(fc);
    }
    AnalyticPdf::new(kind)?
        .true_cutoff()
        .ok_or_else(|| anyhow!("configuration error: {} has no band edge; pass --fc", kind.name()))
}

fn estimator_spec(name: &str, cutoff: f64, scale: f64, budget: usize) -> Result<EstimatorSpec> {
    Ok(match name {
        "trivial" => EstimatorSpec::Trivial { cutoff },
        "quick" => EstimatorSpec::Quick { cutoff, grid_rate: None },
        "bqp" => EstimatorSpec::Bqp { cutoff, budget },
        "kde2" => EstimatorSpec::Kde { kind: KdeKind::Gauss2, cutoff, scale },
        "kde6" => EstimatorSpec::Kde { kind: KdeKind::Gauss6, cutoff, scale },
        "kdesinc" => EstimatorSpec::Kde { kind: KdeKind::Sinc, cutoff, scale },
        other => bail!("configuration error: unknown estimator {other:?}"),
    })
}

// ---------------------------------------------------------------- fcscan

#[derive(Args, Serialize)]
struct FcscanArgs {
    /// Scan mode.
    #[arg(long, value_enum)]
    mode: ScanMode,
    /// Analytic truth for simulated draws.
    #[arg(long, default_value = "sinc4mix")]
    pdf: String,
    /// Sample count per draw.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// mise-vs-fc: comma list of cut-off ratios against the band edge.
    #[arg(long, default_value = "")]
    ratios: String,
    /// mise-vs-fc: replicates per ratio.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// mise-vs-fc: estimator to scan, trivial or quick.
    #[arg(long, default_value = "quick")]
    estimator: String,
    /// mnll: cut-off grid as `lo:hi:count`.
    #[arg(long, default_value = "0.05:2.0:40")]
    fc_grid: String,
    /// mnll: sample CSV; simulated from --pdf when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// mnll: fit algorithm backing the scan.
    #[arg(long, value_enum, default_value_t = ScanAlgo::Quick)]
    scan_algo: ScanAlgo,
    /// Scan CSV output path.
    #[arg(long)]
    #[serde(skip_serializing)]
    out: PathBuf,
    /// mnll: optional knee JSON path.
    #[arg(long)]
    #[serde(skip_serializing)]
    knee: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScanMode {
    MiseVsFc,
    Mnll,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScanAlgo {
    Trivial,
    Quick,
}

#[derive(Serialize)]
struct KneeArtifact {
    config_hash: String,
    seed: u64,
    found: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    knee: Option<KneePoint>,
}

fn cmd_fcscan(args: &FcscanArgs) -> Result<()> {
    let hash = io::config_hash(args)?;
    match args.mode {
        ScanMode::MiseVsFc => {
            let kind = PdfKind::from_name(&args.pdf)?;
            let base = AnalyticPdf::new(kind)?.true_cutoff().ok_or_else(|| {
                anyhow!("configuration error: {} has no band edge to scan against", kind.name())
            })?;
            let ratios = parse_number_list(&args.ratios).context("parsing --ratios")?;
            if ratios.is_empty() {
                bail!("configuration error: the ratio grid is empty");
            }
            let mut body = String::from("ratio,cutoff,replicates,failures,mean_ise,stderr_ise\n");
            for &ratio in &ratios {
                let cutoff = ratio * base;
                // The seed is shared across ratios, so every cut-off sees
                // the same draws and the curve is a paired comparison.
                let config = MiseConfig {
                    truth: kind,
                    estimators: vec![scan_estimator(&args.estimator, cutoff)?],
                    sizes: vec![args.n],
                    replicates: args.reps,
                    seed: args.seed,
                    quadrature: QuadratureSpec::default(),
                    newton: NewtonConfig::default(),
                };
                let cell = &mise_sweep(&config)?.cells[0];
                body.push_str(&format!(
                    "{ratio},{cutoff},{},{},{},{}\n",
                    cell.replicates, cell.failures, cell.mean_ise, cell.stderr_ise
                ));
            }
            io::write_stamped_csv(&args.out, &hash, Some(args.seed), &body)?;
            println!("wrote {} ({} ratios)", args.out.display(), ratios.len());
        }
        ScanMode::Mnll => {
            let samples = match &args.input {
                Some(path) => io::read_samples(path)?,
                None => {
                    let truth = AnalyticPdf::new(PdfKind::from_name(&args.pdf)?)?;
                    let mut rng = derive_rng(args.seed, &[2]);
                    SampleSet::from_scalars(truth.sample(args.n, &mut rng)?, "simulated")?
                }
            };
            let (lo, hi, count) = parse_grid_spec(&args.fc_grid)?;
            let grid = linear_grid(lo, hi, count);
            let algorithm = match args.scan_algo {
                ScanAlgo::Trivial => ScanAlgorithm::Trivial,
                ScanAlgo::Quick => ScanAlgorithm::Quick,
            };
            let scan =
                mnll_scan(&samples, &grid, &ScanConfig { algorithm, newton: NewtonConfig::default() })?;
            io::write_stamped_csv(&args.out, &hash, Some(args.seed), &scan.csv_string())?;
            println!("wrote {} ({} grid points)", args.out.display(), grid.len());
            let knee = detect_knee(&scan);
            match &knee {
                Ok(k) => println!(
                    "knee at cut-off {} (grid index {}, contrast {:.2})",
                    k.cutoff, k.index, k.ratio
                ),
                Err(e) => println!("{e}"),
            }
            if let Some(knee_path) = &args.knee {
                let artifact = KneeArtifact {
                    config_hash: hash,
                    seed: args.seed,
                    found: knee.is_ok(),
                    knee: knee.ok(),
                };
                io::write_json(knee_path, &artifact)?;
                println!("wrote {}", knee_path.display());
            }
        }
    }
    Ok(())
}

fn scan_estimator(name: &str, cutoff: f64) -> Result<EstimatorSpec> {
    Ok(match name {
        "trivial" => EstimatorSpec::Trivial { cutoff },
        "quick" => EstimatorSpec::Quick { cutoff, grid_rate: None },
        other => bail!("configuration error: the cut-off scan runs trivial or quick, not {other:?}"),
    })
}

// ---------------------------------------------------------------- bench

#[derive(Args, Serialize)]
struct BenchArgs {
    /// Comma list from trivial, quick, bqp, kde2, kde6, kdesinc.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    /// Comma list of sample sizes; `a..b` expands by factors of ten.
    #[arg(long)]
    sizes: String,
    /// Analytic source of the timing draws.
    #[arg(long, default_value = "sinc4mix")]
    pdf: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cut-off for the band-limited estimators; defaults to the band edge.
    #[arg(long)]
    fc: Option<f64>,
    /// Bandwidth-schedule scale for the kernel estimators.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Sign-search solve budget when bqp is listed.
    #[arg(long, default_value_t = 64)]
    budget: usize,
    /// Timing CSV output path.
    #[arg(long)]
    #[serde(skip_serializing)]
    out: PathBuf,
}

/// Each timed run fits the estimator and evaluates the density on this
/// many query points, so lazy estimators pay their evaluation cost too.
const BENCH_EVAL_POINTS: usize = 128;
const BENCH_RUNS: usize = 3;

fn cmd_bench_time(args: &BenchArgs) -> Result<()> {
    let hash = io::config_hash(args)?;
    if args.estimators.is_empty() {
        bail!("configuration error: the estimator list is empty");
    }
    let kind = PdfKind::from_name(&args.pdf)?;
    let truth = AnalyticPdf::new(kind)?;
    let cutoff = resolve_cutoff(kind, args.fc)?;
    let sizes = parse_size_list(&args.sizes)?;
    let newton = NewtonConfig::default();

    let mut body = String::from("estimator,n,seconds\n");
    for &n in &sizes {
        // One draw per size, shared by every estimator at that size.
        let mut rng = derive_rng(args.seed, &[3, n as u64]);
        let xs = truth.sample(n, &mut rng)?;
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let queries = linear_grid(lo, hi, BENCH_EVAL_POINTS);
        let samples = SampleSet::from_scalars(xs, "bench")?;
        let fc = CutoffFrequency::scalar(cutoff)?;

        for name in &args.estimators {
            let mut run: Box<dyn FnMut() -> Result<f64>> = match name.as_str() {
                "trivial" => Box::new(|| {
                    Ok(fit_trivial(&samples, &fc, &newton)?.eval_density(&queries)?.iter().sum())
                }),
                "quick" => Box::new(|| {
                    Ok(fit_quick(&samples, &fc, None, &newton)?.eval_density(&queries)?.iter().sum())
                }),
                "bqp" => Box::new(|| {
                    Ok(fit_bqp(&samples, &fc, args.budget, &newton)?
                        .fit
                        .eval_density(&queries)?
                        .iter()
                        .sum())
                }),
                "kde2" | "kde6" => {
                    let kde = if name == "kde2" { KdeKind::Gauss2 } else { KdeKind::Gauss6 };
                    let (samples, queries, scale) = (&samples, &queries, args.scale);
                    Box::new(move || {
                        let h = schedule_bandwidth(kde, cutoff, samples.len(), scale)?;
                        Ok(kde_fit(samples, kde, h)?.eval_density(queries).iter().sum())
                    })
                }
                "kdesinc" => Box::new(|| {
                    Ok(kde_fit(&samples, KdeKind::Sinc, cutoff)?.eval_density(&queries).iter().sum())
                }),
                other => bail!("configuration error: unknown estimator {other:?}"),
            };
            black_box(run().with_context(|| format!("warming up {name} at n={n}"))?);
            let mut laps = Vec::with_capacity(BENCH_RUNS);
            for _ in 0..BENCH_RUNS {
                let clock = Instant::now();
                black_box(run()?);
                laps.push(clock.elapsed().as_secs_f64());
            }
            laps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            body.push_str(&format!("{name},{n},{:.6}\n", laps[BENCH_RUNS / 2]));
        }
    }
    io::write_stamped_csv(&args.out, &hash, Some(args.seed), &body)?;
    println!("wrote {} ({} estimators x {} sizes)", args.out.display(), args.estimators.len(), sizes.len());
    Ok(())
}

// ---------------------------------------------------------------- cif

#[derive(Args, Serialize)]
struct CifArgs {
    /// Event-time CSV with header `t`.
    #[arg(long)]
    spikes: PathBuf,
    /// Covariate path CSV with header `t,x` or `t,x,y`.
    #[arg(long)]
    covariates: PathBuf,
    /// Cut-off per model coordinate for the band-limited backend.
    #[arg(long, value_delimiter = ',')]
    cutoff: Vec<f64>,
    /// Kernel bandwidth per coordinate; selects the kernel backend.
    #[arg(long, value_delimiter = ',')]
    bandwidth: Option<Vec<f64>>,
    /// Domain lower corner; defaults to the observed minimum.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lo: Option<Vec<f64>>,
    /// Domain upper corner; defaults to the observed maximum.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    hi: Option<Vec<f64>>,
    /// Evaluation grid points per coordinate.
    #[arg(long, default_value_t = 201)]
    grid_points: usize,
    /// Add log time since the previous event as a model coordinate.
    #[arg(long)]
    history: bool,
    /// Model summary JSON path.
    #[arg(long)]
    #[serde(skip_serializing)]
    out_model: PathBuf,
    /// Goodness-of-fit JSON path.
    #[arg(long)]
    #[serde(skip_serializing)]
    out_ks: PathBuf,
    /// Calibration curve CSV path.
    #[arg(long)]
    #[serde(skip_serializing)]
    out_curve: PathBuf,
}

/// Fraction of the record used for fitting; the rest calibrates.
const TRAIN_FRACTION: f64 = 0.8;

#[derive(Serialize)]
struct CifModelArtifact {
    config_hash: String,
    backend: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    cutoff: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth: Option<Vec<f64>>,
    history: bool,
    dim: usize,
    rate: f64,
    floor_hits: u64,
    split_time: f64,
    train_duration: f64,
    train_events: usize,
    test_events: usize,
    domain_lo: Vec<f64>,
    domain_hi: Vec<f64>,
    grid_points: Vec<usize>,
}

#[derive(Serialize)]
struct KsArtifact {
    config_hash: String,
    statistic: f64,
    normalized: f64,
    intervals: usize,
    pass: bool,
}

fn cmd_cif(args: &CifArgs) -> Result<()> {
    let hash = io::config_hash(args)?;
    let track = io::read_track(&args.covariates)?;
    let spikes = io::read_spikes(&args.spikes)?;
    if track.len() < 5 {
        bail!("configuration error: the covariate path is too short to split");
    }

    let dim = track.dim() + usize::from(args.history);
    let backend = match &args.bandwidth {
        Some(h) => {
            if h.len() != dim {
                bail!("configuration error: {} bandwidths for {dim} model coordinates", h.len());
            }
            CifBackend::Kde { bandwidth: h.clone() }
        }
        None => {
            if args.cutoff.len() != dim {
                bail!("configuration error: {} cut-offs for {dim} model coordinates", args.cutoff.len());
            }
            CifBackend::Quick { cutoff: args.cutoff.clone() }
        }
    };

    let split = (((track.len() as f64) * TRAIN_FRACTION).round() as usize).clamp(2, track.len() - 2);
    let split_time = track.time(split);
    let flatten = |range: std::ops::Range<usize>| -> Vec<f64> {
        range.flat_map(|i| track.row(i).iter().copied()).collect()
    };
    let train_track = CovariateTrack::new(track.start(), track.step(), flatten(0..split), track.dim())?;
    let test_track =
        CovariateTrack::new(split_time, track.step(), flatten(split..track.len()), track.dim())?;
    let train_spikes = spikes.restricted(track.start(), split_time);
    let test_spikes = spikes.restricted(split_time, track.end());

    let events = covariates_at_events(&train_track, &train_spikes, args.history)?;
    let occupancy = build_covariates(&train_track, &train_spikes, args.history)?;
    let domain = resolve_domain(args, &track, &spikes, dim)?;
    let newton = NewtonConfig::default();
    let model = fit_cif(&events, &occupancy, split_time - track.start(), &backend, &domain, &newton)?;

    let test_occupancy = build_covariates(&test_track, &test_spikes, args.history)?;
    let intensity = model.eval_rows(test_occupancy.rows())?;
    let grid_times = test_occupancy.times();
    let (grid_lo, grid_hi) = (grid_times[0], grid_times[grid_times.len() - 1]);
    let test_times: Vec<f64> = test_spikes
        .times()
        .iter()
        .copied()
        .filter(|t| (grid_lo..=grid_hi).contains(t))
        .collect();
    let report = time_rescale(&test_times, grid_times, &intensity)?;

    let backend_name = match backend {
        CifBackend::Quick { .. } => "quick",
        CifBackend::Kde { .. } => "kde",
    };
    io::write_json(
        &args.out_model,
        &CifModelArtifact {
            config_hash: hash.clone(),
            backend: backend_name.into(),
            cutoff: args.bandwidth.is_none().then(|| args.cutoff.clone()),
            bandwidth: args.bandwidth.clone(),
            history: args.history,
            dim,
            rate: model.rate(),
            floor_hits: model.floor_hits(),
            split_time,
            train_duration: split_time - track.start(),
            train_events: events.len(),
            test_events: test_times.len(),
            domain_lo: domain.lo.clone(),
            domain_hi: domain.hi.clone(),
            grid_points: domain.grid_points.clone(),
        },
    )?;
    io::write_json(
        &args.out_ks,
        &KsArtifact {
            config_hash: hash.clone(),
            statistic: report.statistic,
            normalized: report.normalized,
            intervals: report.intervals,
            pass: report.pass,
        },
    )?;
    io::write_stamped_csv(&args.out_curve, &hash, None, &report.csv_string())?;
    println!(
        "wrote {}, {}, {} (normalized distance {:.3}, {})",
        args.out_model.display(),
        args.out_ks.display(),
        args.out_curve.display(),
        report.normalized,
        if report.pass { "inside the 95% band" } else { "outside the 95% band" }
    );
    Ok(())
}

/// Model domain: flags when given, otherwise the observed per-coordinate
/// range over the whole record, padded a hair so edge points stay inside.
fn resolve_domain(
    args: &CifArgs,
    track: &CovariateTrack,
    spikes: &blml::pointprocess::SpikeTrain,
    dim: usize,
) -> Result<CifDomain> {
    let (lo, hi) = match (&args.lo, &args.hi) {
        (Some(lo), Some(hi)) => (lo.clone(), hi.clone()),
        (None, None) => {
            let all_rows = build_covariates(track, spikes, args.history)?;
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for row in all_rows.rows().chunks_exact(dim) {
                for d in 0..dim {
                    lo[d] = lo[d].min(row[d]);
                    hi[d] = hi[d].max(row[d]);
                }
            }
            for d in 0..dim {
                let pad = 1e-9 * (hi[d] - lo[d]).max(1.0);
                lo[d] -= pad;
                hi[d] += pad;
            }
            (lo, hi)
        }
        _ => bail!("configuration error: pass both --lo and --hi or neither"),
    };
    if lo.len() != dim || hi.len() != dim {
        bail!("configuration error: the domain corners need {dim} coordinates");
    }
    Ok(CifDomain { lo, hi, grid_points: vec![args.grid_points; dim] })
}

// ---------------------------------------------------------------- shared

fn cutoff_from(flag: &[f64], dim: usize) -> Result<CutoffFrequency> {
    if flag.is_empty() {
        bail!("configuration error: this estimator needs --fc");
    }
    if flag.len() != dim {
        bail!("configuration error: {} cut-offs for {dim} coordinates", flag.len());
    }
    Ok(CutoffFrequency::new(flag.to_vec())?)
}

fn parse_number_list(raw: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for token in raw.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let value: f64 = token
            .parse()
            .map_err(|_| anyhow!("configuration error: {token:?} is not a number"))?;
        if !(value.is_finite() && value > 0.0) {
            bail!("configuration error: list entries must be positive, got {token}");
        }
        out.push(value);
    }
    Ok(out)
}

/// Size tokens are plain counts or `a..b`, which expands by factors of
/// ten while it stays at or below `b`.
fn parse_size_list(raw: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for token in raw.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((a, b)) = token.split_once("..") {
            let lo: usize = a.trim().parse().map_err(|_| anyhow!("configuration error: bad size range {token:?}"))?;
            let hi: usize = b.trim().parse().map_err(|_| anyhow!("configuration error: bad size range {token:?}"))?;
            if lo == 0 || hi < lo {
                bail!("configuration error: bad size range {token:?}");
            }
            let mut n = lo;
            while n <= hi {
                out.push(n);
                match n.checked_mul(10) {
                    Some(next) => n = next,
                    None => break,
                }
            }
        } else {
            let n: usize = token.parse().map_err(|_| anyhow!("configuration error: {token:?} is not a sample size"))?;
            if n == 0 {
                bail!("configuration error: sample sizes must be positive");
            }
            out.push(n);
        }
    }
    if out.is_empty() {
        bail!("configuration error: the size list is empty");
    }
    Ok(out)
}

fn parse_grid_spec(spec: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || anyhow!("configuration error: grids are written lo:hi:count, got {spec:?}");
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || count < 2 {
        return Err(bad());
    }
    Ok((lo, hi, count))
}

fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / (count - 1) as f64;
    (0..count).map(|k| lo + step * k as f64).collect()
}
