//! `geolik` command-line interface.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::{self, BenchMethod, BenchOptions};
use crate::dense;
use crate::error::{Error, Result};
use crate::geom::{self, PerturbedGrid, SiteSet, EARTH_RADIUS_KM};
use crate::likelihood::{covariance_matrix, Method, ObjectiveSpec};
use crate::mc::{self, StudyConfig};
use crate::models::{CorrelationFamily, ParamVector};
use crate::optim::{EstimateResult, OptimOptions};
use crate::predict;

/// Seed used when neither `--seed` nor `GEOLIK_SEED` is given.
pub const DEFAULT_SEED: u64 = 20240611;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_NO_ACTIVE_PAIRS: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) => EXIT_CONFIG,
        Error::Data(_)
        | Error::DimensionMismatch { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => EXIT_DATA,
        Error::NotPositiveDefinite { .. }
        | Error::EvaluationInfeasible(_)
        | Error::InfeasibleStart
        | Error::SingularMoment(_)
        | Error::TooFewReplicates { .. } => EXIT_NUMERICAL,
        Error::NoActivePairs => EXIT_NO_ACTIVE_PAIRS,
    }
}

#[derive(Debug, Parser)]
#[command(name = "geolik", version, about = "Composite-likelihood estimation for Gaussian random fields")]
pub struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true, env = "GEOLIK_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a field on perturbed-grid sites and write it as x,y,z CSV.
    Simulate(SimulateArgs),
    /// Fit covariance parameters to a dataset.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo efficiency study from a JSON config.
    McStudy(McStudyArgs),
    /// Parametric-bootstrap standard errors.
    Bootstrap(BootstrapArgs),
    /// Empirical semi-variogram, with an optional model overlay.
    Variogram(VariogramArgs),
    /// Leave-one-out simple kriging RMSE.
    KrigeLoo(KrigeLooArgs),
    /// Time a bi-CL evaluation against BCL factorization work.
    BenchTiming(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// CSV with `x,y,z` or `lon,lat,z` columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Sphere radius for projecting `lon,lat` input.
    #[arg(long, default_value_t = EARTH_RADIUS_KM)]
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Ml,
    Pcl,
    Bicl,
    Bcl,
}

#[derive(Debug, Args, Serialize)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MethodKind::Bicl)]
    pub method: MethodKind,
    #[arg(long, default_value = "exponential")]
    pub family: CorrelationFamily,
    /// Distance threshold for PCL and bi-CL weights.
    #[arg(long, default_value_t = 0.1)]
    pub ds: f64,
    /// Number of random pair configurations for bi-CL.
    #[arg(long, default_value_t = 5)]
    pub configurations: usize,
    /// Number of clusters for BCL.
    #[arg(long, default_value_t = 16)]
    pub blocks: usize,
    /// Centroid distance threshold for BCL (default: 0.3, 0.25 or 0.2 for 16, 25 or 36 blocks).
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl MethodArgs {
    pub fn method(&self) -> Result<Method> {
        let m = match self.method {
            MethodKind::Ml => Method::Ml,
            MethodKind::Pcl => Method::Pcl { ds: self.ds },
            MethodKind::Bicl => Method::Bicl {
                ds: self.ds,
                configurations: self.configurations,
            },
            MethodKind::Bcl => {
                let threshold = match (self.threshold, self.blocks) {
                    (Some(t), _) => t,
                    (None, 16) => 0.3,
                    (None, 25) => 0.25,
                    (None, 36) => 0.2,
                    (None, b) => {
                        return Err(Error::Config(format!(
                            "no default threshold for {b} blocks; pass --threshold"
                        )))
                    }
                };
                Method::Bcl {
                    blocks: self.blocks,
                    threshold,
                }
            }
        };
        m.validate()?;
        Ok(m)
    }

    pub fn spec(&self) -> Result<ObjectiveSpec> {
        Ok(ObjectiveSpec {
            family: self.family,
            method: self.method()?,
        })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long = "max-iter", default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-16)]
    pub tol: f64,
    /// Starting point `tau2,sigma2,range` (default: 0.05, sample variance, 10% of the extent).
    #[arg(long)]
    pub init: Option<ParamVector>,
}

impl OptimArgs {
    fn options(&self, sites: &SiteSet) -> Result<OptimOptions> {
        let initial = match self.init {
            Some(theta) => theta,
            None => mc::default_initial(sites)?,
        };
        let opts = OptimOptions {
            max_iterations: self.max_iter,
            tolerance: self.tol,
            initial,
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value = "exponential")]
    pub family: CorrelationFamily,
    /// True parameters `tau2,sigma2,range`.
    #[arg(long, default_value = "0.1,1,0.1")]
    pub theta: ParamVector,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0.03)]
    pub spacing: f64,
    #[arg(long, default_value_t = 0.01)]
    pub jitter: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct McStudyArgs {
    /// Study configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the replicate count in the config.
    #[arg(long)]
    pub replicates: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Fitted parameters to simulate from (default: fit the data first).
    #[arg(long)]
    pub theta: Option<ParamVector>,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct VariogramArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of bins (default 15).
    #[arg(long)]
    pub bins: Option<usize>,
    /// Largest lag (default: half the largest pairwise distance).
    #[arg(long)]
    pub max_lag: Option<f64>,
    #[arg(long, default_value = "exponential")]
    pub family: CorrelationFamily,
    /// Fitted parameters for the model overlay.
    #[arg(long)]
    pub theta: Option<ParamVector>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct KrigeLooArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "exponential")]
    pub family: CorrelationFamily,
    /// Covariance parameters `tau2,sigma2,range`.
    #[arg(long)]
    pub theta: ParamVector,
    /// Hold out only a random subset of this many sites.
    #[arg(long)]
    pub subset: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2240,4480,8960")]
    pub n: Vec<usize>,
    /// Methods to time: bicl, bcl8, bcl16.
    #[arg(long, value_delimiter = ',', default_value = "bicl,bcl8,bcl16")]
    pub methods: Vec<BenchMethod>,
    #[arg(long, default_value_t = 0.1)]
    pub ds: f64,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub options: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

struct Run {
    manifest: RunManifest,
    dir: PathBuf,
    clock: Instant,
}

impl Run {
    fn start<T: Serialize>(command: &str, cli: &Cli, seed: u64, options: &T, out: &OutArgs) -> Result<Self> {
        fs::create_dir_all(&out.out)?;
        Ok(Run {
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                threads: cli.threads,
                options: serde_json::to_value(options)?,
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings: BTreeMap::new(),
            },
            dir: out.out.clone(),
            clock: Instant::now(),
        })
    }

    fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    /// Records the time since the previous phase ended.
    fn phase(&mut self, name: &str) {
        self.manifest
            .timings
            .insert(name.to_string(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.manifest.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        std::io::Write::write_all(&mut w, b"\n")?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let file = File::create(self.dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &self.manifest)?;
        Ok(())
    }
}

fn load_centered(args: &DataArgs, run: &mut Run) -> Result<(SiteSet, f64)> {
    run.input(&args.data);
    let mut sites = geom::read_sites_file(&args.data, args.radius)?;
    if sites.len() < 2 {
        return Err(Error::Data("need at least two sites".into()));
    }
    sites.check_distinct()?;
    let mean = sites.center()?;
    Ok((sites, mean))
}

#[derive(Debug, Serialize)]
struct EstimateOutput {
    method: Method,
    family: CorrelationFamily,
    n: usize,
    /// Sample mean subtracted before fitting.
    mean: f64,
    initial: ParamVector,
    result: EstimateResult,
}

fn cmd_simulate(cli: &Cli, seed: u64, args: &SimulateArgs) -> Result<()> {
    let mut run = Run::start("simulate", cli, seed, args, &args.out)?;
    args.theta.validate()?;
    let grid = PerturbedGrid {
        spacing: args.spacing,
        jitter_halfwidth: args.jitter,
        extent: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = grid.generate(args.n, &mut rng)?;
    let l = dense::cholesky(&covariance_matrix(sites.coords(), args.family, &args.theta))?;
    let z = dense::sample_gaussian(&l, &mut rng);
    let sites = sites.attach(z)?;
    run.phase("simulate");
    geom::write_sites_csv(&sites, run.create("data.csv")?)?;
    run.finish()
}

fn cmd_estimate(cli: &Cli, seed: u64, args: &EstimateArgs) -> Result<()> {
    let mut run = Run::start("estimate", cli, seed, args, &args.out)?;
    let spec = args.method.spec()?;
    let (sites, mean) = load_centered(&args.data, &mut run)?;
    let opts = args.optim.options(&sites)?;
    run.phase("load");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = mc::fit(&sites, &spec, &opts, &mut rng)?;
    run.phase("fit");
    run.write_json(
        "estimate.json",
        &EstimateOutput {
            method: spec.method,
            family: spec.family,
            n: sites.len(),
            mean,
            initial: opts.initial,
            result,
        },
    )?;
    run.finish()
}

fn cmd_mc_study(cli: &Cli, seed: Option<u64>, args: &McStudyArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let mut cfg: StudyConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    let mut run = Run::start("mc-study", cli, cfg.seed, &cfg, &args.out)?;
    run.input(&args.config);
    let result = mc::run_study(&cfg)?;
    run.phase("study");
    mc::write_efficiency_csv(&result, run.create("efficiency.csv")?)?;
    mc::write_estimates_csv(&result, run.create("estimates.csv")?)?;
    run.write_json("summary.json", &result)?;
    run.finish()
}

#[derive(Debug, Serialize)]
struct BootstrapOutput {
    method: Method,
    family: CorrelationFamily,
    mean: f64,
    theta_hat: ParamVector,
    replicates: usize,
    failures: usize,
    std_errors: ParamVector,
}

fn cmd_bootstrap(cli: &Cli, seed: u64, args: &BootstrapArgs) -> Result<()> {
    let mut run = Run::start("bootstrap", cli, seed, args, &args.out)?;
    let spec = args.method.spec()?;
    let (sites, mean) = load_centered(&args.data, &mut run)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_hat = match args.theta {
        Some(theta) => theta,
        None => mc::fit(&sites, &spec, &args.optim.options(&sites)?, &mut rng)?.theta_hat,
    };
    run.phase("fit");
    let mut opts = args.optim.options(&sites)?;
    opts.initial = theta_hat;
    let boot = mc::parametric_bootstrap(&sites, &spec, &theta_hat, args.replicates, &opts, &mut rng)?;
    run.phase("bootstrap");
    let mut w = csv::Writer::from_writer(run.create("bootstrap_estimates.csv")?);
    w.write_record(["tau2", "sigma2", "range"])?;
    for e in &boot.estimates {
        w.write_record([e.tau2.to_string(), e.sigma2.to_string(), e.range.to_string()])?;
    }
    w.flush()?;
    drop(w);
    run.write_json(
        "bootstrap.json",
        &BootstrapOutput {
            method: spec.method,
            family: spec.family,
            mean,
            theta_hat,
            replicates: args.replicates,
            failures: boot.failures,
            std_errors: boot.std_errors,
        },
    )?;
    run.finish()
}

/// Points in the model overlay.
const OVERLAY_POINTS: usize = 100;

fn cmd_variogram(cli: &Cli, seed: u64, args: &VariogramArgs) -> Result<()> {
    let mut run = Run::start("variogram", cli, seed, args, &args.out)?;
    run.input(&args.data.data);
    let sites = geom::read_sites_file(&args.data.data, args.data.radius)?;
    let (default_bins, default_lag) = predict::default_variogram_bins(&sites);
    let max_lag = args.max_lag.unwrap_or(default_lag);
    let est = predict::empirical_semivariogram(&sites, args.bins.unwrap_or(default_bins), max_lag)?;
    run.phase("variogram");
    let mut w = csv::Writer::from_writer(run.create("variogram.csv")?);
    w.write_record(["bin_center", "semivariance", "count"])?;
    for ((c, g), n) in est.bin_centers.iter().zip(&est.semivariance).zip(&est.counts) {
        let g = g.map(|g| g.to_string()).unwrap_or_default();
        w.write_record([c.to_string(), g, n.to_string()])?;
    }
    w.flush()?;
    drop(w);
    if let Some(theta) = args.theta {
        theta.validate()?;
        let mut w = csv::Writer::from_writer(run.create("variogram_model.csv")?);
        w.write_record(["h", "semivariance"])?;
        for k in 1..=OVERLAY_POINTS {
            let h = max_lag * k as f64 / OVERLAY_POINTS as f64;
            let g = predict::model_semivariogram(args.family, &theta, h);
            w.write_record([h.to_string(), g.to_string()])?;
        }
        w.flush()?;
    }
    run.finish()
}

#[derive(Debug, Serialize)]
struct LooOutput {
    family: CorrelationFamily,
    theta: ParamVector,
    mean: f64,
    n: usize,
    held_out: usize,
    rmse: f64,
}

fn cmd_krige_loo(cli: &Cli, seed: u64, args: &KrigeLooArgs) -> Result<()> {
    let mut run = Run::start("krige-loo", cli, seed, args, &args.out)?;
    let (sites, mean) = load_centered(&args.data, &mut run)?;
    let held_out: Vec<usize> = match args.subset {
        Some(k) if k < sites.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, sites.len(), k).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..sites.len()).collect(),
    };
    let rmse = predict::loo_rmse_subset(&sites, args.family, &args.theta, &held_out)?;
    run.phase("loo");
    run.write_json(
        "loo.json",
        &LooOutput {
            family: args.family,
            theta: args.theta,
            mean,
            n: sites.len(),
            held_out: held_out.len(),
            rmse,
        },
    )?;
    run.finish()
}

fn cmd_bench(cli: &Cli, seed: u64, args: &BenchArgs) -> Result<()> {
    let mut run = Run::start("bench-timing", cli, seed, args, &args.out)?;
    if args.n.is_empty() || args.methods.is_empty() {
        return Err(Error::Config("need at least one size and one method".into()));
    }
    let opts = BenchOptions {
        ds: args.ds,
        repeats: args.repeats,
        methods: args.methods.clone(),
        ..BenchOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = bench::bench_timing(&args.n, &opts, &mut rng)?;
    run.phase("bench");
    bench::write_timing_csv(&rows, run.create("timing.csv")?)?;
    run.finish()
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // a global pool may already exist when embedded; keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, seed, a),
        Command::Estimate(a) => cmd_estimate(cli, seed, a),
        Command::McStudy(a) => cmd_mc_study(cli, cli.seed, a),
        Command::Bootstrap(a) => cmd_bootstrap(cli, seed, a),
        Command::Variogram(a) => cmd_variogram(cli, seed, a),
        Command::KrigeLoo(a) => cmd_krige_loo(cli, seed, a),
        Command::BenchTiming(a) => cmd_bench(cli, seed, a),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_by_category() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::InfeasibleStart), 4);
        assert_eq!(exit_code(&Error::SingularMoment(0.0)), 4);
        assert_eq!(exit_code(&Error::NoActivePairs), 5);
    }

    #[test]
    fn bcl_threshold_defaults_follow_block_count() {
        let parse = |extra: &[&str]| {
            let mut args = vec!["geolik", "estimate", "--data", "d.csv", "--out", "o", "--method", "bcl"];
            args.extend_from_slice(extra);
            match Cli::try_parse_from(args).unwrap().command {
                Command::Estimate(a) => a.method.method(),
                _ => unreachable!(),
            }
        };
        assert_eq!(parse(&[]).unwrap(), Method::Bcl { blocks: 16, threshold: 0.3 });
        assert_eq!(parse(&["--blocks", "36"]).unwrap(), Method::Bcl { blocks: 36, threshold: 0.2 });
        assert!(matches!(parse(&["--blocks", "9"]), Err(Error::Config(_))));
        assert_eq!(
            parse(&["--blocks", "9", "--threshold", "0.4"]).unwrap(),
            Method::Bcl { blocks: 9, threshold: 0.4 }
        );
    }

    #[test]
    fn parses_init_and_lists() {
        let cli = Cli::try_parse_from([
            "geolik", "--seed", "3", "estimate", "--data", "d.csv", "--out", "o", "--init", "0.1,1,0.2",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(3));
        match cli.command {
            Command::Estimate(a) => assert_eq!(a.optim.init, Some(ParamVector { tau2: 0.1, sigma2: 1.0, range: 0.2 })),
            _ => unreachable!(),
        }
        let cli = Cli::try_parse_from(["geolik", "bench-timing", "--n", "100,200", "--methods", "bicl", "--out", "o"]).unwrap();
        match cli.command {
            Command::BenchTiming(a) => {
                assert_eq!(a.n, vec![100, 200]);
                assert_eq!(a.methods, vec![BenchMethod::Bicl]);
            }
            _ => unreachable!(),
        }
        assert!(Cli::try_parse_from(["geolik", "estimate", "--data", "d", "--out", "o", "--family", "gauss"]).is_err());
    }
}
