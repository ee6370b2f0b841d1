//! `csdesign`: train priors, design kernels and run imaging sweeps from the
//! command line. Results go to files and, as CSV, to standard output; logs go
//! to standard error.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csdesign::design::{
    alignment_csv, compare_alignments, design_gaussian_waterfilling, design_gradient_ascent_mi,
    design_gradient_ascent_renyi2, random_kernel, DesignConfig,
};
use csdesign::info::{mutual_information, renyi2_entropy_gmm};
use csdesign::models::io::{gmm_from_str, gmm_to_string, kernel_to_string};
use csdesign::models::{CovarianceSpectrum, NoiseModel, SpectrumOrder};
use csdesign::online::{run_online_acquisition_with, OnlineConfig, Strategy};
use csdesign::pipeline::{
    extract_patches, parse_pgm, records_csv, run_experiment, sample_training_patches, train_gmm_em_with, write_pgm,
    EmConfig, ExperimentConfig, Method,
};
use csdesign::Error;
use serde::Serialize;

use manifest::{unix_now, write_manifest, DigestBuilder};

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "csdesign", version, about = "Information-theoretic compressive-sensing kernel design")]
struct Cli {
    /// Worker threads (default: number of logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a Gaussian-mixture patch prior by EM.
    Train(TrainArgs),
    /// Design a sensing kernel for a prior.
    Design(DesignArgs),
    /// PSNR curves of strategies over measurements per patch.
    Sweep(SweepArgs),
    /// Posterior-weight trace of one online acquisition on one patch.
    Trace(TraceArgs),
    /// Mutual information of aligned and unaligned two-mode designs over SNR.
    AlignDemo(AlignArgs),
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Directory of 8-bit PGM images to draw training patches from.
    #[arg(long)]
    patches_dir: PathBuf,
    #[arg(long = "components", short = 'k')]
    components: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ridge added to every covariance in each M-step.
    #[arg(long, default_value_t = 1.0)]
    reg: f64,
    /// Number of (possibly overlapping) training patches.
    #[arg(long, default_value_t = 10_000)]
    patches: usize,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DesignMethod {
    Waterfill,
    Pv,
    Renyi,
    Random,
}

#[derive(Debug, Args, Serialize)]
struct OptimizerArgs {
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 20_000)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0.5)]
    step_size: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Start every restart from a random kernel.
    #[arg(long)]
    no_waterfill_init: bool,
}

impl OptimizerArgs {
    fn config(&self, seed: u64) -> DesignConfig {
        DesignConfig {
            step_size: self.step_size,
            max_iters: self.max_iters,
            restarts: self.restarts,
            tol: self.tol,
            mc_samples: self.mc_samples,
            seed,
            waterfill_init: !self.no_waterfill_init,
            ..DesignConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct DesignArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    noise_var: f64,
    #[arg(long)]
    rows: usize,
    #[arg(long, value_enum)]
    method: DesignMethod,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    optimizer: OptimizerArgs,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse::<T>().map_err(|e| e.to_string())).collect()
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated: random, waterfill, offline-pv, offline-renyi,
    /// online-pds, online-pv, online-renyi, online-random.
    #[arg(long, value_parser = parse_list::<Method>, default_value = "random,online-pds")]
    strategies: std::vec::Vec<Method>,
    /// Comma-separated measurements per patch.
    #[arg(long, value_parser = parse_list::<usize>, default_value = "2,4,6,8,10")]
    l_grid: std::vec::Vec<usize>,
    #[arg(long, default_value_t = 1e-6)]
    noise_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Where to write `<strategy>_l<l>.pgm` (default: next to `--out`).
    #[arg(long)]
    #[serde(skip)]
    recon_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    /// Original PDS: this many random rows, then a fixed prior component.
    #[arg(long)]
    original_pds_warmup: Option<usize>,
    #[command(flatten)]
    optimizer: OptimizerArgs,
}

#[derive(Debug, Args, Serialize)]
struct TraceArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Raster index of the patch to sense.
    #[arg(long, default_value_t = 0)]
    patch: usize,
    #[arg(long, default_value = "pds")]
    strategy: Strategy,
    #[arg(long, default_value_t = 20)]
    budget: usize,
    #[arg(long, default_value_t = 1e-6)]
    noise_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    #[arg(long)]
    original_pds_warmup: Option<usize>,
    #[command(flatten)]
    optimizer: OptimizerArgs,
}

#[derive(Debug, Args, Serialize)]
struct AlignArgs {
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(e) => match e {
                Error::Io(_)
                | Error::Parse(_)
                | Error::InvalidInput(_)
                | Error::Shape(_)
                | Error::InsufficientData { .. } => EXIT_USAGE,
                Error::DegenerateKernel(_)
                | Error::SingularCovariance(_)
                | Error::DegenerateSource
                | Error::DegenerateRow
                | Error::DegeneratePosterior(_) => EXIT_NUMERIC,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_input(path: &Path, digest: &mut DigestBuilder) -> CliResult<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    digest.input(path, &bytes);
    Ok(bytes)
}

fn read_model(path: &Path, digest: &mut DigestBuilder) -> CliResult<csdesign::models::GmmModel> {
    let bytes = read_input(path, digest)?;
    Ok(gmm_from_str(&String::from_utf8_lossy(&bytes))?)
}

fn write_output(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let started = unix_now();
    let mut digest = DigestBuilder::new("train", args);
    let entries = fs::read_dir(&args.patches_dir)
        .map_err(|e| CliError::Usage(format!("cannot read directory {}: {e}", args.patches_dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        images.push(parse_pgm(&read_input(p, &mut digest)?)?);
    }
    eprintln!("train: {} images, sampling {} patches", images.len(), args.patches);
    let patches = sample_training_patches(&images, args.patch_size, args.patch_size, args.patches, args.seed)?;
    let cfg = EmConfig { components: args.components, seed: args.seed, reg: args.reg, tol: args.tol, max_iters: args.max_iters };
    let fit = train_gmm_em_with(&patches, &cfg)?;
    eprintln!("train: {} EM iterations, converged = {}", fit.iterations, fit.converged);
    write_output(&args.out, gmm_to_string(&fit.model))?;
    write_manifest(&args.out, &digest.finish("train", args.seed, started, &[args.out.clone()]))?;
    println!(
        "{},{},{},{}",
        args.components,
        fit.iterations,
        fit.converged,
        fit.log_likelihood.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_design(args: &DesignArgs) -> CliResult<()> {
    let started = unix_now();
    let mut digest = DigestBuilder::new("design", args);
    let model = read_model(&args.model, &mut digest)?;
    let noise = NoiseModel::isotropic(args.rows, args.noise_var)?;
    let cfg = args.optimizer.config(args.seed);
    let kernel = match args.method {
        DesignMethod::Waterfill => {
            let cov = CovarianceSpectrum::new(model.covariance(), SpectrumOrder::Descending)?;
            design_gaussian_waterfilling(&cov, &noise, args.rows)?
        }
        DesignMethod::Pv => design_gradient_ascent_mi(&model, &noise, args.rows, &cfg)?.kernel,
        DesignMethod::Renyi => design_gradient_ascent_renyi2(&model, &noise, args.rows, &cfg)?.kernel,
        DesignMethod::Random => random_kernel(args.rows, model.dim(), args.seed)?,
    };
    let mi = mutual_information(&model, &kernel, &noise, args.optimizer.mc_samples, args.seed)?.value;
    let h2 = renyi2_entropy_gmm(&model, &kernel, &noise)?;
    write_output(&args.out, kernel_to_string(&kernel))?;
    write_manifest(&args.out, &digest.finish("design", args.seed, started, &[args.out.clone()]))?;
    let method = serde_json::to_value(args.method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    println!("{method},{},{},{mi},{h2}", args.rows, args.seed);
    Ok(())
}

fn online_config(optimizer: &OptimizerArgs, warmup: Option<usize>) -> OnlineConfig {
    OnlineConfig { design: optimizer.config(0), original_pds_warmup: warmup }
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let started = unix_now();
    let mut digest = DigestBuilder::new("sweep", args);
    let image = parse_pgm(&read_input(&args.image, &mut digest)?)?;
    let model = read_model(&args.model, &mut digest)?;
    if args.strategies.is_empty() || args.l_grid.is_empty() {
        return Err(CliError::Usage("--strategies and --l-grid must be nonempty".into()));
    }
    let cfg = ExperimentConfig {
        strategies: args.strategies.clone(),
        l_grid: args.l_grid.clone(),
        noise_var: args.noise_var,
        seed: args.seed,
        patch_rows: args.patch_size,
        patch_cols: args.patch_size,
        design: args.optimizer.config(args.seed),
        online: online_config(&args.optimizer, args.original_pds_warmup),
    };
    eprintln!("sweep: {} strategies x {} values of l", cfg.strategies.len(), cfg.l_grid.len());
    let out = run_experiment(&image, &model, &cfg)?;
    let csv = records_csv(&out.records);
    write_output(&args.out, &csv)?;
    let recon_dir = match &args.recon_dir {
        Some(d) => d.clone(),
        None => args.out.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !recon_dir.as_os_str().is_empty() {
        fs::create_dir_all(&recon_dir)?;
    }
    let mut outputs = vec![args.out.clone()];
    for rec in &out.reconstructions {
        let path = recon_dir.join(format!("{}_l{}.pgm", rec.strategy, rec.measurements_per_patch));
        write_pgm(&path, &rec.image)?;
        outputs.push(path);
    }
    write_manifest(&args.out, &digest.finish("sweep", args.seed, started, &outputs))?;
    print!("{csv}");
    Ok(())
}

fn cmd_trace(args: &TraceArgs) -> CliResult<()> {
    let started = unix_now();
    let mut digest = DigestBuilder::new("trace", args);
    let image = parse_pgm(&read_input(&args.image, &mut digest)?)?;
    let model = read_model(&args.model, &mut digest)?;
    let grid = extract_patches(&image, args.patch_size, args.patch_size)?;
    let x = grid
        .patches()
        .get(args.patch)
        .ok_or_else(|| CliError::Usage(format!("patch {} out of range (image has {})", args.patch, grid.len())))?;
    let cfg = online_config(&args.optimizer, args.original_pds_warmup);
    let trace = run_online_acquisition_with(x, &model, args.noise_var, args.strategy, args.budget, args.seed, &cfg)?;
    let csv = trace.to_csv();
    write_output(&args.out, &csv)?;
    write_manifest(&args.out, &digest.finish("trace", args.seed, started, &[args.out.clone()]))?;
    print!("{csv}");
    Ok(())
}

fn cmd_align_demo(args: &AlignArgs) -> CliResult<()> {
    let started = unix_now();
    let digest = DigestBuilder::new("align-demo", args);
    let grid: Vec<f64> = (-10..=30).map(f64::from).collect();
    let rows = compare_alignments([1.0, 0.25], [1.0, 0.25], &grid)?;
    let csv = alignment_csv(&rows);
    write_output(&args.out, &csv)?;
    write_manifest(&args.out, &digest.finish("align-demo", 0, started, &[args.out.clone()]))?;
    print!("{csv}");
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Design(a) => cmd_design(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Trace(a) => cmd_trace(a),
        Command::AlignDemo(a) => cmd_align_demo(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
