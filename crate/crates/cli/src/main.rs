//! Batch command-line interface: simulate datasets, check priors, fit
//! models, compare them by cross-validation, and compute failure-time
//! distributions. Every command is deterministic given its inputs and
//! `--seed`, and drops a manifest recording what produced the outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use noisygp::dataio::{
    load_dataset, read_draws_csv, read_json, write_cv_table_csv, write_dataset_files,
    write_draws_csv, write_failure_curve_csv, write_filtered_paths_csv, write_json,
    write_paths_csv, DatasetSidecar,
};
use noisygp::dist::DistSpec;
use noisygp::evaluate::{
    default_lattice, elppd_louo, elppd_sa, failure_curve, filtered_paths,
    predictive_failure_curve, CvMethod, ElppdResult, FailureMode,
};
use noisygp::model::{ModelSpec, Pooling};
use noisygp::process::{
    prior_predictive, prior_predictive_shape_rate, simulate_study, Dataset, GridSpec,
    SimulateConfig, TimeGrid,
};
use noisygp::rng::RngState;
use noisygp::sampler::{diagnostics, run, summary_table, SamplerConfig};

#[derive(Parser)]
#[command(
    name = "noisygp",
    version,
    about = "Bayesian hierarchical modelling of noisy gamma degradation processes"
)]
struct Cli {
    /// Worker threads for chains and CV folds (0 = all cores). Outputs do
    /// not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    /// Leave one unit out.
    Louo,
    /// Step ahead: withhold each unit's final observation.
    Sa,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    /// Failure time of a brand-new unit.
    NewUnit,
    /// Predictive failure time of a unit under test (needs --unit).
    InTest,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a degradation study from a generator config.
    Simulate {
        /// Generator config (TOML or JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw prior predictive degradation paths for a model.
    PriorCheck {
        /// Model config (TOML or JSON).
        #[arg(long)]
        config: PathBuf,
        /// Grid config (TOML or JSON) holding the observation times.
        #[arg(long)]
        grid_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also add measurement noise from the sigma prior.
        #[arg(long)]
        include_noise: bool,
        /// Legacy parameterization: put Ga(SHAPE,RATE) priors directly on
        /// the process shape and rate, e.g. --legacy-shape-rate 1,0.001
        #[arg(long, value_name = "SHAPE,RATE")]
        legacy_shape_rate: Option<String>,
    },
    /// Fit a model to a dataset and write draws plus diagnostics.
    Fit {
        /// Model config (TOML or JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dataset CSV (unit_id,time,y[,z_true]).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        target_accept: Option<f64>,
        #[arg(long)]
        max_tree_depth: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare models by cross-validated elppd.
    Cv {
        /// Model config; repeat the flag to compare several models.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        target_accept: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Posterior failure-time distribution from a finished fit.
    FailureTime {
        /// Directory produced by `noisygp fit`.
        #[arg(long)]
        fit_dir: PathBuf,
        /// Soft failure threshold.
        #[arg(long)]
        zf: f64,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Unit number (1-based) for --mode in-test.
        #[arg(long)]
        unit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lattice size when no explicit lattice is given.
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
}

/// Failure classes mapped to exit codes: config 2, data 3, sampling 4.
enum CliError {
    Config(String),
    Data(String),
    Sampling(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Sampling(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Sampling(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn data_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn sampling_err(e: noisygp::Error) -> CliError {
    match e {
        noisygp::Error::InvalidConfig(_) | noisygp::Error::InvalidDist(_) => {
            CliError::Config(e.to_string())
        }
        noisygp::Error::Sampling(_) | noisygp::Error::InitFailed(_) => {
            CliError::Sampling(e.to_string())
        }
        other => CliError::Data(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Command::PriorCheck {
            config,
            grid_config,
            out,
            draws,
            seed,
            include_noise,
            legacy_shape_rate,
        } => cmd_prior_check(
            &config,
            &grid_config,
            &out,
            draws,
            seed,
            include_noise,
            legacy_shape_rate.as_deref(),
        ),
        Command::Fit {
            config,
            data,
            out,
            chains,
            warmup,
            samples,
            target_accept,
            max_tree_depth,
            seed,
        } => {
            let overrides = SamplerOverrides {
                chains,
                warmup,
                samples,
                target_accept,
                max_tree_depth,
                seed,
            };
            cmd_fit(&config, &data, &out, &overrides)
        }
        Command::Cv {
            configs,
            data,
            method,
            out,
            chains,
            warmup,
            samples,
            target_accept,
            seed,
        } => {
            let overrides = SamplerOverrides {
                chains,
                warmup,
                samples,
                target_accept,
                max_tree_depth: None,
                seed,
            };
            cmd_cv(&configs, &data, method, &out, &overrides)
        }
        Command::FailureTime { fit_dir, zf, mode, unit, out, seed, points } => {
            cmd_failure_time(&fit_dir, zf, mode, unit, &out, seed, points)
        }
    }
}

struct SamplerOverrides {
    chains: Option<usize>,
    warmup: Option<usize>,
    samples: Option<usize>,
    target_accept: Option<f64>,
    max_tree_depth: Option<usize>,
    seed: u64,
}

impl SamplerOverrides {
    /// Default chain budgets by fit shape (4x(3000+7000) for a single
    /// unit, 6x(1000+1000) pooled), overridden by explicit flags.
    fn resolve(&self, spec: &ModelSpec, dataset: &Dataset) -> SamplerConfig {
        let mut config = if spec.pooling == Pooling::NoPooling && dataset.n_units() == 1 {
            SamplerConfig::single_unit_default()
        } else {
            SamplerConfig::pooled_default()
        };
        if let Some(c) = self.chains {
            config.n_chains = c;
        }
        if let Some(w) = self.warmup {
            config.n_warmup = w;
        }
        if let Some(s) = self.samples {
            config.n_samples = s;
        }
        if let Some(t) = self.target_accept {
            config.target_accept = t;
        }
        if let Some(d) = self.max_tree_depth {
            config.max_tree_depth = d;
        }
        config.seed = self.seed;
        config
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Manifest {
    command: String,
    version: String,
    seed: u64,
    /// Digest of the resolved run configuration.
    config_hash: String,
    /// Digest of each input file's bytes.
    inputs: BTreeMap<String, String>,
    created_unix: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("sha256:{}", hex::encode(hasher.finalize()))
}

fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

fn write_manifest<C: Serialize>(
    out: &Path,
    command: &str,
    seed: u64,
    resolved_config: &C,
    inputs: &[(&str, &Path)],
) -> CliResult<()> {
    let canonical = serde_json::to_value(resolved_config).map_err(config_err)?;
    let config_hash = sha256_hex(canonical.to_string().as_bytes());
    let mut digests = BTreeMap::new();
    for (name, path) in inputs {
        digests.insert(name.to_string(), file_digest(path)?);
    }
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_hash,
        inputs: digests,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    write_json(&out.join("manifest.json"), &manifest).map_err(data_err)
}

fn ensure_out_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| data_err(format!("{}: {e}", out.display())))
}

fn load_model_config(path: &Path) -> CliResult<ModelSpec> {
    let text =
        fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let spec = if path.extension().is_some_and(|e| e == "json") {
        ModelSpec::from_json_str(&text)
    } else {
        ModelSpec::from_toml_str(&text)
    };
    spec.map_err(|e| config_err(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_simulate(config_path: &Path, out: &Path, seed: u64) -> CliResult<()> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| config_err(format!("{}: {e}", config_path.display())))?;
    let config: SimulateConfig = if config_path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(config_err)?
    } else {
        toml::from_str(&text).map_err(config_err)?
    };
    config.validate().map_err(config_err)?;

    let dataset = simulate_study(&config, &RngState::from_seed(seed)).map_err(config_err)?;
    ensure_out_dir(out)?;
    let sidecar = DatasetSidecar { seed, config: config.clone() };
    write_dataset_files(out, &dataset, &sidecar).map_err(data_err)?;
    write_manifest(out, "simulate", seed, &sidecar, &[("config", config_path)])?;
    println!(
        "simulated {} units, {} observations -> {}",
        dataset.n_units(),
        dataset.n_obs_total(),
        out.display()
    );
    Ok(())
}

fn parse_legacy_priors(arg: &str) -> CliResult<DistSpec> {
    let parts: Vec<&str> = arg.split(',').collect();
    if parts.len() != 2 {
        return Err(config_err(format!(
            "--legacy-shape-rate expects SHAPE,RATE, got '{arg}'"
        )));
    }
    let shape: f64 = parts[0].trim().parse().map_err(config_err)?;
    let rate: f64 = parts[1].trim().parse().map_err(config_err)?;
    let dist = DistSpec::Gamma { shape, rate };
    dist.validate().map_err(config_err)?;
    Ok(dist)
}

fn cmd_prior_check(
    model_path: &Path,
    grid_path: &Path,
    out: &Path,
    n_draws: usize,
    seed: u64,
    include_noise: bool,
    legacy: Option<&str>,
) -> CliResult<()> {
    let text = fs::read_to_string(grid_path)
        .map_err(|e| config_err(format!("{}: {e}", grid_path.display())))?;
    let grid_spec: GridSpec = toml::from_str(&text).map_err(config_err)?;
    let mut grid_rng = RngState::from_seed(seed).split(u64::MAX);
    let grid = match &grid_spec {
        GridSpec::Times { times } => {
            let mut full = vec![0.0];
            full.extend_from_slice(times);
            TimeGrid::new(full).map_err(config_err)?
        }
        GridSpec::UniformIncrements { n, lower, upper } => {
            let incs: Vec<f64> = (0..*n).map(|_| grid_rng.uniform_range(*lower, *upper)).collect();
            TimeGrid::from_increments(&incs).map_err(config_err)?
        }
    };

    let rng = RngState::from_seed(seed);
    let (paths, described) = if let Some(arg) = legacy {
        let prior = parse_legacy_priors(arg)?;
        let paths = prior_predictive_shape_rate(&prior, &prior, n_draws, &grid, &rng)
            .map_err(config_err)?;
        (paths, format!("legacy shape/rate prior {arg}"))
    } else {
        let spec = load_model_config(model_path)?;
        let paths =
            prior_predictive(&spec, n_draws, &grid, &rng, include_noise).map_err(config_err)?;
        (paths, format!("pooling {}", spec.pooling))
    };

    ensure_out_dir(out)?;
    let file = fs::File::create(out.join("prior_paths.csv")).map_err(data_err)?;
    write_paths_csv(file, grid.times(), &paths).map_err(data_err)?;
    #[derive(Serialize)]
    struct ResolvedPriorCheck<'a> {
        grid: &'a GridSpec,
        n_draws: usize,
        include_noise: bool,
        legacy: Option<&'a str>,
    }
    write_manifest(
        out,
        "prior-check",
        seed,
        &ResolvedPriorCheck { grid: &grid_spec, n_draws, include_noise, legacy },
        &[("model", model_path), ("grid", grid_path)],
    )?;
    println!("{n_draws} prior predictive paths ({described}) -> {}", out.display());
    Ok(())
}

fn cmd_fit(
    model_path: &Path,
    data_path: &Path,
    out: &Path,
    overrides: &SamplerOverrides,
) -> CliResult<()> {
    let spec = load_model_config(model_path)?;
    let dataset = load_dataset(data_path).map_err(data_err)?;
    let config = overrides.resolve(&spec, &dataset);
    config.validate().map_err(config_err)?;

    let draws = run(&spec, &dataset, &config).map_err(sampling_err)?;
    let report = diagnostics(&draws).map_err(sampling_err)?;
    let summary = summary_table(&report, false);

    ensure_out_dir(out)?;
    let file = fs::File::create(out.join("draws.csv")).map_err(data_err)?;
    write_draws_csv(file, &draws).map_err(data_err)?;
    write_json(&out.join("diagnostics.json"), &report).map_err(data_err)?;
    fs::write(out.join("summary.txt"), &summary).map_err(data_err)?;
    write_json(&out.join("model.json"), &spec).map_err(data_err)?;
    // Keep a byte-exact copy of the dataset so the fit directory is
    // self-contained for failure-time queries.
    fs::copy(data_path, out.join("dataset.csv")).map_err(data_err)?;
    let sidecar = data_path.with_file_name("dataset.json");
    if sidecar.exists() {
        fs::copy(&sidecar, out.join("dataset.json")).map_err(data_err)?;
    }
    let fpaths = filtered_paths(&draws, &dataset).map_err(sampling_err)?;
    let file = fs::File::create(out.join("filtered_paths.csv")).map_err(data_err)?;
    write_filtered_paths_csv(file, &fpaths).map_err(data_err)?;

    #[derive(Serialize)]
    struct ResolvedFit<'a> {
        model: &'a ModelSpec,
        sampler: &'a SamplerConfig,
    }
    write_manifest(
        out,
        "fit",
        config.seed,
        &ResolvedFit { model: &spec, sampler: &config },
        &[("model", model_path), ("data", data_path)],
    )?;
    print!("{summary}");
    println!("fit written to {}", out.display());
    Ok(())
}

fn cmd_cv(
    model_paths: &[PathBuf],
    data_path: &Path,
    method: MethodArg,
    out: &Path,
    overrides: &SamplerOverrides,
) -> CliResult<()> {
    let dataset = load_dataset(data_path).map_err(data_err)?;
    let rng = RngState::from_seed(overrides.seed);

    let mut rows: Vec<(String, ElppdResult)> = Vec::new();
    for path in model_paths {
        let spec = load_model_config(path)?;
        let config = overrides.resolve(&spec, &dataset);
        config.validate().map_err(config_err)?;
        let result = match method {
            MethodArg::Louo => elppd_louo(&spec, &dataset, &config, &rng),
            MethodArg::Sa => elppd_sa(&spec, &dataset, &config, &rng),
        }
        .map_err(sampling_err)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for fold in &result.folds {
            if let Some(err) = &fold.error {
                eprintln!("warning: {name} fold {} failed: {err}", fold.fold);
            }
        }
        rows.push((name, result));
    }

    ensure_out_dir(out)?;
    for (name, result) in &rows {
        write_json(&out.join(format!("cv_{name}.json")), result).map_err(data_err)?;
    }
    let file = fs::File::create(out.join("cv_table.csv")).map_err(data_err)?;
    write_cv_table_csv(file, &rows).map_err(data_err)?;

    let method_name = match method {
        MethodArg::Louo => CvMethod::Louo,
        MethodArg::Sa => CvMethod::Sa,
    };
    println!("{:<24} {:>14}", "model", format!("elppd_{method_name}"));
    let mut ranked: Vec<&(String, ElppdResult)> = rows.iter().collect();
    ranked.sort_by(|a, b| {
        b.1.total
            .partial_cmp(&a.1.total)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for (name, result) in ranked {
        match result.total {
            Some(total) => println!("{name:<24} {total:>14.4}"),
            None => println!("{name:<24} {:>14}", "failed"),
        }
    }

    #[derive(Serialize)]
    struct ResolvedCv<'a> {
        models: Vec<&'a ModelSpec>,
        method: String,
        sampler_seed: u64,
    }
    let specs: Vec<ModelSpec> = model_paths
        .iter()
        .map(|p| load_model_config(p))
        .collect::<CliResult<_>>()?;
    let mut inputs: Vec<(&str, &Path)> = vec![("data", data_path)];
    let names: Vec<String> = (0..model_paths.len()).map(|i| format!("model{i}")).collect();
    for (i, p) in model_paths.iter().enumerate() {
        inputs.push((&names[i], p.as_path()));
    }
    write_manifest(
        out,
        "cv",
        overrides.seed,
        &ResolvedCv {
            models: specs.iter().collect(),
            method: method_name.to_string(),
            sampler_seed: overrides.seed,
        },
        &inputs,
    )?;
    Ok(())
}

fn cmd_failure_time(
    fit_dir: &Path,
    zf: f64,
    mode: ModeArg,
    unit: Option<usize>,
    out: &Path,
    seed: u64,
    points: usize,
) -> CliResult<()> {
    if !(zf > 0.0) {
        return Err(config_err(format!("--zf must be positive, got {zf}")));
    }
    let spec: ModelSpec = read_json(&fit_dir.join("model.json"))
        .map_err(|e| data_err(format!("fit dir {}: {e}", fit_dir.display())))?;
    let draws_file = fs::File::open(fit_dir.join("draws.csv"))
        .map_err(|e| data_err(format!("fit dir {}: {e}", fit_dir.display())))?;
    let draws = read_draws_csv(draws_file).map_err(data_err)?;
    let dataset = load_dataset(&fit_dir.join("dataset.csv")).map_err(data_err)?;
    let rng = RngState::from_seed(seed);

    let (curve, mode_label) = match mode {
        ModeArg::NewUnit => {
            let fmode = match spec.pooling {
                Pooling::CompletePooling => FailureMode::NewUnitCompletePooling,
                Pooling::VaryingMu => FailureMode::NewUnitVaryingMu,
                other => {
                    return Err(config_err(format!(
                        "--mode new-unit supports complete_pooling and varying_mu fits, \
                         this fit used {other}"
                    )))
                }
            };
            let times = default_lattice(&draws, &spec, None, zf, fmode, points, &rng)
                .map_err(config_err)?;
            let curve =
                failure_curve(&draws, &spec, zf, &times, fmode, &rng).map_err(config_err)?;
            (curve, "new-unit")
        }
        ModeArg::InTest => {
            let unit_1based = unit
                .ok_or_else(|| config_err("--mode in-test requires --unit".to_string()))?;
            if unit_1based == 0 || unit_1based > dataset.n_units() {
                return Err(config_err(format!(
                    "--unit {unit_1based} out of range; dataset has {} units",
                    dataset.n_units()
                )));
            }
            let j = unit_1based - 1;
            let fmode = FailureMode::InTestUnit { unit: j };
            let times = default_lattice(&draws, &spec, Some(&dataset), zf, fmode, points, &rng)
                .map_err(config_err)?;
            let curve = predictive_failure_curve(&draws, &spec, &dataset, j, zf, &times)
                .map_err(config_err)?;
            (curve, "in-test")
        }
    };

    ensure_out_dir(out)?;
    let file = fs::File::create(out.join("failure_curve.csv")).map_err(data_err)?;
    write_failure_curve_csv(file, &curve).map_err(data_err)?;
    write_json(&out.join("failure_curve.json"), &curve).map_err(data_err)?;

    #[derive(Serialize)]
    struct ResolvedFt<'a> {
        model: &'a ModelSpec,
        zf: f64,
        mode: &'a str,
        unit: Option<usize>,
        points: usize,
    }
    let model_path = fit_dir.join("model.json");
    let draws_path = fit_dir.join("draws.csv");
    write_manifest(
        out,
        "failure-time",
        seed,
        &ResolvedFt { model: &spec, zf, mode: mode_label, unit, points },
        &[("model", &model_path), ("draws", &draws_path)],
    )?;
    println!("failure-time curve ({mode_label}) -> {}", out.display());
    Ok(())
}
