use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crdme_cli::config::{ConfigError, ConfigFile};
use crdme_cli::driver::{
    self, assemble, assemble_bd, build_primal, convergence_study, order_estimates,
    run_bd_ensemble, run_ensemble, DriverError, EnsembleOutput,
};
use crdme_cli::output;
use crdme_core::mesh::build_dual;
use crdme_core::stats::{mean_curve, survival_curve, SummaryStats};

#[derive(Parser)]
#[command(
    name = "crdme",
    version,
    about = "Stochastic reaction-diffusion on unstructured meshes, with a Brownian particle reference"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print voxel count, mesh width, and total area
    MeshInfo {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the pair rate table, or reuse the cached one
    BuildRates {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (tables land in OUT/tables)
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the mesh-model replica ensemble
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides run.seed
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides run.replicas
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the Brownian particle ensemble for the same config
    Bd {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// First-binding statistics across uniform refinement levels
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 4)]
        levels: u32,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarize a sample file (one time per line, inf = censored)
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Exit 1: the inputs are wrong. Exit 2: the run failed.
enum AppError {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Usage(e.to_string())
    }
}

impl From<DriverError> for AppError {
    fn from(e: DriverError) -> Self {
        match e {
            DriverError::Config(c) => AppError::Usage(c.to_string()),
            other => AppError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(format!("io: {e}"))
    }
}

impl From<crdme_core::mesh::MeshError> for AppError {
    fn from(e: crdme_core::mesh::MeshError) -> Self {
        AppError::Runtime(format!("mesh: {e}"))
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    replicas: Option<u64>,
) -> Result<(ConfigFile, String), AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = ConfigFile::parse_with_overrides(&text, seed, replicas)?;
    Ok((cfg, text))
}

fn warn_clamps(built: &driver::BuiltModel) {
    for (name, clamp) in &built.clamps {
        if clamp.clamped > 0 {
            eprintln!(
                "warning: species {name}: {} negative hop rates clamped (total magnitude {:e})",
                clamp.clamped, clamp.total_magnitude
            );
        }
    }
}

fn finite_summary(times: &[f64]) -> Result<SummaryStats, AppError> {
    let finite: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
    SummaryStats::from_samples(&finite)
        .map_err(|_| AppError::Runtime("every replica was censored at the horizon".into()))
}

/// Writes the ensemble outputs and the run record; shared by the mesh and
/// particle subcommands.
fn write_ensemble_outputs(
    command: &str,
    out_dir: &Path,
    cfg: &ConfigFile,
    cfg_text: &str,
    output: &EnsembleOutput,
    mut extras: Vec<(String, String)>,
) -> Result<(), AppError> {
    extras.insert(0, ("replicas".into(), cfg.run.replicas.to_string()));
    match output {
        EnsembleOutput::Survival { times } => {
            let curve = survival_curve(times)
                .map_err(|_| AppError::Runtime("every replica was censored at the horizon".into()))?;
            if curve.censored > 0 {
                eprintln!(
                    "warning: {} of {} replicas never bound by t_final; \
                     they are excluded from the curve and the mean",
                    curve.censored,
                    times.len()
                );
            }
            let stat = finite_summary(times)?;
            output::write_file(&out_dir.join("survival.csv"), &output::survival_csv(&curve))?;
            extras.push(("censored".into(), curve.censored.to_string()));
            extras.push(("mean_binding_time".into(), stat.mean.to_string()));
            extras.push(("half_width".into(), stat.half_width.to_string()));
            println!(
                "survival: n = {}, censored = {}, mean = {} +- {}",
                curve.n, curve.censored, stat.mean, stat.half_width
            );
        }
        EnsembleOutput::Curves { grid, series } => {
            let stats = mean_curve(series)
                .map_err(|e| AppError::Runtime(format!("aggregation failed: {e}")))?;
            output::write_file(&out_dir.join("pbound.csv"), &output::pbound_csv(grid, &stats))?;
            let last = stats.last().expect("observe times are nonempty");
            println!(
                "curve: {} points, final mean = {} +- {}",
                grid.len(),
                last.mean,
                last.half_width
            );
        }
    }
    let manifest = output::manifest_text(command, cfg_text, cfg.run.seed, &extras);
    output::write_file(&out_dir.join("manifest.txt"), &manifest)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::MeshInfo { config } => {
            let (cfg, _) = load_config(&config, None, None)?;
            let primal = build_primal(&cfg, 0)?;
            let dual = build_dual(&primal)?;
            let boundary = dual.is_boundary.iter().filter(|&&b| b).count();
            println!("voxels {}", dual.voxel_count());
            println!("boundary_voxels {boundary}");
            println!("h_max {}", dual.h_max);
            println!("total_area {}", dual.total_area);
            println!("fingerprint {:016x}", dual.fingerprint);
            Ok(())
        }
        Cmd::BuildRates { config, out } => {
            let (cfg, _) = load_config(&config, None, None)?;
            let built = assemble(&cfg, Some(&out.join("tables")))?;
            warn_clamps(&built);
            match built.cache_hit {
                None => println!("no pair table needed"),
                Some(hit) => {
                    let table = built.table().expect("cache state implies a table");
                    println!(
                        "{} | entries {} | max_quad_err {:e}",
                        if hit { "cache hit" } else { "built" },
                        table.entries(),
                        table.max_quad_err
                    );
                }
            }
            Ok(())
        }
        Cmd::Simulate {
            config,
            seed,
            replicas,
            out,
        } => {
            let (cfg, text) = load_config(&config, seed, replicas)?;
            if cfg.run.mode == "snapshots" && cfg.run.observe.is_empty() {
                return Err(AppError::Usage(
                    "run: snapshots mode needs observe times".into(),
                ));
            }
            let built = assemble(&cfg, Some(&out.join("tables")))?;
            warn_clamps(&built);
            let output = run_ensemble(&built, &cfg)?;
            let extras = vec![(
                "voxels".into(),
                built.dual().voxel_count().to_string(),
            )];
            write_ensemble_outputs("simulate", &out, &cfg, &text, &output, extras)
        }
        Cmd::Bd {
            config,
            seed,
            replicas,
            out,
        } => {
            let (cfg, text) = load_config(&config, seed, replicas)?;
            if cfg.run.mode == "snapshots" && cfg.run.observe.is_empty() {
                return Err(AppError::Usage(
                    "run: snapshots mode needs observe times".into(),
                ));
            }
            let built = assemble_bd(&cfg)?;
            if let Some(w) = built.bd.timestep_warning() {
                eprintln!("warning: {w}");
            }
            let output = run_bd_ensemble(&built, &cfg)?;
            let extras = vec![("dt".into(), built.bd.dt.to_string())];
            write_ensemble_outputs("bd", &out, &cfg, &text, &output, extras)
        }
        Cmd::Converge {
            config,
            levels,
            seed,
            replicas,
            out,
        } => {
            let (cfg, text) = load_config(&config, seed, replicas)?;
            let rows = convergence_study(&cfg, levels, Some(&out.join("tables")))?;
            for r in &rows {
                println!(
                    "level {} | voxels {} | h {:.6e} | mean {} +- {} | diff {}",
                    r.level,
                    r.voxels,
                    r.h,
                    r.stat.mean,
                    r.stat.half_width,
                    r.diff.map_or("-".into(), |d| format!("{d}")),
                );
            }
            for (i, p) in order_estimates(&rows).iter().enumerate() {
                println!("order estimate {} -> {}: {:.3}", i + 1, i + 2, p);
            }
            output::write_file(&out.join("convergence.csv"), &output::convergence_csv(&rows))?;
            let extras = vec![("levels".into(), levels.to_string())];
            let manifest = output::manifest_text("converge", &text, cfg.run.seed, &extras);
            output::write_file(&out.join("manifest.txt"), &manifest)?;
            Ok(())
        }
        Cmd::Stats { input, out } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| AppError::Usage(format!("cannot read {}: {e}", input.display())))?;
            let mut times = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let v: f64 = line.parse().map_err(|_| {
                    AppError::Usage(format!("{}:{}: not a number", input.display(), i + 1))
                })?;
                times.push(v);
            }
            let curve = survival_curve(&times)
                .map_err(|e| AppError::Usage(format!("no usable samples: {e}")))?;
            if curve.censored > 0 {
                eprintln!(
                    "warning: {} censored samples excluded from the mean",
                    curve.censored
                );
            }
            let stat = finite_summary(&times)?;
            output::write_file(&out.join("survival.csv"), &output::survival_csv(&curve))?;
            println!(
                "n = {}, censored = {}, mean = {} +- {}, area = {}",
                curve.n,
                curve.censored,
                stat.mean,
                stat.half_width,
                curve.area()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
