use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfmoe::harness::{
    audit, evaluate, read_csv, read_trace, run_sweep, stage_train_cp, stage_train_mlp,
    stage_train_moe, AllocatorKind, CpModels, CsiSource, Dataset, Models, RunConfig, DATASET_FILE,
    MLP_FILE, MOE_FILE,
};
use cfmoe::nn::ModelParams;
use cfmoe::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cfmoe",
    version,
    about = "Cell-free uplink simulator, channel predictor and power allocator"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct DatasetArg {
    /// Dataset file; defaults to `<out>/dataset.bin`.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct CsiArg {
    /// Allocator CSI: cpnet, estimated, kalman or perfect.
    #[arg(long, default_value = "cpnet")]
    csi: String,
    /// Directory holding predictor parameters; defaults to `<out>`.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the train/test dataset.
    GenDataset,
    /// Train one predictor per link kind.
    TrainCp(DatasetArg),
    /// Train the mixture-of-experts allocator.
    TrainMoe {
        #[command(flatten)]
        data: DatasetArg,
        #[command(flatten)]
        csi: CsiArg,
    },
    /// Train the MLP allocator baseline.
    TrainMlp {
        #[command(flatten)]
        data: DatasetArg,
        #[command(flatten)]
        csi: CsiArg,
    },
    /// Score allocators on the held-out split.
    Evaluate {
        #[command(flatten)]
        data: DatasetArg,
        #[command(flatten)]
        csi: CsiArg,
        /// Comma-separated allocators; defaults to the dataset's configuration.
        #[arg(long, value_delimiter = ',')]
        allocators: Vec<String>,
        /// Record allocator wall time per call (`wall_ms`); off keeps reruns byte-identical.
        #[arg(long)]
        timing: bool,
    },
    /// Run the configured parameter sweep.
    Sweep {
        /// Directory with trained parameters, if learned allocators or CP-Net CSI are swept.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Take the normalizers from this dataset instead of calibrating.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compare the iterative allocator with the exhaustive grid (K ≤ 3).
    Oracle {
        #[command(flatten)]
        data: DatasetArg,
        #[command(flatten)]
        csi: CsiArg,
    },
    /// Re-derive every emitted metric from the stored powers and moments.
    Audit {
        /// Directory with `metrics.csv` and `trace.json`; defaults to `<out>`.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

fn parse_allocator(s: &str) -> Result<AllocatorKind> {
    Ok(match s {
        "uniform" => AllocatorKind::Uniform,
        "iterative" => AllocatorKind::Iterative,
        "oracle" => AllocatorKind::Oracle,
        "moe" => AllocatorKind::Moe,
        "mlp" => AllocatorKind::Mlp,
        _ => return Err(Error::Config(format!("unknown allocator `{s}`"))),
    })
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.scenario.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_path(g: &Global, d: &DatasetArg) -> PathBuf {
    d.dataset
        .clone()
        .unwrap_or_else(|| g.out.join(DATASET_FILE))
}

/// Load whatever trained parameters `dir` holds that `csi` and the
/// allocator list need.
fn load_models(dir: &Path, csi: CsiSource, allocators: &[AllocatorKind]) -> Result<Models> {
    let mut m = Models::default();
    if csi == CsiSource::Cpnet {
        m.cp = Some(CpModels::load(dir)?);
    }
    if allocators.contains(&AllocatorKind::Moe) {
        m.moe = Some(ModelParams::load(&dir.join(MOE_FILE))?);
    }
    if allocators.contains(&AllocatorKind::Mlp) {
        m.mlp = Some(ModelParams::load(&dir.join(MLP_FILE))?);
    }
    Ok(m)
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut b = serde_json::to_vec_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    b.push(b'\n');
    std::fs::write(path, b).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn train_alloc(g: &Global, data: &DatasetArg, csi: &CsiArg, mlp: bool) -> Result<()> {
    let ds = Dataset::load(&dataset_path(g, data))?;
    let source = CsiSource::parse(&csi.csi)?;
    let dir = csi.models.clone().unwrap_or_else(|| g.out.clone());
    let mut models = Models::default();
    if source == CsiSource::Cpnet {
        models.cp = Some(CpModels::load(&dir).map_err(|_| {
            Error::StageOrder(format!(
                "no predictor parameters in {}; run train-cp first or pass --csi=estimated",
                dir.display()
            ))
        })?);
    }
    let (params, log, file) = if mlp {
        let (p, l) = stage_train_mlp(&ds, &models, source)?;
        (p, l, MLP_FILE)
    } else {
        let (p, l) = stage_train_moe(&ds, &models, source)?;
        (p, l, MOE_FILE)
    };
    let path = g.out.join(file);
    params.save(&path)?;
    write_json(
        &g.out
            .join(format!("{}_log.json", file.trim_end_matches(".bin"))),
        &log,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn eval_with(
    g: &Global,
    data: &DatasetArg,
    csi: &CsiArg,
    allocators: Option<Vec<AllocatorKind>>,
    timing: bool,
) -> Result<()> {
    let mut ds = Dataset::load(&dataset_path(g, data))?;
    let source = CsiSource::parse(&csi.csi)?;
    let e = &mut ds.header.config.eval;
    e.csi = source;
    if let Some(a) = allocators {
        e.allocators = a;
    }
    e.record_timing |= timing;
    let dir = csi.models.clone().unwrap_or_else(|| g.out.clone());
    let models = load_models(&dir, source, &ds.config().eval.allocators)?;
    let report = evaluate(&ds, &models)?;
    report.write(&g.out)?;
    for p in report.summary.points.iter().filter(|p| p.group == "all") {
        println!(
            "{:<10} se {:.4}  ee {:.4e}  delta {:.4} ± {:.4}  usp {:.4}",
            p.allocator, p.se_mean, p.ee_mean, p.delta_mean, p.delta_stderr, p.usp_mean
        );
    }
    println!("wrote {}", g.out.join("metrics.csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if g.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(g.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&g.out).map_err(|source| Error::Io {
        path: g.out.clone(),
        source,
    })?;
    match &cli.cmd {
        Cmd::GenDataset => {
            let cfg = load_config(g)?;
            let ds = Dataset::generate(&cfg)?;
            let path = g.out.join(DATASET_FILE);
            ds.save(&path)?;
            println!(
                "wrote {} ({} train / {} test samples)",
                path.display(),
                ds.train_range().len(),
                ds.test_range().len()
            );
        }
        Cmd::TrainCp(data) => {
            let ds = Dataset::load(&dataset_path(g, data))?;
            let (cp, logs) = stage_train_cp(&ds)?;
            for p in cp.save(&g.out)? {
                println!("wrote {}", p.display());
            }
            write_json(&g.out.join("cp_log.json"), &logs)?;
        }
        Cmd::TrainMoe { data, csi } => train_alloc(g, data, csi, false)?,
        Cmd::TrainMlp { data, csi } => train_alloc(g, data, csi, true)?,
        Cmd::Evaluate {
            data,
            csi,
            allocators,
            timing,
        } => {
            let list = if allocators.is_empty() {
                None
            } else {
                Some(
                    allocators
                        .iter()
                        .map(|s| parse_allocator(s))
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            eval_with(g, data, csi, list, *timing)?;
        }
        Cmd::Oracle { data, csi } => {
            eval_with(
                g,
                data,
                csi,
                Some(vec![AllocatorKind::Oracle, AllocatorKind::Iterative]),
                false,
            )?;
        }
        Cmd::Sweep { models, dataset } => {
            let cfg = load_config(g)?;
            let m = match models {
                Some(dir) => load_models(dir, cfg.eval.csi, &cfg.eval.allocators)?,
                None => Models::default(),
            };
            let norm = match dataset {
                Some(p) => Some(Dataset::load(p)?.header.normalizers),
                None => None,
            };
            let report = run_sweep(&cfg, &m, norm)?;
            report.write(&g.out)?;
            for f in &report.summary.failures {
                eprintln!("point {} failed: {}", f.axis_value, f.message);
            }
            println!(
                "wrote {} rows to {}",
                report.rows.len(),
                g.out.join("metrics.csv").display()
            );
        }
        Cmd::Audit { dir, tol } => {
            let dir = dir.clone().unwrap_or_else(|| g.out.clone());
            let trace = read_trace(&dir.join("trace.json"))?;
            let rows = read_csv(&dir.join("metrics.csv"))?;
            let r = audit(&trace, &rows, *tol)?;
            println!(
                "audit ok: {} records, {} rows, max deviation {:e}",
                r.records, r.rows, r.max_abs_error
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
