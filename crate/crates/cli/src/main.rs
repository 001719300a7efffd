use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;
use thz_ocdm::config::RunConfig;
use thz_ocdm::experiments::{run_sweep, run_trial, RunManifest};
use thz_ocdm::selftest::{run_selftest, SelftestOptions};
use thz_ocdm::{channel, fusion, sensing};

#[derive(Parser)]
#[command(name = "thz-ocdm", version, about = "Multi-subband OCDM THz radar simulator")]
struct Cli {
    /// Worker threads for Monte Carlo runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration; the desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use K = 8 subbands with M = N = 256 and at least 500 trials.
    #[arg(long)]
    paper_scale: bool,
    /// Override the path-loss cut-off for active subbands, dB.
    #[arg(long)]
    pl_threshold_db: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial at the reference point and print the estimates.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// CSV output file.
        #[arg(long, default_value = "simulate.csv")]
        out: PathBuf,
    },
    /// Monte Carlo RMSE sweep over the SNR and distance grids.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for sweep.csv and manifest.json.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Override the trial count per grid point.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Print the per-subband and fused CRLB at the reference point.
    Crlb {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the embedded invariant checks.
    Selftest {
        #[arg(long, hide = true)]
        perturb_gamma: bool,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn config_err(e: thz_ocdm::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(config_err)?,
        None => RunConfig::desk_default(),
    };
    if args.paper_scale {
        cfg.apply_paper_scale();
    }
    if let Some(seed) = args.seed {
        cfg.sweep.seed = seed;
    }
    if let Some(db) = args.pl_threshold_db {
        cfg.pipeline.pl_threshold_db = db;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into())
}

fn cmd_simulate(args: &ConfigArgs, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let scene = cfg.scene().map_err(config_err)?;
    let pipeline = cfg.pipeline_config();
    let outcome = run_trial(&scene, &pipeline, cfg.sweep.seed).map_err(runtime_err)?;

    let mut stdout = std::io::stdout().lock();
    let w = &mut stdout;
    let _ = writeln!(w, "{:<7} {:>6} {:>12} {:>12} {:>11} {:>11}", "source", "target", "range_m", "vel_mps", "crlb_r", "crlb_v");
    for (k, list) in outcome.per_subband.iter().enumerate() {
        if list.is_empty() {
            let tag = if outcome.dropped.contains(&k) { "dropped" } else { "inactive" };
            let _ = writeln!(w, "{:<7} {:>6} {:>12}", format!("sp{}", k + 1), "-", tag);
        }
        for (p, e) in list.iter().enumerate() {
            let _ = writeln!(
                w,
                "{:<7} {:>6} {:>12.6} {:>12.4} {:>11} {:>11}",
                format!("sp{}", k + 1),
                p,
                e.range_m,
                e.velocity_mps,
                fmt_opt(Some(e.var_range.sqrt())),
                fmt_opt(Some(e.var_velocity.sqrt()))
            );
        }
    }
    for (p, f) in outcome.fused.iter().enumerate() {
        let _ = writeln!(
            w,
            "{:<7} {:>6} {:>12.6} {:>12.4} {:>11} {:>11}",
            "fused",
            p,
            f.range_m,
            f.velocity_mps,
            fmt_opt(Some(f.fused_var_range.sqrt())),
            fmt_opt(Some(f.fused_var_velocity.sqrt()))
        );
    }
    for (p, t) in outcome.truth.iter().enumerate() {
        let _ = writeln!(w, "{:<7} {:>6} {:>12.6} {:>12.4}", "truth", p, t.range_m, t.velocity_mps);
    }

    let mut file = create(out)?;
    outcome.write_csv(&mut file).map_err(runtime_err)?;
    file.flush().map_err(runtime_err)?;
    info!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(args: &ConfigArgs, out: &Path, trials: Option<usize>) -> Result<(), CliError> {
    let mut cfg = load_config(args)?;
    if let Some(t) = trials {
        cfg.sweep.trials = t;
        cfg.validate().map_err(config_err)?;
    }
    let spec = cfg.sweep_spec().map_err(config_err)?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;

    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    info!(
        "sweep: {} SNR x {} distance points, {} trials each",
        spec.snr_grid_db.len(),
        spec.distance_grid_m.len(),
        spec.trials
    );
    let result = run_sweep(&spec).map_err(runtime_err)?;
    let wall = clock.elapsed().as_secs_f64();

    let csv_path = out.join("sweep.csv");
    let mut file = create(&csv_path)?;
    result.write_csv(&mut file).map_err(runtime_err)?;
    file.flush().map_err(runtime_err)?;

    let echo = serde_json::to_value(&cfg).map_err(runtime_err)?;
    let manifest = RunManifest::new(echo, cfg.sweep.seed, wall, started);
    let mut mfile = create(&out.join("manifest.json"))?;
    manifest.write(&mut mfile).map_err(runtime_err)?;
    mfile.flush().map_err(runtime_err)?;
    eprintln!("wrote {} ({:.1} s)", csv_path.display(), wall);
    Ok(())
}

fn cmd_crlb(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let scene = cfg.scene().map_err(config_err)?;
    let pipeline = cfg.pipeline_config();
    let r = scene.targets[0].range_m;
    let active = channel::active_subbands(r, &scene, pipeline.pl_threshold_db);
    println!(
        "reference SNR {} dB at {} m, target at {} m",
        scene.reference.snr_db, scene.reference.range_m, r
    );
    println!("{:<7} {:>10} {:>9} {:>11} {:>11} {:>11}", "source", "f_c_THz", "PL_dB", "amplitude", "crlb_r_m", "crlb_v_mps");
    let (mut vr, mut vv) = (Vec::new(), Vec::new());
    for (k, sb) in scene.subbands.iter().enumerate() {
        let pl = channel::path_loss_db(sb.center_hz, r, sb.absorption_per_m).map_err(runtime_err)?;
        let amp = channel::channel_amplitude(sb, r, scene.tx_amplitude_scale).map_err(runtime_err)?;
        let (a, b) = sensing::crlb(sb, amp, pipeline.payload_power).map_err(runtime_err)?;
        let mark = if active.contains(&k) {
            vr.push(a);
            vv.push(b);
            ""
        } else {
            " (inactive)"
        };
        println!(
            "{:<7} {:>10.4} {:>9.2} {:>11.4e} {:>11.4e} {:>11.4e}{mark}",
            format!("sp{}", k + 1),
            sb.center_hz / 1e12,
            pl,
            amp,
            a.sqrt(),
            b.sqrt()
        );
    }
    if vr.is_empty() {
        println!("fused   no active subband");
    } else {
        let fr = fusion::fused_variance(&vr).map_err(runtime_err)?;
        let fv = fusion::fused_variance(&vv).map_err(runtime_err)?;
        println!("{:<7} {:>10} {:>9} {:>11} {:>11.4e} {:>11.4e}", "fused", "-", "-", "-", fr.sqrt(), fv.sqrt());
    }
    Ok(())
}

fn cmd_selftest(perturb_gamma: bool) -> Result<(), CliError> {
    let results = run_selftest(&SelftestOptions { perturb_gamma });
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    for r in &results {
        println!("{} {:<32} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    println!("{} checks, {} failed", results.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("selftest failed: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("invalid parameter `threads`: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime_err)?;
    }
    match &cli.command {
        Command::Simulate { cfg, out } => cmd_simulate(cfg, out),
        Command::Sweep { cfg, out, trials } => cmd_sweep(cfg, out, *trials),
        Command::Crlb { cfg } => cmd_crlb(cfg),
        Command::Selftest { perturb_gamma } => cmd_selftest(*perturb_gamma),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
