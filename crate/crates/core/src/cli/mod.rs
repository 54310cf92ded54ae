//! `paramcrop` command-line interface.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical or training error
//! (including a failed gradient check), 4 I/O error.

mod manifest;
mod plot;

pub use manifest::{RunManifest, MANIFEST_FILE};
pub use plot::render_svg;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, DEFAULT_SEEDS, DEFAULT_TOLERANCE};
use crate::simulator::{fmt_f64, run_training, run_training_with_probe, MetricsLog, Strategy, TrainConfig, Trainer, CSV_HEADER};

pub const THREADS_ENV: &str = "PARAMCROP_THREADS";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PLOT_FILE: &str = "plot.svg";
pub const COMPARE_FILE: &str = "compare.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "detach_bound,final_iou,final_dist_norm,probe_iou,probe_dist_norm";

/// Fraction of steps averaged for final-phase statistics.
const FINAL_FRACTION: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "paramcrop", version, about = "Adversarial parametric cubic cropping on synthetic videos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-difference checks of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per check.
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: usize,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// One training run: metrics CSV, manifest, cropper checkpoints.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Re-run exactly the configuration recorded in a manifest.
        #[arg(long, value_name = "PATH", conflicts_with_all = ["config", "seed", "set"])]
        from_manifest: Option<PathBuf>,
    },
    /// One run per strategy with a shared seed, merged into one CSV.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "paramcrop,random")]
        strategies: Vec<String>,
    },
    /// Final-phase disparity for each early-stop bound.
    SweepDetach {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
        bounds: Vec<f64>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` override applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_name = "DIR", default_value = "paramcrop-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::config("set", format!("expected KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs the command, reports errors on
/// stderr and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gradcheck { seed, seeds, tolerance } => cmd_gradcheck(seed, seeds, tolerance),
        Command::Train { run, from_manifest } => {
            let cfg = match &from_manifest {
                Some(path) => RunManifest::load(path)?.config,
                None => run.resolve()?,
            };
            if run.print_config {
                print!("{}", cfg.to_text());
                return Ok(0);
            }
            let log = cmd_train(&cfg, &run.out, run.plot)?;
            eprintln!("wrote {} steps to {}", log.len(), run.out.join(METRICS_FILE).display());
            Ok(0)
        }
        Command::Compare { run, strategies } => {
            let cfg = run.resolve()?;
            if run.print_config {
                print!("{}", cfg.to_text());
                return Ok(0);
            }
            let strategies = strategies.iter().map(|s| s.trim().parse()).collect::<Result<Vec<Strategy>>>()?;
            cmd_compare(&cfg, &strategies, &run.out, run.plot)?;
            eprintln!("wrote {} runs to {}", strategies.len(), run.out.join(COMPARE_FILE).display());
            Ok(0)
        }
        Command::SweepDetach { run, bounds } => {
            let cfg = run.resolve()?;
            if run.print_config {
                print!("{}", cfg.to_text());
                return Ok(0);
            }
            cmd_sweep_detach(&cfg, &bounds, &run.out)?;
            eprintln!("wrote {} rows to {}", bounds.len(), run.out.join(SWEEP_FILE).display());
            Ok(0)
        }
    }
}

pub fn cmd_gradcheck(seed: u64, seeds: usize, tolerance: f64) -> Result<i32> {
    let report = run_gradcheck(seed, seeds, tolerance)?;
    println!("{report}");
    Ok(if report.passed() { 0 } else { 3 })
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

pub fn cmd_train(cfg: &TrainConfig, out: &Path, plot: bool) -> Result<MetricsLog> {
    prepare_out(out)?;
    let mut manifest = RunManifest::new("train", cfg.clone());
    manifest.outputs.push(("metrics".into(), METRICS_FILE.into()));
    if plot {
        manifest.outputs.push(("plot".into(), PLOT_FILE.into()));
    }
    let learned = cfg.strategy == Strategy::ParamCrop;
    if learned {
        manifest.outputs.push(("cropper_0".into(), "cropper_0".into()));
        manifest.outputs.push(("cropper_1".into(), "cropper_1".into()));
    }
    manifest.write(out)?;

    let mut trainer = Trainer::new(cfg.clone())?;
    let mut log = MetricsLog::default();
    for _ in 0..cfg.steps {
        let batch = trainer.next_batch()?;
        log.records.push(trainer.train_step(&batch)?);
    }
    write_file(&out.join(METRICS_FILE), &log.to_csv())?;
    if plot {
        let title = format!("{} (seed {})", cfg.strategy, cfg.seed);
        write_file(&out.join(PLOT_FILE), &render_svg(&log, cfg.steps, &title))?;
    }
    if learned {
        for (b, c) in trainer.croppers().iter().enumerate() {
            c.save(out.join(format!("cropper_{b}")), cfg.seed)?;
        }
    }
    Ok(log)
}

/// Worker count from `PARAMCROP_THREADS` (default 1).
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::config(THREADS_ENV, format!("expected a positive integer, got `{s}`"))),
        },
    }
}

/// Runs `f` over `jobs` on up to `threads` workers; results keep job order.
pub fn run_parallel<T, F>(jobs: &[TrainConfig], threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&TrainConfig) -> Result<T> + Sync,
{
    let threads = threads.clamp(1, jobs.len().max(1));
    let mut slots: Vec<Option<Result<T>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    (w..jobs.len())
                        .step_by(threads)
                        .map(|i| (i, f(&jobs[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every job ran")).collect()
}

pub fn cmd_compare(cfg: &TrainConfig, strategies: &[Strategy], out: &Path, plot: bool) -> Result<String> {
    if strategies.len() < 2 {
        return Err(Error::config("strategies", format!("need at least 2, got {}", strategies.len())));
    }
    let jobs: Vec<TrainConfig> = strategies
        .iter()
        .map(|&s| TrainConfig { strategy: s, ..cfg.clone() })
        .collect();
    for j in &jobs {
        j.validate()?;
    }
    prepare_out(out)?;
    let mut manifest = RunManifest::new("compare", cfg.clone());
    manifest.outputs.push(("compare".into(), COMPARE_FILE.into()));
    let names: Vec<&str> = strategies.iter().map(|s| s.name()).collect();
    manifest.outputs.push(("strategies".into(), names.join(",")));
    if plot {
        for n in &names {
            manifest.outputs.push((format!("plot_{n}"), format!("plot_{n}.svg")));
        }
    }
    manifest.write(out)?;

    let logs = run_parallel(&jobs, thread_cap()?, run_training)?;
    let mut csv = format!("strategy,{CSV_HEADER}\n");
    for (job, log) in jobs.iter().zip(&logs) {
        for r in &log.records {
            csv.push_str(job.strategy.name());
            csv.push(',');
            csv.push_str(&r.csv_fields());
            csv.push('\n');
        }
        if plot {
            let title = format!("{} (seed {})", job.strategy, job.seed);
            write_file(&out.join(format!("plot_{}.svg", job.strategy.name())), &render_svg(log, job.steps, &title))?;
        }
    }
    write_file(&out.join(COMPARE_FILE), &csv)?;
    Ok(csv)
}

pub fn cmd_sweep_detach(cfg: &TrainConfig, bounds: &[f64], out: &Path) -> Result<String> {
    if bounds.is_empty() {
        return Err(Error::config("bounds", "need at least one bound"));
    }
    let mut jobs = Vec::with_capacity(bounds.len());
    for &b in bounds {
        if !(0.0..=0.5).contains(&b) {
            return Err(Error::config("bounds", format!("{b} is outside [0, 0.5]")));
        }
        let mut j = cfg.clone();
        j.bounds.detach_bound = b;
        j.validate()?;
        jobs.push(j);
    }
    prepare_out(out)?;
    let mut manifest = RunManifest::new("sweep-detach", cfg.clone());
    manifest.outputs.push(("sweep".into(), SWEEP_FILE.into()));
    let listed: Vec<String> = bounds.iter().map(|b| b.to_string()).collect();
    manifest.outputs.push(("bounds".into(), listed.join(",")));
    manifest.write(out)?;

    let results = run_parallel(&jobs, thread_cap()?, run_training_with_probe)?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    for (b, (log, (probe_iou, probe_dist))) in bounds.iter().zip(&results) {
        let iou = log.tail_mean(FINAL_FRACTION, |r| r.iou);
        let dist = log.tail_mean(FINAL_FRACTION, |r| r.dist_norm);
        csv.push_str(&format!(
            "{b},{},{},{},{}\n",
            fmt_f64(iou),
            fmt_f64(dist),
            fmt_f64(*probe_iou),
            fmt_f64(*probe_dist)
        ));
    }
    write_file(&out.join(SWEEP_FILE), &csv)?;
    Ok(csv)
}
