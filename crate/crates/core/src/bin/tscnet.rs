use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tscnet::data::SynthConfig;
use tscnet::harness;
use tscnet::{checkpoint, Error, ModelConfig, Result, RunConfig};
use tscnet_tensor::FiniteDiffOptions;

#[derive(Parser, Debug)]
#[command(name = "tscnet", version, about = "Salient object detection with texture-semantic collaboration")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Objects per image as `min,max`.
        #[arg(long, default_value = "1,5")]
        objects: String,
        /// Object area as `min,max` fractions of size².
        #[arg(long, default_value = "0.01,0.06")]
        area: String,
    },
    /// Train on a manifest; writes a CSV log and checkpoints.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-image and mean metrics of S² on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// CSV output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write saliency maps for one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also write the S³ and S⁴ lateral maps.
        #[arg(long)]
        laterals: bool,
    },
    /// Finite-difference check of every parameter (micro preset by default).
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        #[arg(long, default_value_t = FiniteDiffOptions::default().epsilon)]
        epsilon: f64,
        /// Denominator floor of the relative error.
        #[arg(long, default_value_t = FiniteDiffOptions::default().floor)]
        floor: f64,
        /// Check at most this many entries per tensor.
        #[arg(long)]
        max_per_tensor: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Channel-wise versus standard attention: buffer sizes and timings.
    BenchAttn {
        /// Comma-separated `CxH` pairs.
        #[arg(long, default_value = "32x16,32x32,32x64")]
        sizes: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Largest standard attention map, in elements.
        #[arg(long, default_value_t = 1 << 26)]
        cap: usize,
    },
}

fn pair<T: std::str::FromStr>(s: &str, sep: char, what: &str) -> Result<(T, T)> {
    let bad = || Error::Config(format!("{what}: expected two values separated by '{sep}', got {s:?}"));
    let (a, b) = s.split_once(sep).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io { path: p.to_path_buf(), source: e }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if matches!(cli.command, Command::Gradcheck { .. }) {
        cfg.model = ModelConfig::micro();
    }
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        cfg.apply_str(&text)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = run_config(&cli)?;
    match cli.command {
        Command::GenData { out, count, size, seed, objects, area } => {
            let synth = SynthConfig {
                size,
                seed,
                objects: pair(&objects, ',', "--objects")?,
                area: pair(&area, ',', "--area")?,
                ..SynthConfig::default()
            };
            let manifest = harness::gen_data(&out, &synth, count)?;
            println!("wrote {count} samples, manifest {}", manifest.display());
        }
        Command::Train { manifest, out_dir, checkpoint } => {
            cfg.manifest = manifest.or(cfg.manifest);
            cfg.out_dir = out_dir.or(cfg.out_dir);
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            let outcome = harness::train_run(&cfg)?;
            if let Some(last) = outcome.log.last() {
                println!("{} steps, final loss {:.6}", outcome.log.len(), last.loss.total);
            }
        }
        Command::Eval { checkpoint, manifest, out } => {
            cfg.validate()?;
            let params = checkpoint::load(&checkpoint)?;
            let samples = harness::load_manifest(&manifest)?;
            let report = harness::evaluate(&cfg.model, &params, &samples)?;
            write_or_print(out.as_deref(), &report.to_csv())?;
        }
        Command::Infer { checkpoint, image, out_dir, laterals } => {
            cfg.validate()?;
            let params = checkpoint::load(&checkpoint)?;
            params.check_matches(&cfg.model)?;
            for p in harness::infer(&cfg.model, &params, &image, &out_dir, laterals)? {
                println!("{}", p.display());
            }
        }
        Command::Gradcheck { threshold, epsilon, floor, max_per_tensor, out } => {
            let opts = FiniteDiffOptions { epsilon, floor, max_per_tensor };
            let report = harness::gradcheck(&cfg.model, cfg.train.seed, &opts)?;
            write_or_print(out.as_deref(), &harness::gradcheck_table(&report))?;
            let failures = report.failures(threshold);
            if !failures.is_empty() {
                let names: Vec<&str> = failures.iter().map(|f| f.name.as_str()).collect();
                return Err(Error::Numeric(format!(
                    "{} parameter groups exceed {threshold:e}: {}",
                    failures.len(),
                    names.join(", ")
                )));
            }
            eprintln!("max relative error {:.3e} over {} tensors", report.max_error(), report.entries.len());
        }
        Command::BenchAttn { sizes, reps, cap } => {
            let sizes: Vec<(usize, usize)> =
                sizes.split(',').map(|s| pair(s, 'x', "--sizes")).collect::<Result<_>>()?;
            let rows = harness::bench_attention(&sizes, reps, cap, cfg.train.seed)?;
            print!("{}", harness::bench_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
