use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use speedlimit_core::pipeline::{write_report, Pipeline, PipelineConfig};

/// Latency-constrained architecture search for int8 transformer encoders.
#[derive(Debug, Parser)]
#[command(name = "speedlimit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Continue an interrupted stage instead of starting over.
    #[arg(long, global = true)]
    resume: bool,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long, global = true, env = "SPEEDLIMIT_OUT")]
    out: Option<PathBuf>,

    /// Worker threads for supermodel training, overriding the config.
    #[arg(long, global = true, env = "SPEEDLIMIT_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Benchmark sampled architectures and fit the fp32-on-int8 latency line.
    Profile,
    /// Fit the latency predictor and report its held-out MAPE.
    TrainPredictor,
    /// Train the teacher if needed, then distil the supermodel.
    TrainSupermodel,
    /// Search every latency target and compare against the baselines.
    Search,
    /// Write accuracy-vs-latency and bytes-vs-latency tables.
    Report,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| speedlimit_core::Error::Config("--config <path> is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(threads) = cli.threads {
        cfg.supermodel.train.threads = threads;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let pipeline = Pipeline::open(load_config(cli)?)?;
    match cli.command {
        Command::Profile => {
            let out = pipeline.profile(cli.resume)?;
            println!(
                "samples: {} ({} measured now)",
                out.samples, out.measured_now
            );
            println!("dataset: {}", pipeline.latency_csv().display());
            if let Some(r) = out.regression {
                println!("{r}");
            }
        }
        Command::TrainPredictor => {
            let out = pipeline.train_predictor()?;
            println!("held-out MAPE: {:.2}%", out.mape_percent);
            println!(
                "split: {} train / {} test",
                out.train_samples, out.test_samples
            );
            println!(
                "predictor: {} ({})",
                pipeline.predictor_path().display(),
                out.fingerprint
            );
        }
        Command::TrainSupermodel => {
            let out = pipeline.train_supermodel(cli.resume, None)?;
            println!(
                "supermodel {}: {}/{} updates",
                out.arch, out.updates, out.total_updates
            );
        }
        Command::Search => {
            for r in pipeline.search()? {
                println!(
                    "l = {} ms: {} int8 accuracy {:.4}, measured {:.3} ms{} ({} candidates)",
                    r.target_ms,
                    r.winner.arch,
                    r.winner.test_accuracy,
                    r.winner.measured_ms,
                    if r.constraint_met {
                        ""
                    } else {
                        " [over target]"
                    },
                    r.narrowed_members
                );
                println!(
                    "  baseline {}: fp32 {:.4} @ {:.3} ms, int8 {:.4} @ {:.3} ms",
                    r.baseline.arch,
                    r.baseline.f32_accuracy,
                    r.baseline.f32_ms,
                    r.baseline.int8_accuracy,
                    r.baseline.int8_ms
                );
            }
        }
        Command::Report => {
            let files = write_report(pipeline.root())?;
            println!("method,e,h,f,accuracy,latency_ms,bytes");
            for r in &files.rows {
                println!(
                    "{},{},{},{},{:.4},{:.3},{}",
                    r.method.as_str(),
                    r.arch.e,
                    r.arch.h,
                    r.arch.f,
                    r.accuracy,
                    r.latency_ms,
                    r.bytes
                );
            }
            println!("wrote {}", files.accuracy_vs_latency.display());
            println!("wrote {}", files.bytes_vs_latency.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e
                .downcast_ref::<speedlimit_core::Error>()
                .map_or("internal", |e| e.category());
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{category}]: {msg}");
            ExitCode::FAILURE
        }
    }
}
