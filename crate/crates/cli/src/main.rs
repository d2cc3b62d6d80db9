use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use otflow_cli::{
    cmd_eval, cmd_generate, cmd_interpolate, cmd_train, InterpArgs, Method, TrainArgs,
};
use otflow_core::evaluation::Protocol;
use otflow_core::joint_training::RegularizerKind;
use otflow_core::{Error, Result};

#[derive(Parser)]
#[command(name = "otflow", version, about = "Image time-series interpolation on a learned manifold")]
struct Cli {
    /// Worker threads; falls back to OTFLOW_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic Gaussian dataset.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the stride-subsampled dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// ot, l2-latent, l2-image or none.
        #[arg(long)]
        reg: Option<RegularizerKind>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write per-frame and aggregate metric CSVs into the run directory.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// static, dynamic or dynamic-heldout.
        #[arg(long)]
        protocol: Protocol,
    },
    /// Write interpolated frames between two frames of a series.
    Interpolate {
        #[arg(long)]
        run: PathBuf,
        /// Dataset directory; defaults to the one the run was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        series: usize,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, value_delimiter = ',', default_value = "manifold,l2,w2")]
        methods: Vec<Method>,
    },
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("OTFLOW_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("OTFLOW_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::InvalidConfig("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    match cli.command {
        Command::Generate { config, out } => {
            let data = cmd_generate(config.as_deref(), out.as_deref())?;
            println!("wrote {} series", data.len());
        }
        Command::Train {
            config,
            data,
            out,
            reg,
            seed,
        } => {
            let (cfg, summary) = cmd_train(TrainArgs {
                config: config.as_deref(),
                data: &data,
                out: out.as_deref(),
                reg,
                seed,
            })?;
            let last = summary.records.last().expect("epochs >= 1");
            println!(
                "trained {} epochs into {}: total {:.6e}, dynamic {:.6e}",
                summary.records.len(),
                cfg.output.display(),
                last.total,
                last.dynamic
            );
        }
        Command::Eval {
            run,
            data,
            protocol,
        } => {
            let r = cmd_eval(&run, &data, protocol)?;
            println!(
                "{}: {} frames, mse {:.6e}, ssim {:.4} +/- {:.4}",
                protocol.as_str(),
                r.frames.len(),
                r.mse_mean,
                r.ssim_mean,
                r.ssim_std
            );
        }
        Command::Interpolate {
            run,
            data,
            series,
            from,
            to,
            steps,
            methods,
        } => {
            let out = cmd_interpolate(InterpArgs {
                run: &run,
                data: data.as_deref(),
                series,
                from,
                to,
                steps,
                methods: &methods,
            })?;
            println!("wrote {} frames for {} methods", steps * out.len(), out.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[UsageError]: {first}");
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {detail}", e.code());
            ExitCode::FAILURE
        }
    }
}
