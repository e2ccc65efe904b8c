use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dladmm_cli::{cmd_baseline, cmd_bench, cmd_eval, cmd_train, CliError};

#[derive(Parser)]
#[command(
    name = "dladmm",
    version,
    about = "Backward-forward ADMM training for fully-connected networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the ADMM solver.
    Train { config: PathBuf },
    /// Train with a full-batch gradient optimizer.
    Baseline { config: PathBuf },
    /// Time iterations against hidden width and sample count.
    Bench { config: PathBuf },
    /// Report the accuracy of a saved checkpoint.
    Eval {
        checkpoint: PathBuf,
        /// Image IDX file, or a directory with the t10k files.
        data: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => {
            let s = cmd_train(&config)?;
            report(&s);
        }
        Command::Baseline { config } => {
            let s = cmd_baseline(&config)?;
            report(&s);
        }
        Command::Bench { config } => {
            let (width, samples) = cmd_bench(&config)?;
            println!("hidden,samples,rho,mean_ms_per_iter");
            for r in width.iter().chain(&samples) {
                println!("{},{},{},{:.3}", r.hidden, r.samples, r.rho, r.mean_ms_per_iter);
            }
        }
        Command::Eval {
            checkpoint,
            data,
            labels,
        } => {
            let acc = cmd_eval(&checkpoint, &data, labels.as_deref())?;
            println!("accuracy {acc}");
        }
    }
    Ok(())
}

fn report(s: &dladmm_cli::Summary) {
    let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{}: {} iterations, train accuracy {}, test accuracy {}, {:.1} s",
        s.command,
        s.iterations,
        show(s.final_train_accuracy),
        show(s.final_test_accuracy),
        s.total_wall_ms / 1e3
    );
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
