use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctseg_cli::{
    cmd_aggregate, cmd_evaluate, cmd_predict, cmd_prepare, cmd_selftest, cmd_train, AggregateArgs, CliError,
    EvaluateArgs, PredictArgs, PrepareArgs, SelftestArgs, TrainArgs,
};

#[derive(Debug, Parser)]
#[command(
    name = "ctseg",
    version,
    about = "U-Net segmentation of CT slices and scan-level triage"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the manifest, masks and patient-disjoint splits.
    Prepare(PrepareArgs),
    /// Train a U-Net on the prepared splits.
    Train(TrainArgs),
    /// Segment slices and call each one positive or negative.
    Predict(PredictArgs),
    /// Turn slice calls into scan verdicts.
    Aggregate(AggregateArgs),
    /// Compare predictions with ground truth.
    Evaluate(EvaluateArgs),
    /// Run the built-in numerical checks.
    Selftest(SelftestArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare(a) => {
            let s = cmd_prepare(&a)?;
            print!("{}", s.table);
            println!("wrote {}", s.out_dir.display());
        }
        Command::Train(a) => {
            let s = cmd_train(&a)?;
            if let Some(t) = &s.transfer {
                print!("{}", ctseg_cli::train::transfer_ledger(t));
            }
            for r in &s.history {
                println!(
                    "epoch {:>3}  train {:.5}  val {:.5}  lr {:.1e}",
                    r.epoch, r.train_loss, r.val_loss, r.lr
                );
            }
            println!(
                "best epoch {} (val {:.5}); wrote {}",
                s.best_epoch,
                s.best_val_loss,
                s.out_dir.display()
            );
        }
        Command::Predict(a) => {
            let s = cmd_predict(&a)?;
            println!(
                "{} slices in {} scans, {} positive; wrote {}",
                s.slices,
                s.scans,
                s.positive_slices,
                a.out.display()
            );
        }
        Command::Aggregate(a) => {
            let scans = cmd_aggregate(&a)?;
            let pos = scans.iter().filter(|s| s.positive).count();
            println!("{} scans, {pos} positive; wrote {}", scans.len(), a.out.display());
        }
        Command::Evaluate(a) => print!("{}", cmd_evaluate(&a)?.text),
        Command::Selftest(a) => {
            cmd_selftest(&a)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
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
