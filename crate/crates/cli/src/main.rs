use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ilvm_cli::experiment::EVALUATION_FILE;
use ilvm_cli::{evaluate_checkpoint, run_experiment, selftest, Evaluation, ExperimentSpec};

/// Implicit latent variable models: training, evaluation and self-checks.
#[derive(Parser)]
#[command(name = "ilvm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per a spec file and write metrics, checkpoint and point clouds.
    Run { spec: PathBuf },
    /// Evaluate a checkpoint on the held-out data of a spec.
    Evaluate { checkpoint: PathBuf, spec: PathBuf },
    /// Run the numeric identity and property checks.
    Selftest,
}

fn print_evaluation(e: &Evaluation) {
    println!("mse_x\t{}", e.mse_x);
    println!("mse_z\t{}", e.mse_z);
    println!("test_size\t{}", e.test_size);
    println!("prior_size\t{}", e.prior_size);
    if let Some(a) = e.principal_angle_deg {
        println!("principal_angle_deg\t{a}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { spec } => ExperimentSpec::load(&spec).map_err(Into::into).and_then(|spec| {
            let out = spec.output_dir_from_env();
            eprintln!("writing to {}", out.display());
            let summary = run_experiment(&spec, &out, |done, total| eprintln!("step {done}/{total}"))?;
            print_evaluation(&summary.evaluation);
            eprintln!("evaluation written to {}", out.join(EVALUATION_FILE).display());
            Ok(())
        }),
        Command::Evaluate { checkpoint, spec } => ExperimentSpec::load(&spec)
            .map_err(Into::into)
            .and_then(|spec| evaluate_checkpoint(&spec, &checkpoint))
            .map(|e| print_evaluation(&e)),
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            return if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
