use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use entroflow::cli::{self, RunConfig, SweepAxis};
use entroflow::error::Error;

#[derive(Parser)]
#[command(name = "entroflow", version, about = "Entropy/phase gradient-flow solver")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write diagnostics.csv and snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite (or `all`).
    Verify {
        suite: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the cross product of parameter values.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required = true)]
        vary: Vec<SweepAxis>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(cli::exit_code(e) as u8)
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    cli::load_config(path)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match args.command {
        Command::Run { config, out } => {
            let result = load(&config).and_then(|cfg| cli::cmd_run(&cfg, out.as_deref()));
            match result {
                Ok(traj) => {
                    let last = traj.diagnostics.last().expect("nonempty");
                    println!("steps {} final_energy {:.16e}", traj.steps(), last.energy_eps);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Verify { suite, config } => {
            let cfg = match config.as_deref().map(load).transpose() {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            match cli::cmd_verify(&suite, cfg.as_ref()) {
                Ok((lines, ok)) => {
                    for l in lines {
                        println!("{l}");
                    }
                    if ok {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(&e),
            }
        }
        Command::Sweep { config, vary, out } => {
            match load(&config).and_then(|cfg| cli::cmd_sweep(&cfg, &vary, out.as_deref())) {
                Ok(rows) => {
                    for r in rows {
                        println!("{r}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
