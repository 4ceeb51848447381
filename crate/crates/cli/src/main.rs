use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use snls_cli::config::RunConfig;
use snls_cli::manifest::RunManifest;
use snls_cli::{report, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "snls", version, about = "Stochastic NLS numerical lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config, or re-run one from its manifest.
    Run {
        /// TOML or JSON config, or a `manifest.json`.
        input: PathBuf,
        /// Output directory (overrides the config and $SNLS_OUTPUT_ROOT).
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
        /// Worker threads; results do not depend on it.
        #[arg(short, long)]
        workers: Option<usize>,
        /// Exit 0 even when an estimate is flagged unreliable.
        #[arg(long)]
        allow_unreliable: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Print the summary tables of a finished run.
    Report { manifest: PathBuf },
}

fn load_input(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if RunManifest::sniff(&text) {
        Ok(RunManifest::load(path)?.config)
    } else {
        RunConfig::load(path)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            input,
            output_dir,
            workers,
            allow_unreliable,
        } => match load_input(&input).and_then(|cfg| snls_cli::run(&cfg, &RunOptions { output_dir, workers })) {
            Ok(outcome) => {
                for f in &outcome.manifest.findings {
                    eprintln!("note: {f}");
                }
                if outcome.manifest.unreliable {
                    eprintln!("warning: an estimate is flagged unreliable (more than 1% of paths aborted)");
                }
                println!("{}", outcome.dir.display());
                outcome.exit_code(allow_unreliable)
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Validate { config } => match load_input(&config) {
            Ok(cfg) => {
                let findings = cfg.findings();
                if matches!(cfg.experiment, snls_cli::config::Experiment::ExitStudy(_)) {
                    eprintln!("note: the epsilon < 1/(K1 T0) check uses the declared K1; `run` re-checks it against the measured value");
                }
                if findings.is_empty() {
                    println!("ok");
                    0
                } else {
                    for f in &findings {
                        println!("finding: {f}");
                    }
                    1
                }
            }
            Err(e) => {
                println!("finding: {e}");
                1
            }
        },
        Command::Report { manifest } => match report::render(&manifest) {
            Ok(s) => {
                print!("{s}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
