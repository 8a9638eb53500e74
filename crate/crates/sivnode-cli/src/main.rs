use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sivnode_cli::{list_experiments, run, validate_file, Overrides};

#[derive(Parser)]
#[command(name = "sivnode", version, about = "Run named SiV node simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment named in a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's output_dir or out/<experiment>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Print the experiment catalog.
    List {
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out, workers } => match run(&config, &Overrides { seed, out, workers: Some(workers) }) {
            Ok(m) => {
                println!("{}", serde_json::to_string_pretty(&m).expect("manifest serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::List { json } => {
            let entries = list_experiments();
            if json {
                println!("{}", serde_json::to_string_pretty(&entries).expect("catalog serializes"));
            } else {
                for e in entries {
                    println!("{:<22} {}  [{}]", e.name, e.description, e.required_blocks.join(", "));
                }
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match validate_file(&config) {
            Ok(v) => {
                println!("ok: {} (seed {})", v.spec.name, v.seed);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
