use std::process::ExitCode;

use clap::Parser;
use purecma_cli::checkpoint::Checkpoint;
use purecma_cli::{resume, run, Cli};

const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let mut cli = Cli::parse();

    let ckpt = match &cli.resume {
        Some(path) => match Checkpoint::load(path) {
            Ok(c) => Some(c),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        None => None,
    };
    if let Some(c) = &ckpt {
        cli.objective.get_or_insert_with(|| c.objective.clone());
        cli.dim.get_or_insert_with(|| c.dim.to_string());
        cli.seed.get_or_insert_with(|| c.seed.to_string());
    }

    let cfg = match cli.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    let result = match ckpt {
        Some(c) => resume(&cfg, c),
        None => run(&cfg),
    };
    match result {
        Ok(res) => {
            match serde_json::to_string(&res) {
                Ok(json) => println!("{json}"),
                Err(e) => eprintln!("error: cannot encode result: {e}"),
            }
            ExitCode::from(res.outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
