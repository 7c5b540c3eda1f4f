use assouad_lab::{resolve, run, CliError, Command, ExperimentConfig, Overrides};
use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "assouad-lab", version, about = "Finite-scale experiments on projections of Assouad dimension")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_cells: Option<u64>,
    #[arg(long)]
    max_seconds: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("assouad-lab: {e}");
            return ExitCode::from(1);
        }
    }
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        max_cells: cli.max_cells,
        max_seconds: cli.max_seconds,
    };
    let result = ExperimentConfig::load(&cli.config)
        .and_then(|c| resolve(c, &overrides))
        .map_err(CliError::from)
        .and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("assouad-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
