use std::path::PathBuf;
use std::process::ExitCode;

use bubblelab::commands::{self, LabError, Outcome};
use bubblelab_core::SPHERE_ENERGY;
use clap::{Parser, Subcommand};

/// Numerical laboratory for harmonic map flow from the flat torus into S^2.
#[derive(Parser)]
#[command(name = "bubblelab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the torus Green's function and its constants.
    GreensTable {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        grid_n: usize,
    },
    /// Measure adapted bubbles over a list of scales.
    BubbleScan {
        #[arg(long, value_delimiter = ',', default_value = "20,28,40,56,80")]
        lambdas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Grid size; by default 512 or the smallest resolving grid.
        #[arg(long)]
        grid_n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the flow described by a key=value config file.
    Flow {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check Lojasiewicz ratios and decay laws on a flow or scan series.
    LojCheck {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grid size of the flow, used to cut the window at lambda*h <= 0.2.
        #[arg(long)]
        grid_n: Option<usize>,
        #[arg(long, default_value_t = SPHERE_ENERGY)]
        e_inf: f64,
    },
    /// Distance from a field file to the bubble family.
    DistFit {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        seed_lambda: f64,
        /// Bubble centre `a1,a2`; detected when omitted.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        seed_a: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cmd: Command) -> Result<Outcome, LabError> {
    match cmd {
        Command::GreensTable { out, json, grid_n } => commands::greens_table(grid_n, &out, json.as_deref()),
        Command::BubbleScan {
            lambdas,
            out,
            json,
            grid_n,
            seed,
        } => commands::bubble_scan(&lambdas, grid_n, seed, &out, json.as_deref()),
        Command::Flow { config } => commands::flow(&config),
        Command::LojCheck {
            series,
            out,
            grid_n,
            e_inf,
        } => commands::loj_check(&series, &out, grid_n, e_inf),
        Command::DistFit {
            field,
            seed_lambda,
            seed_a,
            out,
        } => {
            let out = out.unwrap_or_else(|| field.with_extension("dist.json"));
            let a = seed_a.map(|v| [v[0], v[1]]);
            commands::dist_fit(&field, seed_lambda, a, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(o) if o.pass => {
            println!("pass: {}", o.summary.display());
            ExitCode::SUCCESS
        }
        Ok(o) => {
            println!("criterion failure: {}", o.summary.display());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
