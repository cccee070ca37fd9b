use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use signms::config::RawConfig;
use signms::run::{errors_csv, run_experiment, write_outputs, ReferenceCache, RunOptions};
use signms::verify::run_checks;

#[derive(Parser)]
#[command(name = "signms", version, about = "Multiscale Helmholtz solver for sign-changing coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write errors.csv, timings.csv and config.resolved.
    Run {
        /// key = value configuration file
        #[arg(long)]
        config: Option<PathBuf>,
        /// flat_interface, random_inclusions, nim_slab or custom
        #[arg(long)]
        experiment: Option<String>,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the m rows of each H concurrently
        #[arg(long)]
        parallel: bool,
        /// Write u_ms, u_ref and |u_ms - u_ref| grids
        #[arg(long)]
        dump_fields: bool,
        /// Override any config key, e.g. --set k=8 or --set m=[1,3]
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Run the invariant and oracle checks on small meshes.
    Verify,
}

fn init_threads() {
    faer::set_global_parallelism(faer::Par::Seq);
    if let Some(n) = std::env::var("SIGNMS_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    match cli.command {
        Command::Verify => {
            let checks = run_checks();
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Run {
            config,
            experiment,
            out,
            parallel,
            dump_fields,
            sets,
        } => {
            let mut raw = RawConfig::new();
            let parsed = (|| {
                if let Some(path) = &config {
                    raw.read_file(path)?;
                }
                if let Some(exp) = &experiment {
                    raw.set("experiment", exp);
                }
                if let Some(dir) = &out {
                    raw.set("output_dir", &dir.display().to_string());
                }
                if dump_fields {
                    raw.set("dump_fields", "true");
                }
                for s in &sets {
                    raw.set_pair(s)?;
                }
                raw.resolve()
            })();
            let cfg = match parsed {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("signms: {e}");
                    return ExitCode::from(2);
                }
            };
            let run = run_experiment(&cfg, RunOptions { parallel }, &ReferenceCache::new());
            print!("{}", errors_csv(&run));
            if let Err(e) = write_outputs(&run) {
                eprintln!("signms: {e}");
                return ExitCode::FAILURE;
            }
            let failures = run.failures();
            for f in &failures {
                eprintln!(
                    "signms: row H=1/{} m={:?} failed: {}",
                    f.n_coarse,
                    f.layers,
                    f.result.as_ref().err().unwrap()
                );
            }
            if failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
