//! `sojourn` — drives the verification suites from a TOML experiment
//! configuration and writes machine-readable reports.

mod config;
mod report;
mod suites;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, SuiteSelection};
use report::{sha256_hex, write_csv, write_json, Manifest, RunReport, Row};
use suites::{run_suite, selected_suites, SUITE_CATALOG};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAIL: u8 = 3;

#[derive(Parser)]
#[command(name = "sojourn", version, about = "Sojourn-time delay verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suites selected by the configuration (or --suite).
    Run {
        /// Path to the TOML experiment configuration.
        config: PathBuf,
        /// Override the suite selection from the configuration.
        #[arg(long)]
        suite: Option<String>,
        /// Output directory for report.json, report.csv and manifest.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Size of the worker thread pool.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Override the seed from the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the available suites and the statements they verify.
    ListSuites,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListSuites => {
            for (name, what, anchor) in SUITE_CATALOG {
                println!("{name} → {anchor}");
                println!("    {what}");
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            suite,
            out,
            threads,
            seed,
        } => run_command(config, suite, out, threads, seed),
    }
}

fn run_command(
    config_path: PathBuf,
    suite_flag: Option<String>,
    out: PathBuf,
    threads: usize,
    seed_flag: Option<u64>,
) -> ExitCode {
    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config_path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cfg = match ExperimentConfig::from_toml(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let selection = match &suite_flag {
        None => cfg.suite,
        Some(name) => match SuiteSelection::parse(name) {
            Some(s) => s,
            None => {
                eprintln!("error: unknown suite {name:?}; see `sojourn list-suites`");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
    };
    if selection != cfg.suite {
        // re-check constraints that depend on the selection (e.g. [scattering])
        let mut widened = cfg.clone();
        widened.suite = selection;
        if let Err(e) = widened.validate() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    if threads == 0 {
        eprintln!("error: --threads must be positive");
        return ExitCode::from(EXIT_CONFIG);
    }
    let seed = seed_flag.unwrap_or(cfg.seed);

    match execute(&cfg, selection, &out, threads, seed, &text) {
        Ok(all_pass) => {
            if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            eprintln!("internal error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(
    cfg: &ExperimentConfig,
    selection: SuiteSelection,
    out: &std::path::Path,
    threads: usize,
    seed: u64,
    config_text: &str,
) -> anyhow::Result<bool> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?;

    let names = selected_suites(selection);
    let mut wall_ms: BTreeMap<String, u128> = BTreeMap::new();
    let mut suites = Vec::with_capacity(names.len());
    for name in &names {
        let start = Instant::now();
        let suite = pool.install(|| run_suite(cfg, name, seed));
        wall_ms.insert(name.to_string(), start.elapsed().as_millis());
        if let Some(err) = &suite.error {
            eprintln!("suite {name}: error: {err}");
        }
        println!(
            "suite {name}: {}",
            if suite.pass { "pass" } else { "FAIL" }
        );
        suites.push(suite);
    }

    let all_pass = suites.iter().all(|s| s.pass);
    let run = RunReport {
        schema_version: config::SCHEMA_VERSION,
        seed,
        suites,
    };

    std::fs::create_dir_all(out)?;
    let rows: Vec<Row> = run
        .suites
        .iter()
        .flat_map(|s| s.rows.iter().cloned())
        .collect();
    write_json(&out.join("report.json"), &run)?;
    write_csv(&out.join("report.csv"), &rows)?;
    let manifest = Manifest {
        config_sha256: sha256_hex(config_text.as_bytes()),
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
        seed,
        wall_ms,
        outputs: vec![
            "report.json".to_string(),
            "report.csv".to_string(),
            "manifest.json".to_string(),
        ],
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(all_pass)
}
