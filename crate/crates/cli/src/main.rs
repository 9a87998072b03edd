use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use retromfg_cli::{parse_config, run_experiment};

/// Run one retrospective mean-field-games experiment from a TOML config.
#[derive(Parser, Debug)]
#[command(name = "retromfg", version)]
struct Args {
    /// Experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides `workers`; defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `weight.lambda=0.1`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 1;

fn fail(code: u8, report: serde_json::Value) -> ExitCode {
    eprintln!("{report}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match parse_config(&args.config, &args.overrides) {
        Ok(c) => c,
        Err(e) => {
            return fail(
                EXIT_CONFIG,
                json!({
                    "status": "failed",
                    "module": "experiment_cli",
                    "code": "config",
                    "issues": e.issues.iter().map(|i| json!({"line": i.line, "message": i.message})).collect::<Vec<_>>(),
                }),
            )
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    if let Some(o) = args.out {
        cfg.out = Some(o);
    }
    let Some(out) = cfg.out.clone() else {
        return fail(
            EXIT_CONFIG,
            json!({"status": "failed", "module": "experiment_cli", "code": "config", "issues": [{"line": null, "message": "no output directory: pass --out or set `out`"}]}),
        );
    };
    if let Some(n) = cfg.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(
                EXIT_RUN,
                json!({"status": "failed", "module": "experiment_cli", "code": "workers", "message": e.to_string()}),
            );
        }
    }
    match run_experiment(&cfg, &out) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = e.report();
            let _ = std::fs::write(out.join("failure.json"), report.to_string() + "\n");
            fail(EXIT_RUN, report)
        }
    }
}
