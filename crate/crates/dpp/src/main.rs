use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dpp::commands::{self, Options, Outcome};
use dpp::config::Config;
use dpp::verify::Suite;
use dpp_core::palm::Fault;

/// Determinantal point processes with integrable projection kernels.
///
/// Exit status: 0 when every check passes, 1 when a check fails, 2 on
/// usage or configuration errors.
#[derive(Parser)]
#[command(name = "dpp", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Number of truncation stages for regularized functionals.
    #[arg(long, global = true)]
    stages: Option<usize>,
    /// Deliberately corrupt a formula to show that the checks notice.
    #[arg(long, global = true, value_enum, default_value = "none")]
    fault: FaultArg,
}

#[derive(Subcommand)]
enum Verb {
    /// Draw configurations; writes draws.csv and summary.json.
    Sample,
    /// Condition on particles and holes; writes conditioned.bin and palm_report.json.
    Palm,
    /// Radon-Nikodym derivatives of an action; writes rn.json.
    Rn,
    /// Additive or multiplicative functional moments; writes functional.json.
    Functional,
    /// Run a verification suite; writes verify_<suite>.json.
    Verify {
        #[arg(value_enum, default_value = "all")]
        suite: Suite,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    None,
    /// Flip the sign of the rank-one correction in the Palm kernel.
    PalmSignFlip,
}

fn run(cli: &Cli) -> dpp::Result<Outcome> {
    let fault = match cli.fault {
        FaultArg::None => Fault::None,
        FaultArg::PalmSignFlip => Fault::PalmSignFlip,
    };
    if let Verb::Verify { suite } = cli.verb {
        return commands::verify(suite, cli.seed.unwrap_or(0), fault);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| dpp::Error::Usage("--config is required for this verb".into()))?;
    let cfg = Config::load(path)?;
    let opts = Options {
        seed: cli.seed,
        stages: cli.stages,
        fault,
        base: path.parent().map(PathBuf::from).unwrap_or_default(),
    };
    match cli.verb {
        Verb::Sample => commands::sample(&cfg, &opts),
        Verb::Palm => commands::palm(&cfg, &opts),
        Verb::Rn => commands::rn(&cfg, &opts),
        Verb::Functional => commands::functional(&cfg, &opts),
        Verb::Verify { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = run(&cli).and_then(|o| o.commit(&cli.out).map(|_| o));
    match outcome {
        Ok(o) => {
            let text = serde_json::to_string_pretty(&o.summary).expect("summary serializes");
            // a closed pipe on stdout is not an error of the run
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            if o.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
