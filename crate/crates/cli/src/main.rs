use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvsde::model::verify::{verify_model, SampleDomain, DEFAULT_TOLERANCE};
use mvsde_cli::{resolve, run_experiment, CliError, ExperimentConfig, PRESETS};

#[derive(Parser)]
#[command(name = "mvsde", version, about = "Particle simulations of McKean-Vlasov SDEs with super-linear kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Preset name or path to a TOML experiment file
    target: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the complete grids instead of the trimmed defaults
    #[arg(long)]
    full: bool,
    /// Do not enforce the stepsize bound for the split-step scheme
    #[arg(long)]
    no_h_constraint: bool,
    /// Override a config value, e.g. `--set n=[200]` or `--set model.d=3`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or config file and write its artifacts
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads (defaults to all cores)
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the built-in presets
    ListPresets,
    /// Print the resolved config of a preset or file
    Describe {
        #[command(flatten)]
        common: Common,
    },
    /// Check the structural assumptions of a built-in model
    VerifyModel {
        name: String,
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Half-width of the sampled box
        #[arg(long, default_value_t = 10.0)]
        half_width: f64,
    },
}

fn resolved(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = resolve(&c.target, c.full)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if c.no_h_constraint {
        cfg.schemes.iter_mut().for_each(|s| s.enforce_h_constraint = false);
    }
    for o in &c.overrides {
        cfg = cfg.with_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, out, threads } => (|| {
            let cfg = resolved(&common)?;
            if let Some(t) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .map_err(|e| CliError::invalid("threads", e.to_string()))?;
            }
            let report = run_experiment(&cfg)?;
            let written = report.write_to(&out)?;
            println!("{} files in {}", written.len(), out.display());
            println!("{}", serde_json::to_string_pretty(&report.summary).expect("json"));
            Ok(())
        })(),
        Command::ListPresets => {
            for (name, about) in PRESETS {
                println!("{name:<18} {about}");
            }
            Ok(())
        }
        Command::Describe { common } => resolved(&common).map(|cfg| print!("{}", mvsde_cli::manifest(&cfg))),
        Command::VerifyModel { name, d, half_width } => (|| {
            let model = mvsde::builtin_model(&name, d)?;
            let reports =
                verify_model(&model, &SampleDomain::default().with_half_width(half_width), DEFAULT_TOLERANCE)?;
            for r in &reports {
                let verdict = if r.passed { "pass" } else { "FAIL" };
                println!("{verdict} {:<24} max violation {:.3e} at {:?}", r.check, r.max_violation, r.witness);
            }
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
