use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use safe_ems_core::safety::SafetyMethod;
use safe_ems_harness::report::{build_report, write_report};
use safe_ems_harness::{run_experiment, AgentKind, RunConfig};

#[derive(Parser)]
#[command(name = "safe-ems", version, about = "Safe reinforcement learning for multi-energy system control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one method over several seeds.
    Run {
        /// Sectioned TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// unsafe, optlayer, safefallback, optlayerpolicy or greyoptlayerpolicy.
        #[arg(long)]
        method: Option<String>,
        /// td3, random or fallback.
        #[arg(long)]
        agent: Option<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Training steps per seed.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare finished runs, relative to a reference (unshielded TD3) run.
    Report {
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, method, agent, seeds, steps, out } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(m) = method {
                let Some(m) = SafetyMethod::from_name(&m) else { bail!("unknown method {m:?}") };
                cfg.set_method(m);
            }
            if let Some(a) = agent {
                let Some(a) = AgentKind::from_name(&a) else { bail!("unknown agent {a:?}") };
                cfg.run.agent = a;
            }
            if let Some(s) = seeds {
                cfg.run.seeds = s;
            }
            if let Some(n) = steps {
                cfg.run.training_steps = n;
            }
            if let Some(o) = out {
                cfg.run.output = o;
            }
            let outcome = run_experiment(&cfg).context("run failed")?;
            for s in &outcome.seeds {
                let (i, f) = (s.initial(), s.last());
                println!(
                    "seed {}: initial objective {:.3}, final objective {:.3}, final nmae {:.3}%, nsum {:.3}%",
                    s.seed, i.objective, f.objective, f.tolerance.nmae, f.tolerance.nsum
                );
            }
            println!("outputs written to {}", outcome.dir.display());
        }
        Command::Report { runs, reference, out } => {
            let rows = build_report(&runs, reference.as_deref())?;
            match out {
                Some(p) => write_report(&rows, std::fs::File::create(&p).with_context(|| p.display().to_string())?)?,
                None => write_report(&rows, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}
