use std::path::PathBuf;
use std::process::ExitCode;

use bql::flow::FitConfig;
use bql_cli::config::load;
use bql_cli::fit::{cmd_fit_likelihood, cmd_fit_prior};
use bql_cli::ks::{cmd_ks, parse_families, KsOptions};
use bql_cli::sweep::{cmd_sweep, SweepSpec};
use bql_cli::train::cmd_train;
use bql_cli::{thread_pool, CliError, CliResult, EXIT_USAGE};
use clap::{Parser, Subcommand};

/// Tempered Bayesian deep Q-learning experiments.
#[derive(Parser)]
#[command(name = "bql", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent; writes metrics.csv, checkpoint.json and config-as-run.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides agent.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every combination of axis values for several seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// temperature, prior_kind or env_size; repeat for a product of axes.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        /// Comma-separated values, one list per --axis.
        #[arg(long = "values", required = true)]
        values: Vec<String>,
        /// Seeds per cell, counting up from agent.seed.
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit flow priors to network parameters pooled over checkpoints.
    FitPrior {
        /// Glob of run or network checkpoints.
        #[arg(long)]
        weights: String,
        /// Groups like `w0,w1+w2,g*`; default is one group per weight matrix.
        #[arg(long)]
        groups: Option<String>,
        #[arg(long, default_value = "prior_flows")]
        out: PathBuf,
        #[arg(long, default_value_t = FitConfig::default().steps)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a flow likelihood to a TD-error dump.
    FitLikelihood {
        #[arg(long)]
        dump: PathBuf,
        /// Output flow file; default is likelihood_flow.json next to the dump.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = FitConfig::default().steps)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// KS tests and Q-Q tables for a TD-error dump.
    Ks {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long, default_value = "normal,logistic,laplace")]
        families: String,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Errors per repetition.
        #[arg(long, default_value_t = KsOptions::default().sample_size)]
        n: usize,
        /// Null simulations per critical value.
        #[arg(long, default_value_t = KsOptions::default().n_sim)]
        n_sim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; default is the dump's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let loaded = load(&config)?;
            let s = thread_pool()?.install(|| cmd_train(&loaded, seed, out.as_deref()))?;
            eprintln!("wrote {}", s.run_dir.display());
        }
        Command::Sweep {
            config,
            axes,
            values,
            seeds,
            out,
        } => {
            let loaded = load(&config)?;
            let spec = SweepSpec::parse(&axes, &values, seeds)?;
            let o = cmd_sweep(&loaded, &spec, out.as_deref())?;
            eprintln!("wrote {} runs under {}", o.runs.len(), o.root.display());
        }
        Command::FitPrior {
            weights,
            groups,
            out,
            steps,
            seed,
        } => {
            let cfg = FitConfig {
                steps,
                ..FitConfig::default()
            };
            let f = thread_pool()?.install(|| cmd_fit_prior(&weights, groups.as_deref(), &out, &cfg, seed))?;
            for r in &f.reports {
                eprintln!("{}: n={} nll {:.4} -> {:.4}", r.name, r.n, r.nll_before, r.nll_after);
            }
        }
        Command::FitLikelihood { dump, out, steps, seed } => {
            let cfg = FitConfig {
                steps,
                ..FitConfig::default()
            };
            let f = thread_pool()?.install(|| cmd_fit_likelihood(&dump, out.as_deref(), &cfg, seed))?;
            eprintln!(
                "nll {:.4} -> {:.4} (best gaussian {:.4}); wrote {}",
                f.report.nll_before,
                f.report.nll_after,
                f.gaussian_nll,
                f.flow_file.display()
            );
        }
        Command::Ks {
            dump,
            families,
            reps,
            n,
            n_sim,
            seed,
            out,
        } => {
            let opts = KsOptions {
                families: parse_families(&families)?,
                reps,
                sample_size: n,
                n_sim,
                seed,
                ..KsOptions::default()
            };
            let out = out.unwrap_or_else(|| {
                dump.parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .map_or_else(|| PathBuf::from("."), PathBuf::from)
            });
            thread_pool()?.install(|| cmd_ks(&dump, &out, &opts))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
