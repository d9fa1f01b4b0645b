mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use syncore::{Error, Result};

use config::{divergence_fractions, Cli, Command, RunConfig};

fn run(cli: Cli) -> Result<()> {
    let (config, command) = match &cli.command {
        Command::Phid { common, .. } => (RunConfig::new("phid", common, vec![])?, &cli.command),
        Command::Rank { common, .. } => (
            RunConfig::new("rank", common, vec![0.1, 0.25])?,
            &cli.command,
        ),
        Command::Graph { common, .. } => (RunConfig::new("graph", common, vec![])?, &cli.command),
        Command::Divergence { common, .. } => (
            RunConfig::new("divergence", common, divergence_fractions())?,
            &cli.command,
        ),
        Command::Synth { common, .. } => (
            RunConfig::new("synth", common, divergence_fractions())?,
            &cli.command,
        ),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match command {
        Command::Phid {
            aggregation,
            checkpoint,
            batch_pairs,
            ..
        } => commands::phid(config, aggregation, *checkpoint, *batch_pairs),
        Command::Rank { modes, .. } => commands::rank(config, modes),
        Command::Graph {
            top_fraction,
            community_seed,
            ..
        } => commands::graph(config, *top_fraction, *community_seed),
        Command::Divergence { orders, .. } => commands::divergence(config, orders),
        Command::Synth {
            kind,
            n_units,
            n_layers,
            n_prompts,
            timesteps,
            noise_sd,
            ar,
            strength,
            seed,
            critical,
            vocab,
            ..
        } => commands::synth(
            config,
            commands::SynthArgs {
                kind: kind.clone(),
                n_units: *n_units,
                n_layers: *n_layers,
                n_prompts: *n_prompts,
                timesteps: *timesteps,
                noise_sd: *noise_sd,
                ar: *ar,
                strength: *strength,
                seed: *seed,
                critical: critical.clone(),
                vocab: *vocab,
            },
        ),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let first_line = e.to_string().lines().next().unwrap_or_default().to_string();
            eprintln!("error: {first_line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
