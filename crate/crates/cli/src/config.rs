use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};
use syncore::divergence::default_fractions;
use syncore::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "syncore",
    version,
    about = "Pairwise synergy and redundancy analysis of layered unit recordings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pairwise persistent synergy and redundancy matrices from a PHID recording.
    Phid {
        #[command(flatten)]
        common: CommonArgs,
        /// How per-prompt estimates are combined: average or concatenate.
        #[arg(long, env = "SYNCORE_AGGREGATION", default_value = "average")]
        aggregation: String,
        /// Persist progress to a resumable checkpoint in the output directory.
        #[arg(long, env = "SYNCORE_CHECKPOINT")]
        checkpoint: bool,
        /// Pairs per checkpoint batch.
        #[arg(long, env = "SYNCORE_BATCH_PAIRS", default_value_t = 4096)]
        batch_pairs: usize,
    },
    /// Synergy–redundancy ranks, layer profile, subsets and ablation orders.
    Rank {
        #[command(flatten)]
        common: CommonArgs,
        /// Subset modes to emit.
        #[arg(
            long,
            env = "SYNCORE_MODES",
            value_delimiter = ',',
            default_value = "most_synergistic,most_redundant,random"
        )]
        modes: Vec<String>,
    },
    /// Global efficiency and modularity of the synergy and redundancy graphs.
    Graph {
        #[command(flatten)]
        common: CommonArgs,
        /// Fraction of strongest edges kept in the display edge lists.
        #[arg(long, env = "SYNCORE_TOP_FRACTION", default_value_t = 0.1)]
        top_fraction: f64,
        /// Seed of the community-detection visit order.
        #[arg(long, env = "SYNCORE_COMMUNITY_SEED", default_value_t = 0)]
        community_seed: u64,
    },
    /// Ablation curve from a directory of PHIL traces.
    Divergence {
        #[command(flatten)]
        common: CommonArgs,
        /// Ablation orders to read.
        #[arg(
            long,
            env = "SYNCORE_ORDERS",
            value_delimiter = ',',
            default_value = "synergistic,random"
        )]
        orders: Vec<String>,
    },
    /// Synthetic recordings or logit-trace scenarios with planted structure.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// redundant_common_driver, synergistic_sum_preserving, independent_noise,
        /// layered_inverted_u, parity_discrete or logit_scenario.
        #[arg(long, env = "SYNCORE_KIND")]
        kind: String,
        #[arg(long, env = "SYNCORE_N_UNITS")]
        n_units: Option<usize>,
        #[arg(long, env = "SYNCORE_N_LAYERS")]
        n_layers: Option<usize>,
        #[arg(long, env = "SYNCORE_N_PROMPTS")]
        n_prompts: Option<usize>,
        #[arg(long, env = "SYNCORE_TIMESTEPS")]
        timesteps: Option<usize>,
        #[arg(long, env = "SYNCORE_NOISE_SD")]
        noise_sd: Option<f64>,
        #[arg(long, env = "SYNCORE_AR", allow_negative_numbers = true)]
        ar: Option<f64>,
        #[arg(long, env = "SYNCORE_STRENGTH")]
        strength: Option<f64>,
        #[arg(long, env = "SYNCORE_SEED", default_value_t = 0)]
        seed: u64,
        /// Planted critical unit ids of a logit scenario.
        #[arg(long, env = "SYNCORE_CRITICAL", value_delimiter = ',')]
        critical: Vec<usize>,
        #[arg(long, env = "SYNCORE_VOCAB", default_value_t = 32)]
        vocab: usize,
    },
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    #[arg(long, env = "SYNCORE_INPUT")]
    pub input: Option<PathBuf>,
    #[arg(long, env = "SYNCORE_OUTPUT_DIR")]
    pub output_dir: PathBuf,
    #[arg(long, env = "SYNCORE_LAG", default_value_t = 1)]
    pub lag: usize,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, env = "SYNCORE_WORKERS")]
    pub workers: Option<usize>,
    /// Comma-separated fractions in [0, 1].
    #[arg(long, env = "SYNCORE_FRACTIONS", value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Comma-separated seeds, or a half-open range `a..b`.
    #[arg(long, env = "SYNCORE_SEEDS", default_value = "0..5")]
    pub seeds: String,
    /// Skip per-prompt z-scoring of unit series.
    #[arg(long, env = "SYNCORE_NO_ZSCORE")]
    pub no_zscore: bool,
    #[arg(long, env = "SYNCORE_JITTER", default_value_t = syncore::estimators::DEFAULT_JITTER)]
    pub jitter: f64,
}

/// Validated run configuration, echoed into every output.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub input: Option<String>,
    pub output_dir: String,
    pub lag: usize,
    pub workers: Option<usize>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub zscore: bool,
    pub jitter: f64,
    #[serde(flatten)]
    pub options: Map<String, Value>,
}

impl RunConfig {
    pub fn new(
        command: &'static str,
        common: &CommonArgs,
        default_fracs: Vec<f64>,
    ) -> Result<Self> {
        if common.lag == 0 {
            return Err(Error::Validation("--lag must be at least 1".into()));
        }
        if common.workers == Some(0) {
            return Err(Error::Validation("--workers must be positive".into()));
        }
        if !(common.jitter.is_finite() && common.jitter >= 0.0) {
            return Err(Error::Validation(format!(
                "invalid --jitter {}",
                common.jitter
            )));
        }
        let fractions = common.fractions.clone().unwrap_or(default_fracs);
        if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Validation(format!("fraction {f} outside [0, 1]")));
        }
        if fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(
                "--fractions must be strictly increasing".into(),
            ));
        }
        if let Some(input) = &common.input {
            if !input.exists() {
                return Err(Error::Validation(format!(
                    "input not found: {}",
                    input.display()
                )));
            }
        }
        Ok(RunConfig {
            command,
            input: common.input.as_ref().map(|p| p.display().to_string()),
            output_dir: common.output_dir.display().to_string(),
            lag: common.lag,
            workers: common.workers,
            fractions,
            seeds: parse_seeds(&common.seeds)?,
            zscore: !common.no_zscore,
            jitter: common.jitter,
            options: Map::new(),
        })
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.options.insert(
            key.to_string(),
            serde_json::to_value(value).expect("config values serialise"),
        );
        self
    }

    pub fn require_input(&self) -> Result<PathBuf> {
        self.input
            .as_ref()
            .map(PathBuf::from)
            .ok_or_else(|| Error::Validation(format!("{} needs --input", self.command)))
    }

    pub fn json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn value(&self) -> Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Validation(format!("invalid --seeds {s:?}"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

pub fn divergence_fractions() -> Vec<f64> {
    default_fractions()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds() {
        assert_eq!(parse_seeds("0..5").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("7, 3").unwrap(), vec![7, 3]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
