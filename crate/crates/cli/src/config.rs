use std::path::PathBuf;

use bioauth_core::biohash::DEFAULT_NOISE_SIGMA;
use bioauth_core::primitives::{default_epsilon, DigestAlgorithm, SystemParams};
use bioauth_core::registry::ProtocolKey;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "bioauth-lab",
    version,
    about = "RFID and biometric mutual authentication laboratory"
)]
pub struct Cli {
    #[command(flatten)]
    pub opts: GlobalOpts,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    #[arg(long, global = true, default_value = "proposed")]
    pub protocol: String,

    #[arg(long, global = true, env = "BIOAUTH_LAB_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Hash width in bits.
    #[arg(long, global = true, default_value_t = 128)]
    pub l: usize,

    /// Defaults to `l`.
    #[arg(long, global = true)]
    pub nonce_width: Option<usize>,

    /// Biometric feature dimension.
    #[arg(long, global = true, default_value_t = 256)]
    pub d: usize,

    /// Tags enrolled by games that build their own deployment.
    #[arg(long, global = true, default_value_t = 10)]
    pub n: usize,

    /// Match threshold in bits; defaults to 15% of `l`.
    #[arg(long, global = true)]
    pub epsilon: Option<usize>,

    #[arg(long, global = true, default_value_t = DEFAULT_NOISE_SIGMA)]
    pub noise_sigma: f64,

    #[arg(long, global = true, default_value = "sha256")]
    pub digest: String,

    #[arg(long, global = true, default_value_t = 10_000)]
    pub trials: usize,

    /// Symbolic search depth.
    #[arg(long, global = true, default_value_t = 8)]
    pub depth: usize,

    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,

    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for Monte Carlo trials.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Enroll subjects and write the enrollment database to --out.
    Register {
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Run one session against an enrolled tag.
    Auth {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 0)]
        tag: usize,
        /// Present somebody else's biometric at the sensor.
        #[arg(long)]
        impostor: bool,
    },
    /// Run a named attack or game.
    Attack {
        name: String,
        /// Sessions in the symbolic scenario (2 or 3).
        #[arg(long, default_value_t = 2)]
        sessions: usize,
        /// Adversary sessions in the flooding game.
        #[arg(long, default_value_t = 10_000)]
        bogus: usize,
    },
    /// Write the security and cost tables to the --out directory.
    Tables {
        /// Honest sessions per measured cost row.
        #[arg(long, default_value_t = 10)]
        sessions: usize,
        #[arg(long, default_value_t = 10_000)]
        bogus: usize,
    },
    /// Monte Carlo FAR/FRR of the biometric layer.
    Rates {
        #[arg(long, value_delimiter = ',', default_value = "5,10,19,30,50")]
        epsilons: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        population: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    Text,
}

/// Everything a command depends on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub protocol: ProtocolKey,
    pub params: SystemParams,
    pub noise_sigma: f64,
    pub seed: u64,
    pub trials: usize,
    pub depth: usize,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_opts(o: &GlobalOpts) -> Result<Self, CliError> {
        let protocol =
            ProtocolKey::parse(&o.protocol).map_err(|e| CliError::usage(e.to_string()))?;
        let params = SystemParams {
            l: o.l,
            nonce_width: o.nonce_width.unwrap_or(o.l),
            n: o.n,
            d: o.d,
            epsilon: o.epsilon.unwrap_or_else(|| default_epsilon(o.l)),
            rng_seed: o.seed,
            digest: DigestAlgorithm::parse(&o.digest)
                .map_err(|e| CliError::usage(e.to_string()))?,
            ..SystemParams::default()
        };
        params
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        if !(o.noise_sigma >= 0.0 && o.noise_sigma.is_finite()) {
            return Err(CliError::usage(format!(
                "noise sigma must be non-negative, got {}",
                o.noise_sigma
            )));
        }
        Ok(RunConfig {
            protocol,
            params,
            noise_sigma: o.noise_sigma,
            seed: o.seed,
            trials: o.trials,
            depth: o.depth,
            format: o.format,
            out: o.out.clone(),
        })
    }
}
