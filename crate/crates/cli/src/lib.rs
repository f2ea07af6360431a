//! Command-line front end: argument parsing, configuration layering and dispatch.

pub mod commands;
pub mod config;
pub mod interchange;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use stmarkov::foliation::MappingRules;
use stmarkov::verify::{VerifyOptions, VerifyTarget};
use stmarkov::CodeFamily;

use crate::commands::DescribeWhat;
use crate::config::{load_file, parse_scalar, resolve, set_path, ConfigError, ExperimentConfig};
use crate::interchange::{Encoding, FormatError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Input(String),
    #[error("{failed} of {total} verification checks failed")]
    VerificationFailed { failed: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerificationFailed { .. } => 1,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "stmarkov", version, about = "Spacetime Markov length of noisy syndrome-extraction circuits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// One CMI ladder and Markov-length fit at a single (L, p).
    Run(ExperimentArgs),
    /// CMI ladders (and decoder rates when shots > 0) over a grid of sizes and p.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Reuse cells already recorded in `<out>.cells.jsonl`.
        #[arg(long)]
        resume: bool,
    },
    /// Union-find logical error rates over the sweep grid and their crossing.
    Threshold {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        resume: bool,
    },
    /// Foliation, tableau, entropy and estimator checks on small instances.
    Verify(VerifyArgs),
    /// CMI ladder from an external detector-sample file.
    Ingest {
        file: PathBuf,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Writes the sampled union region of the ladder as an interchange file.
    Export {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_enum, default_value = "hex")]
        encoding: EncodingArg,
    },
    /// Prints the detector error model, resource graph, stabilizers or code.
    Describe {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_enum, default_value = "dem")]
        what: WhatArg,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EncodingArg {
    Hex,
    Binary,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WhatArg {
    Dem,
    Graph,
    Stabilizers,
    Code,
}

/// Flags override the config file; `--set key=value` entries apply last.
#[derive(Args, Debug, Default, Clone)]
pub struct ExperimentArgs {
    /// JSON or key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set noise.p_z=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub code: Option<String>,
    #[arg(long = "L")]
    pub size: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long = "pz")]
    pub p_z: Option<f64>,
    /// slab or box.
    #[arg(long)]
    pub shape: Option<String>,
    #[arg(long)]
    pub axis: Option<usize>,
    #[arg(long)]
    pub thickness: Option<usize>,
    #[arg(long = "wA")]
    pub w_a: Option<usize>,
    #[arg(long = "wB-min")]
    pub w_b_min: Option<usize>,
    #[arg(long = "wB-max")]
    pub w_b_max: Option<usize>,
    #[arg(long = "wC")]
    pub w_c: Option<usize>,
    /// Comma-separated lowest corner of the region.
    #[arg(long, allow_hyphen_values = true)]
    pub anchor: Option<String>,
    #[arg(long = "width-cap")]
    pub width_cap: Option<usize>,
    /// auto, exact, brute_force or sampled.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub shots: Option<u64>,
    /// Comma-separated LxT pairs, e.g. `16x16,24x24`.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Comma-separated p grid.
    #[arg(long)]
    pub ps: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn list<T: std::str::FromStr>(path: &str, s: &str) -> Result<Vec<T>, ConfigError> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| ConfigError::one(path, format!("cannot parse {x:?}"))))
        .collect()
}

impl ExperimentArgs {
    fn overlay(&self) -> Result<Value, ConfigError> {
        let mut v = Value::Object(Map::new());
        let mut put = |path: &str, val: Option<Value>| -> Result<(), ConfigError> {
            match val {
                Some(val) => set_path(&mut v, path, val),
                None => Ok(()),
            }
        };
        put("code.family", self.code.clone().map(Value::from))?;
        put("code.size", self.size.map(Value::from))?;
        put("code.rounds", self.rounds.map(Value::from))?;
        put("noise.p", self.p.map(Value::from))?;
        put("noise.q", self.q.map(Value::from))?;
        put("noise.p_z", self.p_z.map(Value::from))?;
        put("tripartition.shape", self.shape.clone().map(Value::from))?;
        put("tripartition.axis", self.axis.map(Value::from))?;
        put("tripartition.thickness", self.thickness.map(Value::from))?;
        put("tripartition.w_a", self.w_a.map(Value::from))?;
        put("tripartition.w_b_min", self.w_b_min.map(Value::from))?;
        put("tripartition.w_b_max", self.w_b_max.map(Value::from))?;
        put("tripartition.w_c", self.w_c.map(Value::from))?;
        let anchor = self.anchor.as_deref().map(|a| list::<i64>("tripartition.anchor", a)).transpose()?;
        put("tripartition.anchor", anchor.map(|a| json!(a)))?;
        put("tripartition.width_cap", self.width_cap.map(Value::from))?;
        put("estimator.method", self.method.clone().map(Value::from))?;
        put("estimator.samples", self.samples.map(Value::from))?;
        put("decoder.shots", self.shots.map(Value::from))?;
        let sizes = self
            .sizes
            .as_deref()
            .map(|s| {
                s.split(',')
                    .map(|pair| {
                        let (l, t) = pair.trim().split_once(['x', ':']).unwrap_or((pair.trim(), pair.trim()));
                        match (l.parse::<usize>(), t.parse::<usize>()) {
                            (Ok(l), Ok(t)) => Ok([l, t]),
                            _ => Err(ConfigError::one("sweep.sizes", format!("cannot parse {pair:?}, expected LxT"))),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        put("sweep.sizes", sizes.map(|s| json!(s)))?;
        let ps = self.ps.as_deref().map(|s| list::<f64>("sweep.ps", s)).transpose()?;
        put("sweep.ps", ps.map(|p| json!(p)))?;
        put("seed", self.seed.map(Value::from))?;
        put("jobs", self.jobs.map(Value::from))?;
        put("output.path", self.out.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())))?;
        put("output.csv", self.csv.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())))?;
        Ok(v)
    }

    /// Defaults, then the config file, then flags, then `--set`.
    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut layers = Vec::new();
        if let Some(path) = &self.config {
            layers.push(load_file(path)?);
        }
        layers.push(self.overlay()?);
        let mut sets = Value::Object(Map::new());
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| ConfigError::one("--set", format!("expected KEY=VALUE, got {s:?}")))?;
            set_path(&mut sets, k.trim(), parse_scalar(v.trim()))?;
        }
        layers.push(sets);
        resolve(&layers)
    }
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// `family:L:m_f`, repeatable; defaults to repetition:3:2, repetition:5:4 and toric:2:2.
    #[arg(long = "target")]
    pub targets: Vec<String>,
    #[arg(long = "random-configs", default_value_t = 1000)]
    pub random_configs: usize,
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long = "brute-force-cap")]
    pub brute_force_cap: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "inject-fault", hide = true)]
    pub inject_fault: bool,
}

impl VerifyArgs {
    pub fn options(&self) -> Result<VerifyOptions, ConfigError> {
        let mut opts = VerifyOptions {
            random_configs: self.random_configs,
            samples: self.samples,
            seed: self.seed,
            ..VerifyOptions::default()
        };
        if let Some(c) = self.brute_force_cap {
            opts.brute_force_cap = c;
        }
        if !self.targets.is_empty() {
            opts.targets = self
                .targets
                .iter()
                .map(|t| {
                    let parts: Vec<&str> = t.split(':').collect();
                    let bad = || ConfigError::one("target", format!("expected family:L:m_f, got {t:?}"));
                    if parts.len() != 3 {
                        return Err(bad());
                    }
                    let family: CodeFamily = parts[0].parse().map_err(|e: String| ConfigError::one("target", e))?;
                    let size = parts[1].parse().map_err(|_| bad())?;
                    let m_f = parts[2].parse().map_err(|_| bad())?;
                    Ok(VerifyTarget { family, size, m_f })
                })
                .collect::<Result<_, _>>()?;
        }
        if self.inject_fault {
            opts.rules = MappingRules::IntegerLayerDataX;
        }
        Ok(opts)
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(exp) => commands::cmd_run(&exp.resolve()?),
        Command::Sweep { exp, resume } => commands::cmd_sweep(&exp.resolve()?, resume),
        Command::Threshold { exp, resume } => commands::cmd_threshold(&exp.resolve()?, resume),
        Command::Verify(v) => commands::cmd_verify(&v.options()?, v.out.as_deref()),
        Command::Ingest { file, exp } => commands::cmd_ingest(&exp.resolve()?, &file),
        Command::Export { exp, encoding } => {
            let enc = match encoding {
                EncodingArg::Hex => Encoding::Hex,
                EncodingArg::Binary => Encoding::Binary,
            };
            commands::cmd_export(&exp.resolve()?, enc)
        }
        Command::Describe { exp, what } => {
            let what = match what {
                WhatArg::Dem => DescribeWhat::Dem,
                WhatArg::Graph => DescribeWhat::Graph,
                WhatArg::Stabilizers => DescribeWhat::Stabilizers,
                WhatArg::Code => DescribeWhat::Code,
            };
            commands::cmd_describe(&exp.resolve()?, what)
        }
    }
}
