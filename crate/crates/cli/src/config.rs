//! Experiment configuration: defaults, config files, flag overrides and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use stmarkov::codes::{repetition_code, toric_code, CodeError};
use stmarkov::markov::{Shape, TripartitionSpec};
use stmarkov::spacetime::check_probability;
use stmarkov::{CodeFamily, CssCode, NoiseModel, Sector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    pub family: CodeFamily,
    pub size: usize,
    pub rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Data X rate, also the swept parameter.
    pub p: f64,
    /// Readout flip rate; follows `p` when null.
    pub q: Option<f64>,
    pub p_z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Slab,
    Box,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub shape: ShapeKind,
    /// Stacking axis for slabs; the time axis when null.
    pub axis: Option<usize>,
    pub thickness: usize,
    pub w_a: usize,
    pub w_b_min: usize,
    pub w_b_max: usize,
    pub w_c: usize,
    pub anchor: Option<Vec<i64>>,
    pub width_cap: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Sampled when `samples > 0`, exact otherwise.
    Auto,
    Exact,
    BruteForce,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub method: MethodKind,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub shots: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sizes: Vec<[usize; 2]>,
    pub ps: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub code: CodeConfig,
    pub noise: NoiseConfig,
    pub tripartition: RegionConfig,
    pub estimator: EstimatorConfig,
    pub decoder: DecoderConfig,
    pub sweep: SweepConfig,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            code: CodeConfig { family: CodeFamily::Repetition, size: 16, rounds: 16 },
            noise: NoiseConfig { p: 0.1, q: None, p_z: 0.0 },
            tripartition: RegionConfig {
                shape: ShapeKind::Slab,
                axis: None,
                thickness: 2,
                w_a: 2,
                w_b_min: 1,
                w_b_max: 5,
                w_c: 2,
                anchor: None,
                width_cap: stmarkov::entropy::DEFAULT_ENUMERATION_CAP,
            },
            estimator: EstimatorConfig { method: MethodKind::Auto, samples: 0 },
            decoder: DecoderConfig { shots: 0 },
            sweep: SweepConfig {
                sizes: vec![[16, 16], [24, 24], [32, 32]],
                ps: (0..7).map(|i| round_grid(0.05 + 0.02 * i as f64)).collect(),
            },
            seed: 1,
            jobs: 0,
            output: OutputConfig::default(),
        }
    }
}

fn round_grid(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{}", .issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n"))]
pub struct ConfigError {
    pub issues: Vec<Issue>,
}

impl ConfigError {
    pub fn one(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { issues: vec![Issue { path: path.into(), message: message.into() }] }
    }
}

/// Parses `key.path = value` lines; values are JSON when they parse, strings otherwise.
pub fn parse_key_values(text: &str) -> Result<Value, ConfigError> {
    let mut root = Value::Object(Map::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::one(format!("line {}", i + 1), "expected key=value"));
        };
        set_path(&mut root, k.trim(), parse_scalar(v.trim()))?;
    }
    Ok(root)
}

pub fn parse_scalar(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::one(path, "empty key segment"));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::one(path, "not a section"))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .ok_or_else(|| ConfigError::one(path, "not a section"))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn load_file(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::one("config", format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| ConfigError::one("config", format!("{}: {e}", path.display())))
    } else {
        parse_key_values(&text)
    }
}

/// Overlays `over` onto `base`, reporting keys that do not exist in `base`.
fn merge(base: &mut Value, over: &Value, prefix: &str, issues: &mut Vec<Issue>) {
    let (Some(b), Some(o)) = (base.as_object_mut(), over.as_object()) else { return };
    for (k, v) in o {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match b.get_mut(k) {
            None => issues.push(Issue { path, message: "unknown field".into() }),
            Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path, issues),
            Some(slot) => *slot = v.clone(),
        }
    }
}

/// Defaults, then each layer in order (file, then flags), then validation.
pub fn resolve(layers: &[Value]) -> Result<ExperimentConfig, ConfigError> {
    let mut merged = serde_json::to_value(ExperimentConfig::default()).expect("serializable");
    let mut issues = Vec::new();
    for l in layers {
        merge(&mut merged, l, "", &mut issues);
    }
    if !issues.is_empty() {
        return Err(ConfigError { issues });
    }
    let cfg: ExperimentConfig = serde_json::from_value(merged.clone()).map_err(|e| {
        // locate the offending section for the message
        let obj = merged.as_object().expect("object");
        for (k, v) in obj {
            let r = match k.as_str() {
                "code" => serde_json::from_value::<CodeConfig>(v.clone()).err(),
                "noise" => serde_json::from_value::<NoiseConfig>(v.clone()).err(),
                "tripartition" => serde_json::from_value::<RegionConfig>(v.clone()).err(),
                "estimator" => serde_json::from_value::<EstimatorConfig>(v.clone()).err(),
                "decoder" => serde_json::from_value::<DecoderConfig>(v.clone()).err(),
                "sweep" => serde_json::from_value::<SweepConfig>(v.clone()).err(),
                "output" => serde_json::from_value::<OutputConfig>(v.clone()).err(),
                "seed" => serde_json::from_value::<u64>(v.clone()).err(),
                "jobs" => serde_json::from_value::<usize>(v.clone()).err(),
                _ => None,
            };
            if let Some(e) = r {
                return ConfigError::one(k.clone(), e.to_string());
            }
        }
        ConfigError::one("config", e.to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut push = |path: &str, message: String| issues.push(Issue { path: path.into(), message });
        let prob = |path: &'static str, v: f64, push: &mut dyn FnMut(&str, String)| {
            if let Err(e) = check_probability(path, v) {
                let msg = e.to_string();
                let msg = msg.strip_prefix(&format!("{path}: ")).unwrap_or(&msg).to_string();
                push(path, msg);
            }
        };
        prob("noise.p", self.noise.p, &mut push);
        if let Some(q) = self.noise.q {
            prob("noise.q", q, &mut push);
        }
        prob("noise.p_z", self.noise.p_z, &mut push);
        for (i, &p) in self.sweep.ps.iter().enumerate() {
            if let Err(e) = check_probability("p", p) {
                push(&format!("sweep.ps[{i}]"), e.to_string().trim_start_matches("p: ").to_string());
            }
        }
        match self.code.family {
            CodeFamily::Custom => push("code.family", "custom codes cannot be built from a size".into()),
            f => {
                let min = if f == CodeFamily::Toric { 2 } else { 3 };
                if self.code.size < min {
                    push("code.size", format!("{f} code needs size >= {min}, got {}", self.code.size));
                }
                for (i, s) in self.sweep.sizes.iter().enumerate() {
                    if s[0] < min {
                        push(&format!("sweep.sizes[{i}]"), format!("{f} code needs size >= {min}, got {}", s[0]));
                    }
                    if s[1] < 1 {
                        push(&format!("sweep.sizes[{i}]"), "rounds must be >= 1".into());
                    }
                }
            }
        }
        if self.code.rounds < 1 {
            push("code.rounds", "must be >= 1".into());
        }
        let t = &self.tripartition;
        if t.w_a == 0 {
            push("tripartition.w_a", "must be >= 1".into());
        }
        if t.w_c == 0 {
            push("tripartition.w_c", "must be >= 1".into());
        }
        if t.w_b_min > t.w_b_max {
            push("tripartition.w_b_min", format!("exceeds w_b_max ({} > {})", t.w_b_min, t.w_b_max));
        }
        if t.thickness == 0 {
            push("tripartition.thickness", "must be >= 1".into());
        }
        if !(1..=32).contains(&t.width_cap) {
            push("tripartition.width_cap", format!("must be in 1..=32, got {}", t.width_cap));
        }
        if self.estimator.method == MethodKind::Sampled && self.estimator.samples == 0 {
            push("estimator.samples", "sampled estimation needs samples >= 1".into());
        }
        if self.sweep.sizes.is_empty() {
            push("sweep.sizes", "must not be empty".into());
        }
        if self.sweep.ps.is_empty() {
            push("sweep.ps", "must not be empty".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    /// The numeric content of the run: everything except output paths and thread count.
    pub fn numeric_view(&self) -> ExperimentConfig {
        ExperimentConfig { jobs: 0, output: OutputConfig::default(), ..self.clone() }
    }

    pub fn hash(&self) -> String {
        stmarkov::hash::sha256_json(&self.numeric_view())
    }

    pub fn build_code(&self, size: usize) -> Result<CssCode, CodeError> {
        match self.code.family {
            CodeFamily::Toric => toric_code(size),
            _ => repetition_code(size),
        }
    }

    /// Noise at swept rate `p`; readout follows `p` unless pinned.
    pub fn noise_at(&self, p: f64) -> NoiseModel {
        NoiseModel { p_x: p, p_z: self.noise.p_z, q: self.noise.q.unwrap_or(p) }
    }

    pub fn method(&self) -> MethodKind {
        match self.estimator.method {
            MethodKind::Auto if self.estimator.samples > 0 => MethodKind::Sampled,
            MethodKind::Auto => MethodKind::Exact,
            m => m,
        }
    }

    pub fn ladder(&self) -> Vec<usize> {
        (self.tripartition.w_b_min..=self.tripartition.w_b_max).collect()
    }

    pub fn template(&self, space_dims: usize) -> TripartitionSpec {
        let t = &self.tripartition;
        let shape = match t.shape {
            ShapeKind::Box => Shape::Box,
            ShapeKind::Slab => Shape::Slab { axis: t.axis.unwrap_or(space_dims), thickness: t.thickness },
        };
        TripartitionSpec {
            sector: Sector::Z,
            anchor: t.anchor.clone(),
            w_a: t.w_a,
            w_b: t.w_b_min,
            w_c: t.w_c,
            shape,
            width_cap: t.width_cap,
        }
    }
}
