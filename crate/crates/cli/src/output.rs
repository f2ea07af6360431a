//! JSON and CSV emission with provenance metadata.

use std::path::{Path, PathBuf};

use serde::Serialize;
use stmarkov::decoder::LogicalErrorRate;
use stmarkov::markov::CmiPoint;

use crate::config::ExperimentConfig;

pub const TOOL: &str = "stmarkov";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CMI_HEADER: &[&str] = &["code", "L", "T", "p", "q", "wA", "wB", "dist", "cmi_bits", "cmi_stderr"];
pub const DECODER_HEADER: &[&str] = &["L", "T", "p", "q", "shots", "logical_errors", "rate", "ci_low", "ci_high"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    /// Hash of the code at `code.size`; sweeps list one per size in their cells.
    pub code_hash: String,
    pub model_hash: Option<String>,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl Meta {
    pub fn new(cfg: &ExperimentConfig, code_hash: String, model_hash: Option<String>) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            config_hash: cfg.hash(),
            code_hash,
            model_hash,
            seed: cfg.seed,
            config: cfg.numeric_view(),
        }
    }

    fn comment_lines(&self) -> String {
        let mut s = format!(
            "# tool={} version={}\n# config_hash={}\n# code_hash={}\n",
            self.tool, self.version, self.config_hash, self.code_hash
        );
        if let Some(m) = &self.model_hash {
            s.push_str(&format!("# model_hash={m}\n"));
        }
        s.push_str(&format!("# seed={}\n", self.seed));
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmiRow {
    pub code: String,
    pub l: usize,
    pub t: usize,
    pub p: f64,
    pub q: f64,
    pub w_a: usize,
    pub point: CmiPoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderRow {
    pub l: usize,
    pub t: usize,
    pub p: f64,
    pub q: f64,
    pub rate: LogicalErrorRate,
}

fn csv_text(meta: &Meta, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> std::io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let body = w.into_inner().map_err(|e| e.into_error())?;
    Ok(meta.comment_lines() + &String::from_utf8(body).expect("utf8"))
}

pub fn cmi_csv(meta: &Meta, rows: &[CmiRow]) -> std::io::Result<String> {
    csv_text(
        meta,
        CMI_HEADER,
        rows.iter().map(|r| {
            vec![
                r.code.clone(),
                r.l.to_string(),
                r.t.to_string(),
                r.p.to_string(),
                r.q.to_string(),
                r.w_a.to_string(),
                r.point.w_b.to_string(),
                r.point.dist_ac.to_string(),
                r.point.cmi.to_string(),
                r.point.std_error.to_string(),
            ]
        }),
    )
}

pub fn decoder_csv(meta: &Meta, rows: &[DecoderRow]) -> std::io::Result<String> {
    csv_text(
        meta,
        DECODER_HEADER,
        rows.iter().map(|r| {
            vec![
                r.l.to_string(),
                r.t.to_string(),
                r.p.to_string(),
                r.q.to_string(),
                r.rate.shots.to_string(),
                r.rate.errors.to_string(),
                r.rate.rate.to_string(),
                r.rate.ci_low.to_string(),
                r.rate.ci_high.to_string(),
            ]
        }),
    )
}

pub fn json_text<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// `foo.json` -> `foo.csv`, or `foo<suffix>.csv` with a suffix.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

/// Writes to `path`, or stdout when absent.
pub fn emit(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)
        }
        None => {
            use std::io::Write;
            std::io::stdout().lock().write_all(text.as_bytes())
        }
    }
}
