//! Detector-sample interchange files: one JSON header line, then one packed row per sample.
//!
//! Row bits follow header detector order, least significant bit first within each byte.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use stmarkov::sampler::SampleBatch;
use stmarkov::{DetectorModel, Sector};

pub const VERSION: u32 = 1;
pub const SCHEMES: &[&str] = &["check_round"];

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("header: {0}")]
    Header(String),
    #[error("unknown coordinate scheme {found:?}; supported schemes: {}", SCHEMES.join(", "))]
    Scheme { found: String },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("detector {index} (check {check}, round {round}, sector {sector:?}) is not in the model")]
    UnknownDetector { index: usize, check: usize, round: usize, sector: Sector },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Hex,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorCoord {
    pub check: usize,
    pub round: usize,
    #[serde(default = "z_sector")]
    pub sector: Sector,
}

fn z_sector() -> Sector {
    Sector::Z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_encoding")]
    pub encoding: Encoding,
    pub detectors: Vec<DetectorCoord>,
    pub n_rows: usize,
}

fn default_scheme() -> String {
    SCHEMES[0].to_string()
}

fn default_encoding() -> Encoding {
    Encoding::Hex
}

impl Header {
    pub fn row_bytes(&self) -> usize {
        self.detectors.len().div_ceil(8)
    }
}

/// Detector rows read from an interchange file, column-packed like a [`SampleBatch`].
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorRecords {
    pub header: Header,
    pub columns: Vec<Vec<u64>>,
}

impl DetectorRecords {
    /// Model detector indices for the header coordinates.
    pub fn indices(&self, model: &DetectorModel) -> Result<Vec<usize>, FormatError> {
        self.header
            .detectors
            .iter()
            .enumerate()
            .map(|(i, d)| {
                model.detector_index(d.sector, d.check, d.round).ok_or(FormatError::UnknownDetector {
                    index: i,
                    check: d.check,
                    round: d.round,
                    sector: d.sector,
                })
            })
            .collect()
    }

    pub fn into_batch(self, model: &DetectorModel) -> Result<SampleBatch, FormatError> {
        let region = self.indices(model)?;
        let mut seen = region.clone();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(FormatError::Header(format!("detector {} listed twice", w[0])));
        }
        Ok(SampleBatch {
            n_samples: self.header.n_rows,
            region,
            columns: self.columns,
            seed: 0,
            stream: "ingest".into(),
            model_hash: model.hash(),
        })
    }
}

pub fn header_for(batch: &SampleBatch, model: &DetectorModel, encoding: Encoding) -> Header {
    Header {
        version: VERSION,
        scheme: SCHEMES[0].into(),
        encoding,
        detectors: batch
            .region
            .iter()
            .map(|&d| {
                let det = &model.detectors[d];
                DetectorCoord { check: det.check, round: det.round, sector: det.sector }
            })
            .collect(),
        n_rows: batch.n_samples,
    }
}

pub fn write_batch<W: Write>(
    out: &mut W,
    batch: &SampleBatch,
    model: &DetectorModel,
    encoding: Encoding,
) -> Result<(), FormatError> {
    let header = header_for(batch, model, encoding);
    serde_json::to_writer(&mut *out, &header).map_err(|e| FormatError::Header(e.to_string()))?;
    out.write_all(b"\n")?;
    let mut row = vec![0u8; header.row_bytes()];
    for s in 0..batch.n_samples {
        row.fill(0);
        for j in 0..batch.width() {
            if batch.bit(s, j) {
                row[j / 8] |= 1 << (j % 8);
            }
        }
        match encoding {
            Encoding::Hex => {
                out.write_all(hex::encode(&row).as_bytes())?;
                out.write_all(b"\n")?;
            }
            Encoding::Binary => out.write_all(&row)?,
        }
    }
    Ok(())
}

pub fn read_records<R: BufRead>(mut input: R) -> Result<DetectorRecords, FormatError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let raw: serde_json::Value =
        serde_json::from_str(line.trim()).map_err(|e| FormatError::Header(e.to_string()))?;
    if let Some(s) = raw.get("scheme").and_then(|s| s.as_str()) {
        if !SCHEMES.contains(&s) {
            return Err(FormatError::Scheme { found: s.to_string() });
        }
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| FormatError::Header(e.to_string()))?;
    if header.version != VERSION {
        return Err(FormatError::Header(format!("unsupported version {}, expected {VERSION}", header.version)));
    }
    if header.detectors.is_empty() {
        return Err(FormatError::Header("no detectors listed".into()));
    }
    let width = header.detectors.len();
    let nbytes = header.row_bytes();
    let words = header.n_rows.div_ceil(64);
    let mut columns = vec![vec![0u64; words]; width];
    let mut row = vec![0u8; nbytes];
    let mut put = |s: usize, row: &[u8]| {
        for (j, col) in columns.iter_mut().enumerate() {
            if row[j / 8] >> (j % 8) & 1 == 1 {
                col[s / 64] |= 1 << (s % 64);
            }
        }
    };
    let spare = |row: &[u8]| width % 8 != 0 && row[nbytes - 1] >> (width % 8) != 0;
    match header.encoding {
        Encoding::Hex => {
            let mut text = String::new();
            for s in 0..header.n_rows {
                text.clear();
                if input.read_line(&mut text)? == 0 {
                    return Err(FormatError::Row { row: s, message: format!("missing; header declares {} rows", header.n_rows) });
                }
                let t = text.trim_end_matches(['\n', '\r']);
                if t.len() != 2 * nbytes {
                    return Err(FormatError::Row {
                        row: s,
                        message: format!("expected {} hex digits, found {}", 2 * nbytes, t.len()),
                    });
                }
                hex::decode_to_slice(t, &mut row).map_err(|e| FormatError::Row { row: s, message: e.to_string() })?;
                if spare(&row) {
                    return Err(FormatError::Row { row: s, message: "bits set beyond the listed detectors".into() });
                }
                put(s, &row);
            }
            text.clear();
            while input.read_line(&mut text)? > 0 {
                if !text.trim().is_empty() {
                    return Err(FormatError::Row { row: header.n_rows, message: "extra data after the declared rows".into() });
                }
                text.clear();
            }
        }
        Encoding::Binary => {
            for s in 0..header.n_rows {
                let mut got = 0;
                while got < nbytes {
                    let n = input.read(&mut row[got..])?;
                    if n == 0 {
                        return Err(FormatError::Row {
                            row: s,
                            message: format!("truncated: {got} of {nbytes} bytes"),
                        });
                    }
                    got += n;
                }
                if spare(&row) {
                    return Err(FormatError::Row { row: s, message: "bits set beyond the listed detectors".into() });
                }
                put(s, &row);
            }
            let mut rest = Vec::new();
            input.read_to_end(&mut rest)?;
            if !rest.is_empty() {
                return Err(FormatError::Row { row: header.n_rows, message: format!("{} bytes after the declared rows", rest.len()) });
            }
        }
    }
    Ok(DetectorRecords { header, columns })
}
