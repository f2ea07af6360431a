//! Bit-packed Monte Carlo sampling of detector outcomes.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{geometric_gap, stream_rng};
use crate::spacetime::DetectorModel;

pub const DEFAULT_WIDTH_CAP: usize = 24;
/// Samples per RNG stream.
pub const CHUNK_SAMPLES: usize = 1 << 15;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("region is empty")]
    EmptyRegion,
    #[error("sample count must be >= 1")]
    NoSamples,
    #[error("detector {0} out of range")]
    DetectorOutOfRange(usize),
    #[error("detector {0} is not in the batch region")]
    NotInRegion(usize),
    #[error("pattern width {width} exceeds cap of {cap} bits")]
    WidthCap { width: usize, cap: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    /// Draw only mechanisms incident to the region.
    #[default]
    Incident,
    /// Draw every mechanism of the model.
    All,
}

/// Column-packed samples: `columns[j]` holds 64 samples per word for region detector `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleBatch {
    pub n_samples: usize,
    pub region: Vec<usize>,
    pub columns: Vec<Vec<u64>>,
    pub seed: u64,
    pub stream: String,
    pub model_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSidecar {
    pub version: u32,
    pub n_samples: usize,
    pub region: Vec<usize>,
    pub seed: u64,
    pub stream: String,
    pub model_hash: String,
    pub words_per_column: usize,
}

impl SampleBatch {
    pub fn width(&self) -> usize {
        self.region.len()
    }

    pub fn words(&self) -> usize {
        self.n_samples.div_ceil(64)
    }

    pub fn bit(&self, sample: usize, j: usize) -> bool {
        self.columns[j][sample / 64] >> (sample % 64) & 1 == 1
    }

    fn positions(&self, dets: &[usize]) -> Result<Vec<usize>, SampleError> {
        dets.iter()
            .map(|d| {
                self.region
                    .iter()
                    .position(|r| r == d)
                    .ok_or(SampleError::NotInRegion(*d))
            })
            .collect()
    }

    /// Per-sample pattern codes over `dets` (bit `j` = detector `dets[j]`).
    pub fn patterns(&self, dets: &[usize]) -> Result<Vec<u32>, SampleError> {
        if dets.len() > 32 {
            return Err(SampleError::WidthCap { width: dets.len(), cap: 32 });
        }
        let pos = self.positions(dets)?;
        let mut codes = vec![0u32; self.n_samples];
        for (j, &p) in pos.iter().enumerate() {
            let col = &self.columns[p];
            for (w, chunk) in codes.chunks_mut(64).enumerate() {
                let word = col[w];
                if word == 0 {
                    continue;
                }
                for (b, c) in chunk.iter_mut().enumerate() {
                    *c |= ((word >> b) as u32 & 1) << j;
                }
            }
        }
        Ok(codes)
    }

    pub fn sidecar(&self) -> BatchSidecar {
        BatchSidecar {
            version: 1,
            n_samples: self.n_samples,
            region: self.region.clone(),
            seed: self.seed,
            stream: self.stream.clone(),
            model_hash: self.model_hash.clone(),
            words_per_column: self.words(),
        }
    }

    /// Writes `<path>` (little-endian column words) and `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<(), SampleError> {
        let mut bytes = Vec::with_capacity(self.width() * self.words() * 8);
        for col in &self.columns {
            for w in col {
                bytes.extend_from_slice(&w.to_le_bytes());
            }
        }
        std::fs::write(path, bytes)?;
        let side = serde_json::to_string_pretty(&self.sidecar()).expect("serializable");
        std::fs::write(sidecar_path(path), side)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SampleError> {
        let side: BatchSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)
            .map_err(|e| SampleError::Format(e.to_string()))?;
        let bytes = std::fs::read(path)?;
        let words = side.n_samples.div_ceil(64);
        if side.words_per_column != words || bytes.len() != side.region.len() * words * 8 {
            return Err(SampleError::Format(format!(
                "expected {} bytes for {} columns of {} words, found {}",
                side.region.len() * words * 8,
                side.region.len(),
                words,
                bytes.len()
            )));
        }
        let columns = bytes
            .chunks(words * 8)
            .map(|c| {
                c.chunks(8)
                    .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect();
        Ok(Self {
            n_samples: side.n_samples,
            region: side.region,
            columns,
            seed: side.seed,
            stream: side.stream,
            model_hash: side.model_hash,
        })
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Fills `mask` with Bernoulli(p) bits for the first `n` positions.
fn bernoulli_words<R: Rng + ?Sized>(rng: &mut R, p: f64, n: usize, mask: &mut [u64]) {
    mask.fill(0);
    if p <= 0.0 {
        return;
    }
    if p == 0.5 {
        for w in mask.iter_mut() {
            *w = rng.gen();
        }
        let tail = n % 64;
        if tail != 0 {
            let last = mask.len() - 1;
            mask[last] &= (1u64 << tail) - 1;
        }
        return;
    }
    let ln_q = (-p).ln_1p();
    let mut pos = geometric_gap(rng, ln_q);
    while (pos as usize) < n {
        let i = pos as usize;
        mask[i / 64] |= 1 << (i % 64);
        pos = pos.saturating_add(1).saturating_add(geometric_gap(rng, ln_q));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SampleOptions {
    pub locality: Locality,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { locality: Locality::Incident }
    }
}

pub fn sample_batch(
    model: &DetectorModel,
    region: &[usize],
    n: usize,
    seed: u64,
) -> Result<SampleBatch, SampleError> {
    sample_batch_with(model, region, n, seed, SampleOptions::default())
}

pub fn sample_batch_with(
    model: &DetectorModel,
    region: &[usize],
    n: usize,
    seed: u64,
    opts: SampleOptions,
) -> Result<SampleBatch, SampleError> {
    if region.is_empty() {
        return Err(SampleError::EmptyRegion);
    }
    if n == 0 {
        return Err(SampleError::NoSamples);
    }
    if let Some(&d) = region.iter().find(|&&d| d >= model.n_detectors()) {
        return Err(SampleError::DetectorOutOfRange(d));
    }
    let mechs: Vec<usize> = match opts.locality {
        Locality::Incident => model.incident_mechanisms(region),
        Locality::All => (0..model.n_mechanisms()).collect(),
    };
    let mut slot = vec![usize::MAX; model.n_detectors()];
    for (j, &d) in region.iter().enumerate() {
        slot[d] = j;
    }
    // (probability, region columns touched)
    let plan: Vec<(f64, Vec<usize>)> = mechs
        .iter()
        .map(|&k| {
            let m = &model.mechanisms[k];
            let cols = m
                .detectors
                .iter()
                .filter(|&&d| slot[d] != usize::MAX)
                .map(|&d| slot[d])
                .collect();
            (m.probability, cols)
        })
        .collect();
    let stream = match opts.locality {
        Locality::Incident => "sample/incident",
        Locality::All => "sample/all",
    };
    let n_chunks = n.div_ceil(CHUNK_SAMPLES);
    let chunks: Vec<Vec<Vec<u64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK_SAMPLES.min(n - c * CHUNK_SAMPLES);
            let words = len.div_ceil(64);
            let mut rng = stream_rng(seed, stream, c as u64);
            let mut cols = vec![vec![0u64; words]; region.len()];
            let mut mask = vec![0u64; words];
            for (p, targets) in &plan {
                bernoulli_words(&mut rng, *p, len, &mut mask);
                for &j in targets {
                    for (a, b) in cols[j].iter_mut().zip(&mask) {
                        *a ^= *b;
                    }
                }
            }
            cols
        })
        .collect();
    let mut columns = vec![Vec::with_capacity(n.div_ceil(64)); region.len()];
    for chunk in chunks {
        for (j, col) in chunk.into_iter().enumerate() {
            columns[j].extend(col);
        }
    }
    Ok(SampleBatch {
        n_samples: n,
        region: region.to_vec(),
        columns,
        seed,
        stream: stream.to_string(),
        model_hash: model.hash(),
    })
}

/// Sorted `(pattern, count)` table.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub width: usize,
    pub entries: Vec<(u32, u64)>,
}

impl Histogram {
    pub fn from_codes(width: usize, codes: &[u32]) -> Self {
        let mut sorted = codes.to_vec();
        sorted.sort_unstable();
        let mut entries: Vec<(u32, u64)> = Vec::new();
        for c in sorted {
            match entries.last_mut() {
                Some((p, n)) if *p == c => *n += 1,
                _ => entries.push((c, 1)),
            }
        }
        Self { width, entries }
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn support(&self) -> usize {
        self.entries.len()
    }

    pub fn count(&self, pattern: u32) -> u64 {
        self.entries
            .binary_search_by_key(&pattern, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }
}

pub fn marginalize(batch: &SampleBatch, sub: &[usize], cap: usize) -> Result<Histogram, SampleError> {
    if sub.len() > cap {
        return Err(SampleError::WidthCap { width: sub.len(), cap });
    }
    Ok(Histogram::from_codes(sub.len(), &batch.patterns(sub)?))
}

/// Per-shot mechanism sampler: fired mechanism indices, grouped by probability for geometric skipping.
#[derive(Clone, Debug)]
pub struct ShotSampler {
    groups: Vec<(f64, Vec<u32>)>,
}

impl ShotSampler {
    pub fn new(model: &DetectorModel) -> Self {
        let mut groups: Vec<(f64, Vec<u32>)> = Vec::new();
        for (k, m) in model.mechanisms.iter().enumerate() {
            if m.probability <= 0.0 {
                continue;
            }
            match groups.iter_mut().find(|g| g.0 == m.probability) {
                Some(g) => g.1.push(k as u32),
                None => groups.push((m.probability, vec![k as u32])),
            }
        }
        Self { groups }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<u32>) {
        out.clear();
        for (p, members) in &self.groups {
            if *p >= 0.5 {
                out.extend(members.iter().filter(|_| rng.gen::<bool>()));
                continue;
            }
            let ln_q = (-p).ln_1p();
            let mut pos = geometric_gap(rng, ln_q);
            while (pos as usize) < members.len() {
                out.push(members[pos as usize]);
                pos = pos.saturating_add(1).saturating_add(geometric_gap(rng, ln_q));
            }
        }
        out.sort_unstable();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::repetition_code;
    use crate::spacetime::{build_detector_model, detector_flip_probability, NoiseModel, Sector};

    fn rep(l: usize, t: usize, p: f64) -> DetectorModel {
        build_detector_model(&repetition_code(l).unwrap(), t, NoiseModel::bit_flip(p).unwrap())
            .unwrap()
    }

    fn within_3_sigma(k: u64, n: usize, p: f64) -> bool {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        (k as f64 - n as f64 * p).abs() <= 3.0 * sd
    }

    #[test]
    fn noiseless_batch_is_zero() {
        let m = rep(5, 3, 0.0);
        let b = sample_batch(&m, &[0, 1, 2], 1000, 1).unwrap();
        let h = marginalize(&b, &[0, 1, 2], 24).unwrap();
        assert_eq!(h.entries, vec![(0, 1000)]);
    }

    #[test]
    fn bulk_flip_rate_matches_closed_form() {
        let m = rep(8, 6, 0.1);
        let d = m.detector_index(Sector::Z, 3, 3).unwrap();
        let n = 200_000;
        let b = sample_batch(&m, &[d], n, 42).unwrap();
        let ones: u64 = b.columns[0].iter().map(|w| w.count_ones() as u64).sum();
        assert!(within_3_sigma(ones, n, detector_flip_probability(&m, d)));
    }

    #[test]
    fn half_probability_detectors() {
        let m = rep(6, 4, 0.5);
        let d0 = m.detector_index(Sector::Z, 0, 2).unwrap();
        let d1 = m.detector_index(Sector::Z, 3, 2).unwrap();
        let n = 100_000;
        let b = sample_batch(&m, &[d0, d1], n, 9).unwrap();
        let h = marginalize(&b, &[d0, d1], 24).unwrap();
        assert_eq!(h.total(), n as u64);
        for pat in 0..4 {
            assert!(within_3_sigma(h.count(pat), n, 0.25));
        }
    }

    #[test]
    fn reproducible_and_order_independent_of_threads() {
        let m = rep(6, 4, 0.1);
        let region: Vec<usize> = (0..12).collect();
        let a = sample_batch(&m, &region, 100_000, 5).unwrap();
        let b = sample_batch(&m, &region, 100_000, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_batch(&m, &region, 100_000, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cap_and_region_errors() {
        let m = rep(6, 4, 0.1);
        assert!(matches!(sample_batch(&m, &[], 10, 0), Err(SampleError::EmptyRegion)));
        let b = sample_batch(&m, &[0, 1, 2], 10, 0).unwrap();
        assert!(matches!(marginalize(&b, &[0, 1, 2], 2), Err(SampleError::WidthCap { width: 3, cap: 2 })));
        assert!(matches!(marginalize(&b, &[5], 24), Err(SampleError::NotInRegion(5))));
    }

    #[test]
    fn save_load_round_trip() {
        let m = rep(5, 3, 0.2);
        let b = sample_batch(&m, &[1, 4, 7], 1000, 3).unwrap();
        let dir = std::env::temp_dir().join(format!("stmarkov-batch-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("batch.bin");
        b.save(&path).unwrap();
        assert_eq!(SampleBatch::load(&path).unwrap(), b);
        std::fs::write(&path, [0u8; 5]).unwrap();
        assert!(matches!(SampleBatch::load(&path), Err(SampleError::Format(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn shot_sampler_rate() {
        let m = rep(8, 8, 0.1);
        let s = ShotSampler::new(&m);
        let mut rng = stream_rng(1, "t", 0);
        let mut buf = Vec::new();
        let mut total = 0usize;
        let shots = 2000;
        for _ in 0..shots {
            s.sample_into(&mut rng, &mut buf);
            total += buf.len();
        }
        let n = shots * m.n_mechanisms();
        assert!(within_3_sigma(total as u64, n, 0.1));
    }
}
