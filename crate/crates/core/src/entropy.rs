//! Shannon entropies of detector and syndrome bits, in bits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::CssCode;
use crate::gf2::{BitMatrix, BitVec};
use crate::sampler::Histogram;
use crate::spacetime::{build_detector_model, DetectorModel, ModelError, NoiseModel, Sector};

pub const DEFAULT_BRUTE_FORCE_CAP: usize = 22;
pub const DEFAULT_ENUMERATION_CAP: usize = 24;
pub const JACKKNIFE_CHUNKS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("no samples")]
    NoSamples,
    #[error("{mechanisms} incident mechanisms exceed the brute-force cap of {cap}")]
    BruteForceCap { mechanisms: usize, cap: usize },
    #[error("region width {width} exceeds the enumeration cap of {cap} bits")]
    WidthCap { width: usize, cap: usize },
    #[error("mechanism {mechanism} has probability {probability}, rank entropy needs 1/2")]
    NotHalf { mechanism: usize, probability: f64 },
    #[error("detector {0} out of range")]
    DetectorOutOfRange(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    None,
    #[default]
    MillerMadow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Plugin,
    MillerMadow,
    Exact,
    Rank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub std_error: f64,
    pub estimator: EstimatorKind,
    pub n_samples: u64,
    pub support: usize,
}

fn xlogx(c: f64) -> f64 {
    if c > 0.0 {
        c * c.ln()
    } else {
        0.0
    }
}

fn corrected(h_nats: f64, support: usize, n: f64, correction: Correction) -> f64 {
    let mm = match correction {
        Correction::None => 0.0,
        Correction::MillerMadow => (support.saturating_sub(1)) as f64 / (2.0 * n),
    };
    (h_nats + mm) / std::f64::consts::LN_2
}

/// Plug-in entropy of a histogram with an analytic (delta-method) standard error.
pub fn plugin_entropy(h: &Histogram, correction: Correction) -> Result<EntropyEstimate, EntropyError> {
    let n = h.total();
    if n == 0 {
        return Err(EntropyError::NoSamples);
    }
    let nf = n as f64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &(_, c) in &h.entries {
        let p = c as f64 / nf;
        let l = p.log2();
        s1 -= p * l;
        s2 += p * l * l;
    }
    let value = corrected(s1 * std::f64::consts::LN_2, h.support(), nf, correction)
        .clamp(0.0, h.width as f64);
    let var = ((s2 - s1 * s1) / nf).max(0.0);
    Ok(EntropyEstimate {
        value,
        std_error: var.sqrt(),
        estimator: match correction {
            Correction::None => EstimatorKind::Plugin,
            Correction::MillerMadow => EstimatorKind::MillerMadow,
        },
        n_samples: n,
        support: h.support(),
    })
}

/// Full-sample estimate and the leave-one-chunk-out replicates.
#[derive(Clone, Debug, PartialEq)]
pub struct Jackknife {
    pub full: f64,
    pub loo: Vec<f64>,
    pub support: usize,
    pub n: u64,
}

impl Jackknife {
    pub fn std_error(&self) -> f64 {
        jackknife_std_error(&self.loo)
    }
}

pub fn jackknife_std_error(loo: &[f64]) -> f64 {
    let g = loo.len() as f64;
    if loo.len() < 2 {
        return 0.0;
    }
    let mean = loo.iter().sum::<f64>() / g;
    ((g - 1.0) / g * loo.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt()
}

/// Chunk `k` covers samples `[k*n/g, (k+1)*n/g)`.
fn chunk_start(k: usize, n: usize, g: usize) -> usize {
    (k as u128 * n as u128 / g as u128) as usize
}

/// Plug-in entropy of pattern codes with leave-one-chunk-out replicates over `g` contiguous chunks.
pub fn jackknife_entropy(
    codes: &[u32],
    width: usize,
    g: usize,
    correction: Correction,
) -> Result<Jackknife, EntropyError> {
    let n = codes.len();
    if n == 0 {
        return Err(EntropyError::NoSamples);
    }
    let g = g.clamp(1, n).min(64);
    let mut keyed: Vec<u64> = Vec::with_capacity(n);
    let mut sizes = vec![0u64; g];
    for k in 0..g {
        let (a, b) = (chunk_start(k, n, g), chunk_start(k + 1, n, g));
        sizes[k] = (b - a) as u64;
        keyed.extend(codes[a..b].iter().map(|&c| (c as u64) << 6 | k as u64));
    }
    keyed.sort_unstable();
    let mut full_s = 0.0;
    let mut support = 0usize;
    let mut loo_s = vec![0.0; g];
    let mut loo_k = vec![0usize; g];
    let mut per = vec![0u64; g];
    let mut i = 0;
    while i < keyed.len() {
        let code = keyed[i] >> 6;
        per.fill(0);
        let mut total = 0u64;
        while i < keyed.len() && keyed[i] >> 6 == code {
            per[(keyed[i] & 63) as usize] += 1;
            total += 1;
            i += 1;
        }
        full_s += xlogx(total as f64);
        support += 1;
        for k in 0..g {
            let c = total - per[k];
            loo_s[k] += xlogx(c as f64);
            loo_k[k] += (c > 0) as usize;
        }
    }
    let entropy = |s: f64, m: f64, k: usize| {
        corrected(m.ln() - s / m, k, m, correction).clamp(0.0, width as f64)
    };
    let nf = n as f64;
    let full = entropy(full_s, nf, support);
    let loo = if g == 1 {
        vec![]
    } else {
        (0..g)
            .map(|k| entropy(loo_s[k], nf - sizes[k] as f64, loo_k[k]))
            .collect()
    };
    Ok(Jackknife { full, loo, support, n: n as u64 })
}

pub fn shannon_bits(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

/// Mechanisms touching `region` with nonzero probability, as (probability, region bit pattern).
fn region_columns(model: &DetectorModel, region: &[usize]) -> Result<Vec<(f64, u64)>, EntropyError> {
    if let Some(&d) = region.iter().find(|&&d| d >= model.n_detectors()) {
        return Err(EntropyError::DetectorOutOfRange(d));
    }
    assert!(region.len() <= 64, "region wider than 64 bits");
    let mut slot = std::collections::HashMap::new();
    for (j, &d) in region.iter().enumerate() {
        slot.insert(d, j);
    }
    Ok(model
        .incident_mechanisms(region)
        .into_iter()
        .filter(|&k| model.mechanisms[k].probability > 0.0)
        .map(|k| {
            let m = &model.mechanisms[k];
            let pat = m
                .detectors
                .iter()
                .filter_map(|d| slot.get(d))
                .fold(0u64, |acc, &j| acc | 1 << j);
            (m.probability, pat)
        })
        .collect())
}

/// Exact distribution over region patterns by enumerating every mechanism pattern.
pub fn brute_force_distribution(
    model: &DetectorModel,
    region: &[usize],
    cap: usize,
) -> Result<Vec<f64>, EntropyError> {
    let cols = region_columns(model, region)?;
    if cols.len() > cap {
        return Err(EntropyError::BruteForceCap { mechanisms: cols.len(), cap });
    }
    if region.len() > DEFAULT_ENUMERATION_CAP {
        return Err(EntropyError::WidthCap { width: region.len(), cap: DEFAULT_ENUMERATION_CAP });
    }
    let mut dist = vec![0.0; 1 << region.len()];
    fn rec(cols: &[(f64, u64)], prob: f64, pat: u64, dist: &mut [f64]) {
        match cols.split_first() {
            None => dist[pat as usize] += prob,
            Some((&(p, m), rest)) => {
                rec(rest, prob * (1.0 - p), pat, dist);
                rec(rest, prob * p, pat ^ m, dist);
            }
        }
    }
    rec(&cols, 1.0, 0, &mut dist);
    Ok(dist)
}

pub fn exact_entropy(model: &DetectorModel, region: &[usize], cap: usize) -> Result<f64, EntropyError> {
    Ok(shannon_bits(&brute_force_distribution(model, region, cap)?))
}

/// In-place XOR convolution with a Bernoulli(p) flip of `pattern`.
pub fn xor_convolve(dist: &mut [f64], p: f64, pattern: usize) {
    if pattern == 0 || p == 0.0 {
        return;
    }
    let hi = 1usize << (usize::BITS - 1 - pattern.leading_zeros());
    let q = 1.0 - p;
    for x in 0..dist.len() {
        if x & hi == 0 {
            let y = x ^ pattern;
            let (a, b) = (dist[x], dist[y]);
            dist[x] = q * a + p * b;
            dist[y] = q * b + p * a;
        }
    }
}

/// Exact distribution over region patterns by XOR-convolving the incident mechanisms.
pub fn enumerated_distribution(
    model: &DetectorModel,
    region: &[usize],
    cap: usize,
) -> Result<Vec<f64>, EntropyError> {
    if region.len() > cap {
        return Err(EntropyError::WidthCap { width: region.len(), cap });
    }
    Ok(convolve_columns(region.len(), &region_columns(model, region)?))
}

/// Distribution of `sum_k e_k * col_k` for independent `e_k ~ Bernoulli(p_k)`.
pub fn convolve_columns(width: usize, cols: &[(f64, u64)]) -> Vec<f64> {
    // merge mechanisms with equal patterns into a single odd-parity flip
    let mut merged: Vec<(u64, f64)> = Vec::new();
    let mut sorted: Vec<(u64, f64)> = cols.iter().map(|&(p, m)| (m, p)).collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (m, p) in sorted {
        match merged.last_mut() {
            Some((pm, pp)) if *pm == m => *pp = *pp * (1.0 - p) + p * (1.0 - *pp),
            _ => merged.push((m, p)),
        }
    }
    let mut dist = vec![0.0; 1 << width];
    dist[0] = 1.0;
    for (m, p) in merged {
        xor_convolve(&mut dist, p, m as usize);
    }
    dist
}

/// Marginal over the bits listed in `keep` (positions into the source pattern).
pub fn marginal(dist: &[f64], keep: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; 1 << keep.len()];
    for (x, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let y = keep
            .iter()
            .enumerate()
            .fold(0usize, |acc, (j, &b)| acc | ((x >> b) & 1) << j);
        out[y] += p;
    }
    out
}

/// Entropy at p = 1/2: the rank of the region rows of the incidence matrix.
pub fn rank_entropy_half(model: &DetectorModel, region: &[usize]) -> Result<f64, EntropyError> {
    if let Some(&d) = region.iter().find(|&&d| d >= model.n_detectors()) {
        return Err(EntropyError::DetectorOutOfRange(d));
    }
    let mechs = model.incident_mechanisms(region);
    if let Some(&k) = mechs.iter().find(|&&k| model.mechanisms[k].probability != 0.5) {
        return Err(EntropyError::NotHalf { mechanism: k, probability: model.mechanisms[k].probability });
    }
    Ok(region_submatrix(model, region, &mechs).rank() as f64)
}

pub fn region_submatrix(model: &DetectorModel, region: &[usize], mechs: &[usize]) -> BitMatrix {
    let rows = region
        .iter()
        .map(|&d| BitVec::from_bools(&mechs.iter().map(|&k| model.incidence.get(d, k)).collect::<Vec<_>>()))
        .collect();
    BitMatrix::from_rows(mechs.len(), rows)
}

/// Raw syndrome bit `(sector, check, round)` with Z rounds `1..=T+1` and X rounds `0..=T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyndromeBit {
    pub sector: Sector,
    pub check: usize,
    pub round: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Initial check values uniform over the consistent syndromes.
    #[default]
    Random,
    /// Initial check values all zero.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub h_s: f64,
    pub h_d: f64,
    pub n_s: usize,
    pub n_d: usize,
    pub residual: f64,
}

pub fn all_syndrome_bits(code: &CssCode, rounds: usize) -> Vec<SyndromeBit> {
    let mut v: Vec<SyndromeBit> = (1..=rounds + 1)
        .flat_map(|r| (0..code.n_z_checks()).map(move |c| SyndromeBit { sector: Sector::Z, check: c, round: r }))
        .collect();
    v.extend((0..=rounds).flat_map(|r| {
        (0..code.n_x_checks()).map(move |c| SyndromeBit { sector: Sector::X, check: c, round: r })
    }));
    v
}

/// Checks `H(s) = H(d) + |s| - |d|` on a region of raw syndrome bits, exactly.
///
/// `|d|` counts the independent parity combinations of the region that do not
/// depend on the initial frame; `H(d)` is their joint entropy.
pub fn entropy_decomposition_check(
    code: &CssCode,
    rounds: usize,
    noise: NoiseModel,
    region: &[SyndromeBit],
    frame: Frame,
    cap: usize,
) -> Result<DecompositionReport, EntropyError> {
    let model = build_detector_model(code, rounds, noise)?;
    let w = region.len();
    if w > cap {
        return Err(EntropyError::WidthCap { width: w, cap });
    }
    // s = G e + F x: G from mechanisms, F from the initial frame x on data qubits
    let mut g_cols: Vec<(f64, u64)> = Vec::new();
    for (k, m) in model.mechanisms.iter().enumerate() {
        if m.probability == 0.0 {
            continue;
        }
        let mut pat = 0u64;
        for (j, b) in region.iter().enumerate() {
            if syndrome_flipped(&model, k, b) {
                pat |= 1 << j;
            }
        }
        g_cols.push((m.probability, pat));
    }
    let mut f_cols: Vec<u64> = Vec::new();
    if frame == Frame::Random {
        for (sector, checks) in [(Sector::Z, &code.z_checks), (Sector::X, &code.x_checks)] {
            let t = checks.transpose();
            for q in 0..code.n_qubits {
                let mut pat = 0u64;
                for (j, b) in region.iter().enumerate() {
                    if b.sector == sector && t.row(q).get(b.check) {
                        pat |= 1 << j;
                    }
                }
                f_cols.push(pat);
            }
        }
    }
    let mut joint = g_cols.clone();
    joint.extend(f_cols.iter().map(|&m| (0.5, m)));
    let h_s = shannon_bits(&convolve_columns(w, &joint));

    let f_mat = BitMatrix::from_rows(
        f_cols.len(),
        (0..w)
            .map(|j| BitVec::from_bools(&f_cols.iter().map(|&m| m >> j & 1 == 1).collect::<Vec<_>>()))
            .collect(),
    );
    // rows y with y^T F = 0: left nullspace of F
    let annihilator = f_mat.transpose().nullspace();
    let n_d = annihilator.len();
    let d_cols: Vec<(f64, u64)> = g_cols
        .iter()
        .map(|&(p, m)| {
            let col = BitVec::from_bools(&(0..w).map(|j| m >> j & 1 == 1).collect::<Vec<_>>());
            let pat = annihilator
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, y)| acc | (y.dot(&col) as u64) << i);
            (p, pat)
        })
        .collect();
    let h_d = shannon_bits(&convolve_columns(n_d, &d_cols));
    Ok(DecompositionReport {
        h_s,
        h_d,
        n_s: w,
        n_d,
        residual: h_s - h_d - w as f64 + n_d as f64,
    })
}

/// Whether mechanism `k` flips raw syndrome bit `b`, read from the circuit simulation.
fn syndrome_flipped(model: &DetectorModel, k: usize, b: &SyndromeBit) -> bool {
    let mut e = vec![false; model.n_mechanisms()];
    e[k] = true;
    let h = crate::spacetime::simulate_syndromes(model, &e);
    match b.sector {
        Sector::Z => h.z[b.round - 1].get(b.check),
        Sector::X => h.x[b.round].get(b.check),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::repetition_code;
    use crate::spacetime::Sector;
    use proptest::prelude::*;

    fn hist(width: usize, pairs: &[(u32, u64)]) -> Histogram {
        Histogram { width, entries: pairs.to_vec() }
    }

    fn rep(l: usize, t: usize, p: f64) -> DetectorModel {
        build_detector_model(&repetition_code(l).unwrap(), t, NoiseModel::bit_flip(p).unwrap())
            .unwrap()
    }

    #[test]
    fn plugin_examples() {
        let e = plugin_entropy(&hist(1, &[(0, 5), (1, 5)]), Correction::None).unwrap();
        assert!((e.value - 1.0).abs() < 1e-15);
        for c in [Correction::None, Correction::MillerMadow] {
            assert_eq!(plugin_entropy(&hist(1, &[(0, 10)]), c).unwrap().value, 0.0);
        }
        let e = plugin_entropy(&hist(2, &[(0, 2), (1, 2), (2, 2), (3, 2)]), Correction::None).unwrap();
        assert!((e.value - 2.0).abs() < 1e-15);
        assert_eq!(plugin_entropy(&hist(1, &[]), Correction::None), Err(EntropyError::NoSamples));
        let mm = plugin_entropy(&hist(1, &[(0, 7), (1, 3)]), Correction::MillerMadow).unwrap();
        let pl = plugin_entropy(&hist(1, &[(0, 7), (1, 3)]), Correction::None).unwrap();
        assert!((mm.value - pl.value - 1.0 / (20.0 * std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn jackknife_matches_plugin() {
        let codes: Vec<u32> = (0..10_000u32).map(|i| i.wrapping_mul(2654435761u32) >> 29).collect();
        let j = jackknife_entropy(&codes, 3, 32, Correction::None).unwrap();
        let h = plugin_entropy(&Histogram::from_codes(3, &codes), Correction::None).unwrap();
        assert!((j.full - h.value).abs() < 1e-12);
        assert_eq!(j.loo.len(), 32);
        assert!(j.std_error() > 0.0 && j.std_error() < 0.05);
    }

    #[test]
    fn single_detector_examples() {
        let m = rep(5, 3, 0.1);
        let d = m.detector_index(Sector::Z, 1, 0).unwrap();
        // first-round detector: one data mechanism before round 1 on each of two qubits, one readout
        assert_eq!(m.detector_mechanisms[d].len(), 3);
        let h = exact_entropy(&m, &[d], 22).unwrap();
        let p = detector_flip_probability_of(&m, d);
        let hb = -(p * p.log2() + (1.0 - p) * (1.0 - p).log2());
        assert!((h - hb).abs() < 1e-12);
        assert_eq!(exact_entropy(&rep(5, 3, 0.0), &[d], 22).unwrap(), 0.0);
        assert!((exact_entropy(&rep(5, 3, 0.5), &[d], 22).unwrap() - 1.0).abs() < 1e-12);
    }

    fn detector_flip_probability_of(m: &DetectorModel, d: usize) -> f64 {
        crate::spacetime::detector_flip_probability(m, d)
    }

    #[test]
    fn two_mechanism_oracle() {
        let code2 = CssCode::custom(2, &[vec![0, 1]], &[], &[], &[]).unwrap();
        let m2 = build_detector_model(&code2, 1, NoiseModel::new(0.1, 0.0, 0.0).unwrap()).unwrap();
        let d2 = m2.detector_index(Sector::Z, 0, 0).unwrap();
        let h = exact_entropy(&m2, &[d2], 22).unwrap();
        assert!((h - 0.680_077_045_728_279_8).abs() < 1e-12);
        assert!((h - 0.6801).abs() < 5e-5);
    }

    #[test]
    fn cap_refusal() {
        let m = rep(8, 8, 0.1);
        let region: Vec<usize> = (0..16).collect();
        assert!(matches!(
            exact_entropy(&m, &region, 22),
            Err(EntropyError::BruteForceCap { .. })
        ));
    }

    #[test]
    fn rank_examples() {
        let m = rep(4, 3, 0.5);
        let all: Vec<usize> = (0..m.n_detectors()).collect();
        let r = rank_entropy_half(&m, &all).unwrap();
        let e = shannon_bits(&enumerated_distribution(&m, &all, 24).unwrap());
        assert!((r - e).abs() < 1e-9);
        assert!(matches!(rank_entropy_half(&rep(4, 3, 0.1), &[0]), Err(EntropyError::NotHalf { .. })));
    }

    #[test]
    fn decomposition_small() {
        let code = repetition_code(3).unwrap();
        let noise = NoiseModel::bit_flip(0.1).unwrap();
        let all = all_syndrome_bits(&code, 2);
        let r = entropy_decomposition_check(&code, 2, noise, &all, Frame::Random, 24).unwrap();
        assert!(r.residual.abs() < 1e-12, "{r:?}");
        let r0 = entropy_decomposition_check(&code, 2, NoiseModel::bit_flip(0.0).unwrap(), &all, Frame::Random, 24)
            .unwrap();
        assert_eq!(r0.h_d, 0.0);
        assert!((r0.h_s - (r0.n_s - r0.n_d) as f64).abs() < 1e-12);
        let one = [SyndromeBit { sector: Sector::Z, check: 1, round: 2 }];
        let r1 = entropy_decomposition_check(&code, 2, noise, &one, Frame::Random, 24).unwrap();
        assert_eq!(r1.n_d, 0);
        assert!((r1.h_s - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn brute_force_matches_enumeration(seed in 0u64..1000, p in 0.01f64..0.5) {
            let m = rep(4, 3, p);
            let mut rng = crate::rng::stream_rng(seed, "test", 0);
            let region: Vec<usize> = {
                use rand::seq::SliceRandom;
                let mut all: Vec<usize> = (0..m.n_detectors()).collect();
                all.shuffle(&mut rng);
                all.truncate(4);
                all
            };
            if let Ok(bf) = brute_force_distribution(&m, &region, 22) {
                let en = enumerated_distribution(&m, &region, 24).unwrap();
                for (a, b) in bf.iter().zip(&en) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                let sub = marginal(&en, &[0, 2]);
                let direct = enumerated_distribution(&m, &[region[0], region[2]], 24).unwrap();
                for (a, b) in sub.iter().zip(&direct) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                prop_assert!(shannon_bits(&direct) <= shannon_bits(&en) + 1e-12);
            }
        }
    }
}
