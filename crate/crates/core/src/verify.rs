//! Cross-checks between the circuit picture and the foliated resource state,
//! plus oracle comparisons for the estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::{repetition_code, toric_code, CodeError, CodeFamily, CssCode};
use crate::entropy::{
    self, all_syndrome_bits, brute_force_distribution, entropy_decomposition_check,
    exact_entropy, jackknife_entropy, rank_entropy_half, shannon_bits, Correction, EntropyError,
    Frame, JACKKNIFE_CHUNKS,
};
use crate::foliation::{cell_for_detector, foliate, FoliationError, MappingRules, ResourceState};
use crate::gf2::BitVec;
use crate::rng::stream_rng;
use crate::sampler::{sample_batch, SampleError};
use crate::spacetime::{
    build_detector_model, detector_flip_probability, simulate_syndromes, syndromes_to_detectors,
    DetectorModel, ModelError, NoiseModel,
};
use crate::tableau::{apply_z, evaluate_detectors, init_graph_state, measure_x_all, Tableau, TableauError};

/// Largest resource state handed to the tableau.
pub const TABLEAU_CAP: usize = 2000;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Foliation(#[from] FoliationError),
    #[error(transparent)]
    Tableau(#[from] TableauError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("{what} of {size} exceeds the cap of {cap}")]
    Cap { what: &'static str, size: usize, cap: usize },
}

/// Detector bits (model order) read off the resource state after the mapped Z errors.
pub struct ResourcePipeline<'a> {
    pub rs: &'a ResourceState,
    pub model: &'a DetectorModel,
    base: Tableau,
    cells: Vec<usize>,
    rules: MappingRules,
}

impl<'a> ResourcePipeline<'a> {
    pub fn new(rs: &'a ResourceState, model: &'a DetectorModel, rules: MappingRules) -> Result<Self, VerifyError> {
        if rs.n_qubits() > TABLEAU_CAP {
            return Err(VerifyError::Cap { what: "resource state", size: rs.n_qubits(), cap: TABLEAU_CAP });
        }
        Ok(Self { rs, model, base: init_graph_state(rs), cells: cell_for_detector(rs, model), rules })
    }

    pub fn detectors<R: Rng + ?Sized>(&self, errors: &[bool], rng: &mut R) -> Result<BitVec, VerifyError> {
        let mut t = self.base.clone();
        for (k, m) in self.model.mechanisms.iter().enumerate() {
            if errors[k] {
                let sites = self.rs.map_circuit_error_with(&m.event, self.rules)?;
                apply_z(&mut t, &sites);
            }
        }
        let out = measure_x_all(&mut t, self.rs, rng);
        let cell_bits = evaluate_detectors(&out, &self.rs.detector_cells)?;
        let mut d = BitVec::zeros(self.model.n_detectors());
        for (i, &c) in self.cells.iter().enumerate() {
            d.set(i, cell_bits.get(c));
        }
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub configuration: usize,
    pub mechanisms: Vec<usize>,
    pub circuit: Vec<usize>,
    pub resource: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceReport {
    pub singles: usize,
    pub random: usize,
    pub mismatches: usize,
    pub first: Option<Mismatch>,
}

impl CorrespondenceReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Circuit model whose detectors pair with the cells of an `m_f`-layer resource state.
pub fn model_for_layers(code: &CssCode, m_f: usize, noise: NoiseModel) -> Result<DetectorModel, VerifyError> {
    if m_f < 2 {
        return Err(VerifyError::Model(ModelError::InvalidRounds(m_f.saturating_sub(1))));
    }
    Ok(build_detector_model(code, m_f - 1, noise)?)
}

/// Noise used to enumerate every mechanism kind of `code`.
pub fn full_noise(code: &CssCode, p: f64) -> Result<NoiseModel, ModelError> {
    let p_z = if code.n_x_checks() > 0 { p } else { 0.0 };
    NoiseModel::new(p, p_z, p)
}

/// Circuit detectors vs. the resource-state pipeline, for every single mechanism and
/// `n_random` configurations with each mechanism present independently at `density`.
pub fn foliation_correspondence(
    code: &CssCode,
    m_f: usize,
    n_random: usize,
    density: f64,
    seed: u64,
    rules: MappingRules,
) -> Result<CorrespondenceReport, VerifyError> {
    let rs = foliate(code, m_f)?;
    let model = model_for_layers(code, m_f, full_noise(code, 0.1)?)?;
    let pipe = ResourcePipeline::new(&rs, &model, rules)?;
    let nm = model.n_mechanisms();
    let mut configs: Vec<Vec<bool>> = (0..nm)
        .map(|k| (0..nm).map(|j| j == k).collect())
        .collect();
    let mut pick = stream_rng(seed, "verify-configs", 0);
    for _ in 0..n_random {
        configs.push((0..nm).map(|_| pick.gen_bool(density)).collect());
    }
    let mut report = CorrespondenceReport { singles: nm, random: n_random, mismatches: 0, first: None };
    for (i, e) in configs.iter().enumerate() {
        let circuit = syndromes_to_detectors(&model, &simulate_syndromes(&model, e))?;
        let mut rng = stream_rng(seed, "tableau", i as u64);
        let resource = pipe.detectors(e, &mut rng)?;
        if circuit != resource {
            report.mismatches += 1;
            if report.first.is_none() {
                report.first = Some(Mismatch {
                    configuration: i,
                    mechanisms: (0..nm).filter(|&k| e[k]).collect(),
                    circuit: circuit.ones().collect(),
                    resource: resource.ones().collect(),
                });
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub generators: usize,
    pub operators: usize,
    pub non_commuting: Vec<String>,
    pub not_plus_one: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.non_commuting.is_empty() && self.not_plus_one.is_empty()
    }
}

/// Every detector cell and L'BL operator commutes with the graph-state generators
/// and has expectation +1 on the noiseless resource state.
pub fn stabilizer_audit(code: &CssCode, m_f: usize) -> Result<AuditReport, VerifyError> {
    let rs = foliate(code, m_f)?;
    if rs.n_qubits() > TABLEAU_CAP {
        return Err(VerifyError::Cap { what: "resource state", size: rs.n_qubits(), cap: TABLEAU_CAP });
    }
    let gens = rs.stabilizer_generators();
    let mut t = init_graph_state(&rs);
    let ops: Vec<(String, _)> = rs
        .detector_cells
        .iter()
        .map(|c| (format!("D[{:?} c{} r{}]", c.sector, c.check, c.round), c.operator()))
        .chain(
            rs.lbl_stabilizers
                .iter()
                .map(|l| (format!("LBL[{:?} {}]", l.sector, l.logical), l.operator())),
        )
        .collect();
    let mut report =
        AuditReport { generators: gens.len(), operators: ops.len(), non_commuting: Vec::new(), not_plus_one: Vec::new() };
    for (name, op) in &ops {
        if !gens.iter().all(|g| g.commutes_with(op)) {
            report.non_commuting.push(name.clone());
        }
        if t.expectation(op) != Some(1) {
            report.not_plus_one.push(name.clone());
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyMatch {
    pub mechanisms: usize,
    pub h_m: f64,
    pub h_d: f64,
}

/// Exact H(m) of the detector-cell signs from the tableau pipeline, against exact H(d).
pub fn resource_entropy_match(
    code: &CssCode,
    m_f: usize,
    noise: NoiseModel,
    cap: usize,
) -> Result<EntropyMatch, VerifyError> {
    let rs = foliate(code, m_f)?;
    let model = model_for_layers(code, m_f, noise)?;
    let live: Vec<usize> = (0..model.n_mechanisms())
        .filter(|&k| model.mechanisms[k].probability > 0.0)
        .collect();
    if live.len() > cap {
        return Err(EntropyError::BruteForceCap { mechanisms: live.len(), cap }.into());
    }
    let nd = model.n_detectors();
    if nd > 64 {
        return Err(VerifyError::Cap { what: "detector count", size: nd, cap: 64 });
    }
    let pipe = ResourcePipeline::new(&rs, &model, MappingRules::Standard)?;
    let mut dist: std::collections::BTreeMap<u64, f64> = Default::default();
    let mut rng = stream_rng(0, "tableau", 0);
    for mask in 0u64..1 << live.len() {
        let mut e = vec![false; model.n_mechanisms()];
        let mut prob = 1.0;
        for (i, &k) in live.iter().enumerate() {
            let p = model.mechanisms[k].probability;
            if mask >> i & 1 == 1 {
                e[k] = true;
                prob *= p;
            } else {
                prob *= 1.0 - p;
            }
        }
        let d = pipe.detectors(&e, &mut rng)?;
        let key = d.ones().fold(0u64, |acc, i| acc | 1 << i);
        *dist.entry(key).or_default() += prob;
    }
    let h_m = shannon_bits(&dist.values().copied().collect::<Vec<_>>());
    let all: Vec<usize> = (0..nd).collect();
    let h_d = exact_entropy(&model, &all, cap)?;
    Ok(EntropyMatch { mechanisms: live.len(), h_m, h_d })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalCheck {
    pub detector: usize,
    pub ones: u64,
    pub shots: u64,
    pub expected: f64,
    pub z_score: f64,
}

/// Per-detector flip frequency from the tableau pipeline at the model's noise rates.
pub fn resource_marginals(
    code: &CssCode,
    m_f: usize,
    noise: NoiseModel,
    shots: u64,
    seed: u64,
) -> Result<Vec<MarginalCheck>, VerifyError> {
    let rs = foliate(code, m_f)?;
    let model = model_for_layers(code, m_f, noise)?;
    let pipe = ResourcePipeline::new(&rs, &model, MappingRules::Standard)?;
    let mut ones = vec![0u64; model.n_detectors()];
    let mut faults = stream_rng(seed, "verify-faults", 0);
    let mut rng = stream_rng(seed, "tableau", 0);
    for _ in 0..shots {
        let e: Vec<bool> = model.mechanisms.iter().map(|m| faults.gen_bool(m.probability)).collect();
        for d in pipe.detectors(&e, &mut rng)?.ones() {
            ones[d] += 1;
        }
    }
    Ok(ones
        .iter()
        .enumerate()
        .map(|(d, &k)| {
            let p = detector_flip_probability(&model, d);
            let sd = (shots as f64 * p * (1.0 - p)).sqrt();
            let dev = k as f64 - shots as f64 * p;
            MarginalCheck {
                detector: d,
                ones: k,
                shots,
                expected: p,
                z_score: if sd > 0.0 { dev / sd } else if dev == 0.0 { 0.0 } else { f64::INFINITY },
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl CheckResult {
    fn new(name: String, passed: bool, detail: String) -> Self {
        Self { name, status: if passed { Status::Pass } else { Status::Fail }, detail }
    }

    fn skipped(name: String, why: impl std::fmt::Display) -> Self {
        Self { name, status: Status::Skipped, detail: why.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyTarget {
    pub family: CodeFamily,
    pub size: usize,
    pub m_f: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub targets: Vec<VerifyTarget>,
    pub random_configs: usize,
    pub samples: usize,
    pub seed: u64,
    pub brute_force_cap: usize,
    pub enumeration_cap: usize,
    #[serde(skip)]
    pub rules: MappingRules,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            targets: vec![
                VerifyTarget { family: CodeFamily::Repetition, size: 3, m_f: 2 },
                VerifyTarget { family: CodeFamily::Repetition, size: 5, m_f: 4 },
                VerifyTarget { family: CodeFamily::Toric, size: 2, m_f: 2 },
            ],
            random_configs: 1000,
            samples: 200_000,
            seed: 1,
            brute_force_cap: entropy::DEFAULT_BRUTE_FORCE_CAP,
            enumeration_cap: entropy::DEFAULT_ENUMERATION_CAP,
            rules: MappingRules::Standard,
        }
    }
}

fn build_code(family: CodeFamily, size: usize) -> Result<CssCode, CodeError> {
    match family {
        CodeFamily::Repetition => repetition_code(size),
        CodeFamily::Toric => toric_code(size),
        CodeFamily::Custom => Err(CodeError::Malformed("custom codes have no size constructor".into())),
    }
}

fn caps_skip(e: &VerifyError) -> bool {
    matches!(
        e,
        VerifyError::Cap { .. }
            | VerifyError::Entropy(EntropyError::BruteForceCap { .. } | EntropyError::WidthCap { .. })
    )
}

fn record<T>(
    out: &mut Vec<CheckResult>,
    name: String,
    r: Result<T, VerifyError>,
    judge: impl FnOnce(&T) -> (bool, String),
) {
    match r {
        Ok(v) => {
            let (ok, detail) = judge(&v);
            out.push(CheckResult::new(name, ok, detail));
        }
        Err(e) if caps_skip(&e) => out.push(CheckResult::skipped(name, e)),
        Err(e) => out.push(CheckResult::new(name, false, e.to_string())),
    }
}

/// Runs every check on every target; oracle checks beyond their caps are skipped.
pub fn run_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for tg in &opts.targets {
        let tag = format!("{}-L{}-mf{}", tg.family, tg.size, tg.m_f);
        let code = match build_code(tg.family, tg.size) {
            Ok(c) => c,
            Err(e) => {
                out.push(CheckResult::new(format!("{tag}/code"), false, e.to_string()));
                continue;
            }
        };
        record(
            &mut out,
            format!("{tag}/correspondence"),
            foliation_correspondence(&code, tg.m_f, opts.random_configs, 0.15, opts.seed, opts.rules),
            |r| {
                let detail = match &r.first {
                    None => format!("{} single + {} random configurations agree", r.singles, r.random),
                    Some(m) => format!(
                        "{} mismatches; first at configuration {} (mechanisms {:?}): circuit {:?}, resource {:?}",
                        r.mismatches, m.configuration, m.mechanisms, m.circuit, m.resource
                    ),
                };
                (r.passed(), detail)
            },
        );
        record(&mut out, format!("{tag}/stabilizer-audit"), stabilizer_audit(&code, tg.m_f), |r| {
            let detail = if r.passed() {
                format!("{} operators vs {} generators", r.operators, r.generators)
            } else {
                format!("non-commuting {:?}; not +1 {:?}", r.non_commuting, r.not_plus_one)
            };
            (r.passed(), detail)
        });
        let noise = full_noise(&code, 0.1).expect("valid rate");
        record(
            &mut out,
            format!("{tag}/resource-entropy"),
            resource_entropy_match(&code, tg.m_f, noise, opts.brute_force_cap.min(16)),
            |r| {
                let diff = (r.h_m - r.h_d).abs();
                (diff <= 1e-10, format!("H(m)={:.12} H(d)={:.12} over {} mechanisms", r.h_m, r.h_d, r.mechanisms))
            },
        );
        if tg.m_f >= 2 {
            let rounds = tg.m_f - 1;
            let region = all_syndrome_bits(&code, rounds);
            let r = entropy_decomposition_check(&code, rounds, noise, &region, Frame::Random, opts.enumeration_cap)
                .map_err(VerifyError::from);
            record(&mut out, format!("{tag}/entropy-decomposition"), r, |r| {
                (r.residual.abs() <= 1e-10, format!("H(s)={:.10} H(d)={:.10} |s|={} |d|={} residual={:.2e}", r.h_s, r.h_d, r.n_s, r.n_d, r.residual))
            });
        }
        match model_for_layers(&code, tg.m_f, noise) {
            Ok(model) => {
                record(
                    &mut out,
                    format!("{tag}/sampler-vs-exact"),
                    sampled_vs_exact(&model, opts.samples, opts.seed, opts.brute_force_cap),
                    |r| (r.z_score.abs() <= 3.0, format!("sampled {:.6} +- {:.6}, exact {:.6}, z={:.2}", r.sampled, r.std_error, r.exact, r.z_score)),
                );
                record(
                    &mut out,
                    format!("{tag}/rank-oracle"),
                    rank_vs_brute_force(&code, model.rounds, opts.seed, opts.brute_force_cap),
                    |r| (r.max_error <= 1e-9, format!("{} regions, max |rank - brute force| = {:.2e}", r.regions, r.max_error)),
                );
            }
            Err(e) => out.push(CheckResult::new(format!("{tag}/model"), false, e.to_string())),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCheck {
    pub region: Vec<usize>,
    pub sampled: f64,
    pub std_error: f64,
    pub exact: f64,
    pub z_score: f64,
}

/// Plug-in + Miller-Madow entropy of the leading detectors against brute force.
pub fn sampled_vs_exact(
    model: &DetectorModel,
    samples: usize,
    seed: u64,
    cap: usize,
) -> Result<EstimatorCheck, VerifyError> {
    let mut region: Vec<usize> = Vec::new();
    for d in 0..model.n_detectors().min(8) {
        region.push(d);
        if model.incident_mechanisms(&region).len() > cap {
            region.pop();
            break;
        }
    }
    let region = if region.is_empty() { vec![0] } else { region };
    let dist = brute_force_distribution(model, &region, cap)?;
    let exact = shannon_bits(&dist);
    let batch = sample_batch(model, &region, samples, seed)?;
    let codes = batch.patterns(&(0..region.len()).collect::<Vec<_>>())?;
    let j = jackknife_entropy(&codes, region.len(), JACKKNIFE_CHUNKS, Correction::MillerMadow)?;
    let se = j.std_error();
    let z = if se > 0.0 { (j.full - exact) / se } else if j.full == exact { 0.0 } else { f64::INFINITY };
    Ok(EstimatorCheck { region, sampled: j.full, std_error: se, exact, z_score: z })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCheck {
    pub regions: usize,
    pub max_error: f64,
}

/// Rank entropies at p = 1/2 against brute force on random small regions.
pub fn rank_vs_brute_force(code: &CssCode, rounds: usize, seed: u64, cap: usize) -> Result<RankCheck, VerifyError> {
    let model = build_detector_model(code, rounds, full_noise(code, 0.5)?)?;
    let mut rng = stream_rng(seed, "verify-regions", 0);
    let nd = model.n_detectors();
    let mut regions = 0;
    let mut max_error: f64 = 0.0;
    let mut attempts = 0;
    while regions < 50 && attempts < 5000 {
        attempts += 1;
        let k = rng.gen_range(1..=nd.min(6));
        let mut region: Vec<usize> = rand::seq::index::sample(&mut rng, nd, k).into_vec();
        region.sort_unstable();
        if model.incident_mechanisms(&region).len() > cap {
            continue;
        }
        let rank = rank_entropy_half(&model, &region)?;
        let brute = exact_entropy(&model, &region, cap)?;
        max_error = max_error.max((rank - brute).abs());
        regions += 1;
    }
    if regions == 0 {
        return Err(EntropyError::BruteForceCap { mechanisms: cap + 1, cap }.into());
    }
    Ok(RankCheck { regions, max_error })
}
