//! Phenomenological detector error model of a T-round syndrome-extraction circuit.
//!
//! Z-type checks are read out in rounds `1..=T+1`, round `T+1` being a perfect
//! terminal readout. X-type checks are read out in rounds `0..=T`, round `T`
//! perfect. Data X faults happen after round `t` for `t in 0..=T`; data Z faults
//! after X round `t` for `t in 0..T`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::CssCode;
use crate::gf2::{BitMatrix, BitVec};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("rounds must be >= 1, got {0}")]
    InvalidRounds(usize),
    #[error("{field}: probability out of [0, 0.5]: {value}")]
    InvalidProbability { field: &'static str, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("event out of range: {0}")]
    EventOutOfRange(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p_x: f64,
    pub p_z: f64,
    pub q: f64,
}

pub fn check_probability(field: &'static str, value: f64) -> Result<f64, ModelError> {
    if (0.0..=0.5).contains(&value) {
        Ok(value)
    } else {
        Err(ModelError::InvalidProbability { field, value })
    }
}

impl NoiseModel {
    pub fn new(p_x: f64, p_z: f64, q: f64) -> Result<Self, ModelError> {
        Ok(Self {
            p_x: check_probability("p_x", p_x)?,
            p_z: check_probability("p_z", p_z)?,
            q: check_probability("q", q)?,
        })
    }

    /// `p_x = q = p`, `p_z = 0`.
    pub fn bit_flip(p: f64) -> Result<Self, ModelError> {
        Self::new(p, 0.0, p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        Self::new(self.p_x, self.p_z, self.q).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    /// Z-type checks, sensitive to data X faults.
    Z,
    /// X-type checks, sensitive to data Z faults.
    X,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    DataX,
    DataZ,
    Readout,
}

impl MechanismKind {
    pub fn label(&self) -> &'static str {
        match self {
            MechanismKind::DataX => "data_x",
            MechanismKind::DataZ => "data_z",
            MechanismKind::Readout => "readout",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CircuitEvent {
    DataX { qubit: usize, after_round: usize },
    DataZ { qubit: usize, after_round: usize },
    Readout { sector: Sector, check: usize, round: usize },
}

impl CircuitEvent {
    pub fn kind(&self) -> MechanismKind {
        match self {
            CircuitEvent::DataX { .. } => MechanismKind::DataX,
            CircuitEvent::DataZ { .. } => MechanismKind::DataZ,
            CircuitEvent::Readout { .. } => MechanismKind::Readout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Detector {
    pub sector: Sector,
    pub check: usize,
    pub round: usize,
    pub coords: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub event: CircuitEvent,
    pub probability: f64,
    pub detectors: Vec<usize>,
    pub logicals: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub code: CssCode,
    pub rounds: usize,
    pub noise: NoiseModel,
    pub detectors: Vec<Detector>,
    pub mechanisms: Vec<Mechanism>,
    /// Rows are detectors, columns mechanisms.
    pub incidence: BitMatrix,
    /// Rows are protected logical bits, columns mechanisms.
    pub logical_action: BitMatrix,
    pub detector_mechanisms: Vec<Vec<usize>>,
    /// Space periods followed by the (open) time axis.
    pub space_periods: Vec<usize>,
}

/// Raw syndrome record; `z[r]` for Z rounds `1..=T+1` stored at `r-1`, `x[r]` for X rounds `0..=T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyndromeHistory {
    pub z: Vec<BitVec>,
    pub x: Vec<BitVec>,
}

impl SyndromeHistory {
    pub fn zeros(code: &CssCode, rounds: usize) -> Self {
        Self {
            z: vec![BitVec::zeros(code.n_z_checks()); rounds + 1],
            x: if code.n_x_checks() > 0 {
                vec![BitVec::zeros(code.n_x_checks()); rounds + 1]
            } else {
                vec![]
            },
        }
    }

    pub fn flat(&self) -> Vec<bool> {
        self.z.iter().chain(&self.x).flat_map(|v| v.to_bools()).collect()
    }
}

impl DetectorModel {
    pub fn n_detectors(&self) -> usize {
        self.detectors.len()
    }

    pub fn n_mechanisms(&self) -> usize {
        self.mechanisms.len()
    }

    pub fn n_logicals(&self) -> usize {
        self.logical_action.n_rows()
    }

    pub fn sectors(&self) -> Vec<Sector> {
        let mut s = vec![Sector::Z];
        if self.code.n_x_checks() > 0 {
            s.push(Sector::X);
        }
        s
    }

    pub fn n_checks(&self, sector: Sector) -> usize {
        match sector {
            Sector::Z => self.code.n_z_checks(),
            Sector::X => self.code.n_x_checks(),
        }
    }

    /// Detector rounds per sector: `0..=T`.
    pub fn detector_rounds(&self) -> usize {
        self.rounds + 1
    }

    pub fn detector_index(&self, sector: Sector, check: usize, round: usize) -> Option<usize> {
        let nz = self.code.n_z_checks();
        let n = self.n_checks(sector);
        if check >= n || round > self.rounds {
            return None;
        }
        let base = match sector {
            Sector::Z => 0,
            Sector::X => nz * (self.rounds + 1),
        };
        Some(base + round * n + check)
    }

    /// Mechanisms touching any detector in `region`, in increasing order.
    pub fn incident_mechanisms(&self, region: &[usize]) -> Vec<usize> {
        let mut v: Vec<usize> = region
            .iter()
            .flat_map(|&d| self.detector_mechanisms[d].iter().copied())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn detectors_of(&self, errors: &[bool]) -> BitVec {
        assert_eq!(errors.len(), self.n_mechanisms());
        let mut d = BitVec::zeros(self.n_detectors());
        for (m, _) in errors.iter().enumerate().filter(|(_, e)| **e) {
            for &i in &self.mechanisms[m].detectors {
                d.toggle(i);
            }
        }
        d
    }

    pub fn logicals_of(&self, errors: &[bool]) -> BitVec {
        let mut l = BitVec::zeros(self.n_logicals());
        for (m, _) in errors.iter().enumerate().filter(|(_, e)| **e) {
            for &i in &self.mechanisms[m].logicals {
                l.toggle(i);
            }
        }
        l
    }

    pub fn dem_text(&self) -> String {
        let mut s = String::new();
        for m in &self.mechanisms {
            s.push_str(&format!("{} {}", m.probability, m.event.kind().label()));
            for d in &m.detectors {
                s.push_str(&format!(" D{d}"));
            }
            for l in &m.logicals {
                s.push_str(&format!(" L{l}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn hash(&self) -> String {
        let mut buf = self.code.hash();
        buf.push_str(&format!("\nrounds {}\n", self.rounds));
        buf.push_str(&self.dem_text());
        crate::hash::sha256_hex(buf.as_bytes())
    }

    pub fn mechanism_index(&self, event: &CircuitEvent) -> Option<usize> {
        self.mechanisms.iter().position(|m| &m.event == event)
    }
}

pub fn build_detector_model(
    code: &CssCode,
    rounds: usize,
    noise: NoiseModel,
) -> Result<DetectorModel, ModelError> {
    if rounds < 1 {
        return Err(ModelError::InvalidRounds(rounds));
    }
    noise.validate()?;
    let t_max = rounds;
    let nz = code.n_z_checks();
    let nx = code.n_x_checks();
    let mut detectors = Vec::new();
    for (sector, n, coords) in [
        (Sector::Z, nz, &code.geometry.z_check_coords),
        (Sector::X, nx, &code.geometry.x_check_coords),
    ] {
        for t in 0..=t_max {
            for c in 0..n {
                let mut xyz = coords[c].clone();
                xyz.push(t as i64);
                detectors.push(Detector {
                    sector,
                    check: c,
                    round: t,
                    coords: xyz,
                });
            }
        }
    }
    let zdet = |c: usize, t: usize| t * nz + c;
    let xdet = |c: usize, t: usize| nz * (t_max + 1) + t * nx + c;
    let nzl = code.z_logicals.len();
    let zt = code.z_checks.transpose();
    let xt = code.x_checks.transpose();

    let mut mechanisms = Vec::new();
    for t in 0..=t_max {
        for q in 0..code.n_qubits {
            mechanisms.push(Mechanism {
                event: CircuitEvent::DataX { qubit: q, after_round: t },
                probability: noise.p_x,
                detectors: zt.row(q).ones().map(|c| zdet(c, t)).collect(),
                logicals: (0..nzl).filter(|&k| code.z_logicals[k].get(q)).collect(),
            });
        }
    }
    for r in 1..=t_max {
        for c in 0..nz {
            mechanisms.push(Mechanism {
                event: CircuitEvent::Readout { sector: Sector::Z, check: c, round: r },
                probability: noise.q,
                detectors: vec![zdet(c, r - 1), zdet(c, r)],
                logicals: vec![],
            });
        }
    }
    if nx > 0 {
        for t in 0..t_max {
            for q in 0..code.n_qubits {
                let mut d: Vec<usize> = xt.row(q).ones().map(|c| xdet(c, t + 1)).collect();
                d.sort_unstable();
                mechanisms.push(Mechanism {
                    event: CircuitEvent::DataZ { qubit: q, after_round: t },
                    probability: noise.p_z,
                    detectors: d,
                    logicals: (0..code.x_logicals.len())
                        .filter(|&k| code.x_logicals[k].get(q))
                        .map(|k| nzl + k)
                        .collect(),
                });
            }
        }
        for r in 0..t_max {
            for c in 0..nx {
                mechanisms.push(Mechanism {
                    event: CircuitEvent::Readout { sector: Sector::X, check: c, round: r },
                    probability: noise.q,
                    detectors: vec![xdet(c, r), xdet(c, r + 1)],
                    logicals: vec![],
                });
            }
        }
    }
    let n_det = detectors.len();
    let n_log = nzl + if nx > 0 { code.x_logicals.len() } else { 0 };
    let mut incidence = BitMatrix::zeros(n_det, mechanisms.len());
    let mut logical_action = BitMatrix::zeros(n_log, mechanisms.len());
    let mut detector_mechanisms = vec![Vec::new(); n_det];
    for (k, m) in mechanisms.iter().enumerate() {
        for &d in &m.detectors {
            incidence.set(d, k, true);
            detector_mechanisms[d].push(k);
        }
        for &l in &m.logicals {
            logical_action.set(l, k, true);
        }
    }
    Ok(DetectorModel {
        code: code.clone(),
        rounds,
        noise,
        detectors,
        mechanisms,
        incidence,
        logical_action,
        detector_mechanisms,
        space_periods: code.geometry.periods.clone(),
    })
}

/// Circuit-level simulation of the syndrome record under a fault configuration
/// given in the model's mechanism order. Independent of the incidence matrix.
pub fn simulate_syndromes(model: &DetectorModel, errors: &[bool]) -> SyndromeHistory {
    assert_eq!(errors.len(), model.n_mechanisms());
    let code = &model.code;
    let t_max = model.rounds;
    let n = code.n_qubits;
    let mut hist = SyndromeHistory::zeros(code, t_max);
    let on = |ev: &CircuitEvent| {
        model
            .mechanisms
            .iter()
            .zip(errors)
            .any(|(m, &e)| e && &m.event == ev)
    };

    let mut frame = BitVec::zeros(n);
    for r in 1..=t_max + 1 {
        for q in 0..n {
            if on(&CircuitEvent::DataX { qubit: q, after_round: r - 1 }) {
                frame.toggle(q);
            }
        }
        let mut s = code.z_checks.mul_vec(&frame);
        if r <= t_max {
            for c in 0..code.n_z_checks() {
                if on(&CircuitEvent::Readout { sector: Sector::Z, check: c, round: r }) {
                    s.toggle(c);
                }
            }
        }
        hist.z[r - 1] = s;
    }
    if code.n_x_checks() > 0 {
        let mut frame = BitVec::zeros(n);
        for r in 0..=t_max {
            if r >= 1 {
                for q in 0..n {
                    if on(&CircuitEvent::DataZ { qubit: q, after_round: r - 1 }) {
                        frame.toggle(q);
                    }
                }
            }
            let mut s = code.x_checks.mul_vec(&frame);
            if r < t_max {
                for c in 0..code.n_x_checks() {
                    if on(&CircuitEvent::Readout { sector: Sector::X, check: c, round: r }) {
                        s.toggle(c);
                    }
                }
            }
            hist.x[r] = s;
        }
    }
    hist
}

pub fn syndromes_to_detectors(
    model: &DetectorModel,
    hist: &SyndromeHistory,
) -> Result<BitVec, ModelError> {
    let t_max = model.rounds;
    let nz = model.code.n_z_checks();
    let nx = model.code.n_x_checks();
    let x_rounds = if nx > 0 { t_max + 1 } else { 0 };
    if hist.z.len() != t_max + 1 || hist.x.len() != x_rounds {
        return Err(ModelError::Shape(format!(
            "expected {} Z rounds and {} X rounds, got {} and {}",
            t_max + 1,
            x_rounds,
            hist.z.len(),
            hist.x.len()
        )));
    }
    if hist.z.iter().any(|s| s.len() != nz) || hist.x.iter().any(|s| s.len() != nx) {
        return Err(ModelError::Shape("syndrome width does not match check count".into()));
    }
    let mut d = BitVec::zeros(model.n_detectors());
    for sector in model.sectors() {
        let rows = match sector {
            Sector::Z => &hist.z,
            Sector::X => &hist.x,
        };
        for t in 0..=t_max {
            for c in 0..model.n_checks(sector) {
                let mut v = rows[t].get(c);
                if t >= 1 {
                    v ^= rows[t - 1].get(c);
                }
                if v {
                    d.set(model.detector_index(sector, c, t).unwrap(), true);
                }
            }
        }
    }
    Ok(d)
}

/// Probability of an odd number of incident mechanisms firing.
pub fn detector_flip_probability(model: &DetectorModel, detector: usize) -> f64 {
    let prod: f64 = model.detector_mechanisms[detector]
        .iter()
        .map(|&k| 1.0 - 2.0 * model.mechanisms[k].probability)
        .product();
    (1.0 - prod) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{repetition_code, toric_code};
    use proptest::prelude::*;

    fn rep(l: usize, t: usize, p: f64) -> DetectorModel {
        build_detector_model(&repetition_code(l).unwrap(), t, NoiseModel::bit_flip(p).unwrap())
            .unwrap()
    }

    fn single(model: &DetectorModel, k: usize) -> Vec<bool> {
        let mut e = vec![false; model.n_mechanisms()];
        e[k] = true;
        e
    }

    #[test]
    fn bulk_data_error_flips_two_neighbouring_checks() {
        let m = rep(3, 2, 0.1);
        let k = m
            .mechanism_index(&CircuitEvent::DataX { qubit: 1, after_round: 1 })
            .unwrap();
        let d = syndromes_to_detectors(&m, &simulate_syndromes(&m, &single(&m, k))).unwrap();
        let fired: Vec<_> = d.ones().map(|i| (m.detectors[i].check, m.detectors[i].round)).collect();
        assert_eq!(fired, vec![(0, 1), (1, 1)]);
        assert_eq!(m.mechanisms[k].detectors, d.ones().collect::<Vec<_>>());
    }

    #[test]
    fn readout_flips_consecutive_detectors() {
        let m = rep(3, 2, 0.1);
        let k = m
            .mechanism_index(&CircuitEvent::Readout { sector: Sector::Z, check: 1, round: 1 })
            .unwrap();
        let d = syndromes_to_detectors(&m, &simulate_syndromes(&m, &single(&m, k))).unwrap();
        let fired: Vec<_> = d.ones().map(|i| (m.detectors[i].check, m.detectors[i].round)).collect();
        assert_eq!(fired, vec![(1, 0), (1, 1)]);
    }

    #[test]
    fn incidence_matches_simulation_for_every_mechanism() {
        for m in [
            rep(4, 3, 0.1),
            build_detector_model(&toric_code(3).unwrap(), 2, NoiseModel::new(0.1, 0.1, 0.1).unwrap())
                .unwrap(),
        ] {
            for k in 0..m.n_mechanisms() {
                let d = syndromes_to_detectors(&m, &simulate_syndromes(&m, &single(&m, k))).unwrap();
                assert_eq!(d.ones().collect::<Vec<_>>(), m.mechanisms[k].detectors, "mechanism {k}");
                assert!(m.mechanisms[k].detectors.len() <= 2);
            }
        }
    }

    #[test]
    fn syndrome_flip_telescopes() {
        let m = rep(5, 4, 0.0);
        let mut h = SyndromeHistory::zeros(&m.code, 4);
        assert!(syndromes_to_detectors(&m, &h).unwrap().is_zero());
        h.z[2].toggle(3);
        let d = syndromes_to_detectors(&m, &h).unwrap();
        assert_eq!(
            d.ones().map(|i| m.detectors[i].round).collect::<Vec<_>>(),
            vec![2, 3]
        );
        h.z[3].toggle(3);
        let d = syndromes_to_detectors(&m, &h).unwrap();
        assert_eq!(
            d.ones().map(|i| m.detectors[i].round).collect::<Vec<_>>(),
            vec![2, 4]
        );
        h.z.pop();
        assert!(syndromes_to_detectors(&m, &h).is_err());
    }

    #[test]
    fn flip_probability_closed_form() {
        let m = rep(6, 4, 0.1);
        let d = m.detector_index(Sector::Z, 2, 2).unwrap();
        assert_eq!(m.detector_mechanisms[d].len(), 4);
        assert!((detector_flip_probability(&m, d) - 0.2952).abs() < 1e-12);
        // parity enumeration over the 16 patterns
        let mut odd = 0.0;
        for pat in 0u32..16 {
            let w = pat.count_ones() as i32;
            if w % 2 == 1 {
                odd += 0.1f64.powi(w) * 0.9f64.powi(4 - w);
            }
        }
        assert!((odd - 0.2952).abs() < 1e-12);
        let m0 = rep(6, 4, 0.0);
        assert_eq!(detector_flip_probability(&m0, d), 0.0);
        let mh = rep(6, 4, 0.5);
        assert!((detector_flip_probability(&mh, d) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn repetition_graph_is_square_lattice() {
        let m = rep(6, 5, 0.1);
        assert_eq!(m.n_detectors(), 6 * 6);
        for (i, det) in m.detectors.iter().enumerate() {
            if det.round > 0 && det.round < 5 {
                assert_eq!(m.detector_mechanisms[i].len(), 4);
            }
        }
    }

    #[test]
    fn spatial_cycle_is_undetectable_logical() {
        let m = rep(5, 3, 0.1);
        let mut e = vec![false; m.n_mechanisms()];
        for q in 0..5 {
            e[m.mechanism_index(&CircuitEvent::DataX { qubit: q, after_round: 2 }).unwrap()] = true;
        }
        assert!(m.detectors_of(&e).is_zero());
        assert!(m.logicals_of(&e).get(0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = repetition_code(3).unwrap();
        assert_eq!(
            build_detector_model(&c, 0, NoiseModel::bit_flip(0.1).unwrap()),
            Err(ModelError::InvalidRounds(0))
        );
        assert!(matches!(
            NoiseModel::bit_flip(0.7),
            Err(ModelError::InvalidProbability { .. })
        ));
    }

    #[test]
    fn dem_text_is_stable() {
        let m = rep(3, 1, 0.1);
        let text = m.dem_text();
        assert_eq!(text.lines().count(), m.n_mechanisms());
        assert!(text.starts_with("0.1 data_x D0 D2 L0\n"));
        assert_eq!(m.hash(), rep(3, 1, 0.1).hash());
        assert_ne!(m.hash(), rep(3, 1, 0.2).hash());
    }

    proptest! {
        #[test]
        fn detectors_are_linear(bits in proptest::collection::vec(any::<(bool, bool)>(), 4 * 4 + 4 * 3)) {
            let m = rep(4, 3, 0.1);
            let a: Vec<bool> = bits.iter().map(|b| b.0).collect();
            let b: Vec<bool> = bits.iter().map(|b| b.1).collect();
            let ab: Vec<bool> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
            let mut lhs = m.detectors_of(&a);
            lhs.xor_assign(&m.detectors_of(&b));
            prop_assert_eq!(lhs, m.detectors_of(&ab));
            let sim = syndromes_to_detectors(&m, &simulate_syndromes(&m, &ab)).unwrap();
            prop_assert_eq!(sim, m.detectors_of(&ab));
        }
    }
}
