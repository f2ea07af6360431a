//! Foliated resource state of a T-round syndrome-extraction circuit.
//!
//! Layers are indexed in half units `h = 0..=2*m_f`. Every layer holds a copy
//! of the code qubits. Z-check syndrome qubits sit at integer layers `1..=m_f`,
//! X-check syndrome qubits at half-integer layers `1/2..=m_f-1/2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::CssCode;
use crate::pauli::SparsePauli;
use crate::spacetime::{CircuitEvent, DetectorModel, Sector};

#[derive(Debug, Error, PartialEq)]
pub enum FoliationError {
    #[error("m_f must be >= 1, got {0}")]
    InvalidLayers(usize),
    #[error("event out of range: {0:?}")]
    EventOutOfRange(CircuitEvent),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Site {
    Code { qubit: usize, half_layer: usize },
    ZSyndrome { check: usize, half_layer: usize },
    XSyndrome { check: usize, half_layer: usize },
}

impl Site {
    pub fn half_layer(&self) -> usize {
        match *self {
            Site::Code { half_layer, .. }
            | Site::ZSyndrome { half_layer, .. }
            | Site::XSyndrome { half_layer, .. } => half_layer,
        }
    }
}

pub fn layer_label(half_layer: usize) -> String {
    if half_layer % 2 == 0 {
        format!("{}", half_layer / 2)
    } else {
        format!("{}/2", half_layer)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorCell {
    pub sector: Sector,
    pub check: usize,
    pub round: usize,
    pub support: Vec<usize>,
}

impl DetectorCell {
    pub fn operator(&self) -> SparsePauli {
        SparsePauli::xs(self.support.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LblStabilizer {
    /// Type of the boundary logical factors.
    pub sector: Sector,
    pub logical: usize,
    pub bottom: Vec<usize>,
    /// X-type bulk string.
    pub bulk: Vec<usize>,
    pub top: Vec<usize>,
}

impl LblStabilizer {
    pub fn operator(&self) -> SparsePauli {
        match self.sector {
            Sector::Z => SparsePauli::zs(self.bottom.iter().chain(&self.top).copied())
                .mul(&SparsePauli::xs(self.bulk.iter().copied())),
            Sector::X => {
                SparsePauli::xs(self.bottom.iter().chain(&self.bulk).chain(&self.top).copied())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceState {
    pub code: CssCode,
    pub m_f: usize,
    pub sites: Vec<Site>,
    pub cz_edges: Vec<(usize, usize)>,
    pub detector_cells: Vec<DetectorCell>,
    pub lbl_stabilizers: Vec<LblStabilizer>,
}

/// Error-mapping rule set. `IntegerLayerDataX` misplaces data X faults and exists for fault injection.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MappingRules {
    #[default]
    Standard,
    IntegerLayerDataX,
}

impl ResourceState {
    pub fn n_qubits(&self) -> usize {
        self.sites.len()
    }

    pub fn code_site(&self, qubit: usize, half_layer: usize) -> usize {
        half_layer * self.code.n_qubits + qubit
    }

    pub fn z_syndrome_site(&self, check: usize, layer: usize) -> usize {
        debug_assert!((1..=self.m_f).contains(&layer));
        self.code.n_qubits * (2 * self.m_f + 1) + (layer - 1) * self.code.n_z_checks() + check
    }

    /// X syndrome of round `r` sits at layer `r + 1/2`.
    pub fn x_syndrome_site(&self, check: usize, round: usize) -> usize {
        debug_assert!(round < self.m_f);
        self.code.n_qubits * (2 * self.m_f + 1)
            + self.m_f * self.code.n_z_checks()
            + round * self.code.n_x_checks()
            + check
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_qubits()];
        for &(a, b) in &self.cz_edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// All qubits except the code copy in the top layer.
    pub fn measured_sites(&self) -> Vec<usize> {
        let top = 2 * self.m_f;
        (0..self.n_qubits())
            .filter(|&s| !matches!(self.sites[s], Site::Code { half_layer, .. } if half_layer == top))
            .collect()
    }

    /// Layer-0 input stabilizers of the logical |+> state: Z checks, X checks, X logicals.
    pub fn input_stabilizers(&self) -> Vec<SparsePauli> {
        let c = &self.code;
        let at0 = |v: &crate::gf2::BitVec| v.ones().map(|q| self.code_site(q, 0)).collect::<Vec<_>>();
        let mut out: Vec<SparsePauli> = c.z_checks.rows().iter().map(|r| SparsePauli::zs(at0(r))).collect();
        out.extend(c.x_checks.rows().iter().map(|r| SparsePauli::xs(at0(r))));
        out.extend(c.x_logicals.iter().map(|r| SparsePauli::xs(at0(r))));
        out
    }

    /// Generators of the noiseless resource state (possibly overcomplete on layer 0).
    pub fn stabilizer_generators(&self) -> Vec<SparsePauli> {
        let adj = self.neighbours();
        let mut gens = Vec::new();
        for s in self.input_stabilizers() {
            // CZ conjugation: X_v picks up Z on every neighbour of v
            let extra = s.x_sites().flat_map(|v| adj[v].iter().copied()).collect::<Vec<_>>();
            gens.push(s.mul(&SparsePauli::zs(extra)));
        }
        for v in 0..self.n_qubits() {
            if self.sites[v].half_layer() == 0 {
                continue;
            }
            gens.push(SparsePauli::from_terms(
                std::iter::once((v, crate::pauli::Pauli::X))
                    .chain(adj[v].iter().map(|&u| (u, crate::pauli::Pauli::Z))),
            ));
        }
        gens
    }

    pub fn map_circuit_error(&self, event: &CircuitEvent) -> Result<Vec<usize>, FoliationError> {
        self.map_circuit_error_with(event, MappingRules::Standard)
    }

    #[doc(hidden)]
    pub fn map_circuit_error_with(
        &self,
        event: &CircuitEvent,
        rules: MappingRules,
    ) -> Result<Vec<usize>, FoliationError> {
        let n = self.code.n_qubits;
        let bad = || FoliationError::EventOutOfRange(*event);
        let site = match *event {
            CircuitEvent::DataX { qubit, after_round } => {
                if qubit >= n || after_round >= self.m_f {
                    return Err(bad());
                }
                let h = match rules {
                    MappingRules::Standard => 2 * after_round + 1,
                    MappingRules::IntegerLayerDataX => 2 * after_round + 2,
                };
                self.code_site(qubit, h)
            }
            CircuitEvent::DataZ { qubit, after_round } => {
                if qubit >= n || after_round + 1 >= self.m_f || self.code.n_x_checks() == 0 {
                    return Err(bad());
                }
                self.code_site(qubit, 2 * after_round + 2)
            }
            CircuitEvent::Readout { sector: Sector::Z, check, round } => {
                if check >= self.code.n_z_checks() || round == 0 || round >= self.m_f {
                    return Err(bad());
                }
                self.z_syndrome_site(check, round)
            }
            CircuitEvent::Readout { sector: Sector::X, check, round } => {
                if check >= self.code.n_x_checks() || round + 1 >= self.m_f {
                    return Err(bad());
                }
                self.x_syndrome_site(check, round)
            }
        };
        Ok(vec![site])
    }

    /// Z on the support of X logical `k` at half-integer layer `k_layer + 1/2`.
    pub fn layer_logical_error(&self, k: usize, layer: usize) -> SparsePauli {
        SparsePauli::zs(
            self.code.x_logicals[k]
                .ones()
                .map(|q| self.code_site(q, 2 * layer + 1)),
        )
    }

    pub fn graph_text(&self) -> String {
        let mut s = format!("qubits {}\n", self.n_qubits());
        for (i, site) in self.sites.iter().enumerate() {
            let (kind, idx) = match *site {
                Site::Code { qubit, .. } => ("code", qubit),
                Site::ZSyndrome { check, .. } => ("zsyn", check),
                Site::XSyndrome { check, .. } => ("xsyn", check),
            };
            s.push_str(&format!("v {i} {kind} {idx} {}\n", layer_label(site.half_layer())));
        }
        for &(a, b) in &self.cz_edges {
            s.push_str(&format!("e {a} {b}\n"));
        }
        s
    }

    pub fn stabilizers_text(&self) -> String {
        let mut s = String::new();
        for c in &self.detector_cells {
            let sec = match c.sector {
                Sector::Z => "z",
                Sector::X => "x",
            };
            s.push_str(&format!("cell {sec} {} {} {}\n", c.check, c.round, c.operator()));
        }
        for l in &self.lbl_stabilizers {
            let sec = match l.sector {
                Sector::Z => "z",
                Sector::X => "x",
            };
            s.push_str(&format!("lbl {sec} {} {}\n", l.logical, l.operator()));
        }
        s
    }
}

pub fn foliate(code: &CssCode, m_f: usize) -> Result<ResourceState, FoliationError> {
    if m_f < 1 {
        return Err(FoliationError::InvalidLayers(m_f));
    }
    let n = code.n_qubits;
    let nz = code.n_z_checks();
    let nx = code.n_x_checks();
    let mut sites = Vec::new();
    for h in 0..=2 * m_f {
        for q in 0..n {
            sites.push(Site::Code { qubit: q, half_layer: h });
        }
    }
    for t in 1..=m_f {
        for c in 0..nz {
            sites.push(Site::ZSyndrome { check: c, half_layer: 2 * t });
        }
    }
    for r in 0..m_f {
        for c in 0..nx {
            sites.push(Site::XSyndrome { check: c, half_layer: 2 * r + 1 });
        }
    }
    let mut rs = ResourceState {
        code: code.clone(),
        m_f,
        sites,
        cz_edges: Vec::new(),
        detector_cells: Vec::new(),
        lbl_stabilizers: Vec::new(),
    };
    let mut edges = Vec::new();
    for h in 0..2 * m_f {
        for q in 0..n {
            edges.push((rs.code_site(q, h), rs.code_site(q, h + 1)));
        }
    }
    for t in 1..=m_f {
        for (c, row) in code.z_checks.rows().iter().enumerate() {
            for q in row.ones() {
                edges.push((rs.code_site(q, 2 * t), rs.z_syndrome_site(c, t)));
            }
        }
    }
    for r in 0..m_f {
        for (c, row) in code.x_checks.rows().iter().enumerate() {
            for q in row.ones() {
                edges.push((rs.code_site(q, 2 * r + 1), rs.x_syndrome_site(c, r)));
            }
        }
    }
    edges.sort_unstable();
    rs.cz_edges = edges;
    rs.detector_cells = build_cells(&rs);
    rs.lbl_stabilizers = build_lbl(&rs);
    Ok(rs)
}

fn build_cells(rs: &ResourceState) -> Vec<DetectorCell> {
    let code = &rs.code;
    let mut cells = Vec::new();
    for t in 0..rs.m_f {
        for (c, row) in code.z_checks.rows().iter().enumerate() {
            let mut s: Vec<usize> = row.ones().map(|q| rs.code_site(q, 2 * t + 1)).collect();
            s.push(rs.z_syndrome_site(c, t + 1));
            if t >= 1 {
                s.push(rs.z_syndrome_site(c, t));
            }
            s.sort_unstable();
            cells.push(DetectorCell { sector: Sector::Z, check: c, round: t, support: s });
        }
    }
    for t in 0..rs.m_f {
        for (c, row) in code.x_checks.rows().iter().enumerate() {
            let mut s: Vec<usize> = row.ones().map(|q| rs.code_site(q, 2 * t)).collect();
            s.push(rs.x_syndrome_site(c, t));
            if t >= 1 {
                s.push(rs.x_syndrome_site(c, t - 1));
            }
            s.sort_unstable();
            cells.push(DetectorCell { sector: Sector::X, check: c, round: t, support: s });
        }
    }
    cells
}

fn build_lbl(rs: &ResourceState) -> Vec<LblStabilizer> {
    let code = &rs.code;
    let top = 2 * rs.m_f;
    let at = |v: &crate::gf2::BitVec, h: usize| -> Vec<usize> { v.ones().map(|q| rs.code_site(q, h)).collect() };
    let mut out = Vec::new();
    for (k, l) in code.z_logicals.iter().enumerate() {
        out.push(LblStabilizer {
            sector: Sector::Z,
            logical: k,
            bottom: at(l, 0),
            bulk: (0..rs.m_f).flat_map(|j| at(l, 2 * j + 1)).collect(),
            top: at(l, top),
        });
    }
    for (k, l) in code.x_logicals.iter().enumerate() {
        out.push(LblStabilizer {
            sector: Sector::X,
            logical: k,
            bottom: at(l, 0),
            bulk: (1..rs.m_f).flat_map(|j| at(l, 2 * j)).collect(),
            top: at(l, top),
        });
    }
    out
}

pub fn detector_cells(rs: &ResourceState) -> &[DetectorCell] {
    &rs.detector_cells
}

pub fn lbl_stabilizers(rs: &ResourceState) -> &[LblStabilizer] {
    &rs.lbl_stabilizers
}

/// Detector-cell index for each detector of a model built with `rounds = m_f - 1`.
pub fn cell_for_detector(rs: &ResourceState, model: &DetectorModel) -> Vec<usize> {
    model
        .detectors
        .iter()
        .map(|d| {
            rs.detector_cells
                .iter()
                .position(|c| c.sector == d.sector && c.check == d.check && c.round == d.round)
                .expect("detector without cell")
        })
        .collect()
}
