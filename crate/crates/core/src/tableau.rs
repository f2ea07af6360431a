//! CHP stabilizer tableau, used to verify the foliated resource state.

use rand::Rng;
use thiserror::Error;

use crate::foliation::{DetectorCell, ResourceState, Site};
use crate::gf2::{BitMatrix, BitVec};
use crate::pauli::{Pauli, SparsePauli};

#[derive(Debug, Error, PartialEq)]
pub enum TableauError {
    #[error("cell {cell} reads unmeasured qubit {qubit}")]
    UnmeasuredQubit { cell: usize, qubit: usize },
    #[error("qubit {0} out of range")]
    OutOfRange(usize),
}

/// Rows `0..n` are destabilizers, `n..2n` stabilizers, `2n` is scratch.
#[derive(Clone, Debug)]
pub struct Tableau {
    n: usize,
    words: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    r: Vec<bool>,
}

/// Phase exponent (mod 4) picked up when multiplying single-qubit Paulis.
fn g(x1: bool, z1: bool, x2: bool, z2: bool) -> i32 {
    match (x1, z1) {
        (false, false) => 0,
        (true, true) => z2 as i32 - x2 as i32,
        (true, false) => z2 as i32 * (2 * x2 as i32 - 1),
        (false, true) => x2 as i32 * (1 - 2 * z2 as i32),
    }
}

impl Tableau {
    /// The all-|0> state.
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        let rows = 2 * n + 1;
        let mut t = Self {
            n,
            words,
            x: vec![0; rows * words],
            z: vec![0; rows * words],
            r: vec![false; rows],
        };
        for i in 0..n {
            t.x[i * words + i / 64] |= 1 << (i % 64);
            t.z[(n + i) * words + i / 64] |= 1 << (i % 64);
        }
        t
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    #[inline]
    fn xb(&self, row: usize, q: usize) -> bool {
        self.x[row * self.words + q / 64] >> (q % 64) & 1 == 1
    }

    #[inline]
    fn zb(&self, row: usize, q: usize) -> bool {
        self.z[row * self.words + q / 64] >> (q % 64) & 1 == 1
    }

    pub fn h(&mut self, a: usize) {
        let (w, m) = (a / 64, 1u64 << (a % 64));
        for row in 0..2 * self.n {
            let i = row * self.words + w;
            let (xa, za) = (self.x[i] & m != 0, self.z[i] & m != 0);
            self.r[row] ^= xa & za;
            if xa != za {
                self.x[i] ^= m;
                self.z[i] ^= m;
            }
        }
    }

    pub fn s(&mut self, a: usize) {
        let (w, m) = (a / 64, 1u64 << (a % 64));
        for row in 0..2 * self.n {
            let i = row * self.words + w;
            let (xa, za) = (self.x[i] & m != 0, self.z[i] & m != 0);
            self.r[row] ^= xa & za;
            if xa {
                self.z[i] ^= m;
            }
        }
    }

    pub fn cnot(&mut self, a: usize, b: usize) {
        for row in 0..2 * self.n {
            let (xa, za, xb, zb) = (self.xb(row, a), self.zb(row, a), self.xb(row, b), self.zb(row, b));
            self.r[row] ^= xa & zb & !(xb ^ za);
            if xa {
                self.x[row * self.words + b / 64] ^= 1 << (b % 64);
            }
            if zb {
                self.z[row * self.words + a / 64] ^= 1 << (a % 64);
            }
        }
    }

    pub fn cz(&mut self, a: usize, b: usize) {
        self.h(b);
        self.cnot(a, b);
        self.h(b);
    }

    pub fn x_gate(&mut self, a: usize) {
        for row in 0..2 * self.n {
            self.r[row] ^= self.zb(row, a);
        }
    }

    pub fn z_gate(&mut self, a: usize) {
        for row in 0..2 * self.n {
            self.r[row] ^= self.xb(row, a);
        }
    }

    fn rowsum(&mut self, h: usize, i: usize) {
        let mut phase = 2 * self.r[h] as i32 + 2 * self.r[i] as i32;
        for q in 0..self.n {
            phase += g(self.xb(i, q), self.zb(i, q), self.xb(h, q), self.zb(h, q));
        }
        self.r[h] = phase.rem_euclid(4) == 2;
        let (hw, iw) = (h * self.words, i * self.words);
        for k in 0..self.words {
            self.x[hw + k] ^= self.x[iw + k];
            self.z[hw + k] ^= self.z[iw + k];
        }
    }

    fn clear_row(&mut self, row: usize) {
        let w = row * self.words;
        self.x[w..w + self.words].fill(0);
        self.z[w..w + self.words].fill(0);
        self.r[row] = false;
    }

    fn copy_row(&mut self, dst: usize, src: usize) {
        let (d, s, w) = (dst * self.words, src * self.words, self.words);
        self.x.copy_within(s..s + w, d);
        self.z.copy_within(s..s + w, d);
        self.r[dst] = self.r[src];
    }

    /// Outcome bit: `false` for +1, `true` for -1.
    pub fn measure_z<R: Rng + ?Sized>(&mut self, a: usize, rng: &mut R) -> bool {
        let n = self.n;
        if let Some(p) = (n..2 * n).find(|&row| self.xb(row, a)) {
            for row in 0..2 * n {
                if row != p && self.xb(row, a) {
                    self.rowsum(row, p);
                }
            }
            self.copy_row(p - n, p);
            self.clear_row(p);
            self.z[p * self.words + a / 64] |= 1 << (a % 64);
            let out = rng.gen::<bool>();
            self.r[p] = out;
            out
        } else {
            let scratch = 2 * n;
            self.clear_row(scratch);
            for i in 0..n {
                if self.xb(i, a) {
                    self.rowsum(scratch, i + n);
                }
            }
            self.r[scratch]
        }
    }

    pub fn measure_x<R: Rng + ?Sized>(&mut self, a: usize, rng: &mut R) -> bool {
        self.h(a);
        let out = self.measure_z(a, rng);
        self.h(a);
        out
    }

    fn anticommutes_row(&self, row: usize, p: &SparsePauli) -> bool {
        let mut odd = false;
        for &(q, op) in p.terms() {
            let (x, z) = (self.xb(row, q), self.zb(row, q));
            let (px, pz) = match op {
                Pauli::X => (true, false),
                Pauli::Y => (true, true),
                Pauli::Z => (false, true),
            };
            odd ^= (x & pz) ^ (z & px);
        }
        odd
    }

    /// `Some(+1)` or `Some(-1)` when `p` is (up to sign) a stabilizer, `None` when its expectation is 0.
    pub fn expectation(&mut self, p: &SparsePauli) -> Option<i8> {
        let n = self.n;
        if (n..2 * n).any(|row| self.anticommutes_row(row, p)) {
            return None;
        }
        let scratch = 2 * n;
        self.clear_row(scratch);
        for i in 0..n {
            if self.anticommutes_row(i, p) {
                self.rowsum(scratch, i + n);
            }
        }
        let target = SparsePauli::from_terms(p.terms().iter().copied());
        for &(q, op) in target.terms() {
            let want = match op {
                Pauli::X => (true, false),
                Pauli::Y => (true, true),
                Pauli::Z => (false, true),
            };
            debug_assert_eq!((self.xb(scratch, q), self.zb(scratch, q)), want);
        }
        Some(if self.r[scratch] { -1 } else { 1 })
    }

    /// Signed stabilizer generators, for inspection.
    pub fn stabilizers(&self) -> Vec<(bool, SparsePauli)> {
        (self.n..2 * self.n)
            .map(|row| {
                let terms = (0..self.n).filter_map(|q| {
                    match (self.xb(row, q), self.zb(row, q)) {
                        (true, false) => Some((q, Pauli::X)),
                        (true, true) => Some((q, Pauli::Y)),
                        (false, true) => Some((q, Pauli::Z)),
                        _ => None,
                    }
                });
                (self.r[row], SparsePauli::from_terms(terms))
            })
            .collect()
    }

    /// Graph state on `n` vertices.
    pub fn graph_state(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut t = Self::new(n);
        for q in 0..n {
            t.h(q);
        }
        for &(a, b) in edges {
            t.cz(a, b);
        }
        t
    }
}

/// Resource state with the layer-0 code copy in logical |+>.
pub fn init_graph_state(rs: &ResourceState) -> Tableau {
    let mut t = Tableau::new(rs.n_qubits());
    let code = &rs.code;
    let mut xgen = code.x_checks.rows().to_vec();
    xgen.extend(code.x_logicals.iter().cloned());
    let rref = BitMatrix::from_rows(code.n_qubits, xgen).rref();
    for (row, &p) in rref.matrix.rows().iter().zip(&rref.pivots) {
        let pivot = rs.code_site(p, 0);
        t.h(pivot);
        for q in row.ones().filter(|&q| q != p) {
            t.cnot(pivot, rs.code_site(q, 0));
        }
    }
    for (v, site) in rs.sites.iter().enumerate() {
        if site.half_layer() != 0 {
            t.h(v);
        }
    }
    for &(a, b) in &rs.cz_edges {
        t.cz(a, b);
    }
    t
}

pub fn apply_z(t: &mut Tableau, sites: &[usize]) {
    for &s in sites {
        t.z_gate(s);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcomes {
    pub measured: Vec<bool>,
    pub bits: BitVec,
}

/// X-basis measurement of every qubit except the top code layer.
pub fn measure_x_all<R: Rng + ?Sized>(t: &mut Tableau, rs: &ResourceState, rng: &mut R) -> Outcomes {
    let n = rs.n_qubits();
    let mut measured = vec![false; n];
    let mut bits = BitVec::zeros(n);
    for s in rs.measured_sites() {
        measured[s] = true;
        bits.set(s, t.measure_x(s, rng));
    }
    Outcomes { measured, bits }
}

pub fn evaluate_detectors(out: &Outcomes, cells: &[DetectorCell]) -> Result<BitVec, TableauError> {
    let mut d = BitVec::zeros(cells.len());
    for (i, c) in cells.iter().enumerate() {
        let mut v = false;
        for &q in &c.support {
            if q >= out.measured.len() {
                return Err(TableauError::OutOfRange(q));
            }
            if !out.measured[q] {
                return Err(TableauError::UnmeasuredQubit { cell: i, qubit: q });
            }
            v ^= out.bits.get(q);
        }
        d.set(i, v);
    }
    Ok(d)
}

/// Top-layer code qubit helper for tests and reports.
pub fn is_top_code(rs: &ResourceState, site: usize) -> bool {
    matches!(rs.sites[site], Site::Code { half_layer, .. } if half_layer == 2 * rs.m_f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{repetition_code, toric_code};
    use crate::foliation::foliate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_qubit_plus() {
        let mut t = Tableau::new(1);
        t.h(0);
        assert_eq!(t.expectation(&SparsePauli::xs([0])), Some(1));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert!(!t.measure_x(0, &mut rng));
        }
    }

    #[test]
    fn two_qubit_graph_state() {
        let mut t = Tableau::graph_state(2, &[(0, 1)]);
        let xz = SparsePauli::from_terms([(0, Pauli::X), (1, Pauli::Z)]);
        let zx = SparsePauli::from_terms([(0, Pauli::Z), (1, Pauli::X)]);
        assert_eq!(t.expectation(&xz), Some(1));
        assert_eq!(t.expectation(&zx), Some(1));
        assert_eq!(t.expectation(&SparsePauli::xs([0])), None);
        let mut ones = 0;
        for seed in 0..200 {
            let mut t2 = t.clone();
            ones += t2.measure_x(0, &mut ChaCha8Rng::seed_from_u64(seed)) as u32;
        }
        assert!((60..140).contains(&ones));
    }

    #[test]
    fn y_phase_tracking() {
        let mut t = Tableau::new(1);
        t.h(0);
        t.s(0);
        let y = SparsePauli::from_terms([(0, Pauli::Y)]);
        assert_eq!(t.expectation(&y), Some(1));
        t.z_gate(0);
        assert_eq!(t.expectation(&y), Some(-1));
    }

    #[test]
    fn z_twice_is_identity() {
        let rs = foliate(&repetition_code(3).unwrap(), 2).unwrap();
        let t0 = init_graph_state(&rs);
        let mut t = t0.clone();
        apply_z(&mut t, &[4, 4]);
        assert_eq!(t.stabilizers(), t0.stabilizers());
    }

    #[test]
    fn noiseless_cells_and_lbl_are_plus_one() {
        for (code, m_f) in [(repetition_code(3).unwrap(), 1), (toric_code(2).unwrap(), 2)] {
            let rs = foliate(&code, m_f).unwrap();
            let mut t = init_graph_state(&rs);
            for c in &rs.detector_cells {
                assert_eq!(t.expectation(&c.operator()), Some(1));
            }
            for l in &rs.lbl_stabilizers {
                assert_eq!(t.expectation(&l.operator()), Some(1));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let out = measure_x_all(&mut t, &rs, &mut rng);
            assert!(evaluate_detectors(&out, &rs.detector_cells).unwrap().is_zero());
        }
    }

    #[test]
    fn unmeasured_support_is_rejected() {
        let rs = foliate(&repetition_code(3).unwrap(), 1).unwrap();
        let mut t = init_graph_state(&rs);
        let out = measure_x_all(&mut t, &rs, &mut ChaCha8Rng::seed_from_u64(0));
        let top = rs.code_site(0, 2);
        assert!(is_top_code(&rs, top));
        let bad = DetectorCell { sector: crate::spacetime::Sector::Z, check: 0, round: 0, support: vec![top] };
        assert_eq!(
            evaluate_detectors(&out, &[bad]),
            Err(TableauError::UnmeasuredQubit { cell: 0, qubit: top })
        );
        let zero = Outcomes { measured: out.measured.clone(), bits: BitVec::zeros(rs.n_qubits()) };
        assert!(evaluate_detectors(&zero, &rs.detector_cells).unwrap().is_zero());
    }

    #[test]
    fn teleportation_byproducts() {
        // chain 0 - 1 - 2 at layers 0, 1/2, 1
        for (prep_plus, frame_op) in [(true, Pauli::X), (false, Pauli::Z)] {
            for inject in [false, true] {
                for seed in 0..16 {
                    let mut t = Tableau::new(3);
                    if prep_plus {
                        t.h(0);
                    }
                    t.h(1);
                    t.h(2);
                    t.cz(0, 1);
                    t.cz(1, 2);
                    if inject {
                        t.z_gate(0);
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let s0 = t.measure_x(0, &mut rng);
                    let s1 = t.measure_x(1, &mut rng);
                    let e = t.expectation(&SparsePauli::from_terms([(2, frame_op)])).unwrap();
                    // byproduct Z^{s0} X^{s1}: Z-frame toggled by s0, X-frame by s1
                    let flip = if frame_op == Pauli::X { s0 } else { s1 };
                    let corrected = if flip { -e } else { e };
                    let expect_flip = inject && frame_op == Pauli::X;
                    assert_eq!(corrected, if expect_flip { -1 } else { 1 });
                }
            }
        }
    }
}
