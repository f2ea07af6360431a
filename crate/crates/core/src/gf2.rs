//! Dense linear algebra over GF(2).

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitVec {
    words: Vec<u64>,
    len: usize,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_indices(len: usize, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(len);
        for i in idx {
            v.toggle(i);
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_indices(
            bits.len(),
            bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i),
        )
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i >> 6] >> (i & 63) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, b: bool) {
        debug_assert!(i < self.len);
        let m = 1u64 << (i & 63);
        if b {
            self.words[i >> 6] |= m;
        } else {
            self.words[i >> 6] &= !m;
        }
    }

    #[inline]
    pub fn toggle(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn xor_assign(&mut self, other: &BitVec) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= *b;
        }
    }

    pub fn and_assign(&mut self, other: &BitVec) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= *b;
        }
    }

    pub fn dot(&self, other: &BitVec) -> bool {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum::<u32>()
            & 1
            == 1
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let t = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(k * 64 + t)
                }
            })
        })
    }

    pub fn first_one(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(k, w)| k * 64 + w.trailing_zeros() as usize)
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitMatrix {
    rows: Vec<BitVec>,
    cols: usize,
}

/// Reduced row echelon form with pivot column per nonzero row.
#[derive(Clone, Debug)]
pub struct Rref {
    pub matrix: BitMatrix,
    pub pivots: Vec<usize>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows: vec![BitVec::zeros(cols); rows],
            cols,
        }
    }

    pub fn from_rows(cols: usize, rows: Vec<BitVec>) -> Self {
        assert!(rows.iter().all(|r| r.len() == cols), "row length mismatch");
        Self { rows, cols }
    }

    pub fn from_supports(cols: usize, supports: &[Vec<usize>]) -> Self {
        Self::from_rows(
            cols,
            supports
                .iter()
                .map(|s| BitVec::from_indices(cols, s.iter().copied()))
                .collect(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> &[BitVec] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &BitVec {
        &self.rows[i]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut BitVec {
        &mut self.rows[i]
    }

    pub fn push_row(&mut self, r: BitVec) {
        assert_eq!(r.len(), self.cols);
        self.rows.push(r);
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].get(c)
    }

    pub fn set(&mut self, r: usize, c: usize, b: bool) {
        self.rows[r].set(c, b)
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zeros(self.cols, self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            for j in r.ones() {
                t.rows[j].set(i, true);
            }
        }
        t
    }

    /// `self * v` where `v` has length `n_cols`.
    pub fn mul_vec(&self, v: &BitVec) -> BitVec {
        BitVec::from_bools(&self.rows.iter().map(|r| r.dot(v)).collect::<Vec<_>>())
    }

    /// `self * other^T`.
    pub fn mul_transpose(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.cols, other.cols);
        let rows = self
            .rows
            .iter()
            .map(|a| {
                BitVec::from_bools(&other.rows.iter().map(|b| a.dot(b)).collect::<Vec<_>>())
            })
            .collect();
        BitMatrix::from_rows(other.rows.len(), rows)
    }

    pub fn rref(&self) -> Rref {
        let mut m = self.rows.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == m.len() {
                break;
            }
            let Some(p) = (r..m.len()).find(|&i| m[i].get(c)) else {
                continue;
            };
            m.swap(r, p);
            let pivot = m[r].clone();
            for (i, row) in m.iter_mut().enumerate() {
                if i != r && row.get(c) {
                    row.xor_assign(&pivot);
                }
            }
            pivots.push(c);
            r += 1;
        }
        m.truncate(r);
        Rref {
            matrix: BitMatrix::from_rows(self.cols, m),
            pivots,
        }
    }

    pub fn rank(&self) -> usize {
        let mut basis: Vec<BitVec> = Vec::new();
        let mut lead: Vec<usize> = Vec::new();
        for row in &self.rows {
            let mut v = row.clone();
            for (b, &l) in basis.iter().zip(&lead) {
                if v.get(l) {
                    v.xor_assign(b);
                }
            }
            if let Some(l) = v.first_one() {
                basis.push(v);
                lead.push(l);
            }
        }
        basis.len()
    }

    /// Basis of `{x : self * x = 0}`.
    pub fn nullspace(&self) -> Vec<BitVec> {
        let Rref { matrix, pivots } = self.rref();
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        (0..self.cols)
            .filter(|&f| !is_pivot[f])
            .map(|f| {
                let mut v = BitVec::zeros(self.cols);
                v.set(f, true);
                for (row, &p) in matrix.rows.iter().zip(&pivots) {
                    if row.get(f) {
                        v.set(p, true);
                    }
                }
                v
            })
            .collect()
    }

    pub fn in_row_space(&self, v: &BitVec) -> bool {
        let Rref { matrix, pivots } = self.rref();
        let mut w = v.clone();
        for (row, &p) in matrix.rows.iter().zip(&pivots) {
            if w.get(p) {
                w.xor_assign(row);
            }
        }
        w.is_zero()
    }

    pub fn select_columns(&self, cols: &[usize]) -> BitMatrix {
        let rows = self
            .rows
            .iter()
            .map(|r| BitVec::from_bools(&cols.iter().map(|&c| r.get(c)).collect::<Vec<_>>()))
            .collect();
        BitMatrix::from_rows(cols.len(), rows)
    }
}
