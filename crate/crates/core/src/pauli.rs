//! Sparse Pauli operators with canonical site ordering.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Option<Pauli> {
        match (x, z) {
            (true, false) => Some(Pauli::X),
            (true, true) => Some(Pauli::Y),
            (false, true) => Some(Pauli::Z),
            (false, false) => None,
        }
    }

    pub fn anticommutes(self, other: Pauli) -> bool {
        self != other
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Hermitian Pauli string up to sign, sorted by site with no repeats.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SparsePauli {
    terms: Vec<(usize, Pauli)>,
}

impl SparsePauli {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Products on repeated sites are merged (phases dropped).
    pub fn from_terms(terms: impl IntoIterator<Item = (usize, Pauli)>) -> Self {
        let mut t: Vec<(usize, Pauli)> = terms.into_iter().collect();
        t.sort_by_key(|&(s, _)| s);
        let mut out: Vec<(usize, Pauli)> = Vec::with_capacity(t.len());
        let mut acc: Option<(usize, bool, bool)> = None;
        for (s, p) in t {
            let (x, z) = p.bits();
            match acc {
                Some((s0, ax, az)) if s0 == s => acc = Some((s, ax ^ x, az ^ z)),
                _ => {
                    if let Some((s0, ax, az)) = acc {
                        out.extend(Pauli::from_bits(ax, az).map(|p| (s0, p)));
                    }
                    acc = Some((s, x, z));
                }
            }
        }
        if let Some((s0, ax, az)) = acc {
            out.extend(Pauli::from_bits(ax, az).map(|p| (s0, p)));
        }
        Self { terms: out }
    }

    pub fn xs(sites: impl IntoIterator<Item = usize>) -> Self {
        Self::from_terms(sites.into_iter().map(|s| (s, Pauli::X)))
    }

    pub fn zs(sites: impl IntoIterator<Item = usize>) -> Self {
        Self::from_terms(sites.into_iter().map(|s| (s, Pauli::Z)))
    }

    pub fn terms(&self) -> &[(usize, Pauli)] {
        &self.terms
    }

    pub fn weight(&self) -> usize {
        self.terms.len()
    }

    pub fn get(&self, site: usize) -> Option<Pauli> {
        self.terms
            .binary_search_by_key(&site, |&(s, _)| s)
            .ok()
            .map(|i| self.terms[i].1)
    }

    pub fn mul(&self, other: &SparsePauli) -> SparsePauli {
        Self::from_terms(self.terms.iter().chain(&other.terms).copied())
    }

    pub fn commutes_with(&self, other: &SparsePauli) -> bool {
        let (mut i, mut j) = (0, 0);
        let mut odd = false;
        while i < self.terms.len() && j < other.terms.len() {
            let (a, b) = (self.terms[i], other.terms[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    odd ^= a.1.anticommutes(b.1);
                    i += 1;
                    j += 1;
                }
            }
        }
        !odd
    }

    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().map(|&(s, _)| s)
    }

    pub fn x_sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms
            .iter()
            .filter(|&&(_, p)| p != Pauli::Z)
            .map(|&(s, _)| s)
    }

    pub fn z_sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms
            .iter()
            .filter(|&&(_, p)| p != Pauli::X)
            .map(|&(s, _)| s)
    }
}

impl std::fmt::Display for SparsePauli {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("I");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(s, p)| format!("{}{}", p.symbol(), s))
            .collect();
        f.write_str(&parts.join(" "))
    }
}
