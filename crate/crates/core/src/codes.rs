//! CSS codes used as syndrome-extraction substrates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::{BitMatrix, BitVec};

#[derive(Debug, Error, PartialEq)]
pub enum CodeError {
    #[error("invalid size for {family} code: L={got}, need L >= {min}")]
    InvalidSize {
        family: &'static str,
        got: usize,
        min: usize,
    },
    #[error("malformed code: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeFamily {
    Repetition,
    Toric,
    Custom,
}

impl std::fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CodeFamily::Repetition => "repetition",
            CodeFamily::Toric => "toric",
            CodeFamily::Custom => "custom",
        })
    }
}

impl std::str::FromStr for CodeFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "repetition" => Ok(CodeFamily::Repetition),
            "toric" => Ok(CodeFamily::Toric),
            other => Err(format!(
                "unknown code family '{other}' (expected repetition or toric)"
            )),
        }
    }
}

/// Integer lattice positions. Every listed period marks a periodic axis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub periods: Vec<usize>,
    pub qubit_coords: Vec<Vec<i64>>,
    pub z_check_coords: Vec<Vec<i64>>,
    pub x_check_coords: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CssCode {
    pub family: CodeFamily,
    pub size: usize,
    pub n_qubits: usize,
    pub z_checks: BitMatrix,
    pub x_checks: BitMatrix,
    pub z_logicals: Vec<BitVec>,
    pub x_logicals: Vec<BitVec>,
    pub geometry: Geometry,
}

/// Plain JSON shape: supports instead of packed bits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CodeDescription {
    pub family: CodeFamily,
    pub size: usize,
    pub n_qubits: usize,
    pub periods: Vec<usize>,
    pub qubit_coords: Vec<Vec<i64>>,
    pub z_checks: Vec<Vec<usize>>,
    pub x_checks: Vec<Vec<usize>>,
    pub z_check_coords: Vec<Vec<i64>>,
    pub x_check_coords: Vec<Vec<i64>>,
    pub z_logicals: Vec<Vec<usize>>,
    pub x_logicals: Vec<Vec<usize>>,
}

fn supports(m: &BitMatrix) -> Vec<Vec<usize>> {
    m.rows().iter().map(|r| r.ones().collect()).collect()
}

impl CssCode {
    /// Builds a code from explicit supports. No invariants are enforced; see [`validate_code`].
    pub fn custom(
        n_qubits: usize,
        z_checks: &[Vec<usize>],
        x_checks: &[Vec<usize>],
        z_logicals: &[Vec<usize>],
        x_logicals: &[Vec<usize>],
    ) -> Result<Self, CodeError> {
        let all = z_checks
            .iter()
            .chain(x_checks)
            .chain(z_logicals)
            .chain(x_logicals);
        for s in all {
            if let Some(&q) = s.iter().find(|&&q| q >= n_qubits) {
                return Err(CodeError::Malformed(format!(
                    "qubit index {q} out of range for {n_qubits} qubits"
                )));
            }
        }
        let geometry = Geometry {
            periods: vec![],
            qubit_coords: (0..n_qubits as i64).map(|i| vec![i]).collect(),
            z_check_coords: (0..z_checks.len() as i64).map(|i| vec![i]).collect(),
            x_check_coords: (0..x_checks.len() as i64).map(|i| vec![i]).collect(),
        };
        Ok(Self {
            family: CodeFamily::Custom,
            size: n_qubits,
            n_qubits,
            z_checks: BitMatrix::from_supports(n_qubits, z_checks),
            x_checks: BitMatrix::from_supports(n_qubits, x_checks),
            z_logicals: BitMatrix::from_supports(n_qubits, z_logicals).rows().to_vec(),
            x_logicals: BitMatrix::from_supports(n_qubits, x_logicals).rows().to_vec(),
            geometry,
        })
    }

    pub fn n_z_checks(&self) -> usize {
        self.z_checks.n_rows()
    }

    pub fn n_x_checks(&self) -> usize {
        self.x_checks.n_rows()
    }

    pub fn description(&self) -> CodeDescription {
        CodeDescription {
            family: self.family,
            size: self.size,
            n_qubits: self.n_qubits,
            periods: self.geometry.periods.clone(),
            qubit_coords: self.geometry.qubit_coords.clone(),
            z_checks: supports(&self.z_checks),
            x_checks: supports(&self.x_checks),
            z_check_coords: self.geometry.z_check_coords.clone(),
            x_check_coords: self.geometry.x_check_coords.clone(),
            z_logicals: self.z_logicals.iter().map(|v| v.ones().collect()).collect(),
            x_logicals: self.x_logicals.iter().map(|v| v.ones().collect()).collect(),
        }
    }

    pub fn from_description(d: &CodeDescription) -> Result<Self, CodeError> {
        let mut code = Self::custom(d.n_qubits, &d.z_checks, &d.x_checks, &d.z_logicals, &d.x_logicals)?;
        if d.qubit_coords.len() != d.n_qubits
            || d.z_check_coords.len() != d.z_checks.len()
            || d.x_check_coords.len() != d.x_checks.len()
        {
            return Err(CodeError::Malformed("coordinate list length mismatch".into()));
        }
        code.family = d.family;
        code.size = d.size;
        code.geometry = Geometry {
            periods: d.periods.clone(),
            qubit_coords: d.qubit_coords.clone(),
            z_check_coords: d.z_check_coords.clone(),
            x_check_coords: d.x_check_coords.clone(),
        };
        Ok(code)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.description()).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self, CodeError> {
        let d: CodeDescription =
            serde_json::from_str(s).map_err(|e| CodeError::Malformed(e.to_string()))?;
        Self::from_description(&d)
    }

    pub fn hash(&self) -> String {
        crate::hash::sha256_json(&self.description())
    }
}

pub fn repetition_code(l: usize) -> Result<CssCode, CodeError> {
    if l < 3 {
        return Err(CodeError::InvalidSize {
            family: "repetition",
            got: l,
            min: 3,
        });
    }
    let z: Vec<Vec<usize>> = (0..l).map(|c| vec![c, (c + 1) % l]).collect();
    let mut code = CssCode::custom(l, &z, &[], &[vec![0]], &[(0..l).collect()])?;
    code.family = CodeFamily::Repetition;
    code.size = l;
    code.geometry = Geometry {
        periods: vec![l],
        qubit_coords: (0..l as i64).map(|i| vec![i]).collect(),
        z_check_coords: (0..l as i64).map(|i| vec![i]).collect(),
        x_check_coords: vec![],
    };
    Ok(code)
}

/// Edge `(dir, r, c)`: dir 0 joins vertex (r,c) to (r,c+1), dir 1 joins (r,c) to (r+1,c).
pub fn toric_edge(l: usize, dir: usize, r: usize, c: usize) -> usize {
    dir * l * l + (r % l) * l + (c % l)
}

pub fn toric_code(l: usize) -> Result<CssCode, CodeError> {
    if l < 2 {
        return Err(CodeError::InvalidSize {
            family: "toric",
            got: l,
            min: 2,
        });
    }
    let e = |d, r, c| toric_edge(l, d, r, c);
    let mut z = Vec::new();
    let mut x = Vec::new();
    for r in 0..l {
        for c in 0..l {
            z.push(vec![e(0, r, c), e(0, r, c + l - 1), e(1, r, c), e(1, r + l - 1, c)]);
            x.push(vec![e(0, r, c), e(0, r + 1, c), e(1, r, c), e(1, r, c + 1)]);
        }
    }
    let z_logicals = vec![
        (0..l).map(|r| e(0, r, 0)).collect::<Vec<_>>(),
        (0..l).map(|c| e(1, 0, c)).collect(),
    ];
    let x_logicals = vec![
        (0..l).map(|c| e(0, 0, c)).collect::<Vec<_>>(),
        (0..l).map(|r| e(1, r, 0)).collect(),
    ];
    let mut code = CssCode::custom(2 * l * l, &z, &x, &z_logicals, &x_logicals)?;
    code.family = CodeFamily::Toric;
    code.size = l;
    let li = l as i64;
    let mut qubit_coords = Vec::with_capacity(2 * l * l);
    for d in 0..2i64 {
        for r in 0..li {
            for c in 0..li {
                // doubled lattice: vertices at even/even, edges at odd offsets
                qubit_coords.push(if d == 0 {
                    vec![2 * r, 2 * c + 1]
                } else {
                    vec![2 * r + 1, 2 * c]
                });
            }
        }
    }
    let vertex: Vec<Vec<i64>> = (0..li)
        .flat_map(|r| (0..li).map(move |c| vec![r, c]))
        .collect();
    code.geometry = Geometry {
        periods: vec![l, l],
        qubit_coords,
        z_check_coords: vertex.clone(),
        x_check_coords: vertex,
    };
    Ok(code)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub violation: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<InvariantCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

fn first_pair(
    a: &[BitVec],
    b: &[BitVec],
    bad: impl Fn(usize, usize, bool) -> bool,
) -> Option<(usize, usize)> {
    for (i, u) in a.iter().enumerate() {
        for (j, v) in b.iter().enumerate() {
            if bad(i, j, u.dot(v)) {
                return Some((i, j));
            }
        }
    }
    None
}

fn check(name: &'static str, violation: Option<(usize, usize)>) -> InvariantCheck {
    InvariantCheck {
        name,
        passed: violation.is_none(),
        violation,
    }
}

/// Violations report `(row in first set, row in second set)`.
pub fn validate_code(code: &CssCode) -> ValidationReport {
    let zc = code.z_checks.rows();
    let xc = code.x_checks.rows();
    let zl = &code.z_logicals;
    let xl = &code.x_logicals;
    let not_in_span = |m: &BitMatrix, ls: &[BitVec]| {
        ls.iter()
            .position(|l| m.in_row_space(l))
            .map(|i| (i, 0))
    };
    ValidationReport {
        checks: vec![
            check("z_checks commute with x_checks", first_pair(zc, xc, |_, _, odd| odd)),
            check("z_logicals commute with x_checks", first_pair(zl, xc, |_, _, odd| odd)),
            check("x_logicals commute with z_checks", first_pair(xl, zc, |_, _, odd| odd)),
            check(
                "logical pairing",
                first_pair(zl, xl, |i, j, odd| odd != (i == j)),
            ),
            check("z_logicals nontrivial", not_in_span(&code.z_checks, zl)),
            check("x_logicals nontrivial", not_in_span(&code.x_checks, xl)),
        ],
    }
}
