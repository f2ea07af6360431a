//! Tripartitions of the detector lattice, conditional mutual information and the Markov length.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{
    self, brute_force_distribution, enumerated_distribution, jackknife_entropy, marginal,
    shannon_bits, Correction, EntropyError, JACKKNIFE_CHUNKS,
};
use crate::sampler::{sample_batch, SampleBatch, SampleError};
use crate::spacetime::{DetectorModel, Sector};

/// Exact CMI values below this are treated as numerically zero by the fitter.
pub const NUMERICAL_FLOOR: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("region of {width} detectors exceeds the cap of {cap}; try wC={suggested_wc}")]
    WidthCap { width: usize, cap: usize, suggested_wc: usize },
    #[error("region leaves the bulk: {0}")]
    OutOfBulk(String),
    #[error("invalid tripartition: {0}")]
    Invalid(String),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitError {
    #[error("only {usable} usable points above the noise floor, need 3")]
    TooFewPoints { usable: usize },
    #[error("CMI does not decay (slope {slope})")]
    NotDecaying { slope: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Chebyshev annuli around a central cube.
    Box,
    /// A, B, C stacked along `axis`, each `thickness` wide in every other direction.
    Slab { axis: usize, thickness: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripartitionSpec {
    pub sector: Sector,
    /// Lowest corner of A (Box: corner of A; Slab: corner of the whole stack). Centered in the bulk when absent.
    pub anchor: Option<Vec<i64>>,
    pub w_a: usize,
    pub w_b: usize,
    pub w_c: usize,
    pub shape: Shape,
    pub width_cap: usize,
}

impl TripartitionSpec {
    pub fn boxed(w_a: usize, w_b: usize, w_c: usize) -> Self {
        Self {
            sector: Sector::Z,
            anchor: None,
            w_a,
            w_b,
            w_c,
            shape: Shape::Box,
            width_cap: entropy::DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn slab(axis: usize, thickness: usize, w_a: usize, w_b: usize, w_c: usize) -> Self {
        Self {
            shape: Shape::Slab { axis, thickness },
            ..Self::boxed(w_a, w_b, w_c)
        }
    }

    pub fn with_w_b(&self, w_b: usize) -> Self {
        Self { w_b, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tripartition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub c: Vec<usize>,
    pub dist_ac: usize,
    pub spec: TripartitionSpec,
    /// No mechanism touches both A and C.
    pub separated: bool,
}

impl Tripartition {
    pub fn region(&self) -> Vec<usize> {
        self.a.iter().chain(&self.b).chain(&self.c).copied().collect()
    }

    pub fn width(&self) -> usize {
        self.a.len() + self.b.len() + self.c.len()
    }

    /// Bit positions of AB, BC, B and ABC within [`Tripartition::region`].
    fn positions(&self) -> [Vec<usize>; 4] {
        let (na, nb, nc) = (self.a.len(), self.b.len(), self.c.len());
        let ab: Vec<usize> = (0..na + nb).collect();
        let bc: Vec<usize> = (na..na + nb + nc).collect();
        let b: Vec<usize> = (na..na + nb).collect();
        let abc: Vec<usize> = (0..na + nb + nc).collect();
        [ab, bc, b, abc]
    }
}

fn wrap_delta(a: i64, b: i64, period: Option<usize>) -> i64 {
    let d = b - a;
    match period {
        Some(p) => d.rem_euclid(p as i64),
        None => d,
    }
}

pub fn build_tripartition(
    model: &DetectorModel,
    spec: &TripartitionSpec,
) -> Result<Tripartition, MarkovError> {
    if spec.w_a == 0 || spec.w_c == 0 {
        return Err(MarkovError::Invalid("wA and wC must be >= 1".into()));
    }
    let periods = &model.space_periods;
    let dims = periods.len() + 1;
    let t_max = model.rounds as i64;
    let dets: Vec<usize> = (0..model.n_detectors())
        .filter(|&i| model.detectors[i].sector == spec.sector)
        .collect();
    if dets.is_empty() {
        return Err(MarkovError::Invalid(format!("no {:?} detectors", spec.sector)));
    }
    let period = |k: usize| if k < periods.len() { Some(periods[k]) } else { None };
    // extents along each axis (A only for Box, the full stack for Slab)
    let (extent, label): (Vec<usize>, fn(&[i64], &TripartitionSpec) -> Option<u8>) = match spec.shape {
        Shape::Box => {
            let e = spec.w_a + 2 * (spec.w_b + spec.w_c);
            (vec![e; dims], box_label)
        }
        Shape::Slab { axis, thickness } => {
            if axis >= dims {
                return Err(MarkovError::Invalid(format!("axis {axis} out of {dims} dimensions")));
            }
            let mut e = vec![thickness; dims];
            e[axis] = spec.w_a + spec.w_b + spec.w_c;
            (e, slab_label)
        }
    };
    for k in 0..dims {
        let room = match period(k) {
            Some(p) => p as i64,
            None => t_max - 1,
        };
        if extent[k] as i64 > room {
            return Err(MarkovError::OutOfBulk(format!(
                "extent {} along axis {k} exceeds available {room}",
                extent[k]
            )));
        }
    }
    let corner: Vec<i64> = match &spec.anchor {
        Some(a) => {
            if a.len() != dims {
                return Err(MarkovError::Invalid(format!("anchor needs {dims} coordinates")));
            }
            match spec.shape {
                Shape::Box => a
                    .iter()
                    .map(|&x| x - (spec.w_b + spec.w_c) as i64)
                    .collect(),
                Shape::Slab { .. } => a.clone(),
            }
        }
        None => (0..dims)
            .map(|k| match period(k) {
                Some(_) => 0,
                None => 1 + (t_max - 1 - extent[k] as i64) / 2,
            })
            .collect(),
    };
    let t0 = corner[dims - 1];
    if t0 < 1 || t0 + extent[dims - 1] as i64 - 1 > t_max - 1 {
        return Err(MarkovError::OutOfBulk(format!(
            "time window [{t0}, {}] must lie within [1, {}]",
            t0 + extent[dims - 1] as i64 - 1,
            t_max - 1
        )));
    }
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &dets {
        let x = &model.detectors[i].coords;
        let rel: Vec<i64> = (0..dims).map(|k| wrap_delta(corner[k], x[k], period(k))).collect();
        if rel.iter().zip(&extent).any(|(&r, &e)| r < 0 || r >= e as i64) {
            continue;
        }
        match label(&rel, spec) {
            Some(0) => a.push(i),
            Some(1) => b.push(i),
            Some(2) => c.push(i),
            _ => {}
        }
    }
    let width = a.len() + b.len() + c.len();
    if width > spec.width_cap {
        let fixed = width - c.len();
        let per_c = c.len() / spec.w_c.max(1);
        let suggested_wc = if per_c == 0 || fixed >= spec.width_cap {
            0
        } else {
            ((spec.width_cap - fixed) / per_c).min(spec.w_c.saturating_sub(1))
        };
        return Err(MarkovError::WidthCap { width, cap: spec.width_cap, suggested_wc });
    }
    let touches = |set: &[usize]| {
        let mut v = vec![false; model.n_mechanisms()];
        for &k in &model.incident_mechanisms(set) {
            v[k] = true;
        }
        v
    };
    let (ta, tc) = (touches(&a), touches(&c));
    let separated = !ta
        .iter()
        .zip(&tc)
        .enumerate()
        .any(|(k, (&x, &y))| x && y && model.mechanisms[k].probability > 0.0);
    Ok(Tripartition {
        a,
        b,
        c,
        dist_ac: spec.w_b + 1,
        spec: spec.clone(),
        separated,
    })
}

fn box_label(rel: &[i64], spec: &TripartitionSpec) -> Option<u8> {
    let lo = (spec.w_b + spec.w_c) as i64;
    let hi = lo + spec.w_a as i64 - 1;
    let d = rel
        .iter()
        .map(|&r| if r < lo { lo - r } else if r > hi { r - hi } else { 0 })
        .max()
        .unwrap_or(0) as usize;
    if d == 0 {
        Some(0)
    } else if d <= spec.w_b {
        Some(1)
    } else if d <= spec.w_b + spec.w_c {
        Some(2)
    } else {
        None
    }
}

fn slab_label(rel: &[i64], spec: &TripartitionSpec) -> Option<u8> {
    let Shape::Slab { axis, .. } = spec.shape else { return None };
    let r = rel[axis] as usize;
    if r < spec.w_a {
        Some(0)
    } else if r < spec.w_a + spec.w_b {
        Some(1)
    } else {
        Some(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CmiMethod {
    /// Enumerates every incident mechanism pattern (capped at 22 mechanisms).
    BruteForce,
    /// Exact distribution by XOR convolution over region patterns (capped at 24 bits).
    Enumerated,
    /// Plug-in + Miller-Madow on `n` samples, jackknife errors over 32 chunks.
    Sampled { n: usize, seed: u64 },
}

impl CmiMethod {
    pub fn label(&self) -> &'static str {
        match self {
            CmiMethod::BruteForce => "brute_force",
            CmiMethod::Enumerated => "enumerated",
            CmiMethod::Sampled { .. } => "sampled",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmiPoint {
    pub dist_ac: usize,
    pub w_b: usize,
    pub cmi: f64,
    pub std_error: f64,
    pub method: String,
    pub sizes: [usize; 3],
    /// CMI came out below zero (estimator noise floor).
    pub negative: bool,
}

fn point(tri: &Tripartition, cmi: f64, std_error: f64, method: &str) -> CmiPoint {
    CmiPoint {
        dist_ac: tri.dist_ac,
        w_b: tri.spec.w_b,
        cmi,
        std_error,
        method: method.to_string(),
        sizes: [tri.a.len(), tri.b.len(), tri.c.len()],
        negative: cmi < 0.0,
    }
}

/// I(A:C|B) = H(AB) + H(BC) - H(B) - H(ABC) from an exact joint distribution over ABC.
pub fn cmi_from_distribution(tri: &Tripartition, dist: &[f64]) -> f64 {
    let [ab, bc, b, _] = tri.positions();
    shannon_bits(&marginal(dist, &ab)) + shannon_bits(&marginal(dist, &bc))
        - shannon_bits(&marginal(dist, &b))
        - shannon_bits(dist)
}

pub fn cmi(model: &DetectorModel, tri: &Tripartition, method: CmiMethod) -> Result<CmiPoint, MarkovError> {
    let region = tri.region();
    match method {
        CmiMethod::BruteForce => {
            let dist = brute_force_distribution(model, &region, entropy::DEFAULT_BRUTE_FORCE_CAP)?;
            Ok(point(tri, cmi_from_distribution(tri, &dist), 0.0, method.label()))
        }
        CmiMethod::Enumerated => {
            let dist = enumerated_distribution(model, &region, tri.spec.width_cap)?;
            Ok(point(tri, cmi_from_distribution(tri, &dist), 0.0, method.label()))
        }
        CmiMethod::Sampled { n, seed } => {
            if region.len() > tri.spec.width_cap {
                return Err(MarkovError::WidthCap {
                    width: region.len(),
                    cap: tri.spec.width_cap,
                    suggested_wc: 0,
                });
            }
            let batch = sample_batch(model, &region, n, seed)?;
            cmi_from_batch(&batch, tri)
        }
    }
}

/// Sampled CMI with a jackknife over chunks of the combined statistic.
pub fn cmi_from_batch(batch: &SampleBatch, tri: &Tripartition) -> Result<CmiPoint, MarkovError> {
    let region = tri.region();
    let codes = batch.patterns(&region)?;
    let [ab, bc, b, abc] = tri.positions();
    let mask = |bits: &[usize]| bits.iter().fold(0u32, |m, &j| m | 1 << j);
    let parts: Vec<(f64, u32, usize)> = vec![
        (1.0, mask(&ab), ab.len()),
        (1.0, mask(&bc), bc.len()),
        (-1.0, mask(&b), b.len()),
        (-1.0, mask(&abc), abc.len()),
    ];
    let mut full = 0.0;
    let mut loo = vec![0.0; JACKKNIFE_CHUNKS];
    for (sign, m, w) in parts {
        let masked: Vec<u32> = codes.iter().map(|&c| c & m).collect();
        let j = jackknife_entropy(&masked, w, JACKKNIFE_CHUNKS, Correction::MillerMadow)?;
        full += sign * j.full;
        if loo.len() != j.loo.len() {
            loo.resize(j.loo.len(), 0.0);
        }
        for (acc, v) in loo.iter_mut().zip(&j.loo) {
            *acc += sign * v;
        }
    }
    Ok(point(tri, full, entropy::jackknife_std_error(&loo), "sampled"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovFit {
    /// e-folding length in detector-lattice units: CMI ~ exp(-dist/xi).
    pub xi: f64,
    pub xi_stderr: f64,
    /// Slope of log2(CMI) against dist.
    pub slope_log2: f64,
    pub r_squared: f64,
    pub window: (usize, usize),
    pub points: Vec<CmiPoint>,
    pub used: usize,
}

pub fn usable(p: &CmiPoint) -> bool {
    p.cmi > 3.0 * p.std_error && p.cmi > NUMERICAL_FLOOR
}

/// Weighted least squares of ln(CMI) against dist over the points above the noise floor.
pub fn markov_length(points: &[CmiPoint]) -> Result<MarkovFit, FitError> {
    let used: Vec<&CmiPoint> = points.iter().filter(|p| usable(p)).collect();
    if used.len() < 3 {
        return Err(FitError::TooFewPoints { usable: used.len() });
    }
    let weighted = used.iter().all(|p| p.std_error > 0.0);
    let xs: Vec<f64> = used.iter().map(|p| p.dist_ac as f64).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.cmi.ln()).collect();
    let ws: Vec<f64> = used
        .iter()
        .map(|p| if weighted { (p.cmi / p.std_error).powi(2) } else { 1.0 })
        .collect();
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).zip(&ws).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().zip(&ws).map(|(y, w)| w * (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(FitError::NotDecaying { slope });
    }
    let rss = (syy - slope * sxy).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    let n = used.len() as f64;
    let slope_se = if weighted {
        (1.0 / sxx).sqrt()
    } else {
        (rss / (n - 2.0) / sxx).sqrt()
    };
    let xi = -1.0 / slope;
    Ok(MarkovFit {
        xi,
        xi_stderr: slope_se / (slope * slope),
        slope_log2: slope / std::f64::consts::LN_2,
        r_squared,
        window: (used[0].dist_ac, used[used.len() - 1].dist_ac),
        points: points.to_vec(),
        used: used.len(),
    })
}

/// CMI at each `w_b` in `ladder` for a fixed geometry template.
pub fn cmi_ladder(
    model: &DetectorModel,
    template: &TripartitionSpec,
    ladder: &[usize],
    method: CmiMethod,
) -> Result<Vec<CmiPoint>, MarkovError> {
    ladder
        .iter()
        .map(|&wb| {
            let tri = build_tripartition(model, &template.with_w_b(wb))?;
            let m = match method {
                CmiMethod::Sampled { n, seed } => CmiMethod::Sampled { n, seed: seed.wrapping_add(wb as u64) },
                other => other,
            };
            cmi(model, &tri, m)
        })
        .collect()
}

/// Tripartitions of a ladder and the sorted union of their detectors.
pub fn ladder_tripartitions(
    model: &DetectorModel,
    template: &TripartitionSpec,
    ladder: &[usize],
) -> Result<(Vec<Tripartition>, Vec<usize>), MarkovError> {
    let tris = ladder
        .iter()
        .map(|&wb| build_tripartition(model, &template.with_w_b(wb)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut union: Vec<usize> = tris.iter().flat_map(|t| t.region()).collect();
    union.sort_unstable();
    union.dedup();
    Ok((tris, union))
}

/// Sampled CMI ladder where every rung reads the same batch.
pub fn cmi_ladder_from_batch(batch: &SampleBatch, tris: &[Tripartition]) -> Result<Vec<CmiPoint>, MarkovError> {
    tris.iter().map(|t| cmi_from_batch(batch, t)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub l: usize,
    pub t: usize,
    pub p: f64,
    pub points: Vec<CmiPoint>,
    pub fit: Result<MarkovFit, FitError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub l: usize,
    pub t: usize,
    /// Interpolated location, absent without an interior maximum.
    pub location: Option<f64>,
    pub height: Option<f64>,
    pub grid_argmax: Option<f64>,
    pub interior: bool,
}

/// Vertex of the parabola through three points.
pub fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    let b = d1 - a * (x[0] + x[1]);
    if a >= 0.0 {
        return (x[1], y[1]);
    }
    let xv = -b / (2.0 * a);
    let yv = y[0] + d1 * (xv - x[0]) + a * (xv - x[0]) * (xv - x[1]);
    (xv, yv)
}

/// Peak of xi(p) by quadratic interpolation around the grid maximum; `None` entries are gaps.
pub fn find_peak(ps: &[f64], xis: &[Option<f64>]) -> (Option<f64>, Option<f64>, Option<f64>, bool) {
    let best = xis
        .iter()
        .enumerate()
        .filter_map(|(i, x)| x.map(|v| (i, v)))
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((i, v)),
        });
    let Some((i, v)) = best else { return (None, None, None, false) };
    if i == 0 || i + 1 >= xis.len() {
        return (None, None, Some(ps[i]), false);
    }
    match (xis[i - 1], xis[i + 1]) {
        (Some(a), Some(c)) => {
            let (x, y) = parabola_vertex([ps[i - 1], ps[i], ps[i + 1]], [a, v, c]);
            (Some(x), Some(y), Some(ps[i]), true)
        }
        _ => (None, None, Some(ps[i]), false),
    }
}

pub fn peaks(cells: &[SweepCell], sizes: &[(usize, usize)], ps: &[f64]) -> Vec<Peak> {
    sizes
        .iter()
        .map(|&(l, t)| {
            let xis: Vec<Option<f64>> = ps
                .iter()
                .map(|&p| {
                    cells
                        .iter()
                        .find(|c| c.l == l && c.t == t && c.p == p)
                        .and_then(|c| c.fit.as_ref().ok().map(|f| f.xi))
                })
                .collect();
            let (location, height, grid_argmax, interior) = find_peak(ps, &xis);
            Peak { l, t, location, height, grid_argmax, interior }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub peaks: Vec<Peak>,
}

/// Builds one model per grid cell with `build` and fits a Markov length for each.
pub fn sweep<F>(
    sizes: &[(usize, usize)],
    ps: &[f64],
    template: &TripartitionSpec,
    ladder: &[usize],
    method: CmiMethod,
    build: F,
) -> Result<SweepResult, MarkovError>
where
    F: Fn(usize, usize, f64) -> Result<DetectorModel, MarkovError> + Sync,
{
    let grid: Vec<(usize, usize, f64)> = sizes
        .iter()
        .flat_map(|&(l, t)| ps.iter().map(move |&p| (l, t, p)))
        .collect();
    let cells: Result<Vec<SweepCell>, MarkovError> = grid
        .par_iter()
        .map(|&(l, t, p)| {
            let model = build(l, t, p)?;
            let points = cmi_ladder(&model, template, ladder, method)?;
            let fit = markov_length(&points);
            Ok(SweepCell { l, t, p, points, fit })
        })
        .collect();
    let cells = cells?;
    let peaks = peaks(&cells, sizes, ps);
    Ok(SweepResult { cells, peaks })
}
