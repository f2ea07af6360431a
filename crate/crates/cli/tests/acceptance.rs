//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 4 7`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use stmarkov::entropy::{
    all_syndrome_bits, entropy_decomposition_check, rank_entropy_half, shannon_bits, Frame,
    DEFAULT_BRUTE_FORCE_CAP,
};
use stmarkov::foliation::MappingRules;
use stmarkov::markov::{build_tripartition, cmi, CmiMethod, Tripartition, TripartitionSpec};
use stmarkov::rng::stream_rng;
use stmarkov::sampler::sample_batch;
use stmarkov::verify::{foliation_correspondence, rank_vs_brute_force, stabilizer_audit};
use stmarkov::{build_detector_model, repetition_code, toric_code, CssCode, DetectorModel, NoiseModel};
use stmarkov_cli::commands::{ladder, model_for, sweep, SweepMode, SweepReport};
use stmarkov_cli::config::{ExperimentConfig, MethodKind};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

const MINUTE: Duration = Duration::from_secs(60);

fn rep(l: usize, t: usize, p: f64) -> DetectorModel {
    build_detector_model(&repetition_code(l).unwrap(), t, NoiseModel::bit_flip(p).unwrap()).unwrap()
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let e = start.elapsed();
    (e <= limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn foliation_correspondence_check() -> Outcome {
    let start = Instant::now();
    let r = foliation_correspondence(&repetition_code(5).unwrap(), 4, 1000, 0.15, 1, MappingRules::Standard).unwrap();
    let (fast, time) = within(MINUTE, start);
    outcome(
        r.passed() && fast,
        format!("{} single + {} random configurations, {} mismatches, {time}", r.singles, r.random, r.mismatches),
    )
}

fn stabilizer_audit_check() -> Outcome {
    let start = Instant::now();
    let mut cases: Vec<(CssCode, String, usize)> = Vec::new();
    for l in 3..=6 {
        for m_f in 1..=4 {
            cases.push((repetition_code(l).unwrap(), format!("repetition L={l}"), m_f));
        }
    }
    cases.push((toric_code(2).unwrap(), "toric L=2".into(), 2));
    let mut operators = 0;
    let mut bad = Vec::new();
    for (code, name, m_f) in &cases {
        match stabilizer_audit(code, *m_f) {
            Ok(r) if r.passed() => operators += r.operators,
            Ok(r) => bad.push(format!("{name} m_f={m_f}: {:?} {:?}", r.non_commuting, r.not_plus_one)),
            Err(e) => bad.push(format!("{name} m_f={m_f}: {e}")),
        }
    }
    let (fast, time) = within(MINUTE, start);
    let detail = if bad.is_empty() {
        format!("{} instances, {operators} operators all commute and read +1, {time}", cases.len())
    } else {
        format!("{}; {time}", bad.join("; "))
    };
    outcome(bad.is_empty() && fast, detail)
}

/// H(s) and H(d') by enumerating every data, readout and initial-frame pattern of a
/// periodic repetition code; d' holds consecutive-round parities and the first-round total parity.
fn brute_force_decomposition(l: usize, t: usize, p: f64) -> Option<(f64, f64, usize, usize)> {
    let n_data = l * (t + 1);
    let n_read = l * t;
    let bits = n_data + n_read + l;
    if bits > 22 {
        return None;
    }
    let ns = l * (t + 1);
    let nd = l * t + 1;
    let mut hs: BTreeMap<u64, f64> = BTreeMap::new();
    let mut hd: BTreeMap<u64, f64> = BTreeMap::new();
    for mask in 0u64..1 << bits {
        let mut prob = 1.0;
        for i in 0..n_data + n_read {
            prob *= if mask >> i & 1 == 1 { p } else { 1.0 - p };
        }
        prob /= (1u64 << l) as f64;
        let data = |q: usize, tt: usize| mask >> (tt * l + q) & 1 == 1;
        let read = |c: usize, r: usize| mask >> (n_data + (r - 1) * l + c) & 1 == 1;
        let frame = |q: usize| mask >> (n_data + n_read + q) & 1 == 1;
        // check c compares qubits c and c+1
        let mut s = vec![vec![false; l]; t + 2];
        for r in 1..=t + 1 {
            for c in 0..l {
                let q2 = (c + 1) % l;
                let mut v = frame(c) ^ frame(q2);
                for tt in 0..r {
                    v ^= data(c, tt) ^ data(q2, tt);
                }
                if r <= t {
                    v ^= read(c, r);
                }
                s[r][c] = v;
            }
        }
        let mut sk = 0u64;
        let mut j = 0;
        for row in &s[1..=t + 1] {
            for &b in row {
                sk |= (b as u64) << j;
                j += 1;
            }
        }
        let mut dk = 0u64;
        let mut j = 0;
        for r in 1..=t {
            for c in 0..l {
                dk |= ((s[r][c] ^ s[r + 1][c]) as u64) << j;
                j += 1;
            }
        }
        dk |= (s[1].iter().fold(false, |a, &b| a ^ b) as u64) << j;
        *hs.entry(sk).or_default() += prob;
        *hd.entry(dk).or_default() += prob;
    }
    let h = |m: &BTreeMap<u64, f64>| shannon_bits(&m.values().copied().collect::<Vec<_>>());
    Some((h(&hs), h(&hd), ns, nd))
}

fn entropy_decomposition() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut brute = 0;
    let mut bad = Vec::new();
    for l in 3..=4 {
        for t in 2..=3 {
            for p in [0.05, 0.1, 0.3] {
                let code = repetition_code(l).unwrap();
                let region = all_syndrome_bits(&code, t);
                let r = entropy_decomposition_check(&code, t, NoiseModel::bit_flip(p).unwrap(), &region, Frame::Random, 24)
                    .unwrap();
                worst = worst.max(r.residual.abs());
                if r.residual.abs() > 1e-10 {
                    bad.push(format!("L={l} T={t} p={p}: residual {:.2e}", r.residual));
                }
                if let Some((hs, hd, ns, nd)) = brute_force_decomposition(l, t, p) {
                    brute += 1;
                    let res = hs - hd - (ns as f64 - nd as f64);
                    worst = worst.max(res.abs());
                    if res.abs() > 1e-10 || (hs - r.h_s).abs() > 1e-10 || ns != r.n_s || nd != r.n_d {
                        bad.push(format!("L={l} T={t} p={p}: enumeration H(s)={hs} H(d)={hd} residual {res:.2e}"));
                    }
                }
            }
        }
    }
    let (fast, time) = within(MINUTE, start);
    outcome(
        bad.is_empty() && fast,
        if bad.is_empty() {
            format!("12 cases ({brute} also by full enumeration), max |residual| {worst:.2e} <= 1e-10, {time}")
        } else {
            bad.join("; ")
        },
    )
}

fn estimator_vs_oracle() -> Outcome {
    let start = Instant::now();
    let m = rep(4, 3, 0.1);
    let mut tris: Vec<Tripartition> = Vec::new();
    'outer: for (wa, wb, wc) in [(1, 1, 1), (1, 2, 1), (2, 1, 1), (1, 1, 2)] {
        for thickness in [1, 2] {
            for x0 in 0..2 {
                for t0 in 1..=(3 - thickness) as i64 {
                    let spec = TripartitionSpec {
                        anchor: Some(vec![x0, t0]),
                        ..TripartitionSpec::slab(0, thickness, wa, wb, wc)
                    };
                    let Ok(tri) = build_tripartition(&m, &spec) else { continue };
                    if m.incident_mechanisms(&tri.region()).len() <= DEFAULT_BRUTE_FORCE_CAP {
                        tris.push(tri);
                    }
                    if tris.len() == 12 {
                        break 'outer;
                    }
                }
            }
        }
    }
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    for (i, tri) in tris.iter().enumerate() {
        let exact = cmi(&m, tri, CmiMethod::BruteForce).unwrap();
        let s = cmi(&m, tri, CmiMethod::Sampled { n: 1_000_000, seed: 100 + i as u64 }).unwrap();
        let z = (s.cmi - exact.cmi) / s.std_error;
        worst = worst.max(z.abs());
        if !(z.abs() <= 3.0) {
            fails += 1;
        }
    }
    let (fast, time) = within(5 * MINUTE, start);
    outcome(
        tris.len() >= 10 && fails == 0 && fast,
        format!("{} tripartitions, {fails} outside 3 sigma, max |z| {worst:.2}, {time}", tris.len()),
    )
}

fn rank_oracle() -> Outcome {
    let start = Instant::now();
    let rc = rank_vs_brute_force(&repetition_code(5).unwrap(), 3, 1, DEFAULT_BRUTE_FORCE_CAP).unwrap();
    let mut tested = 0;
    let mut worst: f64 = 0.0;
    let half = NoiseModel::new(0.5, 0.5, 0.5).unwrap();
    let models = [
        build_detector_model(&repetition_code(12).unwrap(), 10, NoiseModel::bit_flip(0.5).unwrap()).unwrap(),
        build_detector_model(&toric_code(4).unwrap(), 6, half).unwrap(),
    ];
    for m in &models {
        let dims = m.space_periods.len() + 1;
        for axis in 0..dims {
            for wb in 1..=3 {
                let spec = TripartitionSpec { width_cap: 24, ..TripartitionSpec::slab(axis, 1, 1, wb, 1) };
                let Ok(tri) = build_tripartition(m, &spec) else { continue };
                if !tri.separated {
                    continue;
                }
                let ab: Vec<usize> = tri.a.iter().chain(&tri.b).copied().collect();
                let bc: Vec<usize> = tri.b.iter().chain(&tri.c).copied().collect();
                let h = |r: &[usize]| rank_entropy_half(m, r).unwrap();
                let rank_cmi = h(&ab) + h(&bc) - h(&tri.b) - h(&tri.region());
                worst = worst.max(rank_cmi.abs());
                if tri.width() <= 24 {
                    worst = worst.max(cmi(m, &tri, CmiMethod::Enumerated).unwrap().cmi.abs());
                }
                tested += 1;
            }
        }
    }
    let (fast, time) = within(MINUTE, start);
    outcome(
        rc.regions == 50 && rc.max_error <= 1e-9 && tested > 0 && worst <= 1e-10 && fast,
        format!(
            "{} regions, max rank error {:.1e}; {tested} separated tripartitions, max |CMI| {worst:.1e}, {time}",
            rc.regions, rc.max_error
        ),
    )
}

fn trivial_limits() -> Outcome {
    let quiet = rep(16, 16, 0.0);
    let mut nonzero = 0;
    let mut tested = 0;
    for axis in 0..2 {
        for wb in 1..=5 {
            let tri = build_tripartition(&quiet, &TripartitionSpec::slab(axis, 2, 2, wb, 2)).unwrap();
            for method in [CmiMethod::Enumerated, CmiMethod::Sampled { n: 100_000, seed: wb as u64 }] {
                tested += 1;
                if cmi(&quiet, &tri, method).unwrap().cmi != 0.0 {
                    nonzero += 1;
                }
            }
        }
    }
    let m = rep(16, 16, 0.1);
    let n = 1_000_000;
    let mut rng = stream_rng(9, "acceptance-detectors", 0);
    let mut dets = sample(&mut rng, m.n_detectors(), 20).into_vec();
    dets.sort_unstable();
    let batch = sample_batch(&m, &dets, n, 9).unwrap();
    let mut worst: f64 = 0.0;
    for (j, &d) in dets.iter().enumerate() {
        let prod: f64 = m.mechanisms.iter().filter(|mech| mech.detectors.contains(&d)).map(|mech| 1.0 - 2.0 * mech.probability).product();
        let expected = (1.0 - prod) / 2.0;
        let ones: u32 = batch.columns[j].iter().map(|w| w.count_ones()).sum();
        let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
        worst = worst.max((ones as f64 / n as f64 - expected).abs() / sigma);
    }
    outcome(
        nonzero == 0 && worst <= 3.0,
        format!("{tested} zero-noise CMI values, {nonzero} nonzero; 20 detectors max |z| {worst:.2}"),
    )
}

fn threshold_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.sizes = vec![[16, 16], [24, 24], [32, 32]];
    cfg.sweep.ps = vec![0.05, 0.07, 0.09, 0.11, 0.13, 0.15, 0.17];
    cfg.decoder.shots = 1_000_000;
    cfg.estimator.method = MethodKind::Exact;
    cfg
}

fn threshold_sweep() -> (SweepReport, Duration) {
    let start = Instant::now();
    let (report, _) = sweep(&threshold_config(), SweepMode { cmi: true, decoder: true }, None, false).unwrap();
    (report, start.elapsed())
}

fn peak_check(r: &SweepReport) -> Outcome {
    let mut ok = r.peaks.len() == 3;
    let mut parts = Vec::new();
    for pk in &r.peaks {
        let loc_ok = pk.interior && pk.location.is_some_and(|x| (0.08..=0.14).contains(&x));
        ok &= loc_ok;
        parts.push(format!(
            "L={} peak {} height {}",
            pk.l,
            pk.location.map_or("none".into(), |x| format!("{x:.4}")),
            pk.height.map_or("none".into(), |h| format!("{h:.4}"))
        ));
    }
    let heights: Vec<f64> = r.peaks.iter().filter_map(|p| p.height).collect();
    let grows = heights.len() == 3 && heights.windows(2).all(|w| w[1] > w[0]);
    parts.push(format!("height grows with L: {grows}"));
    outcome(ok && grows, parts.join(", "))
}

fn crossing_check(r: &SweepReport) -> Outcome {
    let Some(d) = &r.decoder else { return outcome(false, "no decoder data") };
    match (&d.crossing, &d.crossing_error) {
        (Some(c), _) => outcome(
            (0.07..=0.14).contains(&c.estimate),
            format!(
                "crossing {:.4} +- {:.4} (pairs {})",
                c.estimate,
                c.spread,
                c.pairwise.iter().map(|(a, b, x)| format!("{a}/{b}: {x:.4}")).collect::<Vec<_>>().join(", ")
            ),
        ),
        (None, e) => outcome(false, format!("no crossing: {}", e.clone().unwrap_or_default())),
    }
}

fn agreement_check(r: &SweepReport) -> Outcome {
    let locs: Vec<f64> = r.peaks.iter().filter_map(|p| p.location).collect();
    let cross = r.decoder.as_ref().and_then(|d| d.crossing.as_ref()).map(|c| c.estimate);
    match (locs.len(), cross) {
        (3, Some(c)) => {
            let mean = locs.iter().sum::<f64>() / 3.0;
            outcome((mean - c).abs() <= 0.03, format!("mean peak {mean:.4} vs crossing {c:.4}, gap {:.4}", (mean - c).abs()))
        }
        _ => outcome(false, format!("peaks {locs:?}, crossing {cross:?}")),
    }
}

fn sub_threshold_decay() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.code.size = 24;
    cfg.code.rounds = 24;
    cfg.noise.p = 0.05;
    cfg.estimator.method = MethodKind::Exact;
    let m = model_for(&cfg, 24, 24, 0.05).unwrap();
    let points = ladder(&cfg, &m).unwrap();
    match stmarkov::markov::markov_length(&points) {
        Ok(f) => outcome(
            f.r_squared >= 0.9 && f.xi.is_finite() && f.xi > 0.0,
            format!("xi {:.4} +- {:.4}, R^2 {:.5} over {} points", f.xi, f.xi_stderr, f.r_squared, f.used),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_stmarkov"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cmds: Vec<Vec<&str>> = vec![
        vec!["run", "--L", "16", "--rounds", "16", "--p", "0.09", "--samples", "200000", "--seed", "42", "--out", "run.json"],
        vec!["run", "--L", "16", "--rounds", "16", "--p", "0.09", "--out", "exact.json"],
        vec![
            "sweep", "--sizes", "12x12,14x14", "--ps", "0.05,0.08,0.11,0.14", "--samples", "20000", "--shots", "5000",
            "--out", "sweep.json",
        ],
        vec!["threshold", "--sizes", "8x8,12x12", "--ps", "0.05,0.08,0.11,0.14,0.17", "--shots", "5000", "--out", "th.json"],
        vec!["verify", "--random-configs", "50", "--samples", "20000", "--out", "verify.json"],
        vec!["export", "--L", "16", "--rounds", "16", "--p", "0.09", "--samples", "5000", "--out", "samples.hex"],
        vec!["ingest", "samples.hex", "--L", "16", "--rounds", "16", "--out", "ingest.json"],
        vec!["describe", "--L", "4", "--rounds", "2", "--what", "stabilizers", "--out", "stab.txt"],
    ];
    let mut failed = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        std::fs::create_dir_all(&dir).unwrap();
        for c in &cmds {
            if !run_cli(&dir, c) {
                failed.push(format!("{run}: {}", c.join(" ")));
            }
        }
    }
    let mut files: Vec<String> = std::fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| std::fs::read(tmp.path().join("a").join(f)).ok() != std::fs::read(tmp.path().join("b").join(f)).ok())
        .collect();
    outcome(
        failed.is_empty() && differing.is_empty() && files.len() >= 12,
        format!("{} commands, {} output files compared, differing {:?}, failed {:?}", cmds.len(), files.len(), differing, failed),
    )
}

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |id: &str| wanted.is_empty() || wanted.iter().any(|w| id.starts_with(w.as_str()));
    let mut lines: Vec<(String, String, Outcome)> = Vec::new();
    let mut record = |id: &str, name: &str, o: Outcome| {
        println!("criterion {id} [{name}]: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        lines.push((id.into(), name.into(), o));
    };
    let simple: [(&str, &str, fn() -> Outcome); 6] = [
        ("1", "foliation correspondence", foliation_correspondence_check),
        ("2", "stabilizer audit", stabilizer_audit_check),
        ("3", "entropy decomposition", entropy_decomposition),
        ("4", "sampled CMI vs brute force", estimator_vs_oracle),
        ("5", "rank oracle at p=1/2", rank_oracle),
        ("6", "trivial limits", trivial_limits),
    ];
    for (id, name, f) in simple {
        if want(id) {
            record(id, name, f());
        }
    }
    if want("7") {
        let (report, took) = threshold_sweep();
        record("7a", "Markov-length peak in [0.08, 0.14], growing with L", peak_check(&report));
        record("7b", "decoder crossing in [0.07, 0.14]", crossing_check(&report));
        record("7c", "peak vs crossing within 0.03", agreement_check(&report));
        let limit = 30 * MINUTE;
        record(
            "7t",
            "threshold reproduction runtime",
            outcome(took <= limit, format!("{:.1} min of {} min", took.as_secs_f64() / 60.0, limit.as_secs() / 60)),
        );
    }
    if want("8") {
        record("8", "sub-threshold decay", sub_threshold_decay());
    }
    if want("9") {
        record("9", "reproducibility", reproducibility());
    }
    let failed: Vec<&String> = lines.iter().filter(|l| !l.2.pass).map(|l| &l.0).collect();
    println!("acceptance: {} of {} passed", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
        std::process::exit(1);
    }
}
