//! Subcommand implementations, shared by the binary and the integration tests.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stmarkov::decoder::{logical_error_rate, threshold_estimate, Crossing, LogicalErrorRate, RateCurve};
use stmarkov::foliation::{foliate, MappingRules};
use stmarkov::markov::{
    cmi, cmi_ladder_from_batch, find_peak, ladder_tripartitions, markov_length, CmiMethod, CmiPoint, MarkovError,
    MarkovFit, Tripartition,
};
use stmarkov::sampler::{sample_batch, SampleBatch};
use stmarkov::verify::{run_suite, CheckResult, Status, VerifyOptions};
use stmarkov::{build_detector_model, DetectorModel};

use crate::config::{ExperimentConfig, MethodKind};
use crate::interchange::{read_records, write_batch, Encoding};
use crate::output::{cmi_csv, decoder_csv, emit, json_text, sibling, CmiRow, DecoderRow, Meta, TOOL, VERSION};
use crate::CliError;

pub fn model_for(cfg: &ExperimentConfig, l: usize, t: usize, p: f64) -> Result<DetectorModel, CliError> {
    let code = cfg.build_code(l).map_err(|e| CliError::Input(format!("code: {e}")))?;
    build_detector_model(&code, t, cfg.noise_at(p)).map_err(|e| CliError::Input(format!("noise: {e}")))
}

fn markov_err(e: MarkovError) -> CliError {
    CliError::Input(format!("tripartition: {e}"))
}

pub fn tripartitions(cfg: &ExperimentConfig, model: &DetectorModel) -> Result<(Vec<Tripartition>, Vec<usize>), CliError> {
    let template = cfg.template(model.space_periods.len());
    ladder_tripartitions(model, &template, &cfg.ladder()).map_err(markov_err)
}

/// Sample batch over the union of every ladder region.
pub fn union_batch(cfg: &ExperimentConfig, model: &DetectorModel) -> Result<SampleBatch, CliError> {
    let (_, union) = tripartitions(cfg, model)?;
    let n = cfg.estimator.samples.max(1);
    sample_batch(model, &union, n, cfg.seed).map_err(|e| CliError::Input(format!("sampler: {e}")))
}

/// The CMI ladder for one model under the configured estimator.
pub fn ladder(cfg: &ExperimentConfig, model: &DetectorModel) -> Result<Vec<CmiPoint>, CliError> {
    let (tris, union) = tripartitions(cfg, model)?;
    match cfg.method() {
        MethodKind::Sampled => {
            let batch = sample_batch(model, &union, cfg.estimator.samples, cfg.seed)
                .map_err(|e| CliError::Input(format!("sampler: {e}")))?;
            cmi_ladder_from_batch(&batch, &tris).map_err(markov_err)
        }
        m => {
            let method = if m == MethodKind::BruteForce { CmiMethod::BruteForce } else { CmiMethod::Enumerated };
            tris.iter().map(|t| cmi(model, t, method).map_err(markov_err)).collect()
        }
    }
}

/// The CMI ladder read from externally produced detector records.
pub fn ladder_from_records(
    cfg: &ExperimentConfig,
    model: &DetectorModel,
    batch: &SampleBatch,
) -> Result<Vec<CmiPoint>, CliError> {
    let (tris, union) = tripartitions(cfg, model)?;
    if let Some(&d) = union.iter().find(|d| !batch.region.contains(d)) {
        let det = &model.detectors[d];
        return Err(CliError::Input(format!(
            "records lack detector check {} round {} ({:?} sector) needed by the tripartition ladder",
            det.check, det.round, det.sector
        )));
    }
    cmi_ladder_from_batch(batch, &tris).map_err(markov_err)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub xi: Option<f64>,
    pub fit: Option<MarkovFit>,
    pub fit_error: Option<String>,
}

impl FitSummary {
    pub fn of(points: &[CmiPoint]) -> Self {
        match markov_length(points) {
            Ok(f) => Self { xi: Some(f.xi), fit: Some(f), fit_error: None },
            Err(e) => Self { xi: None, fit: None, fit_error: Some(e.to_string()) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub meta: Meta,
    pub source: String,
    pub code: String,
    pub l: usize,
    pub t: usize,
    pub p: f64,
    pub q: f64,
    pub method: String,
    pub points: Vec<CmiPoint>,
    #[serde(flatten)]
    pub fit: FitSummary,
}

fn cmi_rows(cfg: &ExperimentConfig, l: usize, t: usize, p: f64, points: &[CmiPoint]) -> Vec<CmiRow> {
    points
        .iter()
        .map(|pt| CmiRow {
            code: cfg.code.family.to_string(),
            l,
            t,
            p,
            q: cfg.noise_at(p).q,
            w_a: cfg.tripartition.w_a,
            point: pt.clone(),
        })
        .collect()
}

fn write_run(cfg: &ExperimentConfig, report: &RunReport) -> Result<(), CliError> {
    emit(cfg.output.path.as_deref(), &json_text(report))?;
    let csv = cfg.output.csv.clone().or_else(|| cfg.output.path.as_deref().map(|p| sibling(p, "")));
    if let Some(csv) = csv {
        let rows = cmi_rows(cfg, report.l, report.t, report.p, &report.points);
        emit(Some(&csv), &cmi_csv(&report.meta, &rows)?)?;
    }
    Ok(())
}

fn report(cfg: &ExperimentConfig, model: &DetectorModel, source: String, method: &str, points: Vec<CmiPoint>) -> RunReport {
    RunReport {
        meta: Meta::new(cfg, model.code.hash(), Some(model.hash())),
        source,
        code: cfg.code.family.to_string(),
        l: cfg.code.size,
        t: cfg.code.rounds,
        p: cfg.noise.p,
        q: model.noise.q,
        method: method.to_string(),
        fit: FitSummary::of(&points),
        points,
    }
}

fn method_label(cfg: &ExperimentConfig) -> &'static str {
    match cfg.method() {
        MethodKind::Sampled => "sampled",
        MethodKind::BruteForce => "brute_force",
        _ => "enumerated",
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let model = model_for(cfg, cfg.code.size, cfg.code.rounds, cfg.noise.p)?;
    let points = ladder(cfg, &model)?;
    Ok(report(cfg, &model, "model".into(), method_label(cfg), points))
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let r = run(cfg)?;
    write_run(cfg, &r)
}

pub fn ingest(cfg: &ExperimentConfig, path: &Path) -> Result<RunReport, CliError> {
    let model = model_for(cfg, cfg.code.size, cfg.code.rounds, cfg.noise.p)?;
    let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let batch = read_records(BufReader::new(file))?.into_batch(&model)?;
    let points = ladder_from_records(cfg, &model, &batch)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(report(cfg, &model, format!("file:{name}"), "sampled", points))
}

pub fn cmd_ingest(cfg: &ExperimentConfig, path: &Path) -> Result<(), CliError> {
    let r = ingest(cfg, path)?;
    write_run(cfg, &r)
}

pub fn cmd_export(cfg: &ExperimentConfig, encoding: Encoding) -> Result<(), CliError> {
    if cfg.estimator.samples == 0 {
        return Err(CliError::Input("estimator.samples: export needs samples >= 1".into()));
    }
    let model = model_for(cfg, cfg.code.size, cfg.code.rounds, cfg.noise.p)?;
    let batch = union_batch(cfg, &model)?;
    match &cfg.output.path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write_batch(&mut w, &batch, &model, encoding)?;
            w.flush()?;
        }
        None => {
            let mut w = BufWriter::new(std::io::stdout().lock());
            write_batch(&mut w, &batch, &model, encoding)?;
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescribeWhat {
    Dem,
    Graph,
    Stabilizers,
    Code,
}

pub fn cmd_describe(cfg: &ExperimentConfig, what: DescribeWhat) -> Result<(), CliError> {
    let model = model_for(cfg, cfg.code.size, cfg.code.rounds, cfg.noise.p)?;
    let text = match what {
        DescribeWhat::Dem => model.dem_text(),
        DescribeWhat::Code => model.code.to_json() + "\n",
        DescribeWhat::Graph | DescribeWhat::Stabilizers => {
            let rs = foliate(&model.code, cfg.code.rounds + 1).map_err(|e| CliError::Input(format!("foliation: {e}")))?;
            if what == DescribeWhat::Graph {
                rs.graph_text()
            } else {
                rs.stabilizers_text()
            }
        }
    };
    emit(cfg.output.path.as_deref(), &text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub l: usize,
    pub t: usize,
    pub p: f64,
    pub q: f64,
    pub code_hash: String,
    pub model_hash: Option<String>,
    pub points: Vec<CmiPoint>,
    #[serde(flatten)]
    pub fit: FitSummary,
    /// Set when the cell could not be evaluated; the sweep carries on.
    pub error: Option<String>,
    pub decoder: Option<LogicalErrorRate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakSummary {
    pub l: usize,
    pub t: usize,
    pub location: Option<f64>,
    pub height: Option<f64>,
    pub grid_argmax: Option<f64>,
    pub interior: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecoderSummary {
    pub curves: Vec<RateCurve>,
    pub crossing: Option<Crossing>,
    pub crossing_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub meta: Meta,
    pub cells: Vec<CellRecord>,
    pub peaks: Vec<PeakSummary>,
    pub decoder: Option<DecoderSummary>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepMode {
    pub cmi: bool,
    pub decoder: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    index: usize,
    cell: CellRecord,
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".cells.jsonl");
    s.into()
}

fn grid(cfg: &ExperimentConfig) -> Vec<(usize, usize, f64)> {
    cfg.sweep
        .sizes
        .iter()
        .flat_map(|s| cfg.sweep.ps.iter().map(move |&p| (s[0], s[1], p)))
        .collect()
}

fn eval_cell(cfg: &ExperimentConfig, mode: SweepMode, l: usize, t: usize, p: f64) -> CellRecord {
    let mut rec = CellRecord {
        l,
        t,
        p,
        q: cfg.noise_at(p).q,
        code_hash: cfg.build_code(l).map(|c| c.hash()).unwrap_or_default(),
        model_hash: None,
        points: Vec::new(),
        fit: FitSummary { xi: None, fit: None, fit_error: None },
        error: None,
        decoder: None,
    };
    let model = match model_for(cfg, l, t, p) {
        Ok(m) => m,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.model_hash = Some(model.hash());
    if mode.cmi {
        match ladder(cfg, &model) {
            Ok(points) => {
                rec.fit = FitSummary::of(&points);
                rec.points = points;
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
    }
    if mode.decoder && cfg.decoder.shots > 0 {
        match logical_error_rate(&model, cfg.decoder.shots, cfg.seed) {
            Ok(r) => rec.decoder = Some(r),
            Err(e) => {
                let msg = format!("decoder: {e}");
                rec.error = Some(match rec.error.take() {
                    Some(prev) => format!("{prev}; {msg}"),
                    None => msg,
                });
            }
        }
    }
    rec
}

fn load_checkpoint(path: &Path, hash: &str, n: usize) -> Result<BTreeMap<usize, CellRecord>, CliError> {
    let mut done = BTreeMap::new();
    let Ok(file) = File::open(path) else { return Ok(done) };
    for line in BufReader::new(file).lines() {
        let line = line?;
        // a torn final line from an interrupted run is simply recomputed
        let Ok(c) = serde_json::from_str::<Checkpoint>(&line) else { continue };
        if c.config_hash == hash && c.index < n {
            done.insert(c.index, c.cell);
        }
    }
    Ok(done)
}

/// Evaluates every grid cell, reusing checkpointed cells when `resume` is set.
pub fn sweep(
    cfg: &ExperimentConfig,
    mode: SweepMode,
    checkpoint: Option<&Path>,
    resume: bool,
) -> Result<(SweepReport, usize), CliError> {
    let cells = grid(cfg);
    let hash = cfg.hash();
    let mut done = match (checkpoint, resume) {
        (Some(path), true) => load_checkpoint(path, &hash, cells.len())?,
        _ => BTreeMap::new(),
    };
    let reused = done.len();
    let sink = match checkpoint {
        Some(path) => {
            let mut opts = OpenOptions::new();
            opts.create(true);
            if resume {
                opts.append(true);
            } else {
                opts.write(true).truncate(true);
            }
            Some(Mutex::new(opts.open(path)?))
        }
        None => None,
    };
    let todo: Vec<usize> = (0..cells.len()).filter(|i| !done.contains_key(i)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Input(format!("jobs: {e}")))?;
    let fresh: Vec<(usize, CellRecord)> = pool.install(|| {
        todo.par_iter()
            .map(|&i| {
                let (l, t, p) = cells[i];
                let cell = eval_cell(cfg, mode, l, t, p);
                if let Some(sink) = &sink {
                    let line = serde_json::to_string(&Checkpoint { config_hash: hash.clone(), index: i, cell: cell.clone() })
                        .expect("serializable");
                    let mut f = sink.lock().expect("checkpoint lock");
                    // a failed checkpoint write only costs recomputation on resume
                    let _ = writeln!(f, "{line}").and_then(|_| f.flush());
                }
                (i, cell)
            })
            .collect()
    });
    done.extend(fresh);
    let cells: Vec<CellRecord> = done.into_values().collect();
    let sizes: Vec<(usize, usize)> = cfg.sweep.sizes.iter().map(|s| (s[0], s[1])).collect();
    let ps = &cfg.sweep.ps;
    let find = |l: usize, t: usize, p: f64| cells.iter().find(|c| c.l == l && c.t == t && c.p == p);
    let peaks = if mode.cmi {
        sizes
            .iter()
            .map(|&(l, t)| {
                let xis: Vec<Option<f64>> = ps.iter().map(|&p| find(l, t, p).and_then(|c| c.fit.xi)).collect();
                let (location, height, grid_argmax, interior) = find_peak(ps, &xis);
                let note = (!interior).then(|| "no interior maximum".to_string());
                PeakSummary { l, t, location, height, grid_argmax, interior, note }
            })
            .collect()
    } else {
        Vec::new()
    };
    let decoder = (mode.decoder && cfg.decoder.shots > 0).then(|| {
        let curves: Vec<RateCurve> = sizes
            .iter()
            .map(|&(l, t)| RateCurve {
                l,
                points: ps
                    .iter()
                    .filter_map(|&p| find(l, t, p).and_then(|c| c.decoder.as_ref()).map(|r| (p, r.rate)))
                    .collect(),
            })
            .collect();
        let (crossing, crossing_error) = match threshold_estimate(&curves) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
        DecoderSummary { curves, crossing, crossing_error }
    });
    let code_hashes: Vec<String> = sizes
        .iter()
        .map(|&(l, _)| cfg.build_code(l).map(|c| c.hash()).unwrap_or_default())
        .collect();
    let meta = Meta::new(cfg, stmarkov::hash::sha256_json(&code_hashes), None);
    Ok((SweepReport { meta, cells, peaks, decoder }, reused))
}

fn write_sweep(cfg: &ExperimentConfig, report: &SweepReport, mode: SweepMode) -> Result<(), CliError> {
    emit(cfg.output.path.as_deref(), &json_text(report))?;
    let csv = cfg.output.csv.clone().or_else(|| cfg.output.path.as_deref().map(|p| sibling(p, "")));
    let Some(csv) = csv else { return Ok(()) };
    if mode.cmi {
        let rows: Vec<CmiRow> = report.cells.iter().flat_map(|c| cmi_rows(cfg, c.l, c.t, c.p, &c.points)).collect();
        emit(Some(&csv), &cmi_csv(&report.meta, &rows)?)?;
    }
    if report.decoder.is_some() {
        let rows: Vec<DecoderRow> = report
            .cells
            .iter()
            .filter_map(|c| c.decoder.clone().map(|rate| DecoderRow { l: c.l, t: c.t, p: c.p, q: c.q, rate }))
            .collect();
        let path = if mode.cmi { sibling(&csv, "_decoder") } else { csv };
        emit(Some(&path), &decoder_csv(&report.meta, &rows)?)?;
    }
    Ok(())
}

fn run_grid(cfg: &ExperimentConfig, mode: SweepMode, resume: bool) -> Result<SweepReport, CliError> {
    if resume && cfg.output.path.is_none() {
        return Err(CliError::Input("--resume needs --out to locate the checkpoint".into()));
    }
    let ckpt = cfg.output.path.as_deref().map(checkpoint_path);
    let (report, reused) = sweep(cfg, mode, ckpt.as_deref(), resume)?;
    let total = report.cells.len();
    eprintln!("{} cells: {} reused from checkpoint, {} computed", total, reused, total - reused);
    for c in &report.cells {
        if let Some(e) = &c.error {
            eprintln!("cell L={} T={} p={}: {e}", c.l, c.t, c.p);
        }
    }
    for pk in &report.peaks {
        if let Some(n) = &pk.note {
            eprintln!("L={} T={}: {n}", pk.l, pk.t);
        }
    }
    write_sweep(cfg, &report, mode)?;
    Ok(report)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, resume: bool) -> Result<(), CliError> {
    run_grid(cfg, SweepMode { cmi: true, decoder: true }, resume).map(|_| ())
}

pub fn cmd_threshold(cfg: &ExperimentConfig, resume: bool) -> Result<(), CliError> {
    if cfg.decoder.shots == 0 {
        return Err(CliError::Input("decoder.shots: threshold needs shots >= 1".into()));
    }
    let report = run_grid(cfg, SweepMode { cmi: false, decoder: true }, resume)?;
    if let Some(d) = &report.decoder {
        match (&d.crossing, &d.crossing_error) {
            (Some(c), _) => eprintln!("crossing {:.4} +- {:.4}", c.estimate, c.spread),
            (None, Some(e)) => eprintln!("no crossing: {e}"),
            _ => {}
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub code_hashes: Vec<String>,
    pub seed: u64,
    pub options: VerifyOptions,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

pub fn verify(opts: &VerifyOptions) -> VerifyReport {
    let checks = run_suite(opts);
    let code_hashes = opts
        .targets
        .iter()
        .map(|t| match t.family {
            stmarkov::CodeFamily::Toric => stmarkov::toric_code(t.size).map(|c| c.hash()),
            _ => stmarkov::repetition_code(t.size).map(|c| c.hash()),
        })
        .map(|h| h.unwrap_or_default())
        .collect();
    let mut hashed = opts.clone();
    hashed.rules = MappingRules::Standard;
    VerifyReport {
        tool: TOOL,
        version: VERSION,
        config_hash: stmarkov::hash::sha256_json(&(&hashed, format!("{:?}", opts.rules))),
        code_hashes,
        seed: opts.seed,
        options: opts.clone(),
        passed: checks.iter().all(|c| c.status != Status::Fail),
        checks,
    }
}

pub fn cmd_verify(opts: &VerifyOptions, out: Option<&Path>) -> Result<(), CliError> {
    let report = verify(opts);
    let mut stdout = std::io::stdout().lock();
    for c in &report.checks {
        let tag = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        writeln!(stdout, "{tag} {}: {}", c.name, c.detail)?;
    }
    drop(stdout);
    if let Some(p) = out {
        emit(Some(p), &json_text(&report))?;
    }
    let failed = report.checks.iter().filter(|c| c.status == Status::Fail).count();
    if failed > 0 {
        return Err(CliError::VerificationFailed { failed, total: report.checks.len() });
    }
    Ok(())
}
