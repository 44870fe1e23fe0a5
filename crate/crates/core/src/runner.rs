//! Batch orchestration over a dataset.
//!
//! Every point gets its own seed derived from the run seed and the point id,
//! so results do not depend on worker count or scheduling. Records are
//! written once, sorted by id, after all workers finish.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{certify, CertOutcome, CertParams};
use crate::data::{load_dataset, load_model, DataPoint};
use crate::diagnostics::{
    sample_curve, sample_exact_curve, sqc_estimate, sqc_estimate_mc, SigmaRadiusCurve, SqcReport,
};
use crate::error::{Error, Result};
use crate::model::{Classifier, Model};
use crate::qcrs::{grid_search, qcrs_optimize, GridResult, McRadius, OptTrace, QcrsParams};
use crate::report::{
    accuracy_csv, build_report, classwise_sigma_summary, classwise_table, parse_records, records_to_jsonl,
    AcrReport, PointRecord, SearchSummary, Status, RECORD_SCHEMA,
};
use crate::rng::{derive_seed, hash_str};
use crate::stats::Sigma;

const SEARCH_TAG: u64 = 0x5345;
const CERTIFY_TAG: u64 = 0x4345;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    FixedSigma { sigma: f64 },
    Qcrs,
    Grid { sigmas: Vec<f64> },
}

impl Mode {
    fn name(&self) -> &'static str {
        match self {
            Mode::FixedSigma { .. } => "fixed",
            Mode::Qcrs => "qcrs",
            Mode::Grid { .. } => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub mode: Mode,
    pub cert: CertParams,
    pub qcrs: QcrsParams,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub thresholds: Vec<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.cert.validate()?;
        match &self.mode {
            Mode::FixedSigma { sigma } => {
                Sigma::new(*sigma).map_err(|e| Error::Config(e.to_string()))?;
            }
            Mode::Qcrs => self.qcrs.validate()?,
            Mode::Grid { sigmas } => {
                if sigmas.is_empty() || sigmas.windows(2).any(|w| !(w[0] < w[1])) || sigmas[0] <= 0.0 {
                    return Err(Error::Config("grid sigmas must be positive and strictly increasing".into()));
                }
                if self.qcrs.grad_samples == 0 {
                    return Err(Error::Config("grid evaluation needs at least one sample".into()));
                }
            }
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("thresholds must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Search region `(sigma_min, sigma_max)` used for a model trained at
/// `sigma0` when none is given explicitly.
pub fn default_search_region(sigma0: f64) -> (f64, f64) {
    const KNOWN: [(f64, f64, f64); 3] = [(0.12, 0.08, 0.50), (0.25, 0.15, 0.70), (0.50, 0.25, 1.00)];
    KNOWN
        .iter()
        .find(|(s, _, _)| (s - sigma0).abs() < 1e-12)
        .map_or((0.5 * sigma0, 2.0 * sigma0), |&(_, lo, hi)| (lo, hi))
}

pub fn point_seed(run_seed: u64, id: &str) -> u64 {
    derive_seed(run_seed, &[hash_str(id)])
}

/// Everything produced for one point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub record: PointRecord,
    pub trace: Option<OptTrace>,
    pub grid: Option<GridResult>,
}

fn base_record(point: &DataPoint, mode: &Mode, seed: u64) -> PointRecord {
    PointRecord {
        schema: RECORD_SCHEMA.to_string(),
        id: point.id.clone(),
        mode: mode.name().to_string(),
        sigma: 0.0,
        status: Status::Error,
        label: None,
        true_label: point.label,
        pa_lower: None,
        radius: 0.0,
        correct: false,
        forward_passes: 0,
        search_forward_passes: 0,
        seed,
        search: None,
        error: None,
    }
}

fn fill_outcome(record: &mut PointRecord, sigma: f64, outcome: &CertOutcome, search_passes: u64) {
    record.sigma = sigma;
    record.search_forward_passes = search_passes;
    record.forward_passes = search_passes + outcome.forward_passes();
    match *outcome {
        CertOutcome::Certified {
            label,
            pa_lower,
            radius,
            ..
        } => {
            record.status = Status::Certified;
            record.label = Some(label);
            record.pa_lower = Some(pa_lower.value());
            record.radius = radius.value();
            record.correct = label == record.true_label;
        }
        CertOutcome::Abstain { .. } => {
            record.status = Status::Abstain;
        }
    }
}

/// Certifies one point under `config.mode`. Failures are recorded on the
/// point rather than aborting the run.
pub fn process_point(clf: &Classifier, point: &DataPoint, config: &RunConfig) -> PointResult {
    let seed = point_seed(config.cert.seed, &point.id);
    let mut record = base_record(point, &config.mode, seed);
    let cert = config.cert.with_seed(derive_seed(seed, &[CERTIFY_TAG]));
    let search_seed = derive_seed(seed, &[SEARCH_TAG]);
    let mut trace = None;
    let mut grid = None;

    let result: Result<()> = (|| {
        match &config.mode {
            Mode::FixedSigma { sigma } => {
                let outcome = certify(clf, &point.x, Sigma::new(*sigma)?, &cert)?;
                fill_outcome(&mut record, *sigma, &outcome, 0);
            }
            Mode::Qcrs => {
                let params = QcrsParams {
                    seed: search_seed,
                    ..config.qcrs
                };
                let curve = McRadius {
                    clf,
                    x: &point.x,
                    n_est: params.grad_samples,
                    alpha: config.cert.alpha,
                };
                let (sigma, t) = qcrs_optimize(&curve, &params)?;
                let outcome = certify(clf, &point.x, sigma, &cert)?;
                fill_outcome(&mut record, sigma.value(), &outcome, t.forward_passes);
                record.search = Some(SearchSummary {
                    sigma_hat: t.sigma_hat,
                    radius_hat: t.radius_hat,
                    radius_sigma0: t.radius_sigma0,
                    rejected: t.rejected,
                    iterations: t.iterations.len(),
                });
                trace = Some(t);
            }
            Mode::Grid { sigmas } => {
                let curve = McRadius {
                    clf,
                    x: &point.x,
                    n_est: config.qcrs.grad_samples,
                    alpha: config.cert.alpha,
                };
                let g = grid_search(&curve, sigmas, search_seed)?;
                let outcome = certify(clf, &point.x, Sigma::new(g.sigma)?, &cert)?;
                fill_outcome(&mut record, g.sigma, &outcome, g.forward_passes);
                grid = Some(g);
            }
        }
        Ok(())
    })();

    if let Err(e) = result {
        warn!("point {}: {e}", point.id);
        record.status = Status::Error;
        record.error = Some(e.to_string());
    }
    PointResult { record, trace, grid }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Processes every point on a pool of `workers` threads and returns the
/// results sorted by point id.
pub fn process_dataset(
    clf: &Classifier,
    points: &[DataPoint],
    config: &RunConfig,
) -> Result<Vec<PointResult>> {
    let pool = thread_pool(config.workers)?;
    let mut results: Vec<PointResult> =
        pool.install(|| points.par_iter().map(|p| process_point(clf, p, config)).collect());
    results.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    Ok(results)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    trace: &'a OptTrace,
}

#[derive(Serialize)]
struct GridLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    grid: &'a GridResult,
}

/// Runs a full certification pass and writes `records.jsonl`,
/// `report.json`, `radius_accuracy.csv`, plus `traces.jsonl` /
/// `grid.jsonl` and `classwise_sigma.tsv` for the searching modes.
pub fn run(config: &RunConfig) -> Result<AcrReport> {
    config.validate()?;
    let model = load_model(&config.model)?;
    let points = load_dataset(&config.dataset, &model)?;
    fs::create_dir_all(&config.out_dir)?;

    let clf = Classifier::from_arc(Arc::new(model));
    let start = Instant::now();
    let results = process_dataset(&clf, &points, config)?;
    let elapsed = start.elapsed().as_secs_f64();

    let records: Vec<PointRecord> = results.iter().map(|r| r.record.clone()).collect();
    let records_path = config.out_dir.join("records.jsonl");
    fs::write(&records_path, records_to_jsonl(&records)?)?;

    let traces: Vec<TraceLine> = results
        .iter()
        .filter_map(|r| r.trace.as_ref().map(|t| TraceLine { id: &r.record.id, trace: t }))
        .collect();
    if !traces.is_empty() {
        write_jsonl(&config.out_dir.join("traces.jsonl"), &traces)?;
    }
    let grids: Vec<GridLine> = results
        .iter()
        .filter_map(|r| r.grid.as_ref().map(|g| GridLine { id: &r.record.id, grid: g }))
        .collect();
    if !grids.is_empty() {
        write_jsonl(&config.out_dir.join("grid.jsonl"), &grids)?;
    }

    let report = write_report(&records, &config.thresholds, elapsed, &config.out_dir, &records_path)?;
    if !matches!(config.mode, Mode::FixedSigma { .. }) {
        fs::write(
            config.out_dir.join("classwise_sigma.tsv"),
            classwise_table(&classwise_sigma_summary(&records)),
        )?;
    }
    let counted = clf.forward_passes();
    if counted != report.total_forward_passes {
        warn!(
            "forward-pass counter {counted} disagrees with record total {}",
            report.total_forward_passes
        );
    }
    info!(
        "{} points, ACR {:.4}, {} forward passes in {:.2}s",
        report.num_points, report.acr, report.total_forward_passes, elapsed
    );
    Ok(report)
}

fn write_report(
    records: &[PointRecord],
    thresholds: &[f64],
    elapsed: f64,
    out_dir: &Path,
    records_path: &Path,
) -> Result<AcrReport> {
    let report = build_report(records, thresholds, elapsed, &records_path.display().to_string())?;
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(out_dir.join("radius_accuracy.csv"), accuracy_csv(&report.certified_accuracy))?;
    Ok(report)
}

/// Re-aggregates an existing `records.jsonl`.
pub fn report_from_records(records_path: &Path, thresholds: &[f64], out_dir: &Path) -> Result<AcrReport> {
    let display = records_path.display().to_string();
    let text = fs::read_to_string(records_path).map_err(|e| Error::Data {
        path: display.clone(),
        line: 0,
        message: format!("cannot read records: {e}"),
    })?;
    let records = parse_records(&text, &display)?;
    fs::create_dir_all(out_dir)?;
    let report = write_report(&records, thresholds, 0.0, out_dir, records_path)?;
    fs::write(
        out_dir.join("classwise_sigma.tsv"),
        classwise_table(&classwise_sigma_summary(&records)),
    )?;
    Ok(report)
}

/// Settings shared by the curve and diagnose subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub sigmas: Vec<f64>,
    /// Use closed-form probabilities instead of sampling.
    pub exact: bool,
    pub n: u64,
    pub alpha: f64,
    pub seed: u64,
    pub tau: f64,
    pub grad_samples: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
}

// Radii certified for a class other than the point's label count as zero.
fn point_curve(clf: &Classifier, model: &Model, point: &DataPoint, cfg: &CurveConfig) -> Result<SigmaRadiusCurve> {
    let curve = if cfg.exact {
        sample_exact_curve(model, &point.x, &cfg.sigmas)?
    } else {
        let seed = point_seed(cfg.seed, &point.id);
        sample_curve(clf, &point.x, &cfg.sigmas, cfg.n, cfg.alpha, seed)?
    };
    Ok(curve.for_label(point.label))
}

fn load_for_curves(cfg: &CurveConfig) -> Result<(Model, Vec<DataPoint>)> {
    if cfg.sigmas.len() < 2 || cfg.sigmas.windows(2).any(|w| !(w[0] < w[1])) || cfg.sigmas[0] <= 0.0 {
        return Err(Error::Config("need at least 2 positive, strictly increasing sigmas".into()));
    }
    if cfg.workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let model = load_model(&cfg.model)?;
    let points = load_dataset(&cfg.dataset, &model)?;
    fs::create_dir_all(&cfg.out_dir)?;
    Ok((model, points))
}

/// Writes one `curves/<id>.csv` per point.
pub fn run_curves(cfg: &CurveConfig) -> Result<usize> {
    let (model, points) = load_for_curves(cfg)?;
    let dir = cfg.out_dir.join("curves");
    fs::create_dir_all(&dir)?;
    let clf = Classifier::new(model.clone());
    let pool = thread_pool(cfg.workers)?;
    let curves = pool.install(|| {
        points
            .par_iter()
            .map(|p| point_curve(&clf, &model, p, cfg).map(|c| (p.id.clone(), c)))
            .collect::<Result<Vec<_>>>()
    })?;
    for (id, curve) in &curves {
        fs::write(dir.join(format!("{}.csv", sanitize(id))), curve.to_csv())?;
    }
    Ok(curves.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqcLine {
    pub id: String,
    pub true_label: usize,
    #[serde(flatten)]
    pub report: SqcReport,
}

/// Writes `sqc.jsonl`, one quasiconcavity/concavity screen per point.
pub fn run_diagnose(cfg: &CurveConfig) -> Result<Vec<SqcLine>> {
    let (model, points) = load_for_curves(cfg)?;
    let clf = Classifier::new(model.clone());
    let pool = thread_pool(cfg.workers)?;
    let mut lines = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let curve = point_curve(&clf, &model, p, cfg)?;
                let (_, star) = curve.argmax().expect("curve has at least two points");
                let report = if cfg.exact {
                    sqc_estimate(&curve, star)?
                } else {
                    let est = McRadius {
                        clf: &clf,
                        x: &p.x,
                        n_est: cfg.grad_samples,
                        alpha: cfg.alpha,
                    };
                    sqc_estimate_mc(&curve, &est, star, cfg.tau, point_seed(cfg.seed, &p.id))?
                };
                Ok(SqcLine {
                    id: p.id.clone(),
                    true_label: p.label,
                    report,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    lines.sort_by(|a, b| a.id.cmp(&b.id));
    write_jsonl(&cfg.out_dir.join("sqc.jsonl"), &lines)?;
    Ok(lines)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
