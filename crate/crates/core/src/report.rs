//! Per-point result records and the aggregates computed from them:
//! average certified radius, certified accuracy at radius thresholds, and
//! per-class summaries of the chosen noise level.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORD_SCHEMA: &str = "certsmooth.record.v1";
pub const REPORT_SCHEMA: &str = "certsmooth.report.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Certified,
    Abstain,
    Error,
}

/// Summary of the sigma search attached to a record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub sigma_hat: f64,
    pub radius_hat: f64,
    pub radius_sigma0: f64,
    pub rejected: bool,
    pub iterations: usize,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub schema: String,
    pub id: String,
    pub mode: String,
    pub sigma: f64,
    pub status: Status,
    pub label: Option<usize>,
    pub true_label: usize,
    pub pa_lower: Option<f64>,
    pub radius: f64,
    /// Certified with the true label; only these count toward ACR.
    pub correct: bool,
    /// All forward passes spent on this point (search plus certification).
    pub forward_passes: u64,
    pub search_forward_passes: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PointRecord {
    /// Radius that counts toward ACR and certified accuracy.
    pub fn qualifying_radius(&self) -> f64 {
        if self.status == Status::Certified && self.correct {
            self.radius
        } else {
            0.0
        }
    }

    fn qualifies_at(&self, threshold: f64) -> bool {
        self.status == Status::Certified && self.correct && self.radius >= threshold
    }
}

/// Mean qualifying radius over all records.
pub fn acr(records: &[PointRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::domain("ACR of an empty record set"));
    }
    Ok(records.iter().map(PointRecord::qualifying_radius).sum::<f64>() / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyAtRadius {
    pub radius: f64,
    pub accuracy: f64,
}

/// Fraction of records certified correctly with radius at least each
/// threshold.
pub fn radius_accuracy_table(records: &[PointRecord], thresholds: &[f64]) -> Result<Vec<AccuracyAtRadius>> {
    if records.is_empty() {
        return Err(Error::domain("certified accuracy of an empty record set"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("thresholds must be strictly increasing".into()));
    }
    let n = records.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&r| AccuracyAtRadius {
            radius: r,
            accuracy: records.iter().filter(|rec| rec.qualifies_at(r)).count() as f64 / n,
        })
        .collect())
}

pub fn accuracy_csv(table: &[AccuracyAtRadius]) -> String {
    let mut out = String::from("radius,certified_accuracy\n");
    for row in table {
        writeln!(out, "{},{}", row.radius, row.accuracy).expect("string write");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSigmaSummary {
    pub label: usize,
    pub count: usize,
    pub mean_sigma: f64,
    /// Population standard deviation.
    pub std_sigma: f64,
}

/// Mean and population standard deviation of the chosen sigma per true
/// label. Records that failed are left out.
pub fn classwise_sigma_summary(records: &[PointRecord]) -> Vec<ClassSigmaSummary> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status != Status::Error) {
        groups.entry(r.true_label).or_default().push(r.sigma);
    }
    groups
        .into_iter()
        .map(|(label, sigmas)| {
            let n = sigmas.len() as f64;
            let mean = sigmas.iter().sum::<f64>() / n;
            let var = sigmas.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            ClassSigmaSummary {
                label,
                count: sigmas.len(),
                mean_sigma: mean,
                std_sigma: var.sqrt(),
            }
        })
        .collect()
}

/// Renders the per-class summary as a two-row table, one column per class.
pub fn classwise_table(summary: &[ClassSigmaSummary]) -> String {
    let mut out = String::from("class");
    for s in summary {
        write!(out, "\t{}", s.label).unwrap();
    }
    out.push_str("\nmean");
    for s in summary {
        write!(out, "\t{:.4}", s.mean_sigma).unwrap();
    }
    out.push_str("\nstd");
    for s in summary {
        write!(out, "\t{:.4}", s.std_sigma).unwrap();
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcrReport {
    pub schema: String,
    pub acr: f64,
    pub certified_accuracy: Vec<AccuracyAtRadius>,
    pub num_points: usize,
    pub num_certified: usize,
    pub num_correct: usize,
    pub num_errors: usize,
    pub total_forward_passes: u64,
    pub search_forward_passes: u64,
    pub certify_forward_passes: u64,
    /// Search passes as a fraction of certification passes.
    pub search_overhead: f64,
    pub wall_time_seconds: f64,
    pub records_path: String,
}

pub fn build_report(
    records: &[PointRecord],
    thresholds: &[f64],
    wall_time_seconds: f64,
    records_path: &str,
) -> Result<AcrReport> {
    let total: u64 = records.iter().map(|r| r.forward_passes).sum();
    let search: u64 = records.iter().map(|r| r.search_forward_passes).sum();
    let certify = total - search;
    Ok(AcrReport {
        schema: REPORT_SCHEMA.to_string(),
        acr: acr(records)?,
        certified_accuracy: radius_accuracy_table(records, thresholds)?,
        num_points: records.len(),
        num_certified: records.iter().filter(|r| r.status == Status::Certified).count(),
        num_correct: records.iter().filter(|r| r.qualifying_radius() > 0.0).count(),
        num_errors: records.iter().filter(|r| r.status == Status::Error).count(),
        total_forward_passes: total,
        search_forward_passes: search,
        certify_forward_passes: certify,
        search_overhead: if certify > 0 { search as f64 / certify as f64 } else { 0.0 },
        wall_time_seconds,
        records_path: records_path.to_string(),
    })
}

pub fn parse_records(text: &str, source: &str) -> Result<Vec<PointRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data {
                path: source.to_string(),
                line: i + 1,
                message: format!("malformed record: {e}"),
            })
        })
        .collect()
}

pub fn records_to_jsonl(records: &[PointRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// `0, 0.25, ..., 2.0`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=8).map(|i| i as f64 * 0.25).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn record(id: &str, true_label: usize, label: Option<usize>, radius: f64, sigma: f64) -> PointRecord {
        let certified = label.is_some() && radius > 0.0;
        PointRecord {
            schema: RECORD_SCHEMA.into(),
            id: id.into(),
            mode: "fixed".into(),
            sigma,
            status: if certified { Status::Certified } else { Status::Abstain },
            label,
            true_label,
            pa_lower: None,
            radius,
            correct: certified && label == Some(true_label),
            forward_passes: 100,
            search_forward_passes: 0,
            seed: 0,
            search: None,
            error: None,
        }
    }

    #[test]
    fn acr_counts_abstain_as_zero() {
        let recs = [
            record("a", 0, Some(0), 0.2, 0.25),
            record("b", 0, Some(0), 0.4, 0.25),
            record("c", 0, None, 0.0, 0.25),
        ];
        assert!((acr(&recs).unwrap() - 0.2).abs() < 1e-15);
        assert!(acr(&[]).is_err());
    }

    #[test]
    fn misclassified_certificates_do_not_count() {
        let recs = [record("a", 1, Some(0), 0.9, 0.25), record("b", 1, Some(1), 0.3, 0.25)];
        assert!((acr(&recs).unwrap() - 0.15).abs() < 1e-15);
        let table = radius_accuracy_table(&recs, &[0.5]).unwrap();
        assert_eq!(table[0].accuracy, 0.0);
    }

    #[test]
    fn accuracy_table_examples() {
        let recs = [
            record("a", 0, Some(0), 0.3, 0.25),
            record("b", 0, Some(0), 0.6, 0.25),
            record("c", 0, None, 0.0, 0.25),
        ];
        let t = radius_accuracy_table(&recs, &[0.25, 0.5]).unwrap();
        assert!((t[0].accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((t[1].accuracy - 1.0 / 3.0).abs() < 1e-12);
        let abstain = [record("a", 0, None, 0.0, 0.25)];
        assert!(radius_accuracy_table(&abstain, &[0.0, 0.5])
            .unwrap()
            .iter()
            .all(|r| r.accuracy == 0.0));
        assert!(radius_accuracy_table(&recs, &[0.5, 0.25]).is_err());
        assert!(radius_accuracy_table(&[], &[0.5]).is_err());
        assert_eq!(accuracy_csv(&t[..1]), "radius,certified_accuracy\n0.25,0.6666666666666666\n");
    }

    #[test]
    fn classwise_examples() {
        let recs = [record("a", 0, Some(0), 0.1, 0.4), record("b", 0, Some(0), 0.1, 0.6)];
        let s = classwise_sigma_summary(&recs);
        assert_eq!(s.len(), 1);
        assert!((s[0].mean_sigma - 0.5).abs() < 1e-12);
        assert!((s[0].std_sigma - 0.1).abs() < 1e-12);

        let same = [record("a", 2, None, 0.0, 0.25), record("b", 2, None, 0.0, 0.25)];
        assert_eq!(classwise_sigma_summary(&same)[0].std_sigma, 0.0);
        assert!(classwise_table(&s).starts_with("class\t0\nmean\t0.5000"));
    }

    #[test]
    fn records_round_trip_and_line_errors() {
        let recs = vec![record("a", 0, Some(0), 0.3, 0.25)];
        let text = records_to_jsonl(&recs).unwrap();
        assert_eq!(parse_records(&text, "mem").unwrap(), recs);
        let bad = format!("{text}{{oops\n");
        assert!(matches!(parse_records(&bad, "mem"), Err(Error::Data { line: 2, .. })));
    }
}
