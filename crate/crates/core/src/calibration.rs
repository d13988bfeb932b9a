//! Model reliability: confidence on correct and incorrect predictions,
//! reliability diagrams, and expected calibration error.
//!
//! Confidence of a prediction is its maximum softmax probability. `conf` is
//! the mean confidence over correctly classified records, `err` the mean
//! over misclassified ones; empty partitions report an absent value rather
//! than zero.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::argmax;

/// One scored prediction: the softmax output and the true class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub probabilities: Vec<f64>,
    pub true_class: usize,
}

impl PredictionRecord {
    pub fn new(probabilities: Vec<f64>, true_class: usize) -> Result<Self> {
        let k = probabilities.len();
        if true_class >= k {
            return Err(Error::Validation(format!(
                "true class {true_class} out of range for {k} classes"
            )));
        }
        if probabilities.iter().any(|&p| p < 0.0) {
            return Err(Error::Validation("negative probability".into()));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "probabilities sum to {sum}, not a distribution"
            )));
        }
        Ok(Self { probabilities, true_class })
    }

    pub fn confidence(&self) -> f64 {
        self.probabilities[argmax(&self.probabilities)]
    }

    pub fn correct(&self) -> bool {
        argmax(&self.probabilities) == self.true_class
    }
}

/// One confidence bin of a reliability diagram, over the half-open interval
/// (lo, hi].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Equal-width binning of confidence over (0, 1].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    pub n_bins: usize,
    pub total: usize,
    pub bins: Vec<ReliabilityBin>,
}

/// Scalar reliability summary of a prediction set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Mean confidence over correctly predicted records; absent when none.
    pub conf: Option<f64>,
    /// Mean confidence over misclassified records; absent when none.
    pub err: Option<f64>,
    pub ece: f64,
    pub accuracy: f64,
    pub diagram: ReliabilityDiagram,
}

/// Partition records by correctness and average the max probability in each
/// partition. Returns (conf, err, accuracy).
pub fn confidence_error(records: &[PredictionRecord]) -> Result<(Option<f64>, Option<f64>, f64)> {
    if records.is_empty() {
        return Err(Error::Validation("confidence_error over empty record set".into()));
    }
    let mut conf_sum = 0.0;
    let mut conf_n = 0usize;
    let mut err_sum = 0.0;
    let mut err_n = 0usize;
    for r in records {
        let c = r.confidence();
        if r.correct() {
            conf_sum += c;
            conf_n += 1;
        } else {
            err_sum += c;
            err_n += 1;
        }
    }
    let conf = (conf_n > 0).then(|| conf_sum / conf_n as f64);
    let err = (err_n > 0).then(|| err_sum / err_n as f64);
    let accuracy = conf_n as f64 / records.len() as f64;
    Ok((conf, err, accuracy))
}

/// Bin confidences into `n_bins` equal-width bins over (0, 1]. A confidence
/// exactly on a boundary belongs to the bin whose `hi` equals it.
pub fn reliability_diagram(records: &[PredictionRecord], n_bins: usize) -> Result<ReliabilityDiagram> {
    if records.is_empty() {
        return Err(Error::Validation("reliability_diagram over empty record set".into()));
    }
    if n_bins < 2 {
        return Err(Error::Validation(format!("n_bins must be >= 2, got {n_bins}")));
    }
    let mut counts = vec![0usize; n_bins];
    let mut conf_sums = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for r in records {
        let c = r.confidence();
        // (lo, hi] bins: index = ceil(c * n) - 1, clamped.
        let idx = ((c * n_bins as f64).ceil() as usize).saturating_sub(1).min(n_bins - 1);
        counts[idx] += 1;
        conf_sums[idx] += c;
        if r.correct() {
            correct[idx] += 1;
        }
    }
    let bins = (0..n_bins)
        .map(|i| ReliabilityBin {
            lo: i as f64 / n_bins as f64,
            hi: (i + 1) as f64 / n_bins as f64,
            count: counts[i],
            mean_confidence: if counts[i] > 0 { conf_sums[i] / counts[i] as f64 } else { 0.0 },
            accuracy: if counts[i] > 0 { correct[i] as f64 / counts[i] as f64 } else { 0.0 },
        })
        .collect();
    Ok(ReliabilityDiagram { n_bins, total: records.len(), bins })
}

/// Expected calibration error: count-weighted mean absolute gap between
/// per-bin accuracy and mean confidence.
pub fn ece(diagram: &ReliabilityDiagram) -> f64 {
    if diagram.total == 0 {
        return 0.0;
    }
    diagram
        .bins
        .iter()
        .map(|b| b.count as f64 / diagram.total as f64 * (b.accuracy - b.mean_confidence).abs())
        .sum()
}

/// Full report over a prediction set with the default 10 bins.
pub fn calibration_report(records: &[PredictionRecord]) -> Result<CalibrationReport> {
    calibration_report_binned(records, 10)
}

pub fn calibration_report_binned(
    records: &[PredictionRecord],
    n_bins: usize,
) -> Result<CalibrationReport> {
    let (conf, err, accuracy) = confidence_error(records)?;
    let diagram = reliability_diagram(records, n_bins)?;
    let ece = ece(&diagram);
    Ok(CalibrationReport { conf, err, ece, accuracy, diagram })
}

/// Serialize a report: a JSON header line with the scalars followed by one
/// JSON line per bin.
pub fn write_report(path: &Path, report: &CalibrationReport, fingerprint: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header = serde_json::json!({
        "fingerprint": fingerprint,
        "conf": report.conf,
        "err": report.err,
        "ece": report.ece,
        "accuracy": report.accuracy,
        "n_bins": report.diagram.n_bins,
    });
    writeln!(w, "{header}")?;
    for bin in &report.diagram.bins {
        serde_json::to_writer(&mut w, bin)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(probs: Vec<f64>, true_class: usize) -> PredictionRecord {
        PredictionRecord::new(probs, true_class).unwrap()
    }

    #[test]
    fn single_correct_record() {
        let (conf, err, acc) = confidence_error(&[rec(vec![0.7, 0.3], 0)]).unwrap();
        assert_eq!(conf, Some(0.7));
        assert_eq!(err, None);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn two_record_partition() {
        let records = vec![rec(vec![0.6, 0.4], 0), rec(vec![0.8, 0.2], 1)];
        let (conf, err, acc) = confidence_error(&records).unwrap();
        assert_eq!(conf, Some(0.6));
        assert_eq!(err, Some(0.8));
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn uniform_predictions_tie_break_to_class_zero() {
        let records: Vec<PredictionRecord> =
            (0..5).map(|_| rec(vec![0.25; 4], 0)).collect();
        let (conf, err, acc) = confidence_error(&records).unwrap();
        assert_eq!(conf, Some(0.25));
        assert_eq!(err, None);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn empty_input_is_validation_error() {
        assert!(confidence_error(&[]).is_err());
        assert!(reliability_diagram(&[], 10).is_err());
    }

    #[test]
    fn record_validation() {
        assert!(PredictionRecord::new(vec![0.5, 0.6], 0).is_err());
        assert!(PredictionRecord::new(vec![0.5, 0.5], 2).is_err());
        assert!(PredictionRecord::new(vec![-0.1, 1.1], 0).is_err());
    }

    #[test]
    fn diagram_counts_sum_and_boundary_goes_to_lower_bin() {
        let records = vec![
            rec(vec![0.5, 0.5], 0),  // confidence exactly 0.5 -> bin (0.4, 0.5]
            rec(vec![0.55, 0.45], 0),
            rec(vec![1.0, 0.0], 0),
        ];
        let d = reliability_diagram(&records, 10).unwrap();
        let total: usize = d.bins.iter().map(|b| b.count).sum();
        assert_eq!(total, 3);
        assert_eq!(d.bins[4].count, 1, "0.5 belongs to (0.4, 0.5]");
        assert_eq!(d.bins[5].count, 1);
        assert_eq!(d.bins[9].count, 1);
    }

    #[test]
    fn all_confident_correct_records_occupy_top_bin_with_accuracy_one() {
        let records: Vec<PredictionRecord> =
            (0..8).map(|_| rec(vec![1.0, 0.0], 0)).collect();
        let d = reliability_diagram(&records, 10).unwrap();
        assert_eq!(d.bins[9].count, 8);
        assert_eq!(d.bins[9].accuracy, 1.0);
        assert!(d.bins[..9].iter().all(|b| b.count == 0));
    }

    #[test]
    fn diagram_rejects_fewer_than_two_bins() {
        let records = vec![rec(vec![0.9, 0.1], 0)];
        assert!(reliability_diagram(&records, 1).is_err());
    }

    #[test]
    fn ece_zero_on_diagonal_and_single_gap_case() {
        let diagonal = ReliabilityDiagram {
            n_bins: 2,
            total: 10,
            bins: vec![
                ReliabilityBin { lo: 0.0, hi: 0.5, count: 4, mean_confidence: 0.4, accuracy: 0.4 },
                ReliabilityBin { lo: 0.5, hi: 1.0, count: 6, mean_confidence: 0.8, accuracy: 0.8 },
            ],
        };
        assert_eq!(ece(&diagonal), 0.0);

        let single = ReliabilityDiagram {
            n_bins: 2,
            total: 5,
            bins: vec![
                ReliabilityBin { lo: 0.0, hi: 0.5, count: 0, mean_confidence: 0.0, accuracy: 0.0 },
                ReliabilityBin { lo: 0.5, hi: 1.0, count: 5, mean_confidence: 0.9, accuracy: 0.5 },
            ],
        };
        assert!((ece(&single) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn conf_err_invariant_under_class_relabeling() {
        let records = vec![
            rec(vec![0.6, 0.3, 0.1], 0),
            rec(vec![0.2, 0.7, 0.1], 2),
            rec(vec![0.1, 0.2, 0.7], 2),
        ];
        // Permutation (0 1 2) -> (2 0 1) applied to both probabilities and labels.
        let perm = [2usize, 0, 1];
        let permuted: Vec<PredictionRecord> = records
            .iter()
            .map(|r| {
                let mut p = vec![0.0; 3];
                for (i, &v) in r.probabilities.iter().enumerate() {
                    p[perm[i]] = v;
                }
                rec(p, perm[r.true_class])
            })
            .collect();
        let a = confidence_error(&records).unwrap();
        let b = confidence_error(&permuted).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_writes_and_is_parseable() {
        let records = vec![rec(vec![0.9, 0.1], 0), rec(vec![0.8, 0.2], 1)];
        let report = calibration_report(&records).unwrap();
        let dir = std::env::temp_dir().join(format!("sall-cal-{}", std::process::id()));
        let path = dir.join("report.jsonl");
        write_report(&path, &report, "fp123").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value =
            serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["fingerprint"], "fp123");
        assert_eq!(text.lines().count(), 1 + report.diagram.bins.len());
        std::fs::remove_dir_all(&dir).ok();
    }
}
