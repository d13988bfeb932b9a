//! Result tables: per-seed member rows plus mean/stddev aggregation rows,
//! emitted as JSON lines and as an aligned human-readable table.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::TaskId;

/// Metrics of one task under one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub accuracy: f64,
    /// Mean confidence over correct predictions; absent if none were correct.
    pub conf: Option<f64>,
    /// Mean confidence over errors; absent if none were wrong.
    pub err: Option<f64>,
    pub ece: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    Member,
    Mean,
    StdDev,
}

/// One table row: a configuration label, the seed it ran under (members
/// only), and per-task metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub label: String,
    pub fingerprint: String,
    pub kind: RowKind,
    pub seed: Option<u64>,
    pub per_task: BTreeMap<TaskId, TaskMetrics>,
}

/// Rows plus free-form notes (best-T, label statistics, ...).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub notes: Vec<String>,
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Mean and sample-stddev rows over members sharing a label, in first-seen
/// label order. Optional metrics aggregate over the rows where they are
/// present.
pub fn aggregate(members: &[ResultRow]) -> Vec<ResultRow> {
    let mut labels: Vec<&str> = Vec::new();
    for row in members {
        if !labels.contains(&row.label.as_str()) {
            labels.push(&row.label);
        }
    }
    let mut out = Vec::new();
    for label in labels {
        let group: Vec<&ResultRow> = members.iter().filter(|r| r.label == label).collect();
        let mut tasks: Vec<&TaskId> = Vec::new();
        for row in &group {
            for task in row.per_task.keys() {
                if !tasks.contains(&task) {
                    tasks.push(task);
                }
            }
        }
        let mut mean_tasks = BTreeMap::new();
        let mut std_tasks = BTreeMap::new();
        for task in tasks {
            let metrics: Vec<&TaskMetrics> =
                group.iter().filter_map(|r| r.per_task.get(task)).collect();
            let acc: Vec<f64> = metrics.iter().map(|m| m.accuracy).collect();
            let ece: Vec<f64> = metrics.iter().map(|m| m.ece).collect();
            let conf: Vec<f64> = metrics.iter().filter_map(|m| m.conf).collect();
            let err: Vec<f64> = metrics.iter().filter_map(|m| m.err).collect();
            mean_tasks.insert(
                task.clone(),
                TaskMetrics {
                    accuracy: mean(&acc),
                    conf: (!conf.is_empty()).then(|| mean(&conf)),
                    err: (!err.is_empty()).then(|| mean(&err)),
                    ece: mean(&ece),
                },
            );
            std_tasks.insert(
                task.clone(),
                TaskMetrics {
                    accuracy: stddev(&acc),
                    conf: (!conf.is_empty()).then(|| stddev(&conf)),
                    err: (!err.is_empty()).then(|| stddev(&err)),
                    ece: stddev(&ece),
                },
            );
        }
        let fingerprint = group[0].fingerprint.clone();
        out.push(ResultRow {
            label: label.to_string(),
            fingerprint: fingerprint.clone(),
            kind: RowKind::Mean,
            seed: None,
            per_task: mean_tasks,
        });
        out.push(ResultRow {
            label: label.to_string(),
            fingerprint,
            kind: RowKind::StdDev,
            seed: None,
            per_task: std_tasks,
        });
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl ResultTable {
    /// Build a table from member rows: members first, then aggregates.
    pub fn from_members(members: Vec<ResultRow>) -> Self {
        let aggregates = aggregate(&members);
        let mut rows = members;
        rows.extend(aggregates);
        Self { rows, notes: Vec::new(), extra: BTreeMap::new() }
    }

    pub fn member_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Member)
    }

    pub fn mean_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.kind == RowKind::Mean)
    }

    pub fn mean_row(&self, label: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.kind == RowKind::Mean && r.label == label)
    }

    /// One JSON object per line: rows, then notes, then extras.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for row in &self.rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        for note in &self.notes {
            writeln!(w, "{}", serde_json::json!({ "note": note }))?;
        }
        for (key, value) in &self.extra {
            writeln!(w, "{}", serde_json::json!({ "extra": { key: value } }))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned text rendering, one metric block per task.
    pub fn render_text(&self) -> String {
        let mut tasks: Vec<TaskId> = Vec::new();
        for row in &self.rows {
            for task in row.per_task.keys() {
                if !tasks.contains(task) {
                    tasks.push(task.clone());
                }
            }
        }
        let mut header = format!("{:<34} {:>6} {:>6}", "label", "kind", "seed");
        for task in &tasks {
            header += &format!(
                " | {:>9} {:>9} {:>9} {:>9}",
                format!("{task}.acc"),
                format!("{task}.con"),
                format!("{task}.err"),
                format!("{task}.ece"),
            );
        }
        let mut out = header.clone();
        out.push('\n');
        out.push_str(&"-".repeat(header.len()));
        out.push('\n');
        for row in &self.rows {
            let kind = match row.kind {
                RowKind::Member => "seed",
                RowKind::Mean => "mean",
                RowKind::StdDev => "std",
            };
            let seed = row.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
            let mut line = format!("{:<34} {:>6} {:>6}", row.label, kind, seed);
            for task in &tasks {
                match row.per_task.get(task) {
                    Some(m) => {
                        line += &format!(
                            " | {:>9.4} {:>9} {:>9} {:>9.4}",
                            m.accuracy,
                            m.conf.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                            m.err.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                            m.ece,
                        );
                    }
                    None => {
                        line += &format!(
                            " | {:>9} {:>9} {:>9} {:>9}",
                            "-", "-", "-", "-"
                        );
                    }
                }
            }
            out.push_str(&line);
            out.push('\n');
        }
        for note in &self.notes {
            out.push_str(&format!("note: {note}\n"));
        }
        out
    }
}
