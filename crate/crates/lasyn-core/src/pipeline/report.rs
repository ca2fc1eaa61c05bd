use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One machine-readable result record. Field names and order are fixed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Record {
    pub mode: String,
    pub seed: u64,
    pub stage: String,
    pub metric: String,
    pub value: f64,
    pub wall_ms: u64,
}

/// Everything one seed produced.
#[derive(Debug, Clone, Default)]
pub struct SeedReport {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub component_hashes: BTreeMap<String, String>,
    pub wall_ms: BTreeMap<String, u64>,
    pub curves: BTreeMap<String, Vec<f64>>,
}

/// One result row: a mode (or a mode/subset combination) across seeds.
#[derive(Debug, Clone, Default)]
pub struct ReportRow {
    pub label: String,
    pub seeds: Vec<SeedReport>,
}

impl ReportRow {
    pub fn median(&self, metric: &str) -> Option<f64> {
        let values: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|s| s.metrics.get(metric).copied())
            .collect();
        if values.is_empty() {
            return None;
        }
        Some(crate::asr::train::median(&values))
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .seeds
            .iter()
            .flat_map(|s| s.metrics.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

/// A full experiment report: the config echo plus one or more rows.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub config_echo: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        for row in &self.rows {
            for seed in &row.seeds {
                for (metric, &value) in &seed.metrics {
                    out.push(Record {
                        mode: row.label.clone(),
                        seed: seed.seed,
                        stage: "eval".into(),
                        metric: metric.clone(),
                        value,
                        wall_ms: seed.wall_ms.get("eval").copied().unwrap_or(0),
                    });
                }
                for (stage, &ms) in &seed.wall_ms {
                    out.push(Record {
                        mode: row.label.clone(),
                        seed: seed.seed,
                        stage: stage.clone(),
                        metric: "wall".into(),
                        value: ms as f64,
                        wall_ms: ms,
                    });
                }
            }
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Render a `rows x metrics` table with per-seed values and medians.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut metrics: Vec<String> = rows.iter().flat_map(|r| r.metric_names()).collect();
    metrics.sort();
    metrics.dedup();

    let mut s = String::new();
    let label_w = rows.iter().map(|r| r.label.len()).max().unwrap_or(4).max(4);
    let _ = write!(s, "{:label_w$}", "mode");
    for m in &metrics {
        let _ = write!(s, "  {m:>12}");
    }
    let _ = writeln!(s);
    for row in rows {
        let _ = write!(s, "{:label_w$}", row.label);
        for m in &metrics {
            match row.median(m) {
                Some(v) => {
                    let _ = write!(s, "  {v:>12.2}");
                }
                None => {
                    let _ = write!(s, "  {:>12}", "-");
                }
            }
        }
        let _ = writeln!(s);
    }
    s
}

/// Minimal line-plot SVG for a loss curve; byte-deterministic.
pub fn curve_svg(title: &str, values: &[f64]) -> String {
    let (w, h, pad) = (640.0f64, 240.0f64, 30.0f64);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="16" font-family="monospace" font-size="12">{title}</text>"#
    );
    if values.len() >= 2 {
        let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
        let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (vmax - vmin).max(1e-12);
        let mut points = String::new();
        for (i, &v) in values.iter().enumerate() {
            let x = pad + (w - 2.0 * pad) * i as f64 / (values.len() - 1) as f64;
            let y = h - pad - (h - 2.0 * pad) * (v - vmin) / span;
            let _ = write!(points, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="black" stroke-width="1" points="{}"/>"#,
            points.trim_end()
        );
        let _ = writeln!(
            s,
            r#"<text x="{pad}" y="{}" font-family="monospace" font-size="10">min {vmin:.4}  max {vmax:.4}  n {}</text>"#,
            h - 8.0,
            values.len()
        );
    }
    let _ = writeln!(s, "</svg>");
    s
}

/// Write the machine-readable records, the human table, and per-stage loss
/// plots. Identical reports produce byte-identical files.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Error::Invalid(format!("cannot create report dir {}: {e}", dir.display()))
    })?;

    let mut records = std::fs::File::create(dir.join("records.jsonl"))?;
    for record in report.records() {
        serde_json::to_writer(&mut records, &record)
            .map_err(|e| Error::Invalid(format!("record write: {e}")))?;
        records.write_all(b"\n")?;
    }

    std::fs::write(dir.join("table.txt"), render_table(&report.rows))?;
    std::fs::write(dir.join("config.txt"), &report.config_echo)?;

    for row in &report.rows {
        for seed in &row.seeds {
            for (stage, curve) in &seed.curves {
                if curve.is_empty() {
                    continue;
                }
                let name = format!("loss_{}_{}_seed{}.svg", row.label, stage, seed.seed);
                let title = format!("{} / {} / seed {}", row.label, stage, seed.seed);
                std::fs::write(dir.join(name), curve_svg(&title, curve))?;
            }
        }
    }
    Ok(())
}

/// Read records back (for the combined `report` command).
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            pos: lineno,
            msg: format!("record: {e}"),
        })?);
    }
    Ok(out)
}

/// Rebuild rows from raw records (maps eval metrics only).
pub fn rows_from_records(records: &[Record]) -> Vec<ReportRow> {
    let mut by_label: BTreeMap<String, BTreeMap<u64, SeedReport>> = BTreeMap::new();
    for r in records {
        if r.stage != "eval" {
            continue;
        }
        let seeds = by_label.entry(r.mode.clone()).or_default();
        let seed = seeds.entry(r.seed).or_insert_with(|| SeedReport {
            seed: r.seed,
            ..SeedReport::default()
        });
        seed.metrics.insert(r.metric.clone(), r.value);
    }
    by_label
        .into_iter()
        .map(|(label, seeds)| ReportRow {
            label,
            seeds: seeds.into_values().collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> Report {
        let mut seed0 = SeedReport {
            seed: 0,
            ..SeedReport::default()
        };
        seed0.metrics.insert("wer_clean".into(), 25.0);
        seed0.metrics.insert("wer_other".into(), 40.0);
        seed0.wall_ms.insert("pretrain".into(), 1200);
        seed0.curves.insert("pretrain".into(), vec![3.0, 2.0, 1.0]);
        let mut seed1 = seed0.clone();
        seed1.seed = 1;
        seed1.metrics.insert("wer_clean".into(), 27.0);
        Report {
            config_echo: "mode = baseline\n".into(),
            rows: vec![ReportRow {
                label: "baseline".into(),
                seeds: vec![seed0, seed1],
            }],
        }
    }

    #[test]
    fn emission_is_byte_identical() {
        let report = sample_report();
        let dir_a = std::env::temp_dir().join("lasyn-report-a");
        let dir_b = std::env::temp_dir().join("lasyn-report-b");
        for d in [&dir_a, &dir_b] {
            let _ = std::fs::remove_dir_all(d);
        }
        emit_report(&report, &dir_a).unwrap();
        emit_report(&report, &dir_b).unwrap();
        for file in ["records.jsonl", "table.txt", "config.txt"] {
            let a = std::fs::read(dir_a.join(file)).unwrap();
            let b = std::fs::read(dir_b.join(file)).unwrap();
            assert_eq!(a, b, "{file}");
        }
    }

    #[test]
    fn records_roundtrip() {
        let report = sample_report();
        let dir = std::env::temp_dir().join("lasyn-report-rt");
        let _ = std::fs::remove_dir_all(&dir);
        emit_report(&report, &dir).unwrap();
        let records = read_records(&dir.join("records.jsonl")).unwrap();
        assert_eq!(records, report.records());
        let rows = rows_from_records(&records);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].median("wer_clean"), Some(26.0));
    }

    #[test]
    fn table_has_row_per_label_and_metric_columns() {
        let mut report = sample_report();
        let mut other = report.rows[0].clone();
        other.label = "lasyn-fixed".into();
        for s in &mut other.seeds {
            s.metrics.insert("wer_clean".into(), 12.0);
        }
        report.rows.push(other);
        let table = render_table(&report.rows);
        assert!(table.contains("baseline"));
        assert!(table.contains("lasyn-fixed"));
        assert!(table.contains("wer_clean"));
        assert!(table.contains("wer_other"));
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn record_field_order_fixed() {
        let r = Record {
            mode: "baseline".into(),
            seed: 0,
            stage: "eval".into(),
            metric: "wer_clean".into(),
            value: 1.5,
            wall_ms: 10,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.starts_with(r#"{"mode":"#), "{json}");
        let keys: Vec<&str> = ["mode", "seed", "stage", "metric", "value", "wall_ms"].to_vec();
        let mut last = 0;
        for k in keys {
            let pos = json.find(&format!("\"{k}\"")).unwrap();
            assert!(pos >= last, "field {k} out of order in {json}");
            last = pos;
        }
    }
}
