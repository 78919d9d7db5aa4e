//! Markdown tables aggregated from stored evaluation CSVs.

use std::path::Path;

use crate::pca::PcaDiagnostics;
use crate::{Error, Result};

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn parse_csv(text: &str, what: &str) -> Result<Csv> {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::validation(what, "empty CSV"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| {
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() == header.len() {
                Ok(row)
            } else {
                Err(Error::validation(what, format!("row has {} fields, header {}", row.len(), header.len())))
            }
        })
        .collect::<Result<_>>()?;
    Ok(Csv { header, rows })
}

fn fmt_number(s: &str, digits: usize) -> String {
    match s.parse::<f64>() {
        Ok(v) if v != 0.0 && v.abs() < 1e-3 => format!("{v:.2e}"),
        Ok(v) => format!("{v:.digits$}"),
        Err(_) => s.to_string(),
    }
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n", header.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in rows {
        out.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    out
}

/// Main results table from `metrics.csv` and the contrast table from `contrasts.csv`.
pub fn results_tables(metrics_csv: &str, contrasts_csv: &str) -> Result<String> {
    let metrics = parse_csv(metrics_csv, "metrics.csv")?;
    let contrasts = parse_csv(contrasts_csv, "contrasts.csv")?;
    let mut out = String::from("## Test-set metrics\n\n");
    let rows: Vec<Vec<String>> = metrics
        .rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(i, v)| if i < 3 { v.clone() } else { fmt_number(v, 4) })
                .collect()
        })
        .collect();
    out.push_str(&table(&metrics.header, &rows));
    out.push_str("\n## Best-vs-rest contrasts (Holm-adjusted within metric)\n\n");
    let rows: Vec<Vec<String>> = contrasts
        .rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(i, v)| if i < 3 { v.clone() } else { fmt_number(v, 4) })
                .collect()
        })
        .collect();
    out.push_str(&table(&contrasts.header, &rows));
    Ok(out)
}

pub fn pca_table(d: &PcaDiagnostics) -> String {
    let header = ["quantity".to_string(), "value".to_string()];
    let json = serde_json::to_value(d).expect("diagnostics serialize");
    let rows: Vec<Vec<String>> = json
        .as_object()
        .map(|o| {
            o.iter()
                .filter(|(_, v)| v.is_number())
                .map(|(k, v)| vec![k.clone(), v.to_string()])
                .collect()
        })
        .unwrap_or_default();
    format!("## PCA diagnostics\n\n{}", table(&header, &rows))
}

/// Read an evaluation directory and write `tables.md` beside its CSVs.
pub fn export_tables(eval_dir: &Path, pca: Option<&PcaDiagnostics>) -> Result<String> {
    let read = |name: &str| std::fs::read_to_string(eval_dir.join(name)).map_err(|e| Error::cache(eval_dir.join(name), e.to_string()));
    let mut text = results_tables(&read("metrics.csv")?, &read("contrasts.csv")?)?;
    if let Some(d) = pca {
        text.push('\n');
        text.push_str(&pca_table(d));
    }
    std::fs::write(eval_dir.join("tables.md"), &text)?;
    Ok(text)
}
