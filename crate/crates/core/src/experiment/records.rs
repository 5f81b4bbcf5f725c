//! Result rows and their CSV form.

use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 11] = [
    "dataset",
    "backbone",
    "sweep_kind",
    "sweep_value",
    "snr_db",
    "n_superpixels",
    "rotation_deg",
    "accuracy",
    "n_samples",
    "seed",
    "wall_time_s",
];

/// One evaluated point of a sweep. `snr_db` is infinite for the noiseless channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub backbone: String,
    pub sweep_kind: String,
    pub sweep_value: f64,
    pub snr_db: f64,
    pub n_superpixels: usize,
    pub rotation_deg: f64,
    pub accuracy: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

fn fmt_float(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn parse_float(field: &str, name: &str) -> Result<f64> {
    match field {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => field.parse().map_err(|_| Error::Format(format!("bad {name} '{field}'"))),
    }
}

fn parse_int<T: std::str::FromStr>(field: &str, name: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Format(format!("bad {name} '{field}'")))
}

/// Sorts by `(sweep_kind, sweep_value, snr_db)`; ties keep their input order.
pub fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(|a, b| {
        a.sweep_kind
            .cmp(&b.sweep_kind)
            .then(a.sweep_value.total_cmp(&b.sweep_value))
            .then(a.snr_db.total_cmp(&b.snr_db))
    });
}

/// CSV text for `records`, sorted.
pub fn records_to_csv(records: &[ExperimentRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to write".into()));
    }
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &sorted {
        w.write_record([
            r.dataset.clone(),
            r.backbone.clone(),
            r.sweep_kind.clone(),
            fmt_float(r.sweep_value),
            fmt_float(r.snr_db),
            r.n_superpixels.to_string(),
            fmt_float(r.rotation_deg),
            fmt_float(r.accuracy),
            r.n_samples.to_string(),
            r.seed.to_string(),
            fmt_float(r.wall_time_s),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

pub fn emit_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let text = records_to_csv(records)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        out.push(ExperimentRecord {
            dataset: row[0].to_string(),
            backbone: row[1].to_string(),
            sweep_kind: row[2].to_string(),
            sweep_value: parse_float(&row[3], "sweep_value")?,
            snr_db: parse_float(&row[4], "snr_db")?,
            n_superpixels: parse_int(&row[5], "n_superpixels")?,
            rotation_deg: parse_float(&row[6], "rotation_deg")?,
            accuracy: parse_float(&row[7], "accuracy")?,
            n_samples: parse_int(&row[8], "n_samples")?,
            seed: parse_int(&row[9], "seed")?,
            wall_time_s: parse_float(&row[10], "wall_time_s")?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// The CSV with the `wall_time_s` column blanked, for reproducibility comparisons.
pub fn csv_without_wall_time(text: &str) -> String {
    text.lines()
        .map(|line| match line.rfind(',') {
            Some(i) => &line[..i],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}
