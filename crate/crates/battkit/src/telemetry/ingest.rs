use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::TelemetrySample;
use crate::error::{Error, Result};

/// Supported on-disk layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    /// Pick by file extension: `.csv`/`.tsv` or `.jsonl`/`.ndjson`.
    #[default]
    Auto,
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    /// Seconds since the Unix epoch, fractional part allowed.
    #[default]
    EpochSeconds,
    /// RFC 3339 / ISO 8601, e.g. `2024-05-01T12:00:00.250Z`.
    Iso8601,
}

/// Column mapping for CSV files. JSONL records always use the canonical
/// field names of [`TelemetrySample`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub format: FileFormat,
    pub delimiter: char,
    pub timestamp_format: TimestampFormat,
    pub timestamp_column: String,
    pub current_column: String,
    pub voltage_column: String,
    /// Columns named `<prefix><n>` are collected as cell voltages, ordered
    /// by `n`.
    pub cell_voltage_prefix: String,
    /// Columns named `<prefix><n>` are collected as temperatures, ordered
    /// by `n`.
    pub temperature_prefix: String,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            format: FileFormat::Auto,
            delimiter: ',',
            timestamp_format: TimestampFormat::EpochSeconds,
            timestamp_column: "timestamp".into(),
            current_column: "pack_current".into(),
            voltage_column: "pack_voltage".into(),
            cell_voltage_prefix: "cell_v".into(),
            temperature_prefix: "temp_c".into(),
        }
    }
}

/// Ingestion outcome: every input row is either parsed or counted under a
/// reject reason.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_total: usize,
    pub rows_ingested: usize,
    /// Reject reason -> count. Reasons: `field_count`, `bad_timestamp`,
    /// `bad_number`, `bad_json`.
    pub rejects: BTreeMap<String, usize>,
}

impl IngestReport {
    fn reject(&mut self, reason: &str) {
        *self.rejects.entry(reason.to_string()).or_insert(0) += 1;
    }

    pub fn rows_rejected(&self) -> usize {
        self.rejects.values().sum()
    }
}

/// Infer the on-disk format from a path's extension.
pub fn detect_format(path: &Path) -> Result<FileFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "csv" | "tsv" => Ok(FileFormat::Csv),
        "jsonl" | "ndjson" => Ok(FileFormat::JsonLines),
        other => Err(Error::Schema(format!(
            "cannot infer format from extension {other:?}; set format explicitly"
        ))),
    }
}

/// Parse a telemetry file. Unparseable rows never abort the run; they are
/// counted per reason in the report. A missing required column is a schema
/// error for the whole file.
pub fn ingest_file(path: &Path, schema: &SchemaConfig) -> Result<(Vec<TelemetrySample>, IngestReport)> {
    let format = match schema.format {
        FileFormat::Auto => detect_format(path)?,
        f => f,
    };
    match format {
        FileFormat::Csv => ingest_csv(path, schema),
        FileFormat::JsonLines => ingest_jsonl(path),
        FileFormat::Auto => unreachable!(),
    }
}

fn parse_timestamp(raw: &str, format: TimestampFormat) -> Option<f64> {
    match format {
        TimestampFormat::EpochSeconds => raw.trim().parse::<f64>().ok().filter(|t| t.is_finite()),
        TimestampFormat::Iso8601 => DateTime::parse_from_rfc3339(raw.trim())
            .ok()
            .map(|dt| dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9),
    }
}

fn format_timestamp(t: f64, format: TimestampFormat) -> String {
    match format {
        TimestampFormat::EpochSeconds => format!("{t}"),
        TimestampFormat::Iso8601 => {
            let secs = t.floor() as i64;
            let nanos = ((t - t.floor()) * 1e9).round() as u32;
            let dt: DateTime<Utc> =
                DateTime::from_timestamp(secs, nanos.min(999_999_999)).unwrap_or_default();
            dt.to_rfc3339_opts(SecondsFormat::Nanos, true)
        }
    }
}

/// Ordered indices of columns named `<prefix><n>`, sorted by `n`.
fn prefixed_columns(headers: &[String], prefix: &str) -> Vec<usize> {
    let mut found: Vec<(u64, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(idx, name)| {
            let suffix = name.strip_prefix(prefix)?;
            suffix.parse::<u64>().ok().map(|n| (n, idx))
        })
        .collect();
    found.sort_unstable();
    found.into_iter().map(|(_, idx)| idx).collect()
}

fn ingest_csv(path: &Path, schema: &SchemaConfig) -> Result<(Vec<TelemetrySample>, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_path(path)?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name:?}", path.display())))
    };
    let ts_col = column(&schema.timestamp_column)?;
    let i_col = column(&schema.current_column)?;
    let v_col = column(&schema.voltage_column)?;
    let cell_cols = prefixed_columns(&headers, &schema.cell_voltage_prefix);
    let temp_cols = prefixed_columns(&headers, &schema.temperature_prefix);

    let mut samples = Vec::new();
    let mut report = IngestReport::default();
    for record in reader.records() {
        report.rows_total += 1;
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                report.reject("field_count");
                continue;
            }
        };
        if record.len() != headers.len() {
            report.reject("field_count");
            continue;
        }
        let Some(timestamp) = parse_timestamp(&record[ts_col], schema.timestamp_format) else {
            report.reject("bad_timestamp");
            continue;
        };
        let (Ok(pack_current), Ok(pack_voltage)) =
            (record[i_col].trim().parse::<f64>(), record[v_col].trim().parse::<f64>())
        else {
            report.reject("bad_number");
            continue;
        };

        let mut sample = TelemetrySample::new(timestamp, pack_current, pack_voltage, vec![], vec![]);
        for (slot, &col) in cell_cols.iter().enumerate() {
            match record[col].trim().parse::<f64>() {
                Ok(v) => sample.cell_voltages.push(v),
                Err(_) => {
                    sample.cell_voltages.push(f64::NAN);
                    sample.flags.bad_cell_voltages.push(slot);
                }
            }
        }
        for (slot, &col) in temp_cols.iter().enumerate() {
            match record[col].trim().parse::<f64>() {
                Ok(v) => sample.temperatures.push(v),
                Err(_) => {
                    sample.temperatures.push(f64::NAN);
                    sample.flags.bad_temperatures.push(slot);
                }
            }
        }
        samples.push(sample);
        report.rows_ingested += 1;
    }
    Ok((samples, report))
}

fn ingest_jsonl(path: &Path) -> Result<(Vec<TelemetrySample>, IngestReport)> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut report = IngestReport::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.rows_total += 1;
        match serde_json::from_str::<TelemetrySample>(&line) {
            Ok(sample) if sample.timestamp.is_finite() => {
                samples.push(sample);
                report.rows_ingested += 1;
            }
            Ok(_) => report.reject("bad_timestamp"),
            Err(_) => report.reject("bad_json"),
        }
    }
    Ok((samples, report))
}

/// Write samples as CSV under the given schema. Floats are written in
/// shortest round-trip form, so reading the file back reproduces every
/// value bit-exactly (epoch timestamps only; ISO 8601 rounds to whole
/// nanoseconds).
pub fn write_csv(samples: &[TelemetrySample], path: &Path, schema: &SchemaConfig) -> Result<()> {
    let n_cells = samples.iter().map(|s| s.cell_voltages.len()).max().unwrap_or(0);
    let n_temps = samples.iter().map(|s| s.temperatures.len()).max().unwrap_or(0);

    let mut writer = csv::WriterBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_path(path)?;

    let mut header = vec![
        schema.timestamp_column.clone(),
        schema.current_column.clone(),
        schema.voltage_column.clone(),
    ];
    for i in 1..=n_cells {
        header.push(format!("{}{}", schema.cell_voltage_prefix, i));
    }
    for i in 1..=n_temps {
        header.push(format!("{}{}", schema.temperature_prefix, i));
    }
    writer
        .write_record(&header)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;

    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for s in samples {
        row.clear();
        row.push(format_timestamp(s.timestamp, schema.timestamp_format));
        row.push(format!("{}", s.pack_current));
        row.push(format!("{}", s.pack_voltage));
        for i in 0..n_cells {
            row.push(s.cell_voltages.get(i).map(|v| format!("{v}")).unwrap_or_default());
        }
        for i in 0..n_temps {
            row.push(s.temperatures.get(i).map(|v| format!("{v}")).unwrap_or_default());
        }
        writer
            .write_record(row.iter())
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    writer.flush()?;
    Ok(())
}

/// Write samples as JSON Lines, one record per line.
pub fn write_jsonl(samples: &[TelemetrySample], path: &Path) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn odd_samples() -> Vec<TelemetrySample> {
        (0..40)
            .map(|k| {
                let t = 1.7e9 + k as f64 / 3.0;
                TelemetrySample::new(
                    t,
                    1.0 / (k as f64 + 3.0),
                    3.0 + (k as f64).sin() * 0.123456789,
                    vec![3.7 + k as f64 * 1e-7, 3.7 - k as f64 * 1e-7],
                    vec![25.0 + (k as f64 * 0.7).cos()],
                )
            })
            .collect()
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let schema = SchemaConfig::default();
        let samples = odd_samples();
        write_csv(&samples, &path, &schema).unwrap();
        let (back, report) = ingest_file(&path, &schema).unwrap();
        assert_eq!(report.rows_ingested, samples.len());
        assert_eq!(report.rows_rejected(), 0);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.timestamp.to_bits(), b.timestamp.to_bits());
            assert_eq!(a.pack_current.to_bits(), b.pack_current.to_bits());
            assert_eq!(a.pack_voltage.to_bits(), b.pack_voltage.to_bits());
            for (x, y) in a.cell_voltages.iter().zip(&b.cell_voltages) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.temperatures.iter().zip(&b.temperatures) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let samples = odd_samples();
        write_jsonl(&samples, &path).unwrap();
        let (back, report) = ingest_file(&path, &SchemaConfig::default()).unwrap();
        assert_eq!(report.rows_ingested, samples.len());
        assert_eq!(samples, back);
    }

    #[test]
    fn bad_rows_are_counted_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(
            &path,
            "timestamp,pack_current,pack_voltage,temp_c1\n\
             1.0,2.0,3.5,25.0\n\
             oops,2.0,3.5,25.0\n\
             2.0,xx,3.5,25.0\n\
             3.0,2.0,3.5\n\
             4.0,2.0,3.6,26.0\n",
        )
        .unwrap();
        let (samples, report) = ingest_file(&path, &SchemaConfig::default()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(report.rows_total, 5);
        assert_eq!(report.rejects["bad_timestamp"], 1);
        assert_eq!(report.rejects["bad_number"], 1);
        assert_eq!(report.rejects["field_count"], 1);
    }

    #[test]
    fn missing_required_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "timestamp,pack_voltage\n1.0,3.5\n").unwrap();
        let err = ingest_file(&path, &SchemaConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn iso8601_timestamps_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(
            &path,
            "timestamp,pack_current,pack_voltage\n\
             2024-05-01T12:00:00.250Z,1.5,3.8\n\
             2024-05-01T12:00:01.250+00:00,1.5,3.8\n",
        )
        .unwrap();
        let schema = SchemaConfig {
            timestamp_format: TimestampFormat::Iso8601,
            ..SchemaConfig::default()
        };
        let (samples, _) = ingest_file(&path, &schema).unwrap();
        assert_eq!(samples.len(), 2);
        assert!((samples[1].timestamp - samples[0].timestamp - 1.0).abs() < 1e-9);
        assert!((samples[0].timestamp.fract() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn unknown_extension_needs_explicit_format() {
        assert!(detect_format(Path::new("x.dat")).is_err());
        assert_eq!(detect_format(Path::new("x.ndjson")).unwrap(), FileFormat::JsonLines);
    }

    #[test]
    fn sensor_columns_sort_by_numeric_suffix() {
        let headers: Vec<String> = ["temp_c10", "temp_c2", "temp_c1", "other"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(prefixed_columns(&headers, "temp_c"), vec![2, 1, 0]);
    }
}
