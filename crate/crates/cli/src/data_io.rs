//! CSV ingestion and report writing.
//!
//! Input files are headered UTF-8 CSV with '.' decimals; columns are mapped
//! by name through the config. Outputs are written atomically (temp file in
//! the target directory, then rename), so interrupted runs never leave a
//! partial report behind.

use crate::config::{ColumnsSection, ConfigError};
use robust_policy::datagen::Truth;
use robust_policy::model::{Dataset, Observation, SupportBounds};
use std::path::Path;

/// Ingestion failures, split by whose fault they are: a column mapping
/// that does not match the file is a configuration problem (exit 2), while
/// unparseable or invalid rows are data problems (exit 3).
#[derive(Debug)]
pub enum ReadError {
    Mapping(String),
    Rows(String),
}

impl std::fmt::Display for ReadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReadError::Mapping(m) | ReadError::Rows(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for ReadError {}

pub struct LoadedData {
    pub dataset: Dataset,
    /// Per-observation effects when a delta column is mapped.
    pub delta: Option<Vec<f64>>,
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Result<usize, ReadError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| ReadError::Mapping(format!("missing column '{name}' in header")))
}

fn parse_float(field: &str, column: &str, line: u64) -> Result<f64, ReadError> {
    field.trim().parse::<f64>().map_err(|_| {
        ReadError::Rows(format!(
            "line {line}: cannot parse '{field}' in column '{column}'"
        ))
    })
}

fn parse_binary(field: &str, column: &str, line: u64) -> Result<bool, ReadError> {
    match field.trim() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(ReadError::Rows(format!(
            "line {line}: treatment column '{column}' must be 0/1, got '{other}'"
        ))),
    }
}

/// Read a dataset using the config's column mapping.
pub fn read_dataset(
    path: &Path,
    columns: &ColumnsSection,
    bounds: SupportBounds,
) -> Result<LoadedData, ReadError> {
    let y_name = columns
        .y
        .as_deref()
        .ok_or_else(|| ReadError::Mapping("columns.y is required".into()))?;
    let d_name = columns
        .d
        .as_deref()
        .ok_or_else(|| ReadError::Mapping("columns.d is required".into()))?;
    if columns.x.is_empty() {
        return Err(ReadError::Mapping(
            "columns.x must list at least one covariate".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ReadError::Rows(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| ReadError::Rows(format!("bad header: {e}")))?
        .clone();
    let y_idx = find_column(&headers, y_name)?;
    let d_idx = find_column(&headers, d_name)?;
    let x_idx: Result<Vec<usize>, _> = columns
        .x
        .iter()
        .map(|n| find_column(&headers, n))
        .collect();
    let x_idx = x_idx?;
    let z_idx = columns
        .z
        .as_deref()
        .map(|n| find_column(&headers, n))
        .transpose()?;
    let c_idx = columns
        .c
        .as_deref()
        .map(|n| find_column(&headers, n))
        .transpose()?;
    let w_idx = columns
        .weight
        .as_deref()
        .map(|n| find_column(&headers, n))
        .transpose()?;
    let delta_idx = columns
        .delta
        .as_deref()
        .map(|n| find_column(&headers, n))
        .transpose()?;

    let mut observations = Vec::new();
    let mut delta = delta_idx.map(|_| Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ReadError::Rows(format!("csv: {e}")))?;
        let line = record
            .position()
            .map_or(row as u64 + 2, |p| p.line());
        let x: Result<Vec<f64>, _> = x_idx
            .iter()
            .zip(&columns.x)
            .map(|(&i, name)| parse_float(&record[i], name, line))
            .collect();
        let mut obs = Observation::new(
            x?,
            parse_float(&record[y_idx], y_name, line)?,
            parse_binary(&record[d_idx], d_name, line)?,
        );
        if let Some(i) = z_idx {
            obs = obs.with_instrument(parse_float(&record[i], "z", line)?);
        }
        if let Some(i) = c_idx {
            let c = parse_float(&record[i], "c", line)?;
            obs = obs.with_group(c as i64);
        }
        if let Some(i) = w_idx {
            obs = obs.with_weight(parse_float(&record[i], "weight", line)?);
        }
        if let (Some(values), Some(i)) = (&mut delta, delta_idx) {
            values.push(parse_float(&record[i], "delta", line)?);
        }
        observations.push(obs);
    }
    let dataset = Dataset::new(observations, bounds)
        .map_err(|e| ReadError::Rows(format!("dataset: {e}")))?;
    Ok(LoadedData { dataset, delta })
}

/// Write bytes atomically: temp file in the destination directory, then
/// rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ConfigError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
        )),
        None => Path::new(&format!(
            ".{}.tmp",
            path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
        ))
        .to_path_buf(),
    };
    std::fs::write(&tmp, bytes)
        .map_err(|e| ConfigError(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| ConfigError(format!("cannot move report into place: {e}")))?;
    Ok(())
}

/// Serialize a generated dataset in the ingestion schema.
pub fn dataset_to_csv(data: &Dataset, x_names: &[String]) -> String {
    let has_z = data.observations().iter().any(|o| o.z.is_some());
    let has_c = data.observations().iter().any(|o| o.c.is_some());
    let mut out = String::new();
    let mut header: Vec<String> = x_names.to_vec();
    header.push("y".into());
    header.push("d".into());
    if has_z {
        header.push("z".into());
    }
    if has_c {
        header.push("c".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for obs in data.observations() {
        let mut fields: Vec<String> = obs.x.iter().map(|v| format!("{v}")).collect();
        fields.push(format!("{}", obs.y));
        fields.push(format!("{}", u8::from(obs.d)));
        if has_z {
            fields.push(obs.z.map_or(String::new(), |z| format!("{z}")));
        }
        if has_c {
            fields.push(obs.c.map_or(String::new(), |c| format!("{c}")));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Serialize the hidden truth companion to a generated dataset.
pub fn truth_to_csv(truth: &Truth) -> String {
    let mut out = String::from("cate,y0,y1\n");
    for i in 0..truth.cate.len() {
        out.push_str(&format!("{},{},{}\n", truth.cate[i], truth.y0[i], truth.y1[i]));
    }
    out
}
