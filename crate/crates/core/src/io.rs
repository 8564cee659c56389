//! File formats: dataset CSV, point-cloud and sample CSVs, and JSON reports
//! with a fixed float format.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::loss::Dataset;

/// Parses a dataset with header `x1,..,xd,y[,weight]`.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let has_weight = headers.last().map(String::as_str) == Some("weight");
    let y_col = headers.len().saturating_sub(1 + usize::from(has_weight));
    if headers.get(y_col).map(String::as_str) != Some("y") {
        return Err(Error::Parse("dataset header must end with y or y,weight".into()));
    }
    if y_col == 0 {
        return Err(Error::Parse("dataset needs at least one input column x1".into()));
    }
    for (j, h) in headers[..y_col].iter().enumerate() {
        if *h != format!("x{}", j + 1) {
            return Err(Error::Parse(format!("column {} must be named x{}, found {h:?}", j + 1, j + 1)));
        }
    }
    let mut points = Vec::new();
    let mut y = Vec::new();
    let mut weights = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("data row {}: {f:?}: {e}", line + 1)))
            })
            .collect::<Result<_>>()?;
        points.push(vals[..y_col].to_vec());
        y.push(vals[y_col]);
        if has_weight {
            weights.push(vals[y_col + 1]);
        }
    }
    Dataset::new(points, y, has_weight.then_some(weights))
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset(f)
}

/// Writes the dataset with explicit weights.
pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let d = data.measure.dim();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    header.push("weight".into());
    let rows = data
        .measure
        .points()
        .iter()
        .zip(data.target.values())
        .zip(data.measure.weights())
        .map(|((x, y), w)| {
            let mut r = x.clone();
            r.push(*y);
            r.push(*w);
            r
        });
    write_rows(writer, &header, rows)
}

/// Generic numeric CSV with the given header.
pub fn write_rows<W, I>(writer: W, header: &[String], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.as_ref().iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Realization vectors as `z1..zn` columns.
pub fn write_cloud<W, I>(writer: W, n: usize, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    let header: Vec<String> = (1..=n).map(|j| format!("z{j}")).collect();
    write_rows(writer, &header, rows)
}

/// Flattened parameter vectors as `p1..pm` columns.
pub fn write_flat_params<W, I>(writer: W, m: usize, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    let header: Vec<String> = (1..=m).map(|j| format!("p{j}")).collect();
    write_rows(writer, &header, rows)
}

/// `(s, sigma(s))` samples of an activation.
pub fn write_samples<W: Write>(writer: W, samples: &[(f64, f64)]) -> Result<()> {
    let header = vec!["s".to_string(), "sigma".to_string()];
    write_rows(writer, &header, samples.iter().map(|(s, v)| [*s, *v]))
}

/// Seventeen significant digits; non-finite values become `null`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |out: &mut String, n: usize| out.extend(std::iter::repeat_n(' ', n));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().expect("f64")));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            let flat = items.iter().all(|i| !matches!(i, Value::Array(_) | Value::Object(_)));
            if flat {
                out.push('[');
                for (k, i) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, i, indent);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (k, i) in items.iter().enumerate() {
                pad(out, indent + 2);
                write_value(out, i, indent + 2);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (k, (key, val)) in map.iter().enumerate() {
                pad(out, indent + 2);
                out.push_str(&serde_json::to_string(key).expect("string"));
                out.push_str(": ");
                write_value(out, val, indent + 2);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
    }
}

/// Pretty JSON with every float printed by [`format_float`], so identical
/// inputs give byte-identical reports.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}
