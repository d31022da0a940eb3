//! CSV helpers. Every file starts with a `# dmc-<kind> v1` line so readers
//! can reject formats they do not understand.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn header_line(kind: &str) -> String {
    format!("# dmc-{kind} v{FORMAT_VERSION}")
}

/// A CSV writer whose output begins with the version header line.
pub fn versioned_writer<W: Write>(mut out: W, kind: &str) -> Result<csv::Writer<W>> {
    writeln!(out, "{}", header_line(kind))?;
    Ok(csv::Writer::from_writer(out))
}

/// Reads a numeric table, skipping `#` comment lines. Returns the header
/// names and a row-per-record matrix.
pub fn read_table<R: Read>(input: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::shape(format!("data row {} has {} fields, header has {}", line + 1, record.len(), headers.len())));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::invalid(format!("column {}", headers[col]), format!("row {}: '{field}' is not a number", line + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((headers.clone(), DMatrix::from_row_slice(rows, headers.len(), &values)))
}

/// Two-column whitespace-separated plot data with a comment header.
pub fn write_plot_data<W: Write>(mut out: W, title: &str, columns: [&str; 2], points: &[(f64, f64)]) -> Result<()> {
    writeln!(out, "# dmc-plot v{FORMAT_VERSION}: {title}")?;
    writeln!(out, "# {} {}", columns[0], columns[1])?;
    for (x, y) in points {
        writeln!(out, "{x} {y}")?;
    }
    Ok(())
}

/// Writes a matrix with the given column names and a leading `k` index.
pub fn write_series<W: Write>(out: W, kind: &str, names: &[String], data: &DMatrix<f64>) -> Result<()> {
    let mut w = versioned_writer(out, kind)?;
    let mut header = vec!["k".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for k in 0..data.nrows() {
        let mut row = vec![k.to_string()];
        row.extend(data.row(k).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
