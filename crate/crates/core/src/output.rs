//! Tidy CSV output shared by the reports.

use std::io::Write;

use crate::error::{Error, Result};

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:?}")
    }
}

/// Writes a header and rows of floats as RFC-4180 CSV.
pub fn write_csv<W: Write>(out: W, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt_float)).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Io(format!("csv output: {e}")))?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(format!("csv output: {e}"))
}
