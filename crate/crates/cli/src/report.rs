use std::io::Write;
use std::path::Path;

use serde_json::Value;
use vstar_core::{Complex64, FormalSeries};

use crate::config::{Format, SCHEMA_VERSION};
use crate::CliError;

/// A command result with a JSON form and a flat table for CSV.
pub struct Report {
    pub json: Value,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    pub pass: bool,
}

impl Report {
    pub fn new(mut json: Value, header: Vec<&'static str>, rows: Vec<Vec<String>>, pass: bool) -> Self {
        if let Value::Object(map) = &mut json {
            map.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        Report {
            json,
            header,
            rows,
            pass,
        }
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Json => {
                let mut out = serde_json::to_vec_pretty(&self.json).map_err(|e| CliError::Io(e.to_string()))?;
                out.push(b'\n');
                Ok(out)
            }
            Format::Csv => {
                let mut out = format!("# schema_version: {SCHEMA_VERSION}\n").into_bytes();
                {
                    let mut w = csv::Writer::from_writer(&mut out);
                    let io = |e: csv::Error| CliError::Io(e.to_string());
                    w.write_record(&self.header).map_err(io)?;
                    for row in &self.rows {
                        w.write_record(row).map_err(io)?;
                    }
                    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
                }
                Ok(out)
            }
        }
    }

    pub fn emit(&self, format: Format, path: Option<&Path>) -> Result<(), CliError> {
        let bytes = self.render(format)?;
        let written = match path {
            Some(p) => std::fs::write(p, &bytes),
            None => std::io::stdout().lock().write_all(&bytes),
        };
        written.map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Shortest round-trip form, as in the JSON output.
pub fn num(x: f64) -> String {
    serde_json::to_string(&x).unwrap_or_else(|_| "NaN".into())
}

pub fn real(s: &FormalSeries<f64>) -> Value {
    s.coeffs().iter().copied().collect()
}

pub fn complex(s: &FormalSeries<Complex64>) -> Value {
    s.coeffs().iter().map(|c| Value::from(vec![c.re, c.im])).collect()
}
