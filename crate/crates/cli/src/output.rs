//! Self-describing CSV: `# key = value` metadata lines, a header row, then data
//! at 9 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

pub struct Table {
    pub columns: &'static [&'static str],
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &'static [&'static str]) -> Self {
        Self {
            columns,
            metadata: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut out = BufWriter::new(File::create(&path).map_err(io)?);
        for (k, v) in &self.metadata {
            writeln!(out, "# {k} = {v}").map_err(io)?;
        }
        writeln!(out, "{}", self.columns.join(",")).map_err(io)?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| number(*x)).collect();
            writeln!(out, "{}", cells.join(",")).map_err(io)?;
        }
        out.flush().map_err(io)?;
        Ok(path)
    }
}

pub fn number(x: f64) -> String {
    format!("{x:.8e}")
}
