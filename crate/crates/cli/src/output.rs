//! CSV and JSON files with a reproducibility header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Metadata written at the top of every output file.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn header(&self) -> String {
        format!(
            "# coupled-mcmc {VERSION}\n# experiment = {}\n# config_sha256 = {}\n# seed = {}\n# asym_var estimates 2*sigma_F^2, the CLT variance of the time average\n",
            self.experiment, self.config_hash, self.seed
        )
    }
}

/// In-memory CSV table written in one go.
pub struct Csv {
    body: String,
    notes: Vec<String>,
    width: usize,
}

impl Csv {
    pub fn new(columns: &[&str]) -> Self {
        Csv {
            body: format!("{}\n", columns.join(",")),
            notes: Vec::new(),
            width: columns.len(),
        }
    }

    /// Extra `# key = value` header line.
    pub fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.notes.push(format!("# {key} = {value}\n"));
    }

    pub fn row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.width);
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        let _ = writeln!(self.body, "{}", line.join(","));
    }

    pub fn write(&self, dir: &Path, name: &str, prov: &Provenance) -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        let mut text = prov.header();
        for n in &self.notes {
            text.push_str(n);
        }
        text.push_str(&self.body);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

/// Shortest representation that round-trips.
pub fn format_num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_json(
    dir: &Path,
    name: &str,
    prov: &Provenance,
    mut value: serde_json::Value,
) -> Result<PathBuf, CliError> {
    if let Some(obj) = value.as_object_mut() {
        obj.insert("version".into(), VERSION.into());
        obj.insert("experiment".into(), prov.experiment.clone().into());
        obj.insert("config_sha256".into(), prov.config_hash.clone().into());
        obj.insert("seed".into(), prov.seed.into());
    }
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}
