//! CSV artifacts: a `# ` provenance line, then a header and rows.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub struct CsvArtifact {
    path: PathBuf,
    writer: csv::Writer<File>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

impl CsvArtifact {
    pub fn create(path: &Path, provenance: &str) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{provenance}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    /// Opens an existing artifact for more rows.
    pub fn append(path: &Path) -> Result<Self> {
        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    /// Writes the header row even when no record follows.
    pub fn header(&mut self, columns: &[&str]) -> Result<()> {
        self.writer.write_record(columns).map_err(|e| csv_err(&self.path, e))?;
        self.flush()
    }

    pub fn row<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row).map_err(|e| csv_err(&self.path, e))?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads rows after the provenance line. Malformed rows are skipped and
/// counted.
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let body: Box<dyn Read> = if first.starts_with('#') {
        Box::new(reader)
    } else {
        Box::new(std::io::Cursor::new(first.into_bytes()).chain(reader))
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(body);
    let mut rows = Vec::new();
    let mut skipped = 0;
    for rec in rdr.deserialize() {
        match rec {
            Ok(r) => rows.push(r),
            Err(e) => {
                skipped += 1;
                warn!("{}: skipping malformed row: {e}", path.display());
            }
        }
    }
    Ok((rows, skipped))
}
