use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::UserError;

pub fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf)> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok((BufWriter::new(f), path))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let (mut w, path) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}

/// Writes rows of strings under a header.
pub fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
    let (w, path) = create(dir, name)?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(header)?;
    for r in rows {
        c.write_record(r)?;
    }
    c.flush()?;
    Ok(path)
}

pub fn open(path: &Path) -> Result<std::io::BufReader<File>> {
    let f = File::open(path).map_err(|e| UserError(format!("cannot open {}: {e}", path.display())))?;
    Ok(std::io::BufReader::new(f))
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}
