//! Plain-text persistence: `# key = value` header lines followed by one value
//! per line, and tab-separated tables. All writes go through a temporary file
//! in the destination directory that is renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesFile {
    pub header: BTreeMap<String, String>,
    pub values: Vec<f64>,
}

impl SeriesFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.get(key).map(String::as_str)
    }

    pub fn parse_key<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self.get(key).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            msg: format!("missing header key `{key}`"),
        })?;
        raw.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            msg: format!("bad value `{raw}` for `{key}`"),
        })
    }
}

/// Render a series file. Header keys keep the order given.
pub fn render_series(title: &str, header: &[(&str, String)], values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 20 + 256);
    let _ = writeln!(out, "# {title}");
    for (k, v) in header {
        let _ = writeln!(out, "# {k} = {v}");
    }
    for v in values {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn parse_series(text: &str, path: &Path) -> Result<SeriesFile> {
    let mut file = SeriesFile::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                file.header.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            msg: format!("line {}: `{line}` is not a number", lineno + 1),
        })?;
        file.values.push(v);
    }
    Ok(file)
}

pub fn read_series(path: &Path) -> Result<SeriesFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series(&text, path)
}

/// Tab-separated table with a header row.
pub fn render_table(columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = columns.join("\t");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

/// Write `contents` to `path` via a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
