use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `path,label` row; `path` is resolved against the manifest directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
}

#[derive(Serialize, Deserialize)]
struct Row {
    path: String,
    label: String,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
        return Err(Error::Manifest(format!(
            "{}: header must be `path,label`",
            path.display()
        )));
    }
    reader
        .deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
            Ok(ManifestEntry {
                path: base.join(row.path),
                label: row.label,
            })
        })
        .collect()
}

/// Writes a manifest with paths relative to `path`'s directory when possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for e in entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        w.serialize(Row {
            path: rel.to_string_lossy().into_owned(),
            label: e.label.clone(),
        })
        .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
