//! CSV forms of the sort manifest and of label files.
//!
//! Manifest: `original_index,total_score,kept,removed_at_iteration`, the last
//! field empty for kept images and infinite scores written as `inf`.
//! Labels: `original_index,label` with label ∈ {particle, outlier, noise}.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Label;
use crate::sorter::{ManifestEntry, SortManifest};

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    original_index: usize,
    label: Label,
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: match kind {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                other => format!("{other:?}"),
            },
        },
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Serializes the manifest in memory; rows follow the manifest's index order.
pub fn manifest_to_string(manifest: &SortManifest) -> String {
    let mut out = String::from("original_index,total_score,kept,removed_at_iteration\n");
    for e in manifest.entries() {
        let removed = e.removed_at_iteration.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.original_index, e.total_score, e.kept, removed
        ));
    }
    out
}

pub fn write_manifest(manifest: &SortManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest_to_string(manifest)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<SortManifest> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut entries = Vec::new();
    for row in rdr.deserialize::<ManifestEntry>() {
        entries.push(row.map_err(|e| csv_error(path, e))?);
    }
    SortManifest::new(entries)
}

pub fn write_labels(path: impl AsRef<Path>, indices: &[usize], labels: &[Label]) -> Result<()> {
    let path = path.as_ref();
    if indices.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} indices for {} labels",
            indices.len(),
            labels.len()
        )));
    }
    let mut rows: Vec<(usize, Label)> = indices.iter().copied().zip(labels.iter().copied()).collect();
    rows.sort_by_key(|r| r.0);
    let mut w = writer(path)?;
    for (original_index, label) in rows {
        w.serialize(LabelRow {
            original_index,
            label,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Labels keyed by original index, sorted by index.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(usize, Label)>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut rows = Vec::new();
    for row in rdr.deserialize::<LabelRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        rows.push((row.original_index, row.label));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Input(format!(
            "{}: original index {} labeled twice",
            path.display(),
            w[0].0
        )));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SortManifest {
        SortManifest::new(vec![
            ManifestEntry {
                original_index: 1,
                total_score: f64::INFINITY,
                kept: false,
                removed_at_iteration: Some(6),
            },
            ManifestEntry {
                original_index: 0,
                total_score: 0.125,
                kept: true,
                removed_at_iteration: None,
            },
        ])
        .unwrap()
    }

    #[test]
    fn manifest_layout() {
        let text = manifest_to_string(&sample());
        assert_eq!(
            text,
            "original_index,total_score,kept,removed_at_iteration\n0,0.125,true,\n1,inf,false,6\n"
        );
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn manifest_round_trip_with_infinity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_manifest(&sample(), &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, sample());
        assert!(back.entries()[1].total_score.is_infinite());
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            "original_index,total_score,kept,removed_at_iteration\n0,1.0,true,\n1,oops,true,\n",
        )
        .unwrap();
        match read_manifest(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        write_labels(&path, &[2, 0, 1], &[Label::PureNoise, Label::Particle, Label::Outlier]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "original_index,label\n0,particle\n1,outlier\n2,noise\n");
        let back = read_labels(&path).unwrap();
        assert_eq!(back, vec![(0, Label::Particle), (1, Label::Outlier), (2, Label::PureNoise)]);
    }

    #[test]
    fn bad_label_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        std::fs::write(&path, "original_index,label\n0,particle\n1,banana\n").unwrap();
        assert!(matches!(read_labels(&path), Err(Error::Parse { line: 3, .. })));
    }
}
