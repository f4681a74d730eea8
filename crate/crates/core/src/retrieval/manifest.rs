//! Triplet manifests for knowledge-base construction.
//!
//! One record per line, tab-separated: `image_ref`, `label`, `report path`.
//! Report paths are relative to the manifest's directory. Blank lines and
//! lines starting with `#` are skipped. The image reference doubles as the
//! entry id.

use std::path::Path;

use thiserror::Error;

use super::labels::LabelSet;
use super::store::Triplet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {message}")]
    Io { path: String, message: String },
    #[error("manifest line {line}: {reason}")]
    Line { line: usize, reason: String },
}

/// Parse manifest `text`, resolving report paths against `base_dir` and
/// checking every label against `labels`.
pub fn parse_manifest(text: &str, base_dir: &Path, labels: &LabelSet) -> Result<Vec<Triplet>, ManifestError> {
    let mut triplets = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        let bad = |reason: String| ManifestError::Line { line, reason };
        let [image_ref, label, report_path] = fields[..] else {
            return Err(bad(format!("expected 3 tab-separated fields, found {}", fields.len())));
        };
        if image_ref.is_empty() {
            return Err(bad("empty image reference".into()));
        }
        if !labels.contains(label) {
            return Err(bad(format!("unknown label {label:?}")));
        }
        let path = base_dir.join(report_path);
        let report = std::fs::read_to_string(&path)
            .map_err(|e| bad(format!("cannot read report {}: {e}", path.display())))?;
        triplets.push(Triplet {
            entry_id: image_ref.to_owned(),
            image_ref: image_ref.to_owned(),
            report: report.trim().to_owned(),
            label: label.to_owned(),
        });
    }
    Ok(triplets)
}

pub fn load_manifest(path: &Path, labels: &LabelSet) -> Result<Vec<Triplet>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("r1.txt"), "Enlarged heart.\n").unwrap();
        let labels = LabelSet::chexpert();
        let text = "# header\n\nimg/a.png\tCardiomegaly\tr1.txt\n";
        let t = parse_manifest(text, dir.path(), &labels).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].report, "Enlarged heart.");
        assert_eq!(t[0].entry_id, "img/a.png");

        let unknown = "img/a.png\tCardiomegaly\tr1.txt\nimg/b.png\tTuberculosis\tr1.txt\n";
        assert!(matches!(parse_manifest(unknown, dir.path(), &labels), Err(ManifestError::Line { line: 2, .. })));
        let short = "img/a.png Cardiomegaly r1.txt\n";
        assert!(matches!(parse_manifest(short, dir.path(), &labels), Err(ManifestError::Line { line: 1, .. })));
        let missing = "img/a.png\tCardiomegaly\tnope.txt\n";
        assert!(matches!(parse_manifest(missing, dir.path(), &labels), Err(ManifestError::Line { line: 1, .. })));
    }
}
