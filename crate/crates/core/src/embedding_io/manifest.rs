use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Id,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub role: Role,
    #[serde(default)]
    pub ood_type: String,
    pub encoder: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFiles {
    #[serde(default)]
    pub normal: Option<PathBuf>,
    #[serde(default)]
    pub anomalous: Option<PathBuf>,
}

/// Index of the embedding files making up an evaluation dataset.
///
/// Relative paths resolve against the directory holding the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub prompt_files: PromptFiles,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::Validation(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            match entry.role {
                Role::Ood if entry.ood_type.is_empty() => {
                    return Err(Error::Validation(format!(
                        "ood entry {} has no ood_type",
                        entry.path.display()
                    )))
                }
                Role::Id if !entry.ood_type.is_empty() => {
                    return Err(Error::Validation(format!(
                        "id entry {} carries ood_type {:?}",
                        entry.path.display(),
                        entry.ood_type
                    )))
                }
                _ => {}
            }
            if !seen.insert(&entry.path) {
                return Err(Error::Validation(format!(
                    "duplicate path {}",
                    entry.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn find(&self, role: Role, ood_type: &str, encoder: &str) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.role == role && e.ood_type == ood_type && e.encoder == encoder)
    }

    /// Distinct ood types, in first-appearance order.
    pub fn ood_types(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in self.entries.iter().filter(|e| e.role == Role::Ood) {
            if !out.contains(&e.ood_type.as_str()) {
                out.push(&e.ood_type);
            }
        }
        out
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = DatasetManifest::from_json(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TYPES: [&str; 10] = [
        "rain", "snow", "night", "bright", "fog", "contrast", "defocus", "gauss", "glass", "motion",
    ];

    #[test]
    fn eleven_entry_manifest() {
        let mut entries = vec![serde_json::json!({
            "path": "id.emb", "role": "id", "ood_type": "", "encoder": "resnet50"
        })];
        for t in TYPES {
            entries.push(serde_json::json!({
                "path": format!("{t}.emb"), "role": "ood", "ood_type": t, "encoder": "resnet50"
            }));
        }
        let doc = serde_json::json!({
            "entries": entries,
            "prompt_files": {"normal": "normal.emb", "anomalous": "anom.emb"}
        });
        let m = DatasetManifest::from_json(&doc.to_string()).unwrap();
        assert_eq!(m.entries.len(), 11);
        assert_eq!(m.ood_types(), TYPES.to_vec());
        assert_eq!(m.prompt_files.normal.as_deref(), Some(Path::new("normal.emb")));
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = DatasetManifest::from_json(r#"{"entries": [], "prompt_files": {}}"#).unwrap();
        assert!(m.entries.is_empty());
    }

    #[test]
    fn ood_without_type_is_rejected() {
        let doc = r#"{"entries": [{"path": "a.emb", "role": "ood", "ood_type": "", "encoder": "vit"}],
                      "prompt_files": {}}"#;
        assert!(matches!(DatasetManifest::from_json(doc), Err(Error::Validation(_))));
    }

    #[test]
    fn id_with_type_is_rejected() {
        let doc = r#"{"entries": [{"path": "a.emb", "role": "id", "ood_type": "fog", "encoder": "vit"}]}"#;
        assert!(matches!(DatasetManifest::from_json(doc), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_paths_are_rejected() {
        let doc = r#"{"entries": [
            {"path": "a.emb", "role": "id", "ood_type": "", "encoder": "vit"},
            {"path": "a.emb", "role": "ood", "ood_type": "fog", "encoder": "vit"}]}"#;
        assert!(matches!(DatasetManifest::from_json(doc), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_role_is_rejected() {
        let doc = r#"{"entries": [{"path": "a.emb", "role": "test", "ood_type": "", "encoder": "vit"}]}"#;
        assert!(matches!(DatasetManifest::from_json(doc), Err(Error::Validation(_))));
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, r#"{"entries": [], "prompt_files": {}}"#).unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.resolve(Path::new("x.emb")), dir.path().join("x.emb"));
        assert_eq!(m.resolve(Path::new("/abs/x.emb")), PathBuf::from("/abs/x.emb"));
    }
}
