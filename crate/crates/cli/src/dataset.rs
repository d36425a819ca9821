//! Locating dataset directories and their per-dataset defaults.

use std::path::{Path, PathBuf};

use tkg_core::data::{load_dataset_dir, load_entity_names, FactStore, StaticGraph};

use crate::error::{CliError, Result};
use crate::manifest::{fingerprint, DatasetInfo};

pub const DATA_ROOT_ENV: &str = "TKG_DATA_ROOT";
pub const NAMES_FILE: &str = "entity2id.txt";
const SPLIT_FILES: [&str; 4] = ["stat.txt", "train.txt", "valid.txt", "test.txt"];

/// Best history lengths found by grid search on the public benchmarks.
const HISTORY_DEFAULTS: [(&str, usize); 6] = [
    ("ICEWS18", 6),
    ("ICEWS14", 3),
    ("ICEWS05-15", 10),
    ("WIKI", 2),
    ("YAGO", 1),
    ("GDELT", 1),
];

/// History length used when neither the flag nor the dataset name gives one.
pub const FALLBACK_HISTORY: usize = 3;

fn base_name(data: &str) -> String {
    Path::new(data)
        .file_name()
        .map(|n| n.to_string_lossy().to_uppercase())
        .unwrap_or_default()
}

pub fn default_history(data: &str) -> Option<usize> {
    let name = base_name(data);
    HISTORY_DEFAULTS.iter().find(|(n, _)| *n == name).map(|&(_, m)| m)
}

/// Static information exists only for the ICEWS family, so the constraint
/// is on by default there and off elsewhere.
pub fn static_by_default(data: &str) -> bool {
    base_name(data).starts_with("ICEWS")
}

/// Resolves `data` to a directory: an existing path is used as is,
/// otherwise it names a subdirectory of `root`, matched case-insensitively.
pub fn resolve_dir(data: &str, root: &Path) -> Result<PathBuf> {
    let direct = Path::new(data);
    if direct.is_dir() {
        return Ok(direct.to_path_buf());
    }
    let joined = root.join(data);
    if joined.is_dir() {
        return Ok(joined);
    }
    if let Ok(entries) = std::fs::read_dir(root) {
        for entry in entries.flatten() {
            if entry.path().is_dir() && entry.file_name().to_string_lossy().eq_ignore_ascii_case(data) {
                return Ok(entry.path());
            }
        }
    }
    Err(CliError::Data(format!(
        "dataset '{data}' not found (looked in {} and under {}; set --data-root or {DATA_ROOT_ENV})",
        direct.display(),
        root.display()
    )))
}

pub struct Loaded {
    pub store: FactStore,
    pub names: Option<Vec<String>>,
    pub info: DatasetInfo,
}

/// Loads and augments a dataset, reading names only when `names` is given.
pub fn load(name: &str, dir: &Path, names: Option<&Path>) -> Result<Loaded> {
    let store = load_dataset_dir(dir)?.add_inverse_quadruples()?;
    let names_list = names
        .map(|p| load_entity_names(p, store.num_entities))
        .transpose()?;
    let mut files: Vec<PathBuf> = SPLIT_FILES.iter().map(|f| dir.join(f)).collect();
    files.extend(names.map(Path::to_path_buf));
    let info = DatasetInfo {
        name: name.to_string(),
        dir: dir.to_path_buf(),
        fingerprint: fingerprint(&files)?,
        num_entities: store.num_entities,
        num_relations: store.num_relations,
        names_file: names.map(Path::to_path_buf),
    };
    Ok(Loaded {
        store,
        names: names_list,
        info,
    })
}

pub fn static_graph(names: &Option<Vec<String>>) -> Option<StaticGraph> {
    names.as_ref().map(|n| StaticGraph::from_names(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_defaults_follow_dataset_names() {
        assert_eq!(default_history("icews14"), Some(3));
        assert_eq!(default_history("data/ICEWS18"), Some(6));
        assert_eq!(default_history("ICEWS05-15"), Some(10));
        assert_eq!(default_history("wiki"), Some(2));
        assert_eq!(default_history("YAGO"), Some(1));
        assert_eq!(default_history("GDELT"), Some(1));
        assert_eq!(default_history("toy"), None);
    }

    #[test]
    fn static_default_only_for_icews() {
        assert!(static_by_default("icews14"));
        assert!(!static_by_default("WIKI"));
    }

    #[test]
    fn resolves_case_insensitively_under_root() {
        let root = tempfile::tempdir().unwrap();
        std::fs::create_dir(root.path().join("ICEWS14")).unwrap();
        let dir = resolve_dir("icews14", root.path()).unwrap();
        assert!(dir.ends_with("ICEWS14"));
        assert!(matches!(resolve_dir("wiki", root.path()), Err(CliError::Data(_))));
    }
}
