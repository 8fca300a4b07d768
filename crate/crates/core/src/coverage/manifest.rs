//! Portable JSON coverage manifest:
//! `{ "executions": [ { "id", "outcome": "failing"|"passing", "hits": { path: count } } ] }`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_matrix, CoverageError, CoverageMatrix, ExecutionRecord, FileId, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageManifest {
    pub executions: Vec<ManifestExecution>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestExecution {
    pub id: String,
    pub outcome: Outcome,
    #[serde(deserialize_with = "merge_hits")]
    pub hits: BTreeMap<FileId, u64>,
}

// Paths that normalize to the same file (`./a.c`, `a.c`) have their counts summed.
fn merge_hits<'de, D>(deserializer: D) -> Result<BTreeMap<FileId, u64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw = BTreeMap::<String, u64>::deserialize(deserializer)?;
    let mut hits = BTreeMap::new();
    for (path, count) in raw {
        let file = FileId::new(&path).map_err(serde::de::Error::custom)?;
        *hits.entry(file).or_insert(0) += count;
    }
    Ok(hits)
}

impl CoverageManifest {
    pub fn from_json(text: &str) -> Result<Self, CoverageError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CoverageError> {
        let text = fs::read_to_string(path).map_err(|source| CoverageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn into_matrix(self) -> Result<CoverageMatrix, CoverageError> {
        build_matrix(
            self.executions
                .into_iter()
                .map(|e| ExecutionRecord {
                    execution_id: e.id,
                    outcome: e.outcome,
                    hits: e.hits,
                })
                .collect(),
        )
    }

    pub fn from_matrix(matrix: &CoverageMatrix) -> Self {
        CoverageManifest {
            executions: matrix
                .executions()
                .iter()
                .map(|e| ManifestExecution {
                    id: e.execution_id.clone(),
                    outcome: e.outcome,
                    hits: e.hits.clone(),
                })
                .collect(),
        }
    }
}

/// Loads and validates a coverage manifest file.
pub fn load_matrix(path: &Path) -> Result<CoverageMatrix, CoverageError> {
    CoverageManifest::load(path)?.into_matrix()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_manifest() {
        let text = r#"{ "executions": [
            { "id": "fail", "outcome": "failing", "hits": { "./gcc/a.c": 4, "gcc/b.c": 0 } },
            { "id": "p1", "outcome": "passing", "hits": { "gcc/a.c": 2 } }
        ] }"#;
        let matrix = CoverageManifest::from_json(text).unwrap().into_matrix().unwrap();
        assert_eq!(matrix.candidate_files().len(), 1);
        assert_eq!(matrix.candidate_files()[0].as_str(), "gcc/a.c");
    }

    #[test]
    fn merges_aliased_paths() {
        let text = r#"{ "executions": [
            { "id": "fail", "outcome": "failing", "hits": { "./a.c": 4, "a.c": 1 } }
        ] }"#;
        let m = CoverageManifest::from_json(text).unwrap();
        assert_eq!(m.executions[0].hits.values().copied().collect::<Vec<_>>(), vec![5]);
    }

    #[test]
    fn rejects_unknown_outcome() {
        let text = r#"{ "executions": [ { "id": "x", "outcome": "flaky", "hits": {} } ] }"#;
        assert!(matches!(
            CoverageManifest::from_json(text),
            Err(CoverageError::Manifest(_))
        ));
    }

    #[test]
    fn matrix_round_trips_through_manifest() {
        let matrix = super::super::synth_matrix(4, 6, 3, 9);
        let back = CoverageManifest::from_json(&CoverageManifest::from_matrix(&matrix).to_json())
            .unwrap()
            .into_matrix()
            .unwrap();
        assert_eq!(back, matrix);
    }
}
