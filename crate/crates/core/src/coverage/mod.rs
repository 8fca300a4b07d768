//! Per-file coverage of test executions.
//!
//! A [`CoverageMatrix`] records, for every execution of the compiler under
//! test, how many times each source file was executed and whether the
//! execution failed. Both coverage granularities are derived from it:
//! test coverage counts covering executions, execution coverage sums the
//! per-file hit counts.

mod gcov;
mod manifest;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use gcov::{ingest_gcov, ingest_gcov_tree, GcovReport};
pub use manifest::{load_matrix, CoverageManifest, ManifestExecution};

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("no execution records given")]
    EmptyRecords,
    #[error("coverage contains no failing execution")]
    NoFailingExecution,
    #[error("duplicate execution id `{0}`")]
    DuplicateExecutionId(String),
    #[error("file `{0}` is not part of the coverage matrix")]
    UnknownFile(String),
    #[error("invalid file path `{0}`")]
    InvalidPath(String),
    #[error("malformed gcov line {line}: `{content}`")]
    MalformedGcovLine { line: usize, content: String },
    #[error("malformed coverage manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A normalized, `/`-separated relative path of a compiler source file.
///
/// Ordering is byte-wise on the normalized path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileId(String);

impl FileId {
    pub fn new(path: &str) -> Result<Self, CoverageError> {
        let unified = path.trim().replace('\\', "/");
        let mut segments: Vec<&str> = Vec::new();
        for seg in unified.split('/') {
            match seg {
                "" | "." => {}
                ".." => {
                    if segments.pop().is_none() {
                        return Err(CoverageError::InvalidPath(path.to_string()));
                    }
                }
                s => segments.push(s),
            }
        }
        if segments.is_empty() {
            return Err(CoverageError::InvalidPath(path.to_string()));
        }
        Ok(FileId(segments.join("/")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Last path segment.
    pub fn basename(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }
}

impl fmt::Display for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for FileId {
    type Err = CoverageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FileId::new(s)
    }
}

impl Serialize for FileId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for FileId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        FileId::new(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Failing,
    Passing,
}

/// One compiler run on one test program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRecord {
    pub execution_id: String,
    pub outcome: Outcome,
    pub hits: BTreeMap<FileId, u64>,
}

impl ExecutionRecord {
    pub fn new<I>(execution_id: impl Into<String>, outcome: Outcome, hits: I) -> Self
    where
        I: IntoIterator<Item = (FileId, u64)>,
    {
        let mut map = BTreeMap::new();
        for (file, count) in hits {
            *map.entry(file).or_insert(0) += count;
        }
        ExecutionRecord {
            execution_id: execution_id.into(),
            outcome,
            hits: map,
        }
    }

    /// Hit count of `file` in this execution, 0 when absent.
    pub fn hits_of(&self, file: &FileId) -> u64 {
        self.hits.get(file).copied().unwrap_or(0)
    }

    pub fn covers(&self, file: &FileId) -> bool {
        self.hits_of(file) > 0
    }
}

/// Immutable coverage of a set of executions, at least one of them failing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMatrix {
    executions: Vec<ExecutionRecord>,
    files: BTreeSet<FileId>,
}

/// Per-file spectrum statistics at both granularities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountVector {
    /// Failing executions covering the file.
    pub failed_f: u64,
    /// Passing executions covering the file.
    pub passed_f: u64,
    pub total_failed: u64,
    pub total_passed: u64,
    /// Summed hit count over failing executions.
    pub cf: u64,
    /// Summed hit count over passing executions.
    pub cp: u64,
    /// Mean hit count over the passing executions that cover the file, 0 if none do.
    pub cp_bar: f64,
}

impl CountVector {
    /// Builds a vector from raw statistics, deriving `cp_bar` as `cp / passed_f`.
    pub fn from_counts(
        failed_f: u64,
        passed_f: u64,
        total_failed: u64,
        total_passed: u64,
        cf: u64,
        cp: u64,
    ) -> Self {
        let cp_bar = if passed_f == 0 {
            0.0
        } else {
            cp as f64 / passed_f as f64
        };
        CountVector {
            failed_f,
            passed_f,
            total_failed,
            total_passed,
            cf,
            cp,
            cp_bar,
        }
    }
}

/// Validates `records` and computes the file universe.
pub fn build_matrix(records: Vec<ExecutionRecord>) -> Result<CoverageMatrix, CoverageError> {
    if records.is_empty() {
        return Err(CoverageError::EmptyRecords);
    }
    let mut seen = HashSet::new();
    for record in &records {
        if !seen.insert(record.execution_id.as_str()) {
            return Err(CoverageError::DuplicateExecutionId(
                record.execution_id.clone(),
            ));
        }
    }
    if !records.iter().any(|r| r.outcome == Outcome::Failing) {
        return Err(CoverageError::NoFailingExecution);
    }
    let files = records
        .iter()
        .flat_map(|r| r.hits.iter())
        .filter(|(_, &count)| count > 0)
        .map(|(file, _)| file.clone())
        .collect::<BTreeSet<_>>();
    let matrix = CoverageMatrix {
        executions: records,
        files,
    };
    // A failing execution that covers nothing leaves no candidates to rank.
    if matrix.candidate_files().is_empty() {
        return Err(CoverageError::NoFailingExecution);
    }
    Ok(matrix)
}

impl CoverageMatrix {
    pub fn executions(&self) -> &[ExecutionRecord] {
        &self.executions
    }

    /// Every file covered by at least one execution.
    pub fn files(&self) -> &BTreeSet<FileId> {
        &self.files
    }

    pub fn total_failed(&self) -> u64 {
        self.count_outcome(Outcome::Failing)
    }

    pub fn total_passed(&self) -> u64 {
        self.count_outcome(Outcome::Passing)
    }

    fn count_outcome(&self, outcome: Outcome) -> u64 {
        self.executions
            .iter()
            .filter(|e| e.outcome == outcome)
            .count() as u64
    }

    pub fn counts(&self, file: &FileId) -> Result<CountVector, CoverageError> {
        if !self.files.contains(file) {
            return Err(CoverageError::UnknownFile(file.to_string()));
        }
        let (mut failed_f, mut passed_f, mut cf, mut cp) = (0, 0, 0, 0);
        for execution in &self.executions {
            let hits = execution.hits_of(file);
            match execution.outcome {
                Outcome::Failing => {
                    cf += hits;
                    failed_f += u64::from(hits > 0);
                }
                Outcome::Passing => {
                    cp += hits;
                    passed_f += u64::from(hits > 0);
                }
            }
        }
        Ok(CountVector::from_counts(
            failed_f,
            passed_f,
            self.total_failed(),
            self.total_passed(),
            cf,
            cp,
        ))
    }

    /// Files covered by at least one failing execution, sorted by path.
    pub fn candidate_files(&self) -> Vec<FileId> {
        self.files
            .iter()
            .filter(|file| {
                self.executions
                    .iter()
                    .any(|e| e.outcome == Outcome::Failing && e.covers(file))
            })
            .cloned()
            .collect()
    }
}

/// Deterministic synthetic matrix with one failing execution covering every
/// file and `n_passing` passing executions covering a random subset.
pub fn synth_matrix(seed: u64, n_files: usize, n_passing: usize, max_hits: u64) -> CoverageMatrix {
    assert!(n_files >= 1, "synth_matrix needs at least one file");
    let max_hits = max_hits.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let files: Vec<FileId> = (0..n_files)
        .map(|i| FileId(format!("src/file_{i:04}.c")))
        .collect();

    let mut records = Vec::with_capacity(n_passing + 1);
    let failing_hits = files
        .iter()
        .map(|f| (f.clone(), rng.gen_range(1..=max_hits)))
        .collect::<Vec<_>>();
    records.push(ExecutionRecord::new("fail-0", Outcome::Failing, failing_hits));
    for p in 0..n_passing {
        let hits = files
            .iter()
            .filter_map(|f| {
                if rng.gen_bool(0.5) {
                    Some((f.clone(), rng.gen_range(1..=max_hits)))
                } else {
                    None
                }
            })
            .collect::<Vec<_>>();
        records.push(ExecutionRecord::new(
            format!("pass-{p}"),
            Outcome::Passing,
            hits,
        ));
    }
    build_matrix(records).expect("synthetic matrix is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fid(s: &str) -> FileId {
        FileId::new(s).unwrap()
    }

    fn rec(id: &str, outcome: Outcome, hits: &[(&str, u64)]) -> ExecutionRecord {
        ExecutionRecord::new(id, outcome, hits.iter().map(|(f, c)| (fid(f), *c)))
    }

    #[test]
    fn normalizes_paths() {
        assert_eq!(fid("./gcc//tree-vrp.c").as_str(), "gcc/tree-vrp.c");
        assert_eq!(fid("gcc/./a/../b.c").as_str(), "gcc/b.c");
        assert_eq!(fid("gcc\\cp\\decl.c").as_str(), "gcc/cp/decl.c");
        assert_eq!(fid("gcc/cp/decl.c").basename(), "decl.c");
        assert!(FileId::new("").is_err());
        assert!(FileId::new("./").is_err());
        assert!(FileId::new("../x.c").is_err());
    }

    #[test]
    fn minimal_matrix() {
        let m = build_matrix(vec![
            rec("f", Outcome::Failing, &[("a.c", 2)]),
            rec("p", Outcome::Passing, &[("a.c", 1)]),
        ])
        .unwrap();
        assert_eq!(m.files().iter().collect::<Vec<_>>(), vec![&fid("a.c")]);
        assert_eq!(m.candidate_files(), vec![fid("a.c")]);
    }

    #[test]
    fn all_passing_is_rejected() {
        let err = build_matrix(vec![rec("p", Outcome::Passing, &[("a.c", 1)])]).unwrap_err();
        assert!(matches!(err, CoverageError::NoFailingExecution));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = build_matrix(vec![
            rec("x", Outcome::Failing, &[("a.c", 1)]),
            rec("x", Outcome::Passing, &[("a.c", 1)]),
        ])
        .unwrap_err();
        assert!(matches!(err, CoverageError::DuplicateExecutionId(id) if id == "x"));
        assert!(matches!(
            build_matrix(vec![]).unwrap_err(),
            CoverageError::EmptyRecords
        ));
    }

    #[test]
    fn candidates_are_union_of_failing_coverage() {
        let m = build_matrix(vec![
            rec("f", Outcome::Failing, &[("a.c", 1), ("b.c", 3)]),
            rec("p1", Outcome::Passing, &[("a.c", 1)]),
            rec("p2", Outcome::Passing, &[("a.c", 1)]),
        ])
        .unwrap();
        assert_eq!(m.candidate_files(), vec![fid("a.c"), fid("b.c")]);
    }

    #[test]
    fn candidates_sorted_and_exclude_passing_only() {
        let m = build_matrix(vec![
            rec("f", Outcome::Failing, &[("b.c", 1), ("a.c", 1), ("z.c", 0)]),
            rec("p", Outcome::Passing, &[("c.c", 4)]),
        ])
        .unwrap();
        assert_eq!(m.candidate_files(), vec![fid("a.c"), fid("b.c")]);
        assert!(m.files().contains(&fid("c.c")));
        assert!(!m.files().contains(&fid("z.c")));
    }

    #[test]
    fn counts_gcc_59221_shape() {
        let m = build_matrix(vec![
            rec("f", Outcome::Failing, &[("t.c", 1)]),
            rec("p1", Outcome::Passing, &[("t.c", 1)]),
            rec("p2", Outcome::Passing, &[("t.c", 1)]),
            rec("p3", Outcome::Passing, &[("t.c", 1)]),
        ])
        .unwrap();
        let c = m.counts(&fid("t.c")).unwrap();
        assert_eq!(
            (c.failed_f, c.passed_f, c.total_failed, c.total_passed),
            (1, 3, 1, 3)
        );
    }

    #[test]
    fn counts_failing_only_file() {
        let m = build_matrix(vec![
            rec("f", Outcome::Failing, &[("a.c", 7)]),
            rec("p", Outcome::Passing, &[("b.c", 2)]),
        ])
        .unwrap();
        let c = m.counts(&fid("a.c")).unwrap();
        assert_eq!((c.cf, c.cp, c.cp_bar), (7, 0, 0.0));
    }

    #[test]
    fn cp_bar_averages_covering_passing_runs() {
        let m = build_matrix(vec![
            rec("f", Outcome::Failing, &[("a.c", 1)]),
            rec("p1", Outcome::Passing, &[("a.c", 3)]),
            rec("p2", Outcome::Passing, &[("a.c", 5)]),
            rec("p3", Outcome::Passing, &[("b.c", 9)]),
        ])
        .unwrap();
        let c = m.counts(&fid("a.c")).unwrap();
        assert_eq!(c.cp, 8);
        assert_eq!(c.cp_bar, 4.0);
        assert_eq!(c.passed_f, 2);
        assert!(matches!(
            m.counts(&fid("nope.c")),
            Err(CoverageError::UnknownFile(_))
        ));
    }

    #[test]
    fn synth_is_deterministic() {
        assert_eq!(synth_matrix(1, 20, 5, 10), synth_matrix(1, 20, 5, 10));
        let only_failing = synth_matrix(3, 4, 0, 5);
        assert_eq!(only_failing.executions().len(), 1);
        assert_eq!(synth_matrix(7, 10, 3, 4).candidate_files().len(), 10);
    }

    #[test]
    fn synth_277_candidates() {
        assert_eq!(synth_matrix(59221, 277, 3, 50).candidate_files().len(), 277);
    }
}
