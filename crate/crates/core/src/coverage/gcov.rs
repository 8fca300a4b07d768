//! Adapter for classic text `.gcov` reports.
//!
//! Each source line of a report reads `count: lineno: source`. The count is
//! a number (optionally suffixed with `*` for partially executed blocks), `-`
//! for non-executable lines, or one of the unexecuted markers `#####` and
//! `=====`. A file's execution count is the sum of its line counts.

use std::fs;
use std::path::Path;

use super::{CoverageError, CoverageManifest, FileId, ManifestExecution, Outcome};

/// A parsed single-file gcov report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcovReport {
    /// Path from the `-: 0:Source:` header, when present.
    pub source: Option<String>,
    pub total: u64,
}

// Annotation lines emitted by `gcov -b`/`-f` and template instantiation
// separators carry no line counts.
const ANNOTATION_PREFIXES: &[&str] = &["function ", "call ", "branch ", "unconditional ", "------"];

impl GcovReport {
    pub fn parse(text: &str) -> Result<Self, CoverageError> {
        let mut source = None;
        let mut total: u64 = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            let trimmed = line.trim_start();
            if trimmed.is_empty()
                || ANNOTATION_PREFIXES.iter().any(|p| trimmed.starts_with(p))
                || is_instantiation_label(trimmed)
            {
                continue;
            }
            let malformed = || CoverageError::MalformedGcovLine {
                line: idx + 1,
                content: line.to_string(),
            };
            let mut parts = line.splitn(3, ':');
            let count_field = parts.next().ok_or_else(malformed)?.trim();
            let lineno_field = parts.next().ok_or_else(malformed)?.trim();
            let rest = parts.next().unwrap_or("");
            let lineno: u64 = lineno_field.parse().map_err(|_| malformed())?;
            let count = parse_count(count_field).ok_or_else(malformed)?;
            if lineno == 0 {
                if let Some(path) = rest.strip_prefix("Source:") {
                    source = Some(path.trim().to_string());
                }
                continue;
            }
            total = total.checked_add(count).ok_or_else(malformed)?;
        }
        Ok(GcovReport { source, total })
    }
}

fn parse_count(field: &str) -> Option<u64> {
    match field {
        "-" | "#####" | "=====" => Some(0),
        _ => field.strip_suffix('*').unwrap_or(field).parse().ok(),
    }
}

fn is_instantiation_label(line: &str) -> bool {
    line.ends_with(':') && !line.contains(char::is_whitespace)
}

/// Execution count of one source file: the sum of its numeric line counts.
pub fn ingest_gcov(text: &str) -> Result<u64, CoverageError> {
    GcovReport::parse(text).map(|r| r.total)
}

/// Builds a coverage manifest from a directory of gcov reports laid out as
/// `<root>/{failing,passing}/<execution-id>/**/*.gcov`.
///
/// The file identity comes from the report's `Source:` header, falling back
/// to the report path relative to the execution directory minus `.gcov`.
pub fn ingest_gcov_tree(root: &Path) -> Result<CoverageManifest, CoverageError> {
    let mut executions = Vec::new();
    for (dir_name, outcome) in [("failing", Outcome::Failing), ("passing", Outcome::Passing)] {
        let outcome_dir = root.join(dir_name);
        if !outcome_dir.is_dir() {
            continue;
        }
        for exec_dir in sorted_entries(&outcome_dir)? {
            if !exec_dir.is_dir() {
                continue;
            }
            let id = exec_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut reports = Vec::new();
            collect_gcov_files(&exec_dir, &mut reports)?;
            let mut hits = std::collections::BTreeMap::new();
            for report_path in reports {
                let text = fs::read_to_string(&report_path).map_err(|e| io_err(&report_path, e))?;
                let report = GcovReport::parse(&text).map_err(|e| match e {
                    CoverageError::MalformedGcovLine { line, content } => {
                        CoverageError::MalformedGcovLine {
                            line,
                            content: format!("{}: {content}", report_path.display()),
                        }
                    }
                    other => other,
                })?;
                let name = match report.source {
                    Some(src) => src,
                    None => {
                        let rel = report_path.strip_prefix(&exec_dir).unwrap_or(&report_path);
                        let rel = rel.to_string_lossy();
                        rel.strip_suffix(".gcov").unwrap_or(&rel).to_string()
                    }
                };
                let file = FileId::new(&name)?;
                *hits.entry(file).or_insert(0) += report.total;
            }
            executions.push(ManifestExecution {
                id: format!("{dir_name}/{id}"),
                outcome,
                hits,
            });
        }
    }
    Ok(CoverageManifest { executions })
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>, CoverageError> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| io_err(dir, e)))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort();
    Ok(entries)
}

fn collect_gcov_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<(), CoverageError> {
    for path in sorted_entries(dir)? {
        if path.is_dir() {
            collect_gcov_files(&path, out)?;
        } else if path.extension().is_some_and(|ext| ext == "gcov") {
            out.push(path);
        }
    }
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> CoverageError {
    CoverageError::Io {
        path: path.display().to_string(),
        source,
    }
}
