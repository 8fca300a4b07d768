//! Benchmark cases and the Top-N / MFR / MAR metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{self, CoverageMatrix, FileId};
use crate::prompt::CompileResult;
use crate::sbfl::RankedList;
use crate::summarize::{self, DocSource};

pub const TOP_N: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no per-bug results to aggregate")]
    EmptyResults,
    #[error("{path}: {field}: {message}")]
    Manifest {
        path: PathBuf,
        field: String,
        message: String,
    },
}

impl EvalError {
    pub fn manifest(path: &Path, field: impl Into<String>, message: impl fmt::Display) -> Self {
        EvalError::Manifest {
            path: path.to_path_buf(),
            field: field.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Compiler {
    Gcc,
    Llvm,
    Other(String),
}

impl fmt::Display for Compiler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Compiler::Gcc => f.write_str("GCC"),
            Compiler::Llvm => f.write_str("LLVM"),
            Compiler::Other(name) => f.write_str(name),
        }
    }
}

impl From<String> for Compiler {
    fn from(name: String) -> Self {
        match name.to_ascii_uppercase().as_str() {
            "GCC" => Compiler::Gcc,
            "LLVM" | "CLANG" => Compiler::Llvm,
            _ => Compiler::Other(name),
        }
    }
}

impl From<Compiler> for String {
    fn from(c: Compiler) -> String {
        c.to_string()
    }
}

impl Serialize for Compiler {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Compiler {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d).map(Compiler::from)
    }
}

/// One benchmark bug. Paths in a manifest are relative to the manifest file
/// and are resolved by [`load_manifest`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugCase {
    pub bug_id: String,
    pub compiler: Compiler,
    pub failing_source: PathBuf,
    #[serde(default)]
    pub compile_results: Vec<CompileResult>,
    pub coverage: PathBuf,
    pub ground_truth: BTreeSet<FileId>,
    #[serde(default)]
    pub doc_links: Option<PathBuf>,
}

/// A bug case with its inputs read from disk.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub case: BugCase,
    pub failing_source: String,
    pub matrix: CoverageMatrix,
    pub doc_sources: Vec<DocSource>,
}

impl BugCase {
    pub fn load_inputs(&self) -> Result<LoadedCase, EvalError> {
        let failing_source = fs::read_to_string(&self.failing_source)
            .map_err(|e| EvalError::manifest(&self.failing_source, "failing_source", e))?;
        let matrix = coverage::load_matrix(&self.coverage)
            .map_err(|e| EvalError::manifest(&self.coverage, "coverage", e))?;
        let doc_sources = match &self.doc_links {
            Some(path) => summarize::load_doc_links(path)
                .map_err(|e| EvalError::manifest(path, "doc_links", e))?,
            None => Vec::new(),
        };
        Ok(LoadedCase {
            case: self.clone(),
            failing_source,
            matrix,
            doc_sources,
        })
    }
}

/// Reads a JSON array of bug cases, resolving and validating their paths.
pub fn load_manifest(path: &Path) -> Result<Vec<BugCase>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::manifest(path, "manifest", e))?;
    let mut cases: Vec<BugCase> =
        serde_json::from_str(&text).map_err(|e| EvalError::manifest(path, "manifest", e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut ids = BTreeSet::new();
    for case in &mut cases {
        let field = |name: &str| format!("{}.{name}", case.bug_id);
        if case.bug_id.trim().is_empty()
            || case.bug_id.contains(['/', '\\'])
            || case.bug_id.starts_with('.')
        {
            return Err(EvalError::manifest(path, "bug_id", format!("invalid id `{}`", case.bug_id)));
        }
        if !ids.insert(case.bug_id.clone()) {
            return Err(EvalError::manifest(path, "bug_id", format!("duplicate id `{}`", case.bug_id)));
        }
        if case.ground_truth.is_empty() {
            return Err(EvalError::manifest(path, field("ground_truth"), "must not be empty"));
        }
        case.failing_source = base.join(&case.failing_source);
        case.coverage = base.join(&case.coverage);
        case.doc_links = case.doc_links.as_ref().map(|p| base.join(p));
        for (name, file) in [
            ("failing_source", Some(&case.failing_source)),
            ("coverage", Some(&case.coverage)),
            ("doc_links", case.doc_links.as_ref()),
        ] {
            if let Some(file) = file.filter(|f| !f.is_file()) {
                return Err(EvalError::manifest(
                    path,
                    field(name),
                    format!("{} does not exist", file.display()),
                ));
            }
        }
        coverage::load_matrix(&case.coverage)
            .map_err(|e| EvalError::manifest(path, field("coverage"), e))?;
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerBugResult {
    pub bug_id: String,
    pub compiler: Compiler,
    pub first_rank: usize,
    /// Rank of each ground-truth file, in path order.
    pub all_ranks: Vec<usize>,
    pub fallback_used: bool,
}

/// Ranks of the ground-truth files in `ranking`; absent files rank `len + 1`.
pub fn score_bug(
    bug_id: &str,
    compiler: Compiler,
    ranking: &RankedList,
    truth: &BTreeSet<FileId>,
    fallback_used: bool,
) -> PerBugResult {
    let absent = ranking.len() + 1;
    let all_ranks: Vec<usize> = truth
        .iter()
        .map(|f| ranking.rank_of(f).unwrap_or(absent))
        .collect();
    PerBugResult {
        bug_id: bug_id.to_string(),
        compiler,
        first_rank: all_ranks.iter().copied().min().unwrap_or(absent),
        all_ranks,
        fallback_used,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_bug: Vec<PerBugResult>,
    /// Bugs with a ground-truth file within the top N, for N in [`TOP_N`].
    pub top_n: BTreeMap<usize, usize>,
    pub mfr: f64,
    pub mar: f64,
}

pub fn aggregate(results: &[PerBugResult]) -> Result<EvaluationReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let n = results.len() as f64;
    let top_n = TOP_N
        .iter()
        .map(|&k| (k, results.iter().filter(|r| r.first_rank <= k).count()))
        .collect();
    let mfr = results.iter().map(|r| r.first_rank as f64).sum::<f64>() / n;
    let mar = results
        .iter()
        .map(|r| r.all_ranks.iter().sum::<usize>() as f64 / r.all_ranks.len().max(1) as f64)
        .sum::<f64>()
        / n;
    Ok(EvaluationReport {
        per_bug: results.to_vec(),
        top_n,
        mfr,
        mar,
    })
}

/// One labelled row of a report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub subject: String,
    pub report: EvaluationReport,
}

/// Aggregates `results` into an `All` row, preceded by one row per compiler
/// when `by_compiler` is set.
pub fn report_rows(results: &[PerBugResult], by_compiler: bool) -> Result<Vec<ReportRow>, EvalError> {
    let mut rows = Vec::new();
    if by_compiler {
        let compilers: BTreeSet<&Compiler> = results.iter().map(|r| &r.compiler).collect();
        for compiler in compilers {
            let subset: Vec<PerBugResult> = results
                .iter()
                .filter(|r| &r.compiler == compiler)
                .cloned()
                .collect();
            rows.push(ReportRow {
                subject: compiler.to_string(),
                report: aggregate(&subset)?,
            });
        }
    }
    rows.push(ReportRow {
        subject: "All".into(),
        report: aggregate(results)?,
    });
    Ok(rows)
}

pub fn rows_to_json(rows: &[ReportRow]) -> String {
    let mut text = serde_json::to_string_pretty(&serde_json::json!({ "rows": rows }))
        .expect("report serializes");
    text.push('\n');
    text
}

pub fn rows_from_json(text: &str) -> Result<Vec<ReportRow>, serde_json::Error> {
    #[derive(Deserialize)]
    struct Rows {
        rows: Vec<ReportRow>,
    }
    serde_json::from_str::<Rows>(text).map(|r| r.rows)
}

/// Aligned text table with columns Top-1, Top-5, Top-10, Top-20, MFR, MAR.
pub fn render_table(rows: &[ReportRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.subject.chars().count())
        .chain(std::iter::once("Subject".len()))
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>8}  {:>8}",
        "Subject", "Top-1", "Top-5", "Top-10", "Top-20", "MFR", "MAR"
    );
    for row in rows {
        let t = &row.report.top_n;
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>8.2}  {:>8.2}",
            row.subject, t[&1], t[&5], t[&10], t[&20], row.report.mfr, row.report.mar
        );
    }
    out
}
