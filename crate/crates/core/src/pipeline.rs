//! Single-bug isolation: two SBFL rankings, one prompt, one model call.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::FileId;
use crate::eval::LoadedCase;
use crate::llm::{ChatClient, ChatRequest, ClientConfig, LlmError};
use crate::prompt::{self, InfoToggles, PromptBundle, PromptError, Section, DEFAULT_LIST_CAP};
use crate::rerank::{parse_ranking, ParseReport};
use crate::sbfl::{self, Formula, Granularity, RankedList};
use crate::summarize::{FileSummary, SummaryError, SummaryStore, DEFAULT_SUMMARY_CHAR_CAP};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// An information source that an ablation can switch off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Summary,
    Compile,
    Execov,
    Testcov,
    Llm,
    Failtest,
}

impl Source {
    /// Ablation order used in reports.
    pub const ALL: [Source; 6] = [
        Source::Summary,
        Source::Compile,
        Source::Execov,
        Source::Testcov,
        Source::Llm,
        Source::Failtest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Source::Summary => "summary",
            Source::Compile => "compile",
            Source::Execov => "execov",
            Source::Testcov => "testcov",
            Source::Llm => "llm",
            Source::Failtest => "failtest",
        }
    }

    fn section(self) -> Option<Section> {
        match self {
            Source::Summary => Some(Section::Summary),
            Source::Compile => Some(Section::CompileResults),
            Source::Execov => Some(Section::ExecutionCoverageList),
            Source::Testcov => Some(Section::TestCoverageList),
            Source::Failtest => Some(Section::FailingSource),
            Source::Llm => None,
        }
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let name = s.trim_start_matches('-');
        Source::ALL
            .into_iter()
            .find(|src| src.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| format!("unknown source `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub testcov_formula: Formula,
    pub execov_formula: Formula,
    pub toggles: InfoToggles,
    /// When false the execution-coverage ranking is the final answer.
    pub use_llm: bool,
    pub list_cap: usize,
    pub model_id: String,
    pub client: ClientConfig,
    pub repeats: usize,
    pub worker_limit: usize,
    pub summary_char_cap: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            testcov_formula: Formula::Ochiai,
            execov_formula: Formula::Wong2,
            toggles: InfoToggles::default(),
            use_llm: true,
            list_cap: DEFAULT_LIST_CAP,
            model_id: "gpt-4o".into(),
            client: ClientConfig::default(),
            repeats: 1,
            worker_limit: 4,
            summary_char_cap: DEFAULT_SUMMARY_CHAR_CAP,
        }
    }
}

impl PipelineConfig {
    pub fn disable(&mut self, source: Source) {
        match source.section() {
            Some(section) => self.toggles.set(section, false),
            None => self.use_llm = false,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.repeats == 0 {
            return Err(PipelineError::Config("repeats must be at least 1".into()));
        }
        if self.worker_limit == 0 {
            return Err(PipelineError::Config("worker limit must be at least 1".into()));
        }
        if self.list_cap == 0 {
            return Err(PipelineError::Config("list cap must be at least 1".into()));
        }
        if self.use_llm {
            self.toggles.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IsolationOutcome {
    pub ranking: RankedList,
    pub testcov_list: RankedList,
    pub execov_list: RankedList,
    /// Present when the model was consulted.
    pub prompt: Option<String>,
    pub response: Option<String>,
    pub report: Option<ParseReport>,
}

impl IsolationOutcome {
    pub fn fallback_used(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.fallback_used)
    }
}

/// Summaries for `files`, generated through `client` on a cache miss when the
/// case documents the file. Files without a summary or documentation are
/// skipped.
fn collect_summaries(
    case: &LoadedCase,
    files: &BTreeSet<&FileId>,
    config: &PipelineConfig,
    client: &dyn ChatClient,
    store: &Mutex<SummaryStore>,
) -> Result<Vec<FileSummary>, PipelineError> {
    let mut summaries = Vec::new();
    for file in files {
        let mut store = store.lock().unwrap();
        if let Some(summary) = store.get(file) {
            summaries.push(summary.clone());
            continue;
        }
        if let Some(source) = case.doc_sources.iter().find(|s| &s.file == *file) {
            let summary =
                store.get_or_summarize(client, &config.model_id, source, config.summary_char_cap, false)?;
            summaries.push(summary.clone());
        }
    }
    Ok(summaries)
}

/// Prompt for `case` without calling the model; `None` when the model is
/// disabled.
pub fn build_prompt(
    case: &LoadedCase,
    testcov_list: &RankedList,
    execov_list: &RankedList,
    config: &PipelineConfig,
    client: &dyn ChatClient,
    store: &Mutex<SummaryStore>,
) -> Result<Option<String>, PipelineError> {
    if !config.use_llm {
        return Ok(None);
    }
    let toggles = config.toggles;
    let summaries = if toggles.summary {
        let mut shown = BTreeSet::new();
        if toggles.testcov_list {
            shown.extend(testcov_list.files().take(config.list_cap));
        }
        if toggles.execov_list {
            shown.extend(execov_list.files().take(config.list_cap));
        }
        collect_summaries(case, &shown, config, client, store)?
    } else {
        Vec::new()
    };
    let bundle = PromptBundle {
        compiler: case.case.compiler.to_string(),
        summaries,
        failing_source: case.failing_source.clone(),
        testcov_list: testcov_list.clone(),
        compile_results: case.case.compile_results.clone(),
        execov_list: execov_list.clone(),
        toggles,
        list_cap: config.list_cap,
    };
    Ok(Some(prompt::assemble_isolation_prompt(&bundle)?))
}

/// Runs the full isolation pipeline for one bug.
///
/// The test-coverage ranking is the fallback for unusable answers; with the
/// model disabled the execution-coverage ranking is returned as is.
pub fn isolate_bug(
    case: &LoadedCase,
    config: &PipelineConfig,
    client: &dyn ChatClient,
    store: &Mutex<SummaryStore>,
) -> Result<IsolationOutcome, PipelineError> {
    config.validate()?;
    let testcov_list = sbfl::rank(&case.matrix, config.testcov_formula, Granularity::TestCoverage);
    let execov_list = sbfl::rank(&case.matrix, config.execov_formula, Granularity::ExecutionCoverage);

    let Some(prompt) = build_prompt(case, &testcov_list, &execov_list, config, client, store)? else {
        return Ok(IsolationOutcome {
            ranking: execov_list.clone(),
            testcov_list,
            execov_list,
            prompt: None,
            response: None,
            report: None,
        });
    };

    let request = ChatRequest::new(config.model_id.clone(), prompt.clone());
    let mut best: Option<(String, RankedList, ParseReport)> = None;
    for _ in 0..config.repeats {
        let response = client.complete(&request)?;
        let (ranking, report) = parse_ranking(&response, &testcov_list);
        let better = best.as_ref().is_none_or(|(_, _, b)| report.matched > b.matched);
        if better {
            best = Some((response, ranking, report));
        }
    }
    let (response, ranking, report) = best.expect("repeats >= 1");
    Ok(IsolationOutcome {
        ranking,
        testcov_list,
        execov_list,
        prompt: Some(prompt),
        response: Some(response),
        report: Some(report),
    })
}

/// Writes `prompt.txt`, `response.txt`, `ranking.json` and
/// `parse_report.json` (the first two and the last only when the model ran).
pub fn write_artifacts(dir: &Path, outcome: &IsolationOutcome) -> Result<(), PipelineError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files: Vec<(&str, String)> = vec![("ranking.json", outcome.ranking.to_json() + "\n")];
    if let Some(prompt) = &outcome.prompt {
        files.push(("prompt.txt", prompt.clone()));
    }
    if let Some(response) = &outcome.response {
        files.push(("response.txt", response.clone()));
    }
    if let Some(report) = &outcome.report {
        let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
        files.push(("parse_report.json", json));
    }
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Applies `f` to every item on at most `limit` threads, keeping input order.
pub fn run_bounded<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let workers = limit.max(1).min(items.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every item is processed"))
        .collect()
}
