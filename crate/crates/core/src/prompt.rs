//! Assembly of the isolation prompt.
//!
//! The prompt carries up to five sentinel-delimited sections in a fixed
//! order, followed by the task description:
//!
//! | section                     | markers                                          |
//! |-----------------------------|--------------------------------------------------|
//! | file summaries              | `[summary-start]` / `[summary-end]`              |
//! | failing test program        | `[source-code-start]` / `[source-code-end]`      |
//! | test-coverage ranking       | `[rankfile-start]` / `[rankfile-end]`            |
//! | compilation outputs         | `[result-start]` / `[result-end]`                |
//! | execution-coverage ranking  | `[executed-file-start]` / `[executed-file-end]`  |
//!
//! Disabled sections are omitted entirely, markers included. Text embedded
//! in a section never contains a live marker.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sbfl::RankedList;
use crate::summarize::FileSummary;

pub const SENTINELS: [&str; 10] = [
    "[summary-start]",
    "[summary-end]",
    "[source-code-start]",
    "[source-code-end]",
    "[rankfile-start]",
    "[rankfile-end]",
    "[result-start]",
    "[result-end]",
    "[executed-file-start]",
    "[executed-file-end]",
];

pub const DEFAULT_LIST_CAP: usize = 50;
pub const FAILING_SOURCE_CHAR_CAP: usize = 20_000;
pub const DEFAULT_PROMPT_BUDGET: usize = 120_000;

const TASK_INTRO: &str = include_str!("../assets/task/intro.txt");
const TASK_SUMMARY: &str = include_str!("../assets/task/summary.txt");
const TASK_FAILTEST: &str = include_str!("../assets/task/failtest.txt");
const TASK_TESTCOV: &str = include_str!("../assets/task/testcov.txt");
const TASK_COMPILE: &str = include_str!("../assets/task/compile.txt");
const TASK_EXECOV: &str = include_str!("../assets/task/execov.txt");
const TASK_OUTRO: &str = include_str!("../assets/task/outro.txt");
const SUMMARY_TAIL: &str = include_str!("../assets/task/summary_tail.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Summary,
    FailingSource,
    TestCoverageList,
    CompileResults,
    ExecutionCoverageList,
}

impl Section {
    /// Sections in prompt order.
    pub const ALL: [Section; 5] = [
        Section::Summary,
        Section::FailingSource,
        Section::TestCoverageList,
        Section::CompileResults,
        Section::ExecutionCoverageList,
    ];

    pub fn markers(self) -> (&'static str, &'static str) {
        let i = self as usize * 2;
        (SENTINELS[i], SENTINELS[i + 1])
    }

    fn explanation(self) -> &'static str {
        match self {
            Section::Summary => TASK_SUMMARY,
            Section::FailingSource => TASK_FAILTEST,
            Section::TestCoverageList => TASK_TESTCOV,
            Section::CompileResults => TASK_COMPILE,
            Section::ExecutionCoverageList => TASK_EXECOV,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("section {0:?} is enabled but has no content")]
    MissingSection(Section),
    #[error("at least one ranked list must be enabled")]
    NoRankedList,
    #[error("duplicate compilation configuration `{0}`")]
    DuplicateConfig(String),
}

/// Which information sources go into the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfoToggles {
    pub summary: bool,
    pub failtest: bool,
    pub testcov_list: bool,
    pub compile: bool,
    pub execov_list: bool,
}

impl Default for InfoToggles {
    fn default() -> Self {
        InfoToggles {
            summary: true,
            failtest: true,
            testcov_list: true,
            compile: true,
            execov_list: true,
        }
    }
}

impl InfoToggles {
    pub fn enabled(&self, section: Section) -> bool {
        match section {
            Section::Summary => self.summary,
            Section::FailingSource => self.failtest,
            Section::TestCoverageList => self.testcov_list,
            Section::CompileResults => self.compile,
            Section::ExecutionCoverageList => self.execov_list,
        }
    }

    pub fn set(&mut self, section: Section, on: bool) {
        match section {
            Section::Summary => self.summary = on,
            Section::FailingSource => self.failtest = on,
            Section::TestCoverageList => self.testcov_list = on,
            Section::CompileResults => self.compile = on,
            Section::ExecutionCoverageList => self.execov_list = on,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.testcov_list || self.execov_list {
            Ok(())
        } else {
            Err(PromptError::NoRankedList)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileResult {
    pub config: String,
    pub output: String,
}

#[derive(Debug, Clone)]
pub struct PromptBundle {
    /// Compiler name used in the instructions, e.g. `GCC`.
    pub compiler: String,
    pub summaries: Vec<FileSummary>,
    pub failing_source: String,
    pub testcov_list: RankedList,
    pub compile_results: Vec<CompileResult>,
    pub execov_list: RankedList,
    pub toggles: InfoToggles,
    pub list_cap: usize,
}

impl PromptBundle {
    fn validate(&self) -> Result<(), PromptError> {
        self.toggles.validate()?;
        let t = &self.toggles;
        let missing = [
            (t.summary && self.summaries.is_empty(), Section::Summary),
            (t.failtest && self.failing_source.trim().is_empty(), Section::FailingSource),
            (t.testcov_list && self.testcov_list.is_empty(), Section::TestCoverageList),
            (t.compile && self.compile_results.is_empty(), Section::CompileResults),
            (t.execov_list && self.execov_list.is_empty(), Section::ExecutionCoverageList),
        ];
        if let Some((_, section)) = missing.into_iter().find(|(m, _)| *m) {
            return Err(PromptError::MissingSection(section));
        }
        let mut configs = HashSet::new();
        for result in &self.compile_results {
            if !configs.insert(result.config.as_str()) {
                return Err(PromptError::DuplicateConfig(result.config.clone()));
            }
        }
        Ok(())
    }
}

/// Defuses any sentinel marker inside embedded text by swapping its brackets.
fn neutralize(text: &str) -> String {
    let mut out = text.to_string();
    for marker in SENTINELS {
        if out.contains(marker) {
            let inert = format!("({})", &marker[1..marker.len() - 1]);
            out = out.replace(marker, &inert);
        }
    }
    out
}

fn truncate_chars(text: &str, cap: usize) -> (&str, bool) {
    match text.char_indices().nth(cap) {
        Some((idx, _)) => (&text[..idx], true),
        None => (text, false),
    }
}

fn push_section(out: &mut String, section: Section, body: &str) {
    let (start, end) = section.markers();
    out.push_str(start);
    out.push('\n');
    out.push_str(body.trim_end_matches('\n'));
    out.push('\n');
    out.push_str(end);
    out.push('\n');
}

fn ranked_lines(list: &RankedList, cap: usize) -> String {
    let mut body = String::new();
    for entry in list.entries.iter().take(cap) {
        let _ = writeln!(body, "{}. {}", entry.rank, neutralize(entry.file.as_str()));
    }
    body
}

/// Builds the isolation prompt from the enabled sections of `bundle`.
pub fn assemble_isolation_prompt(bundle: &PromptBundle) -> Result<String, PromptError> {
    bundle.validate()?;
    let toggles = &bundle.toggles;
    let compiler = neutralize(&bundle.compiler);
    let mut out = String::new();

    for section in Section::ALL.into_iter().filter(|s| toggles.enabled(*s)) {
        if !out.is_empty() {
            out.push('\n');
        }
        match section {
            Section::Summary => {
                let mut body = String::new();
                for (i, s) in bundle.summaries.iter().enumerate() {
                    if i > 0 {
                        body.push('\n');
                    }
                    let _ = writeln!(body, "File: {}", neutralize(s.file.as_str()));
                    let _ = writeln!(body, "Summary: {}", neutralize(s.summary.trim()));
                }
                push_section(&mut out, section, &body);
                out.push_str(&SUMMARY_TAIL.replace("{compiler}", &compiler));
            }
            Section::FailingSource => {
                let (source, truncated) =
                    truncate_chars(&bundle.failing_source, FAILING_SOURCE_CHAR_CAP);
                let mut body = neutralize(source);
                if truncated {
                    body.push_str("\n[truncated]");
                }
                push_section(&mut out, section, &body);
            }
            Section::TestCoverageList => {
                push_section(&mut out, section, &ranked_lines(&bundle.testcov_list, bundle.list_cap));
            }
            Section::CompileResults => {
                let mut body = String::new();
                for (i, result) in bundle.compile_results.iter().enumerate() {
                    if i > 0 {
                        body.push('\n');
                    }
                    let _ = writeln!(body, "Configuration: {}", neutralize(&result.config));
                    let _ = writeln!(body, "Output:\n{}", neutralize(result.output.trim_end()));
                }
                push_section(&mut out, section, &body);
            }
            Section::ExecutionCoverageList => {
                push_section(&mut out, section, &ranked_lines(&bundle.execov_list, bundle.list_cap));
            }
        }
    }

    if !out.is_empty() {
        out.push('\n');
    }
    out.push_str(&TASK_INTRO.replace("{compiler}", &compiler));
    for section in Section::ALL.into_iter().filter(|s| toggles.enabled(*s)) {
        out.push_str(section.explanation());
    }
    out.push_str(TASK_OUTRO);

    let size = prompt_budget(&out);
    if size > DEFAULT_PROMPT_BUDGET {
        log::warn!("isolation prompt is {size} characters, above the {DEFAULT_PROMPT_BUDGET} budget");
    }
    Ok(out)
}

/// Size of a prompt in characters.
pub fn prompt_budget(text: &str) -> usize {
    text.chars().count()
}
