//! Per-file documentation summaries and their on-disk cache.
//!
//! Summaries are produced once per file and reused across bugs; the cache is
//! keyed by path only, so regenerating after a documentation change is an
//! explicit refresh.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::FileId;
use crate::llm::{ChatClient, ChatRequest, LlmError};
use crate::prompt::SENTINELS;

const SUMMARY_TEMPLATE: &str = include_str!("../assets/summary_prompt.txt");

pub const DEFAULT_SUMMARY_CHAR_CAP: usize = 1200;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("documentation for `{0}` is empty")]
    EmptyDocument(FileId),
    #[error("model returned an empty summary for `{0}`")]
    SummaryEmpty(FileId),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("summary store {path} is corrupt at byte {offset}: {message}")]
    StoreCorrupt {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("doc-link map {path}: {message}")]
    DocLinks { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DocOrigin {
    Url(String),
    LocalText(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocSource {
    pub file: FileId,
    pub origin: DocOrigin,
}

/// An RFC 3339 timestamp kept verbatim so the cache round-trips byte-exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Timestamp(String);

impl Timestamp {
    pub fn now() -> Self {
        Timestamp(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Timestamp {
    type Error = chrono::ParseError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        chrono::DateTime::parse_from_rfc3339(&value)?;
        Ok(Timestamp(value))
    }
}

impl From<Timestamp> for String {
    fn from(t: Timestamp) -> String {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileSummary {
    pub file: FileId,
    pub summary: String,
    pub generated_at: Timestamp,
    pub model_id: String,
}

pub fn build_summary_prompt(source: &DocSource) -> Result<String, SummaryError> {
    let document = match &source.origin {
        DocOrigin::Url(url) => format!("The documentation is available at this link: {url}"),
        DocOrigin::LocalText(text) => {
            if text.trim().is_empty() {
                return Err(SummaryError::EmptyDocument(source.file.clone()));
            }
            format!("The documentation follows.\n<<<\n{}\n>>>", text.trim_end())
        }
    };
    Ok(SUMMARY_TEMPLATE
        .replace("{path}", source.file.as_str())
        .replace("{document}", &document))
}

/// Removes sentinel markers and caps the text at `cap` characters, cutting at
/// the last whitespace that fits.
pub fn clean_summary(raw: &str, cap: usize) -> String {
    let mut text = raw.to_string();
    // Removing one marker can splice another together, so repeat until stable.
    loop {
        let before = text.len();
        for marker in SENTINELS {
            text = text.replace(marker, "");
        }
        if text.len() == before {
            break;
        }
    }
    let text = text.trim();
    if text.chars().count() <= cap {
        return text.to_string();
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    // chars[cap] is the first character that does not fit; cutting at a
    // whitespace at or before it keeps only whole words.
    let cut = chars[..=cap]
        .iter()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map_or(chars[cap].0, |(i, _)| *i);
    text[..cut].trim_end().to_string()
}

pub fn summarize_file<C: ChatClient + ?Sized>(
    client: &C,
    model_id: &str,
    source: &DocSource,
    char_cap: usize,
) -> Result<FileSummary, SummaryError> {
    let prompt = build_summary_prompt(source)?;
    let response = client.complete(&ChatRequest::new(model_id, prompt))?;
    let summary = clean_summary(&response, char_cap);
    if summary.is_empty() {
        return Err(SummaryError::SummaryEmpty(source.file.clone()));
    }
    Ok(FileSummary {
        file: source.file.clone(),
        summary,
        generated_at: Timestamp::now(),
        model_id: model_id.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoredSummary {
    summary: String,
    generated_at: Timestamp,
    model_id: String,
}

/// JSON cache `{ "<path>": { "summary", "generated_at", "model_id" } }`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SummaryStore {
    entries: BTreeMap<FileId, FileSummary>,
    path: Option<PathBuf>,
}

impl SummaryStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads the cache at `path`; a missing file is an empty cache.
    pub fn load(path: &Path) -> Result<Self, SummaryError> {
        let text = match fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Ok(SummaryStore {
                    entries: BTreeMap::new(),
                    path: Some(path.to_path_buf()),
                })
            }
            Err(source) => {
                return Err(SummaryError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        let raw: BTreeMap<FileId, StoredSummary> =
            serde_json::from_str(&text).map_err(|e| SummaryError::StoreCorrupt {
                path: path.to_path_buf(),
                offset: byte_offset(&text, e.line(), e.column()),
                message: e.to_string(),
            })?;
        let entries = raw
            .into_iter()
            .map(|(file, s)| {
                let summary = FileSummary {
                    file: file.clone(),
                    summary: s.summary,
                    generated_at: s.generated_at,
                    model_id: s.model_id,
                };
                (file, summary)
            })
            .collect();
        Ok(SummaryStore {
            entries,
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn save(&self) -> Result<(), SummaryError> {
        match &self.path {
            Some(path) => self.save_to(path),
            None => Ok(()),
        }
    }

    pub fn save_to(&self, path: &Path) -> Result<(), SummaryError> {
        let raw: BTreeMap<&FileId, StoredSummary> = self
            .entries
            .iter()
            .map(|(file, s)| {
                (
                    file,
                    StoredSummary {
                        summary: s.summary.clone(),
                        generated_at: s.generated_at.clone(),
                        model_id: s.model_id.clone(),
                    },
                )
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&raw).expect("store serializes");
        text.push('\n');
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|source| SummaryError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(path, text).map_err(|source| SummaryError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn get(&self, file: &FileId) -> Option<&FileSummary> {
        self.entries.get(file)
    }

    pub fn insert(&mut self, summary: FileSummary) {
        self.entries.insert(summary.file.clone(), summary);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FileSummary> {
        self.entries.values()
    }

    /// Returns the cached summary, calling the model only on a cache miss or
    /// when `refresh` is set.
    pub fn get_or_summarize<C: ChatClient + ?Sized>(
        &mut self,
        client: &C,
        model_id: &str,
        source: &DocSource,
        char_cap: usize,
        refresh: bool,
    ) -> Result<&FileSummary, SummaryError> {
        if refresh || !self.entries.contains_key(&source.file) {
            let summary = summarize_file(client, model_id, source, char_cap)?;
            self.insert(summary);
        }
        Ok(&self.entries[&source.file])
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Loads a doc-link map `{ "mode": "url"|"file", "<path>": "<url-or-file>" }`.
///
/// In `file` mode the values are local documentation files, resolved
/// relative to the map's directory and read eagerly.
pub fn load_doc_links(path: &Path) -> Result<Vec<DocSource>, SummaryError> {
    let doc_err = |message: String| SummaryError::DocLinks {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|source| SummaryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut raw: BTreeMap<String, String> =
        serde_json::from_str(&text).map_err(|e| doc_err(e.to_string()))?;
    let mode = raw.remove("mode").unwrap_or_else(|| "url".to_string());
    let base = path.parent().unwrap_or(Path::new(""));
    raw.into_iter()
        .map(|(file, target)| {
            let file = FileId::new(&file).map_err(|e| doc_err(e.to_string()))?;
            let origin = match mode.as_str() {
                "url" => DocOrigin::Url(target),
                "file" => {
                    let doc_path = base.join(&target);
                    let body = fs::read_to_string(&doc_path).map_err(|source| SummaryError::Io {
                        path: doc_path,
                        source,
                    })?;
                    DocOrigin::LocalText(body)
                }
                other => return Err(doc_err(format!("unknown mode `{other}`"))),
            };
            Ok(DocSource { file, origin })
        })
        .collect()
}
