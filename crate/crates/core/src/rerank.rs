//! Turns a model's free-text answer into a ranking over the candidate files.
//!
//! Lines are scanned top to bottom and path-like tokens are matched against
//! the candidates: by full normalized path, or by a unique path suffix (a
//! bare basename counts when exactly one candidate has it). The first mention
//! of a candidate fixes its position; candidates never mentioned follow in
//! fallback order. A response that matches nothing yields the fallback list.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::coverage::FileId;
use crate::sbfl::{Provenance, RankedList};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    /// Candidates found in the response.
    pub matched: usize,
    /// Path-like tokens that did not resolve to exactly one candidate.
    pub unmatched_mentions: Vec<String>,
    /// Candidates absent from the response, appended in fallback order.
    pub appended_tail: usize,
    pub fallback_used: bool,
}

fn is_path_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '+' | '/')
}

fn looks_like_path(token: &str) -> bool {
    if token.contains('/') {
        return token.chars().any(|c| c.is_ascii_alphanumeric());
    }
    match token.rsplit_once('.') {
        Some((stem, ext)) => {
            !stem.is_empty()
                && stem.chars().any(|c| c.is_ascii_alphabetic())
                && (1..=5).contains(&ext.len())
                && ext.starts_with(|c: char| c.is_ascii_alphabetic())
                && ext.chars().all(|c| c.is_ascii_alphanumeric())
        }
        None => false,
    }
}

/// Path-like tokens of one line, in order of appearance.
fn path_tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| !is_path_char(c))
        .map(|t| t.trim_matches(|c| c == '.' || c == '-'))
        .filter(|t| looks_like_path(t))
}

struct CandidateIndex<'a> {
    candidates: &'a [FileId],
    exact: HashSet<&'a str>,
}

impl<'a> CandidateIndex<'a> {
    fn new(candidates: &'a [FileId]) -> Self {
        CandidateIndex {
            candidates,
            exact: candidates.iter().map(FileId::as_str).collect(),
        }
    }

    fn resolve(&self, token: &str) -> Option<&'a FileId> {
        let normalized = FileId::new(token).ok()?;
        let path = normalized.as_str();
        if self.exact.contains(path) {
            return self.candidates.iter().find(|c| c.as_str() == path);
        }
        let mut hits = self.candidates.iter().filter(|c| {
            let cand = c.as_str();
            is_segment_suffix(cand, path) || is_segment_suffix(path, cand)
        });
        match (hits.next(), hits.next()) {
            (Some(only), None) => Some(only),
            _ => None,
        }
    }
}

/// True when `suffix` equals the trailing `/`-separated segments of `path`.
fn is_segment_suffix(path: &str, suffix: &str) -> bool {
    path.len() > suffix.len()
        && path.ends_with(suffix)
        && path.as_bytes()[path.len() - suffix.len() - 1] == b'/'
}

/// Parses `response` into a ranking over the files of `fallback`.
pub fn parse_ranking(response: &str, fallback: &RankedList) -> (RankedList, ParseReport) {
    let candidates: Vec<FileId> = fallback.files().cloned().collect();
    let index = CandidateIndex::new(&candidates);
    let mut placed: Vec<FileId> = Vec::new();
    let mut seen: HashSet<&FileId> = HashSet::new();
    let mut unmatched: Vec<String> = Vec::new();
    let mut unmatched_seen: BTreeSet<String> = BTreeSet::new();

    for line in response.lines() {
        for token in path_tokens(line) {
            match index.resolve(token) {
                Some(file) => {
                    if seen.insert(file) {
                        placed.push(file.clone());
                    }
                }
                None => {
                    if unmatched_seen.insert(token.to_string()) {
                        unmatched.push(token.to_string());
                    }
                }
            }
        }
    }

    if placed.is_empty() {
        let mut list = fallback.clone();
        list.provenance = Provenance::Fallback;
        let report = ParseReport {
            matched: 0,
            unmatched_mentions: unmatched,
            appended_tail: 0,
            fallback_used: true,
        };
        return (list, report);
    }

    let matched = placed.len();
    let tail: Vec<FileId> = candidates
        .iter()
        .filter(|c| !seen.contains(c))
        .cloned()
        .collect();
    let appended_tail = tail.len();
    placed.extend(tail);
    let report = ParseReport {
        matched,
        unmatched_mentions: unmatched,
        appended_tail,
        fallback_used: false,
    };
    (RankedList::from_order(placed, Provenance::LlmRefined), report)
}
