//! Spectrum-based suspiciousness at test and execution granularity.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::coverage::{CountVector, CoverageMatrix, FileId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Wong2,
    Ochiai,
    DStar2,
    Barinel,
    Tarantula,
}

impl Formula {
    pub const ALL: [Formula; 5] = [
        Formula::Wong2,
        Formula::Ochiai,
        Formula::DStar2,
        Formula::Barinel,
        Formula::Tarantula,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Formula::Wong2 => "wong2",
            Formula::Ochiai => "ochiai",
            Formula::DStar2 => "dstar2",
            Formula::Barinel => "barinel",
            Formula::Tarantula => "tarantula",
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} `{value}`")]
pub struct ParseNameError {
    kind: &'static str,
    value: String,
}

impl FromStr for Formula {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Formula::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseNameError {
                kind: "formula",
                value: s.to_string(),
            })
    }
}

impl Serialize for Formula {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Granularity {
    /// Counts of covering test programs.
    TestCoverage,
    /// Summed per-file execution counts.
    ExecutionCoverage,
}

impl Granularity {
    pub const ALL: [Granularity; 2] = [Granularity::TestCoverage, Granularity::ExecutionCoverage];

    pub fn name(self) -> &'static str {
        match self {
            Granularity::TestCoverage => "test",
            Granularity::ExecutionCoverage => "exec",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Granularity {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "test" | "testcov" | "test-coverage" => Ok(Granularity::TestCoverage),
            "exec" | "execov" | "execution" | "execution-coverage" => {
                Ok(Granularity::ExecutionCoverage)
            }
            _ => Err(ParseNameError {
                kind: "granularity",
                value: s.to_string(),
            }),
        }
    }
}

/// A suspiciousness value. Never NaN; `PositiveInfinity` sorts above every
/// finite score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Finite(f64),
    PositiveInfinity,
}

impl Score {
    fn finite(value: f64) -> Score {
        debug_assert!(value.is_finite(), "non-finite score {value}");
        Score::Finite(value)
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Score::Finite(v) => v,
            Score::PositiveInfinity => f64::INFINITY,
        }
    }
}

impl Eq for Score {}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Score::Finite(a), Score::Finite(b)) => a.total_cmp(b),
            (Score::Finite(_), Score::PositiveInfinity) => Ordering::Less,
            (Score::PositiveInfinity, Score::Finite(_)) => Ordering::Greater,
            (Score::PositiveInfinity, Score::PositiveInfinity) => Ordering::Equal,
        }
    }
}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Score::Finite(v) => serializer.serialize_f64(*v),
            Score::PositiveInfinity => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScoreVisitor;

        impl Visitor<'_> for ScoreVisitor {
            type Value = Score;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a finite number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Score, E> {
                if v.is_finite() {
                    Ok(Score::Finite(v))
                } else {
                    Err(E::custom("non-finite score"))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Score, E> {
                Ok(Score::Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Score, E> {
                Ok(Score::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Score, E> {
                if v == "inf" {
                    Ok(Score::PositiveInfinity)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(ScoreVisitor)
    }
}

/// Suspiciousness of one file under `formula` at `granularity`.
///
/// Degenerate denominators never produce NaN: a positive numerator over a
/// zero denominator (DStar2 only) is `PositiveInfinity`, every other 0/0 is 0.
pub fn suspiciousness(formula: Formula, granularity: Granularity, c: &CountVector) -> Score {
    match granularity {
        Granularity::TestCoverage => test_coverage_score(formula, c),
        Granularity::ExecutionCoverage => execution_coverage_score(formula, c),
    }
}

fn test_coverage_score(formula: Formula, c: &CountVector) -> Score {
    let failed = c.failed_f as f64;
    let passed = c.passed_f as f64;
    let total_failed = c.total_failed as f64;
    let total_passed = c.total_passed as f64;
    match formula {
        Formula::Wong2 => Score::finite(c.failed_f as i64 as f64 - c.passed_f as i64 as f64),
        Formula::Ochiai => {
            if c.failed_f == 0 {
                Score::finite(0.0)
            } else {
                Score::finite(failed / (total_failed * (failed + passed)).sqrt())
            }
        }
        Formula::DStar2 => {
            let denominator = c.passed_f + c.total_failed.saturating_sub(c.failed_f);
            ratio_or_infinity(failed * failed, denominator as f64)
        }
        Formula::Barinel => {
            if c.failed_f + c.passed_f == 0 {
                Score::finite(0.0)
            } else {
                Score::finite(1.0 - passed / (passed + failed))
            }
        }
        Formula::Tarantula => {
            let fail_ratio = if c.total_failed == 0 {
                0.0
            } else {
                failed / total_failed
            };
            let pass_ratio = if c.total_passed == 0 {
                0.0
            } else {
                passed / total_passed
            };
            if fail_ratio == 0.0 {
                Score::finite(0.0)
            } else {
                Score::finite(fail_ratio / (fail_ratio + pass_ratio))
            }
        }
    }
}

fn execution_coverage_score(formula: Formula, c: &CountVector) -> Score {
    let cf = c.cf as f64;
    let cp = c.cp as f64;
    match formula {
        Formula::Wong2 => Score::finite(c.cf as i64 as f64 - c.cp as i64 as f64),
        Formula::Ochiai => {
            if c.cf == 0 {
                Score::finite(0.0)
            } else {
                Score::finite(cf / (cf * (cf + cp)).sqrt())
            }
        }
        Formula::DStar2 => ratio_or_infinity(cf * cf, cp + cf),
        Formula::Barinel => {
            if c.cf + c.cp == 0 {
                Score::finite(0.0)
            } else {
                Score::finite(1.0 - cp / (cp + cf))
            }
        }
        Formula::Tarantula => {
            if c.cf == 0 {
                Score::finite(0.0)
            } else {
                Score::finite(cf / (c.cp_bar + cf))
            }
        }
    }
}

fn ratio_or_infinity(numerator: f64, denominator: f64) -> Score {
    if denominator == 0.0 {
        if numerator > 0.0 {
            Score::PositiveInfinity
        } else {
            Score::finite(0.0)
        }
    } else {
        Score::finite(numerator / denominator)
    }
}

/// Where a ranked list came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Sbfl(Formula, Granularity),
    LlmRefined,
    Fallback,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Sbfl(formula, granularity) => write!(f, "sbfl:{formula}:{granularity}"),
            Provenance::LlmRefined => f.write_str("llm-refined"),
            Provenance::Fallback => f.write_str("fallback"),
        }
    }
}

impl FromStr for Provenance {
    type Err = ParseNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm-refined" => return Ok(Provenance::LlmRefined),
            "fallback" => return Ok(Provenance::Fallback),
            _ => {}
        }
        let mut parts = s.split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("sbfl"), Some(formula), Some(granularity), None) => {
                Ok(Provenance::Sbfl(formula.parse()?, granularity.parse()?))
            }
            _ => Err(ParseNameError {
                kind: "provenance",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub file: FileId,
    pub score: Score,
}

/// Files ordered by descending score, ties broken by ascending path, with
/// consecutive 1-based ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub provenance: Provenance,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts scored files into a ranked list.
    pub fn from_scores(mut scored: Vec<(FileId, Score)>, provenance: Provenance) -> Self {
        scored.sort_by(|(fa, sa), (fb, sb)| sb.cmp(sa).then_with(|| fa.cmp(fb)));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (file, score))| RankedEntry {
                rank: i + 1,
                file,
                score,
            })
            .collect();
        RankedList {
            provenance,
            entries,
        }
    }

    /// Ranks files in the given order; the score is the number of files at
    /// or below each position, so the list stays sorted by score.
    pub fn from_order(files: Vec<FileId>, provenance: Provenance) -> Self {
        let n = files.len();
        let entries = files
            .into_iter()
            .enumerate()
            .map(|(i, file)| RankedEntry {
                rank: i + 1,
                file,
                score: Score::Finite((n - i) as f64),
            })
            .collect();
        RankedList {
            provenance,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn files(&self) -> impl Iterator<Item = &FileId> {
        self.entries.iter().map(|e| &e.file)
    }

    pub fn rank_of(&self, file: &FileId) -> Option<usize> {
        self.entries.iter().find(|e| &e.file == file).map(|e| e.rank)
    }

    /// Checks that ranks are 1..n, files are distinct, and the order is by
    /// score descending then path ascending.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.entries.iter().enumerate().all(|(i, e)| e.rank == i + 1 && seen.insert(&e.file))
            && self.entries.windows(2).all(|w| {
                w[0].score > w[1].score || (w[0].score == w[1].score && w[0].file < w[1].file)
            })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RankedListJson {
            provenance: self.provenance.to_string(),
            entries: self.entries.clone(),
        })
        .expect("ranked list serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let raw: RankedListJson = serde_json::from_str(text)?;
        let provenance = raw.provenance.parse().map_err(de::Error::custom)?;
        Ok(RankedList {
            provenance,
            entries: raw.entries,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RankedListJson {
    provenance: String,
    entries: Vec<RankedEntry>,
}

/// Ranks every candidate file of `matrix`.
pub fn rank(matrix: &CoverageMatrix, formula: Formula, granularity: Granularity) -> RankedList {
    let scored = matrix
        .candidate_files()
        .into_iter()
        .map(|file| {
            let counts = matrix.counts(&file).expect("candidates belong to the matrix");
            let score = suspiciousness(formula, granularity, &counts);
            (file, score)
        })
        .collect();
    RankedList::from_scores(scored, Provenance::Sbfl(formula, granularity))
}

/// Best rank among `targets`; `len + 1` when none of them is listed.
pub fn first_rank_of<'a, I>(list: &RankedList, targets: I) -> usize
where
    I: IntoIterator<Item = &'a FileId>,
{
    targets
        .into_iter()
        .filter_map(|t| list.rank_of(t))
        .min()
        .unwrap_or(list.len() + 1)
}
