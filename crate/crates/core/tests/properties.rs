use std::collections::BTreeSet;

use proptest::prelude::*;

use cbi_core::coverage::{
    build_matrix, ingest_gcov, synth_matrix, CountVector, ExecutionRecord, FileId, Outcome,
};
use cbi_core::prompt::{
    assemble_isolation_prompt, CompileResult, InfoToggles, PromptBundle, Section, SENTINELS,
};
use cbi_core::rerank::parse_ranking;
use cbi_core::sbfl::{rank, suspiciousness, Formula, Granularity, Provenance, RankedList, Score};
use cbi_core::summarize::{FileSummary, Timestamp};

const GRANULARITIES: [Granularity; 2] = [Granularity::TestCoverage, Granularity::ExecutionCoverage];

fn file_name() -> BoxedStrategy<String> {
    prop::sample::select(vec![
        "gcc/tree-ssa.c",
        "gcc/fold-const.c",
        "gcc/cp/parser.c",
        "gcc/c/parser.c",
        "llvm/lib/IR/Verifier.cpp",
        "llvm/lib/CodeGen/Passes.cpp",
        "include/util.h",
        "gcc/expr.c",
    ])
    .prop_map(str::to_string)
    .boxed()
}

fn hits() -> impl Strategy<Value = std::collections::BTreeMap<String, u64>> {
    prop::collection::btree_map(file_name(), 0u64..50, 0..6)
}

/// Random executions over a small file pool; at least one failing run
/// covers at least one file so the matrix always builds.
fn records() -> impl Strategy<Value = Vec<ExecutionRecord>> {
    (
        prop::collection::vec(hits(), 0..3),
        prop::collection::vec(hits(), 0..6),
        file_name(),
        1u64..50,
    )
        .prop_map(|(failing, passing, anchor, anchor_hits)| {
            let mut out = vec![ExecutionRecord::new(
                "f-anchor",
                Outcome::Failing,
                [(FileId::new(&anchor).unwrap(), anchor_hits)],
            )];
            let to_record = |id: String, outcome, hits: std::collections::BTreeMap<String, u64>| {
                ExecutionRecord::new(
                    id,
                    outcome,
                    hits.into_iter().map(|(f, h)| (FileId::new(&f).unwrap(), h)),
                )
            };
            for (i, h) in failing.into_iter().enumerate() {
                out.push(to_record(format!("f-{i}"), Outcome::Failing, h));
            }
            for (i, h) in passing.into_iter().enumerate() {
                out.push(to_record(format!("p-{i}"), Outcome::Passing, h));
            }
            out
        })
}

fn formula() -> impl Strategy<Value = Formula> {
    prop::sample::select(Formula::ALL.to_vec())
}

fn granularity() -> impl Strategy<Value = Granularity> {
    prop::sample::select(GRANULARITIES.to_vec())
}

fn count_vector() -> impl Strategy<Value = CountVector> {
    (1u64..20, 0u64..40)
        .prop_flat_map(|(tf, tp)| (Just(tf), Just(tp), 0..=tf, 0..=tp, 0u64..1000, 0u64..1000))
        .prop_map(|(tf, tp, f, p, cf, cp)| {
            let cf = if f == 0 { 0 } else { cf.max(f) };
            let cp = if p == 0 { 0 } else { cp.max(p) };
            CountVector::from_counts(f, p, tf, tp, cf, cp)
        })
}

proptest! {
    #[test]
    fn execution_counts_are_brute_force_sums(recs in records()) {
        let matrix = build_matrix(recs.clone()).unwrap();
        for file in matrix.candidate_files() {
            let c = matrix.counts(&file).unwrap();
            let sum = |outcome| recs.iter()
                .filter(|r| r.outcome == outcome)
                .map(|r| r.hits_of(&file))
                .sum::<u64>();
            let runs = |outcome| recs.iter()
                .filter(|r| r.outcome == outcome && r.covers(&file))
                .count() as u64;
            prop_assert_eq!(c.cf, sum(Outcome::Failing));
            prop_assert_eq!(c.cp, sum(Outcome::Passing));
            prop_assert_eq!(c.failed_f, runs(Outcome::Failing));
            prop_assert_eq!(c.passed_f, runs(Outcome::Passing));
            prop_assert!(c.failed_f <= c.total_failed && c.passed_f <= c.total_passed);
        }
    }

    #[test]
    fn binary_hits_collapse_execution_counts_onto_test_counts(seed in any::<u64>(), n in 1usize..40, passing in 0usize..10) {
        let matrix = synth_matrix(seed, n, passing, 1);
        for file in matrix.candidate_files() {
            let c = matrix.counts(&file).unwrap();
            prop_assert_eq!(c.cf, c.failed_f);
            prop_assert_eq!(c.cp, c.passed_f);
            for f in [Formula::Wong2, Formula::Barinel] {
                prop_assert_eq!(
                    suspiciousness(f, Granularity::TestCoverage, &c),
                    suspiciousness(f, Granularity::ExecutionCoverage, &c)
                );
            }
        }
    }

    #[test]
    fn scores_never_drop_with_more_failing_coverage(c in count_vector(), f in formula(), g in granularity()) {
        let before = suspiciousness(f, g, &c);
        let more = if g == Granularity::TestCoverage {
            prop_assume!(c.failed_f < c.total_failed);
            CountVector::from_counts(c.failed_f + 1, c.passed_f, c.total_failed, c.total_passed, c.cf + 1, c.cp)
        } else {
            CountVector::from_counts(c.failed_f.max(1), c.passed_f, c.total_failed, c.total_passed, c.cf + 1, c.cp)
        };
        prop_assert!(suspiciousness(f, g, &more) >= before, "{:?} -> {:?}", c, more);
    }

    #[test]
    fn scores_never_rise_with_more_passing_coverage(c in count_vector(), f in formula(), g in granularity()) {
        let before = suspiciousness(f, g, &c);
        let more = if g == Granularity::TestCoverage {
            prop_assume!(c.passed_f < c.total_passed);
            CountVector::from_counts(c.failed_f, c.passed_f + 1, c.total_failed, c.total_passed, c.cf, c.cp + 1)
        } else {
            // Execution Tarantula divides by the passing run count, so keep it fixed.
            prop_assume!(c.passed_f > 0);
            CountVector::from_counts(c.failed_f, c.passed_f, c.total_failed, c.total_passed, c.cf, c.cp + 1)
        };
        prop_assert!(suspiciousness(f, g, &more) <= before, "{:?} -> {:?}", c, more);
    }

    #[test]
    fn ranking_is_a_deterministic_permutation_of_candidates(recs in records(), f in formula(), g in granularity()) {
        let matrix = build_matrix(recs).unwrap();
        let list = rank(&matrix, f, g);
        prop_assert!(list.is_well_formed());
        let ranked: Vec<FileId> = list.files().cloned().collect();
        let mut sorted = ranked.clone();
        sorted.sort();
        prop_assert_eq!(sorted, matrix.candidate_files());
        for pair in list.entries.windows(2) {
            prop_assert!(
                pair[0].score > pair[1].score
                    || (pair[0].score == pair[1].score && pair[0].file < pair[1].file)
            );
        }
        prop_assert_eq!(rank(&matrix, f, g), list);
    }

    #[test]
    fn synthetic_matrices_are_reproducible(seed in any::<u64>(), n in 1usize..30, passing in 0usize..8) {
        let a = synth_matrix(seed, n, passing, 20);
        let b = synth_matrix(seed, n, passing, 20);
        prop_assert_eq!(
            rank(&a, Formula::Ochiai, Granularity::TestCoverage),
            rank(&b, Formula::Ochiai, Granularity::TestCoverage)
        );
        prop_assert_eq!(a.candidate_files().len(), n);
    }

    #[test]
    fn gcov_totals_add_across_any_split(
        counts in prop::collection::vec(prop_oneof![
            (0u64..100_000).prop_map(|c| c.to_string()),
            (0u64..100).prop_map(|c| format!("{c}*")),
            Just("-".to_string()),
            Just("#####".to_string()),
            Just("=====".to_string()),
        ], 0..60),
        split in any::<prop::sample::Index>(),
    ) {
        let render = |lines: &[String], first: usize| {
            let mut text = String::from("        -:    0:Source:gcc/x.c\n");
            for (i, c) in lines.iter().enumerate() {
                text.push_str(&format!("{c:>9}:{:>5}:code {i}\n", first + i + 1));
            }
            text
        };
        let expected: u64 = counts
            .iter()
            .map(|c| c.trim_end_matches('*').parse::<u64>().unwrap_or(0))
            .sum();
        let cut = if counts.is_empty() { 0 } else { split.index(counts.len() + 1) };
        let whole = ingest_gcov(&render(&counts, 0)).unwrap();
        let left = ingest_gcov(&render(&counts[..cut], 0)).unwrap();
        let right = ingest_gcov(&render(&counts[cut..], cut)).unwrap();
        prop_assert_eq!(whole, expected);
        prop_assert_eq!(left + right, whole);
    }
}

fn fid(s: &str) -> FileId {
    FileId::new(s).unwrap()
}

fn sample_bundle(toggles: InfoToggles, noise: &str) -> PromptBundle {
    let list = RankedList::from_order(
        vec![fid("gcc/a.c"), fid("gcc/b.c"), fid("gcc/c.c")],
        Provenance::Sbfl(Formula::Ochiai, Granularity::TestCoverage),
    );
    PromptBundle {
        compiler: "GCC".into(),
        summaries: vec![FileSummary {
            file: fid("gcc/a.c"),
            summary: format!("Folds constants. {noise}"),
            generated_at: Timestamp::try_from("2024-01-01T00:00:00Z".to_string()).unwrap(),
            model_id: "m".into(),
        }],
        failing_source: format!("int main() {{ return 0; }} /* {noise} */"),
        testcov_list: list.clone(),
        compile_results: vec![
            CompileResult { config: "-O0".into(), output: "0".into() },
            CompileResult { config: "-O2".into(), output: format!("crash {noise}") },
        ],
        execov_list: list,
        toggles,
        list_cap: 50,
    }
}

fn noise() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            prop::sample::select(SENTINELS.to_vec()).prop_map(str::to_string),
            "[a-z ]{0,8}",
            Just("[summary-start".to_string()),
        ],
        0..6,
    )
    .prop_map(|parts| parts.concat())
}

proptest! {
    #[test]
    fn every_toggle_combination_yields_balanced_ordered_markers(mask in 0u8..32, noise in noise()) {
        let mut toggles = InfoToggles::default();
        for (bit, section) in Section::ALL.into_iter().enumerate() {
            toggles.set(section, mask & (1 << bit) != 0);
        }
        let result = assemble_isolation_prompt(&sample_bundle(toggles, &noise));
        if !toggles.testcov_list && !toggles.execov_list {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let prompt = result.unwrap();
        let mut last = 0;
        for section in Section::ALL {
            let (start, end) = section.markers();
            if toggles.enabled(section) {
                prop_assert_eq!(prompt.matches(start).count(), 1, "{}", start);
                prop_assert_eq!(prompt.matches(end).count(), 1, "{}", end);
                let s = prompt.find(start).unwrap();
                let e = prompt.find(end).unwrap();
                prop_assert!(last <= s && s < e);
                last = e;
            } else {
                prop_assert!(!prompt.contains(start) && !prompt.contains(end));
            }
        }
    }

    #[test]
    fn parsed_answers_are_always_permutations_of_the_candidates(
        picks in prop::collection::vec(0usize..12, 0..20),
        junk in prop::collection::vec("[ -~\n]{0,20}", 0..8),
    ) {
        let candidates = [
            "gcc/tree-ssa.c", "gcc/fold-const.c", "gcc/cp/parser.c", "gcc/c/parser.c",
            "gcc/expr.c", "gcc/passes.c", "gcc/config/i386/i386.c", "gcc/gimple.c",
        ];
        let fallback = RankedList::from_order(
            candidates.iter().map(|c| fid(c)).collect(),
            Provenance::Sbfl(Formula::Ochiai, Granularity::TestCoverage),
        );
        let mentions = ["parser.c", "gcc/unknown.c", "fold-const.c", "cp/parser.c"];
        let mut response = String::new();
        for (i, p) in picks.iter().enumerate() {
            let token = candidates.get(*p).copied().unwrap_or(mentions[p % mentions.len()]);
            response.push_str(&format!("{}. {token}\n", i + 1));
            if let Some(j) = junk.get(i) {
                response.push_str(j);
                response.push('\n');
            }
        }
        let (list, report) = parse_ranking(&response, &fallback);
        prop_assert!(list.is_well_formed());
        let got: BTreeSet<&FileId> = list.files().collect();
        let want: BTreeSet<&FileId> = fallback.files().collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(list.len(), fallback.len());
        if !report.fallback_used {
            prop_assert_eq!(report.matched + report.appended_tail, list.len());
        } else {
            prop_assert_eq!(list.provenance, Provenance::Fallback);
            prop_assert_eq!(
                list.files().collect::<Vec<_>>(),
                fallback.files().collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn infinity_outranks_every_finite_score() {
    assert!(Score::PositiveInfinity > Score::Finite(f64::MAX));
    assert!(Score::Finite(-1.0) < Score::Finite(0.0));
}
