//! A hermetic three-bug benchmark and a mock script that answers every
//! prompt the pipeline will send for it.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use cbi_core::coverage::{synth_matrix, CoverageManifest};
use cbi_core::eval::load_manifest;
use cbi_core::llm::{prompt_digest, MockChatClient};
use cbi_core::pipeline::{build_prompt, PipelineConfig};
use cbi_core::sbfl::{rank, Granularity};
use cbi_core::summarize::{build_summary_prompt, SummaryStore};

use cbi_cli::{IsolateArgs, ModelArgs};

pub const BUGS: [(&str, &str, u64, &str); 3] = [
    ("GCC-101", "GCC", 11, "src/file_0007.c"),
    ("GCC-102", "GCC", 12, "src/file_0002.c"),
    ("LLVM-201", "LLVM", 21, "src/file_0009.c"),
];

/// Writes the fixture under `dir` and returns the manifest path.
pub fn write_fixture(dir: &Path) -> PathBuf {
    fs::create_dir_all(dir.join("docs")).unwrap();
    fs::write(
        dir.join("docs/map.json"),
        r#"{ "mode": "file", "src/file_0000.c": "file_0000.txt", "src/file_0001.c": "file_0001.txt" }"#,
    )
    .unwrap();
    fs::write(dir.join("docs/file_0000.txt"), "Parses declarations.").unwrap();
    fs::write(dir.join("docs/file_0001.txt"), "Folds constant expressions.").unwrap();

    let mut cases = Vec::new();
    for (bug_id, compiler, seed, truth) in BUGS {
        let bug_dir = dir.join(bug_id);
        fs::create_dir_all(&bug_dir).unwrap();
        fs::write(
            bug_dir.join("test.c"),
            format!("/* {bug_id} */\nint main(void) {{ return 0; }}\n"),
        )
        .unwrap();
        let coverage = CoverageManifest::from_matrix(&synth_matrix(seed, 12, 4, 30));
        fs::write(bug_dir.join("coverage.json"), coverage.to_json()).unwrap();
        cases.push(serde_json::json!({
            "bug_id": bug_id,
            "compiler": compiler,
            "failing_source": format!("{bug_id}/test.c"),
            "compile_results": [
                { "config": "-O0", "output": "exit 0" },
                { "config": "-O2", "output": "exit 1" }
            ],
            "coverage": format!("{bug_id}/coverage.json"),
            "ground_truth": [truth],
            "doc_links": "docs/map.json"
        }));
    }
    let manifest = dir.join("manifest.json");
    fs::write(&manifest, serde_json::to_string_pretty(&cases).unwrap()).unwrap();
    manifest
}

fn summary_response(file: &str) -> String {
    format!("Handles the work of {file}.")
}

/// Maps the digest of every prompt that `configs` produce to a response that
/// places the ground-truth file first.
pub fn mock_script(manifest: &Path, configs: &[PipelineConfig]) -> BTreeMap<String, String> {
    let mut summaries = BTreeMap::new();
    let cases: Vec<_> = load_manifest(manifest)
        .unwrap()
        .iter()
        .map(|c| c.load_inputs().unwrap())
        .collect();
    for case in &cases {
        for source in &case.doc_sources {
            let prompt = build_summary_prompt(source).unwrap();
            summaries.insert(prompt, summary_response(source.file.as_str()));
        }
    }
    let summarizer = MockChatClient::from_prompts(summaries.clone());
    let mut script: BTreeMap<String, String> = summaries
        .iter()
        .map(|(p, r)| (prompt_digest(p), r.clone()))
        .collect();
    for config in configs {
        let store = Mutex::new(SummaryStore::in_memory());
        for case in &cases {
            let testcov = rank(&case.matrix, config.testcov_formula, Granularity::TestCoverage);
            let execov = rank(&case.matrix, config.execov_formula, Granularity::ExecutionCoverage);
            if let Some(prompt) =
                build_prompt(case, &testcov, &execov, config, &summarizer, &store).unwrap()
            {
                let truth = case.case.ground_truth.iter().next().unwrap();
                script.insert(prompt_digest(&prompt), format!("1. {truth}\n"));
            }
        }
    }
    script
}

pub fn write_mock_script(manifest: &Path, configs: &[PipelineConfig], path: &Path) {
    let script = mock_script(manifest, configs);
    fs::write(path, serde_json::to_string_pretty(&script).unwrap()).unwrap();
}

pub fn model_args(mock_script: Option<PathBuf>) -> ModelArgs {
    ModelArgs {
        config: None,
        mock_script,
        transcript: None,
        model: None,
        endpoint: None,
        summaries: None,
    }
}

pub fn isolate_args(manifest: &Path, out: &Path, mock_script: &Path) -> IsolateArgs {
    IsolateArgs {
        manifest: manifest.to_path_buf(),
        out: out.to_path_buf(),
        disable: Vec::new(),
        testcov_formula: None,
        execov_formula: None,
        dump_prompt: None,
        repeats: None,
        list_cap: None,
        workers: None,
        model: model_args(Some(mock_script.to_path_buf())),
    }
}

/// Every file under `dir`, keyed by its relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
