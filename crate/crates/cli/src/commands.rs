use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::Serialize;

use cbi_core::coverage::{self, GcovReport};
use cbi_core::eval::{self, BugCase, EvalError, EvaluationReport, PerBugResult, ReportRow};
use cbi_core::llm::{ChatClient, HttpChatClient, MockChatClient, TranscriptClient};
use cbi_core::pipeline::{self, PipelineConfig, Source};
use cbi_core::rerank::ParseReport;
use cbi_core::sbfl::{self, RankedList};
use cbi_core::summarize::{self, DocSource, SummaryStore};

use crate::{CliError, EvaluateArgs, IngestArgs, IsolateArgs, ModelArgs, RankArgs, SummarizeArgs};

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    fs::write(path, content).map_err(CliError::io(path))
}

pub fn ingest(args: &IngestArgs) -> Result<(), CliError> {
    match (&args.gcov_dir, &args.gcov) {
        (Some(dir), None) => {
            let manifest = coverage::ingest_gcov_tree(dir)?;
            // Validate before writing so a bad tree never yields a manifest.
            manifest.clone().into_matrix()?;
            let json = manifest.to_json() + "\n";
            match &args.out {
                Some(out) => write_file(out, &json),
                None => {
                    print!("{json}");
                    Ok(())
                }
            }
        }
        (None, Some(file)) => {
            let text = fs::read_to_string(file).map_err(CliError::io(file))?;
            let report = GcovReport::parse(&text)?;
            let name = report.source.unwrap_or_else(|| file.display().to_string());
            println!("{name}\t{}", report.total);
            Ok(())
        }
        _ => Err(CliError::Usage(
            "ingest needs exactly one of --gcov-dir or --gcov".into(),
        )),
    }
}

pub fn rank(args: &RankArgs) -> Result<(), CliError> {
    let cases = eval::load_manifest(&args.manifest)?;
    let mut failed = 0;
    for case in &cases {
        let result = coverage::load_matrix(&case.coverage)
            .map_err(CliError::from)
            .and_then(|matrix| {
                let list = sbfl::rank(&matrix, args.formula, args.granularity);
                write_file(
                    &args.out.join(&case.bug_id).join("ranking.json"),
                    &(list.to_json() + "\n"),
                )
            });
        if let Err(e) = result {
            log::error!("{}: {e}", case.bug_id);
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::BugFailures {
            failed,
            total: cases.len(),
        });
    }
    Ok(())
}

/// Pipeline configuration from built-in defaults, then `--config`, then flags.
pub fn base_config(model: &ModelArgs) -> Result<PipelineConfig, CliError> {
    let mut config = match &model.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(CliError::io(path))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(model_id) = &model.model {
        config.model_id = model_id.clone();
    }
    if let Some(endpoint) = &model.endpoint {
        config.client.endpoint_url = endpoint.clone();
    }
    Ok(config)
}

pub fn isolate_config(args: &IsolateArgs) -> Result<PipelineConfig, CliError> {
    let mut config = base_config(&args.model)?;
    for source in &args.disable {
        config.disable(*source);
    }
    if let Some(f) = args.testcov_formula {
        config.testcov_formula = f;
    }
    if let Some(f) = args.execov_formula {
        config.execov_formula = f;
    }
    if let Some(r) = args.repeats {
        config.repeats = r;
    }
    if let Some(cap) = args.list_cap {
        config.list_cap = cap;
    }
    if let Some(w) = args.workers {
        config.worker_limit = w;
    }
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

/// The scripted client when `--mock-script` is given, the HTTP client
/// otherwise. A live client without credentials fails here, before any work.
pub fn make_client(
    model: &ModelArgs,
    config: &PipelineConfig,
    needs_model: bool,
) -> Result<Box<dyn ChatClient>, CliError> {
    let client: Box<dyn ChatClient> = match &model.mock_script {
        Some(script) => Box::new(
            MockChatClient::from_file(script)?.with_max_in_flight(config.client.max_in_flight),
        ),
        None => {
            let http = HttpChatClient::new(config.client.clone());
            if needs_model {
                http.api_key()?;
            }
            Box::new(http)
        }
    };
    match &model.transcript {
        Some(path) => Ok(Box::new(TranscriptClient::new(client, path)?)),
        None => Ok(client),
    }
}

fn open_store(model: &ModelArgs) -> Result<SummaryStore, CliError> {
    match &model.summaries {
        Some(path) => Ok(SummaryStore::load(path)?),
        None => Ok(SummaryStore::in_memory()),
    }
}

pub fn summarize(args: &SummarizeArgs) -> Result<(), CliError> {
    let Some(store_path) = &args.model.summaries else {
        return Err(CliError::Usage("summarize needs --summaries <path>".into()));
    };
    let mut sources: Vec<DocSource> = Vec::new();
    if let Some(map) = &args.doc_links {
        sources.extend(summarize::load_doc_links(map)?);
    } else if let Some(manifest) = &args.manifest {
        for case in eval::load_manifest(manifest)? {
            if let Some(map) = &case.doc_links {
                sources.extend(summarize::load_doc_links(map)?);
            }
        }
    }
    let mut seen = BTreeSet::new();
    sources.retain(|s| seen.insert(s.file.clone()));

    let config = base_config(&args.model)?;
    let client = make_client(&args.model, &config, !sources.is_empty())?;
    let mut store = SummaryStore::load(store_path)?;
    let mut failures = 0;
    for source in &sources {
        if let Err(e) = store.get_or_summarize(
            client.as_ref(),
            &config.model_id,
            source,
            config.summary_char_cap,
            args.refresh,
        ) {
            log::error!("{}: {e}", source.file);
            failures += 1;
        }
    }
    store.save()?;
    log::info!("{} summaries in {}", store.len(), store_path.display());
    if failures > 0 {
        return Err(CliError::BugFailures {
            failed: failures,
            total: sources.len(),
        });
    }
    Ok(())
}

/// Isolates every case, writing per-bug artifacts under `out`. Cases that
/// fail are logged and reported together at the end.
pub fn isolate_cases(
    cases: &[BugCase],
    config: &PipelineConfig,
    client: &dyn ChatClient,
    store: &Mutex<SummaryStore>,
    out: &Path,
    dump_prompt: Option<&Path>,
) -> Result<Vec<PerBugResult>, CliError> {
    let outcomes = pipeline::run_bounded(cases, config.worker_limit, |case| {
        let loaded = case.load_inputs()?;
        let outcome = pipeline::isolate_bug(&loaded, config, client, store)?;
        pipeline::write_artifacts(&out.join(&case.bug_id), &outcome)?;
        if let (Some(dir), Some(prompt)) = (dump_prompt, &outcome.prompt) {
            write_file(&dir.join(format!("{}.txt", case.bug_id)), prompt)?;
        }
        Ok::<_, CliError>(eval::score_bug(
            &case.bug_id,
            case.compiler.clone(),
            &outcome.ranking,
            &case.ground_truth,
            outcome.fallback_used(),
        ))
    });
    let total = outcomes.len();
    let mut results = Vec::with_capacity(total);
    let mut failed = 0;
    for (case, outcome) in cases.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                log::error!("{}: {e}", case.bug_id);
                failed += 1;
            }
        }
    }
    store.lock().unwrap().save()?;
    if failed > 0 {
        return Err(CliError::BugFailures { failed, total });
    }
    Ok(results)
}

pub fn isolate(args: &IsolateArgs) -> Result<Vec<PerBugResult>, CliError> {
    let config = isolate_config(args)?;
    let client = make_client(&args.model, &config, config.use_llm)?;
    let cases = eval::load_manifest(&args.manifest)?;
    let store = Mutex::new(open_store(&args.model)?);
    isolate_cases(
        &cases,
        &config,
        client.as_ref(),
        &store,
        &args.out,
        args.dump_prompt.as_deref(),
    )
}

fn load_ranking(dir: &Path, case: &BugCase) -> Result<(RankedList, bool), CliError> {
    let bug_dir = dir.join(&case.bug_id);
    let path = bug_dir.join("ranking.json");
    let text = fs::read_to_string(&path).map_err(|e| {
        EvalError::manifest(&path, format!("{}.ranking", case.bug_id), e)
    })?;
    let list = RankedList::from_json(&text)
        .map_err(|e| EvalError::manifest(&path, format!("{}.ranking", case.bug_id), e))?;
    let fallback_used = match fs::read_to_string(bug_dir.join("parse_report.json")) {
        Ok(text) => serde_json::from_str::<ParseReport>(&text)
            .map(|r| r.fallback_used)
            .unwrap_or(false),
        Err(_) => false,
    };
    Ok((list, fallback_used))
}

pub fn write_report(out: &Path, rows: &[ReportRow]) -> Result<(), CliError> {
    write_file(&out.join("report.json"), &eval::rows_to_json(rows))?;
    write_file(&out.join("report.txt"), &eval::render_table(rows))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<Vec<ReportRow>, CliError> {
    let cases = eval::load_manifest(&args.manifest)?;
    let mut results = Vec::with_capacity(cases.len());
    for case in &cases {
        let (list, fallback_used) = load_ranking(&args.rankings, case)?;
        results.push(eval::score_bug(
            &case.bug_id,
            case.compiler.clone(),
            &list,
            &case.ground_truth,
            fallback_used,
        ));
    }
    let rows = eval::report_rows(&results, args.by_compiler)?;
    write_report(&args.out, &rows)?;
    print!("{}", eval::render_table(&rows));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    /// `full`, or the disabled source prefixed with `-`.
    pub variant: String,
    pub llm_calls: u64,
    pub report: EvaluationReport,
}

/// Runs the configured pipeline plus one variant per disabled source.
pub fn ablate(args: &IsolateArgs) -> Result<Vec<AblationRow>, CliError> {
    let base = isolate_config(args)?;
    let cases = eval::load_manifest(&args.manifest)?;
    let client = make_client(&args.model, &base, true)?;
    let store = Mutex::new(open_store(&args.model)?);

    let mut variants: Vec<(String, PipelineConfig)> = vec![("full".into(), base.clone())];
    for source in Source::ALL {
        let mut config = base.clone();
        config.disable(source);
        variants.push((format!("-{}", source.name()), config));
    }

    let mut rows = Vec::new();
    let mut table_rows = Vec::new();
    for (name, config) in variants {
        let dir_name = if name == "full" {
            name.clone()
        } else {
            format!("without-{}", &name[1..])
        };
        let before = client.usage().request_count;
        let results = isolate_cases(
            &cases,
            &config,
            client.as_ref(),
            &store,
            &args.out.join(dir_name),
            None,
        )?;
        let llm_calls = client.usage().request_count - before;
        let report = eval::aggregate(&results)?;
        table_rows.push(ReportRow {
            subject: name.clone(),
            report: report.clone(),
        });
        rows.push(AblationRow {
            variant: name,
            llm_calls,
            report,
        });
    }

    let json = serde_json::to_string_pretty(&serde_json::json!({ "variants": rows }))
        .expect("ablation serializes")
        + "\n";
    write_file(&args.out.join("ablation.json"), &json)?;
    let table = eval::render_table(&table_rows);
    write_file(&args.out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(rows)
}
