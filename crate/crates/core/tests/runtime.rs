mod common;

use common::*;
use delve_core::backend::Purpose;
use delve_core::config::{BackendKind, ReadParseConfig};
use delve_core::runtime::{build_backend, build_registry, replay_records, run_query, ReplayError, SetupError};
use delve_core::tools::ReadParseTool;
use delve_core::trace::{TraceRecord, TraceSink};
use delve_core::{load_config, Config, RunStatus};

fn e2e_config() -> Config {
    load_config(&fixture("e2e/config.toml")).unwrap()
}

fn e2e_records() -> Vec<TraceRecord> {
    let sink = TraceSink::memory();
    let q = query_with("What was the total sales amount?", &[fixture("data/sales.csv")]);
    let outcome = run_query(e2e_config(), q, sink.clone(), "mem").unwrap();
    assert_eq!(outcome.report.status, RunStatus::Finished);
    sink.records()
}

#[test]
fn e2e_config_registers_every_capability() {
    let registry = build_registry(&e2e_config()).unwrap();
    let mut names = registry.names();
    names.sort();
    assert_eq!(names, ["browser", "data_analysis", "execute_code", "read_parse", "search"]);
}

#[test]
fn missing_site_is_a_capability_error() {
    let mut config = e2e_config();
    config.capabilities.browser.as_mut().unwrap().site = fixture("site").join("missing.json");
    match build_registry(&config) {
        Err(SetupError::Capability { name, .. }) => assert_eq!(name, "browser"),
        other => panic!("{:?}", other.map(|r| r.names().len())),
    }
}

#[test]
fn backend_requires_its_table() {
    let mut config = Config::default();
    config.backend.kind = BackendKind::Scripted;
    config.backend.fixture = None;
    assert!(matches!(build_backend(&config), Err(SetupError::Backend(_))));
    config.backend.kind = BackendKind::Http;
    config.backend.http = None;
    assert!(matches!(build_backend(&config), Err(SetupError::Backend(_))));
}

#[test]
fn read_parse_handles_local_formats() {
    let dir = tempfile::tempdir().unwrap();
    let html = dir.path().join("page.html");
    std::fs::write(&html, "<html><body><h1>Herons</h1><p>Grey <b>herons</b> nest early.</p></body></html>").unwrap();
    let tsv = dir.path().join("t.tsv");
    std::fs::write(&tsv, "a\tb\n1\t2\n").unwrap();
    let tool = ReadParseTool::from_config(&ReadParseConfig::default()).unwrap();

    let text = tool.read(html.to_str().unwrap()).unwrap();
    assert!(text.contains("# Herons"), "{text}");
    assert!(text.contains("**herons**"), "{text}");
    let table = tool.read(tsv.to_str().unwrap()).unwrap();
    assert!(table.contains("| a | b |") && table.contains("| 1 | 2 |"), "{table}");
    let err = tool.read(fixture("data/blob.dat").to_str().unwrap()).unwrap_err();
    assert!(err.detail.contains("unsupported format"), "{}", err.detail);
}

#[test]
fn file_trace_replays_identically() {
    let report = replay_records(e2e_records()).unwrap();
    assert!(report.is_identical(), "{:?}", report.divergence);
    assert_eq!(report.recorded.len(), report.replayed.len());
}

#[test]
fn tampered_reply_diverges() {
    let mut records = e2e_records();
    let ex = records
        .iter_mut()
        .find_map(|r| match r {
            TraceRecord::Exchange(e) if e.purpose == Purpose::Planning => Some(e),
            _ => None,
        })
        .unwrap();
    ex.reply.as_mut().unwrap().text = answer("made up");
    let report = replay_records(records).unwrap();
    assert!(!report.is_identical());
}

#[test]
fn truncated_trace_is_rejected() {
    let mut records = e2e_records();
    records.pop();
    assert!(matches!(replay_records(records), Err(ReplayError::Trace(_))));
    assert!(matches!(replay_records(vec![]), Err(ReplayError::Trace(_))));
}
