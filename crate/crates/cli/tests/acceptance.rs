//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use delve_core::analysis::{analysis_loop, profile, AnalysisInputs, AnalysisStatus, FileKind};
use delve_core::backend::{FixtureEntry, Purpose, Sampling, ScriptedBackend};
use delve_core::browser::{
    observe, pdf_to_markdown, policy_step, run_subtask, Block, BrowserAction, BrowserEnvironment, BrowserHistory,
    BrowserTask, EpisodeStatus, HistoryStep, SimBrowser, SimSiteGraph, VIEWPORT_HEIGHT,
};
use delve_core::config::ExecLimits;
use delve_core::memory::{context_size_profile, render_observation, ContextMode, BASE_MESSAGES};
use delve_core::runtime::{build_registry, replay_file, run_query};
use delve_core::sandbox::StubSandbox;
use delve_core::trace::{first_divergence, TraceRecord, TraceSink};
use delve_core::trajectory::validate_memory_list;
use delve_core::{load_config, Config, RunStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let checks: [(&str, Check); 8] = [
        ("memory-partition", memory_partition),
        ("context-complexity", context_complexity),
        ("retention-and-pruning", retention_and_pruning),
        ("supervisor-loop-breaking", supervisor_loop_breaking),
        ("budget-exactness", budget_exactness),
        ("browser-suite", browser_suite),
        ("data-analysis-suite", data_analysis_suite),
        ("record-replay-closure", record_replay_closure),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let ms = started.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS {name} ({ms} ms): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({ms} ms): {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn lookup_call(t: u32) -> String {
    call(&format!("Step {t}: look up item {t}."), "lookup", json!({ "query": format!("item {t}") }))
}

fn memory_partition() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let started = Instant::now();
    let mut total_rounds = 0;
    for run_no in 0..200 {
        let len: u32 = rng.gen_range(1..=50);
        let mut entries = Vec::new();
        let mut new_unit = Vec::new();
        let mut goal = 0;
        for t in 1..=len {
            let fresh = t == 1 || rng.gen_bool(0.3);
            goal += u32::from(fresh);
            new_unit.push(fresh);
            entries.push(plan(t, if t == len { answer("done") } else { lookup_call(t) }));
            entries.push(memory(t, mem(!fresh, &format!("goal {goal}"), &format!("summary after round {t}"))));
        }
        let (outcome, records) = run_lookup(Config::default(), entries, "partition run");
        ensure!(outcome.report.status == RunStatus::Finished, "run {run_no}: status {:?}", outcome.report.status);
        let mut prev = 0usize;
        let mut seen = 0u32;
        for r in &records {
            let TraceRecord::Memory(m) = r else { continue };
            seen += 1;
            ensure!(m.after_round == seen, "run {run_no}: memory record for round {} out of order", m.after_round);
            let report = validate_memory_list(&m.units, m.after_round);
            ensure!(report.is_valid(), "run {run_no} round {}: {:?}", m.after_round, report.violations);
            let expected = if new_unit[(m.after_round - 1) as usize] { prev + 1 } else { prev };
            ensure!(m.units.len() == expected, "run {run_no} round {}: |M|={} expected {expected}", m.after_round, m.units.len());
            prev = m.units.len();
        }
        ensure!(seen == len, "run {run_no}: {seen} memory records for {len} rounds");
        total_rounds += len;
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("200 runs, {total_rounds} rounds validated in {elapsed:?}"))
}

/// 40 tool rounds in 8 sub-goals of 5 rounds, then an answer.
fn forty_round_fixture() -> Vec<FixtureEntry> {
    let mut entries = Vec::new();
    for t in 1..=41u32 {
        let unit = (t - 1) / 5 + 1;
        let fresh = t % 5 == 1 && t <= 40;
        entries.push(plan(t, if t == 41 { answer("all sub-goals done") } else { lookup_call(t) }));
        entries.push(memory(
            t,
            mem(!fresh, &format!("Sub-goal {unit}: survey item group {unit}"), &format!("Group {unit} findings as of round {t}.")),
        ));
    }
    entries
}

fn context_complexity() -> Result<String, String> {
    let (managed, records) = run_lookup(Config::default(), forty_round_fixture(), "forty rounds");
    ensure!(managed.report.status == RunStatus::Finished, "managed run {:?}", managed.report.status);
    let profile = context_size_profile(&records).map_err(|e| e.to_string())?;
    let modes: Vec<ContextMode> = rounds(&records).iter().map(|r| r.context.mode).collect();
    let resets: Vec<usize> = (1..=40).filter(|t| modes[t - 1] == ContextMode::Reset).collect();
    ensure!(resets == vec![1, 6, 11, 16, 21, 26, 31, 36], "reset rounds {resets:?}");
    for t in 1..=40usize {
        let completed = (t - 1) / 5;
        let count = profile[t - 1];
        if modes[t - 1] == ContextMode::Reset {
            let bound = BASE_MESSAGES + 3 * completed + 2;
            let exact = BASE_MESSAGES + usize::from(completed > 0) + 2;
            ensure!(count <= bound, "round {t}: {count} messages exceeds bound {bound}");
            ensure!(count == exact, "round {t}: {count} messages, expected {exact}");
        } else {
            ensure!(count == profile[t - 2] + 2, "round {t}: incremental step from {} to {count}", profile[t - 2]);
        }
    }

    let mut cfg = Config::default();
    cfg.memory.enabled = false;
    let (ablation, records) = run_lookup(cfg, forty_round_fixture(), "forty rounds");
    ensure!(ablation.report.status == RunStatus::Finished, "ablation run {:?}", ablation.report.status);
    let flat = context_size_profile(&records).map_err(|e| e.to_string())?;
    for t in 1..=40usize {
        ensure!(flat[t - 1] == BASE_MESSAGES + 2 * t, "ablation round {t}: {} messages", flat[t - 1]);
    }
    let final_reset = profile[35];
    ensure!(flat[39] >= 3 * final_reset, "ablation {} vs managed {final_reset}", flat[39]);
    Ok(format!("t=40 managed {} (last reset {final_reset}) vs ablation {}", profile[39], flat[39]))
}

fn adversarial(supervisor: bool) -> (delve_core::RunOutcome, Vec<TraceRecord>, Duration) {
    let mut cfg = load_config(&fixture("adversarial/config.toml")).expect("adversarial config");
    cfg.supervisor.enabled = supervisor;
    let registry = build_registry(&cfg).expect("registry");
    let backend = Arc::new(ScriptedBackend::from_file(cfg.backend.fixture.as_ref().unwrap()).expect("fixture"));
    let started = Instant::now();
    let (outcome, records) = run(cfg, registry, backend, query("When was the heron trust founded?"));
    (outcome, records, started.elapsed())
}

fn retention_and_pruning() -> Result<String, String> {
    let (_, records) = run_lookup(Config::default(), forty_round_fixture(), "forty rounds");
    let inputs = planning_inputs(&records);
    let round_records = rounds(&records);
    let final_units = match records.iter().rev().find_map(|r| match r {
        TraceRecord::Memory(m) => Some(m.units.clone()),
        _ => None,
    }) {
        Some(u) => u.units,
        None => return Err("no memory record".into()),
    };
    let mut checked = 0;
    for rr in &round_records {
        if rr.context.mode != ContextMode::Reset {
            continue;
        }
        let t = rr.round.index as usize;
        // The planning call after round t sees the context built at round t.
        let ctx = &inputs[t];
        for unit in final_units.iter().filter(|u| u.round_indices.iter().all(|&r| (r as usize) < t)) {
            ensure!(ctx.contains(&unit.sub_goal), "round {t} reset lacks sub-goal '{}'", unit.sub_goal);
            ensure!(ctx.contains(&unit.summary), "round {t} reset lacks summary '{}'", unit.summary);
            ensure!(!ctx.contains(&format!("Step {}: look", unit.round_indices[0])), "round {t} reset carries raw history");
            checked += 1;
        }
    }

    let (outcome, records, _) = adversarial(true);
    let anomaly_at = records.iter().position(|r| matches!(r, TraceRecord::Anomaly(_))).ok_or("no anomaly recorded")?;
    let TraceRecord::Anomaly(a) = &records[anomaly_at] else { unreachable!() };
    let pruned: BTreeSet<u32> = a.outcome.as_ref().ok_or("no recovery outcome")?.pruned_rounds.iter().copied().collect();
    ensure!(!pruned.is_empty(), "nothing pruned");
    let mut fragments = Vec::new();
    for rr in rounds(&records).into_iter().filter(|r| pruned.contains(&r.round.index)) {
        fragments.push(rr.round.response.reasoning.clone());
        if let Some(o) = &rr.round.observation {
            fragments.push(render_observation(rr.round.index, o));
        }
    }
    let later: Vec<String> = planning_inputs(&records[anomaly_at..]);
    ensure!(!later.is_empty(), "no planning after recovery");
    let final_ctx = outcome.state.context.text();
    for f in &fragments {
        ensure!(later.iter().all(|c| !c.contains(f.as_str())), "pruned text reappears: {f:?}");
        ensure!(!final_ctx.contains(f.as_str()), "pruned text in final context: {f:?}");
    }
    Ok(format!("{checked} unit/reset retention checks; {} pruned fragments absent", fragments.len()))
}

fn supervisor_loop_breaking() -> Result<String, String> {
    let (on, records, t_on) = adversarial(true);
    ensure!(on.report.status == RunStatus::Finished, "enabled: status {:?}", on.report.status);
    ensure!(on.report.answer == "1987", "enabled: answer {:?}", on.report.answer);
    let outcome = records
        .iter()
        .find_map(|r| match r {
            TraceRecord::Anomaly(a) => a.outcome.clone(),
            _ => None,
        })
        .ok_or("no recovery outcome in trace")?;
    ensure!(!outcome.diagnosis.is_empty(), "empty diagnosis");
    ensure!(!outcome.pruned_rounds.is_empty(), "no pruned rounds");
    ensure!(outcome.regenerated && !outcome.guidance.is_empty(), "no regeneration");

    let (again, records2, _) = adversarial(true);
    ensure!(again.report.answer == on.report.answer, "nondeterministic answer");
    if let Some((i, why)) = first_divergence(&records, &records2) {
        return Err(format!("two runs differ at record {i}: {why}"));
    }

    let (off, _, t_off) = adversarial(false);
    ensure!(off.report.status == RunStatus::BudgetExhausted, "disabled: status {:?}", off.report.status);
    ensure!(off.report.stats.tool_calls == 75, "disabled: {} tool calls", off.report.stats.tool_calls);
    ensure!(t_on < Duration::from_secs(2) && t_off < Duration::from_secs(2), "slow: {t_on:?} / {t_off:?}");
    Ok(format!("enabled finished in {} rounds ({t_on:?}); disabled exhausted at 75 calls ({t_off:?})", on.report.stats.rounds))
}

fn budget_exactness() -> Result<String, String> {
    let mut entries: Vec<FixtureEntry> = (1..=100).map(|t| plan(t, lookup_call(t))).collect();
    entries.push(FixtureEntry::fallback(Purpose::Memory, mem(true, "Keep looking", "nothing yet")));
    entries.push(FixtureEntry::fallback(Purpose::Synthesis, answer("best effort")));
    let (outcome, records) = run_lookup(Config::default(), entries, "never stops");
    ensure!(outcome.report.status == RunStatus::BudgetExhausted, "status {:?}", outcome.report.status);
    let dispatched = rounds(&records).iter().filter(|r| r.round.response.invocation().is_some()).count();
    ensure!(dispatched == 75 && outcome.state.tool_calls_used == 75, "dispatched {dispatched}, counter {}", outcome.state.tool_calls_used);
    ensure!(outcome.report.stats.best_effort, "no best-effort synthesis");

    let cfg = load_config(&fixture("e2e/config.toml")).map_err(|e| e.to_string())?;
    let sales = fixture("data/sales.csv");
    let sub = |name: &str, args: serde_json::Value, purpose: Purpose, reply: String| {
        let entries = vec![
            plan(1, call("Delegate.", name, args)),
            plan(2, answer("stopped")),
            FixtureEntry::fallback(Purpose::Memory, mem(true, "Delegate", "delegated")),
            FixtureEntry::fallback(purpose, reply),
        ];
        let registry = build_registry(&cfg).expect("registry");
        run(cfg.clone(), registry, scripted(entries), query_with("q", std::slice::from_ref(&sales))).1
    };
    let records = sub(
        "browser",
        json!({"task": "Scroll forever"}),
        Purpose::SubagentBrowser,
        call("Keep scrolling.", "scroll_down", json!({})),
    );
    let browser_steps = subagent_steps(&records, "browser").len();
    let records = sub(
        "data_analysis",
        json!({"goal": "Never finish"}),
        Purpose::SubagentData,
        json!({"action": "execute", "code": "print(1)"}).to_string(),
    );
    let data_steps = subagent_steps(&records, "data_analysis").len();
    ensure!(browser_steps == 10 && data_steps == 10, "sub-agent steps: browser {browser_steps}, data {data_steps}");
    Ok("75 tool calls; 10 browser steps; 10 data-analysis steps".into())
}

fn site() -> Arc<SimSiteGraph> {
    Arc::new(SimSiteGraph::load(&fixture("site/site.json")).expect("site fixture"))
}

/// Checks one page's snapshot at every reachable scroll offset against the
/// block geometry.
fn viewport_exact(site: &Arc<SimSiteGraph>, url: &str) -> Result<usize, String> {
    let page = &site.pages[url];
    let mut placed = Vec::new();
    let mut y = 0;
    for b in &page.blocks {
        let (h, text) = match b {
            Block::Text { text, height: Some(h) } => (*h, Some(text.clone())),
            Block::Link { height: Some(h), .. } | Block::Button { height: Some(h), .. } | Block::Input { height: Some(h), .. } => (*h, None),
            other => return Err(format!("{url}: oracle needs flat blocks with explicit heights, got {other:?}")),
        };
        placed.push((y, b, text));
        y += h;
    }
    let total = y;
    let mut env = SimBrowser::new(Arc::clone(site), 4000);
    env.act(&BrowserAction::GoToUrl { url: url.into() });
    let mut offsets = 0;
    loop {
        let s = env.state().active().scroll_offset;
        let snap = env.snapshot().text;
        let header = format!("Viewport: {}-{} of {total}", s, (s + VIEWPORT_HEIGHT).min(total.max(s)));
        ensure!(snap.contains(&header), "{url}@{s}: missing '{header}' in\n{snap}");
        let body: Vec<&str> = snap.lines().skip_while(|l| !l.starts_with("Viewport:")).skip(1).collect();
        let visible: Vec<_> = placed.iter().filter(|(o, _, _)| (s..s + VIEWPORT_HEIGHT).contains(o)).collect();
        ensure!(body.len() == visible.len(), "{url}@{s}: {} lines for {} visible blocks", body.len(), visible.len());
        let mut k = 0;
        for (line, (_, block, text)) in body.iter().zip(&visible) {
            match text {
                Some(t) => ensure!(line.trim() == t.chars().take(200).collect::<String>(), "{url}@{s}: '{line}' vs '{t}'"),
                None => {
                    k += 1;
                    let label = match block {
                        Block::Link { label, .. } | Block::Button { label, .. } => label.clone(),
                        Block::Input { name, .. } => format!("name=\"{name}\""),
                        _ => unreachable!(),
                    };
                    ensure!(line.starts_with(&format!("[{k}] ")) && line.contains(&label), "{url}@{s}: '{line}' is not [{k}] {label}");
                }
            }
        }
        let beyond = env.act(&BrowserAction::ClickElement { index: k + 1 });
        ensure!(beyond.result.contains("no such element"), "{url}@{s}: element {} exists", k + 1);
        offsets += 1;
        env.act(&BrowserAction::ScrollDown { amount: Some(100) });
        if env.state().active().scroll_offset == s {
            break;
        }
    }
    Ok(offsets)
}

fn browser_suite() -> Result<String, String> {
    let site = site();
    ensure!(site.pages.len() == 5, "site has {} pages", site.pages.len());
    let mut offsets = 0;
    for url in site.pages.keys() {
        offsets += viewport_exact(&site, url)?;
    }

    let url = "https://sim.test/annual.pdf";
    let doc = &site.pdf_store[url];
    let (mut rebuilt, mut offset, mut pages) = (String::new(), 0, 0);
    loop {
        let p = pdf_to_markdown(&site, url, offset, 4000)?;
        rebuilt.push_str(&p.text);
        offset = p.next_offset;
        pages += 1;
        if p.done {
            break;
        }
    }
    ensure!(pages == 3 && &rebuilt == doc, "pdf: {pages} pages, identity {}", &rebuilt == doc);

    // Scripted policy on the seeded-answer task, stepping the loop by hand
    // to inspect the history and every request.
    let backend = ScriptedBackend::from_file(&fixture("e2e/planner.jsonl")).map_err(|e| e.to_string())?;
    let mut env = SimBrowser::new(Arc::clone(&site), 4000);
    let mut history = BrowserHistory::new("Find the number of nesting pairs counted in the 2023 survey.");
    let mut findings = Vec::new();
    let mut solved_at = None;
    for step in 1..=10 {
        let obs = observe(&env, &history, 10, &findings);
        ensure!(obs.screenshot_ref.starts_with("sim-screenshot:"), "step {step}: no screenshot");
        let d = policy_step(&history, &obs, &backend, Sampling::default()).map_err(|e| e.to_string())?;
        let out = env.act(&d.action);
        findings.extend(out.finding);
        history.steps.push(HistoryStep { context: obs.context, snapshot: obs.snapshot, action: d.action, result: out.result });
        if out.terminated {
            solved_at = Some(step);
            break;
        }
    }
    let steps = solved_at.ok_or("episode did not terminate within 10 steps")?;
    ensure!(findings.iter().any(|f| f.content.contains("4,812")), "answer not found");
    ensure!(!history.serialize().contains("sim-screenshot:"), "serialized history carries screenshots");

    // Through the sub-agent entry point, every step is one action and each
    // request carries only the current screenshot.
    let backend = ScriptedBackend::from_file(&fixture("e2e/planner.jsonl")).map_err(|e| e.to_string())?;
    let sink = TraceSink::memory();
    let recorder = delve_core::backend::RecordingBackend::new(Arc::new(backend), sink.clone());
    let mut env = SimBrowser::new(Arc::clone(&site), 4000);
    let task = BrowserTask::new("Find the number of nesting pairs counted in the 2023 survey.", 10)?;
    let report = run_subtask(&task, &mut env, &recorder, Sampling::default(), &sink);
    ensure!(report.status == EpisodeStatus::Terminated && report.steps as usize == steps, "report {:?}", report.status);
    let records = sink.records();
    for (i, s) in subagent_steps(&records, "browser").iter().enumerate() {
        ensure!(s.step as usize == i + 1, "step numbering");
        ensure!(s.detail["action"]["action"].is_string(), "step {} lacks a single action", s.step);
    }
    for r in &records {
        if let TraceRecord::Exchange(x) = r {
            let shots: usize = x.request.messages.iter().map(|m| m.attachments.len()).sum();
            ensure!(shots == 1, "browser request carries {shots} screenshots");
        }
    }
    Ok(format!("{offsets} viewports exact on 5 pages; pdf rebuilt from {pages} pages; answer in {steps} steps"))
}

fn data_analysis_suite() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files: Vec<PathBuf> = ["sales.csv", "empty.csv", "notes.txt", "bundle.zip", "blob.dat"]
        .iter()
        .map(|n| {
            let to = dir.path().join(n);
            std::fs::copy(fixture(&format!("data/{n}")), &to).unwrap();
            to
        })
        .collect();
    let unreadable = dir.path().join("locked.csv");
    std::fs::create_dir(&unreadable).unwrap();
    files.push(unreadable);
    let prof = profile(&files);
    ensure!(prof.files.len() == 6, "{} profiles for 6 files", prof.files.len());
    let by = |n: &str| prof.files.iter().find(|f| f.name.ends_with(n)).unwrap();
    ensure!(by("sales.csv").kind == FileKind::Csv && by("sales.csv").schema.as_ref().is_some_and(|s| s.rows == 5), "csv");
    ensure!(by("empty.csv").preview.as_deref() == Some("empty"), "empty file preview {:?}", by("empty.csv").preview);
    ensure!(by("notes.txt").kind == FileKind::Text && by("notes.txt").preview.as_deref().is_some_and(|p| p.contains("euros")), "text");
    ensure!(by("bundle.zip").kind == FileKind::Archive && by("bundle.zip").members.len() == 2, "archive");
    ensure!(by("blob.dat").kind == FileKind::Unknown, "unknown kind {:?}", by("blob.dat").kind);
    ensure!(by("locked.csv").error.as_deref().is_some_and(|e| e.starts_with("unreadable")), "unreadable");
    let rendered = prof.render();
    ensure!(files.iter().all(|f| rendered.contains(f.file_name().unwrap().to_str().unwrap())), "render omits a file");

    let backend = ScriptedBackend::from_file(&fixture("e2e/planner.jsonl")).map_err(|e| e.to_string())?;
    let sandbox = StubSandbox::from_file(&fixture("e2e/sandbox.jsonl"))?;
    let sales = profile(&files[..1]);
    let report = analysis_loop(
        AnalysisInputs { goal: "Sum the amount column", profile: &sales, manifest: vec![], limits: ExecLimits::default(), max_steps: 10 },
        &backend,
        &sandbox,
        Sampling::default(),
        &TraceSink::null(),
    );
    ensure!(report.status == AnalysisStatus::Finished, "status {:?}", report.status);
    ensure!(report.executions() == 2, "{} executions", report.executions());
    let fb: Vec<bool> = report.steps.iter().filter_map(|s| s.feedback.as_ref()).map(|f| f.is_ok()).collect();
    ensure!(fb == [false, true], "feedback sequence {fb:?}");
    Ok("6/6 files profiled; error -> refine -> success in 2 executions".into())
}

fn delve(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_delve")).args(args).output().expect("run delve")
}

fn record_replay_closure() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trace = dir.path().join("run.jsonl");
    let cfg = load_config(&fixture("e2e/config.toml")).map_err(|e| e.to_string())?;
    let q = query_with("How many heron nesting pairs were counted in 2023, and what is the sales total?", &[fixture("data/sales.csv")]);
    let sink = TraceSink::file(&trace).map_err(|e| e.to_string())?;
    let outcome = run_query(cfg, q, sink, &trace.display().to_string()).map_err(|e| e.to_string())?;
    ensure!(outcome.report.status == RunStatus::Finished, "status {:?}", outcome.report.status);

    let report = replay_file(&trace).map_err(|e| e.to_string())?;
    if let Some((i, why)) = report.divergence {
        return Err(format!("replay diverged at {i}: {why}"));
    }
    let out = delve(&["replay", "--trace", trace.to_str().unwrap()]);
    ensure!(out.status.code() == Some(0), "cli replay exit {:?}", out.status.code());

    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let corruptions = [
        ("truncated", format!("{}\n{}", lines[..lines.len() - 1].join("\n"), &lines[lines.len() - 1][..20])),
        ("garbage", format!("{}\nnot json\n{}\n", lines[..3].join("\n"), lines[3..].join("\n"))),
        ("tampered", text.replacen("4,812 nesting pairs (reports page 2)", "5,000 nesting pairs", 1)),
    ];
    for (label, body) in &corruptions {
        ensure!(body != &text, "{label}: corruption did not change the trace");
        let path = dir.path().join(format!("{label}.jsonl"));
        std::fs::write(&path, body).unwrap();
        let out = delve(&["replay", "--trace", path.to_str().unwrap()]);
        ensure!(out.status.code() == Some(4), "{label}: exit {:?}", out.status.code());
    }
    Ok(format!("{} records replayed identically; 3 corrupted traces exit 4", report.recorded.len()))
}
