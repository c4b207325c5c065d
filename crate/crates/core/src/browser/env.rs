use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::site::{Block, Layout, PageFlags, SimPage, SimSiteGraph, VIEWPORT_HEIGHT};

pub const BLANK_URL: &str = "about:blank";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum BrowserAction {
    WebSearch {
        query: String,
    },
    PdfToMarkdown {
        url: String,
        #[serde(default)]
        offset: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<usize>,
    },
    GoToUrl {
        url: String,
    },
    ClickElement {
        index: usize,
    },
    InputText {
        index: usize,
        text: String,
    },
    ScrollDown {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amount: Option<u32>,
    },
    ScrollUp {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amount: Option<u32>,
    },
    ExtractContent {},
    OpenTab {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
    },
    SwitchTab {
        tab: usize,
    },
    CloseTab {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tab: Option<usize>,
    },
    Terminate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        summary: Option<String>,
    },
}

impl BrowserAction {
    pub const NAMES: [&'static str; 12] = [
        "web_search",
        "pdf_to_markdown",
        "go_to_url",
        "click_element",
        "input_text",
        "scroll_down",
        "scroll_up",
        "extract_content",
        "open_tab",
        "switch_tab",
        "close_tab",
        "terminate",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::WebSearch { .. } => "web_search",
            Self::PdfToMarkdown { .. } => "pdf_to_markdown",
            Self::GoToUrl { .. } => "go_to_url",
            Self::ClickElement { .. } => "click_element",
            Self::InputText { .. } => "input_text",
            Self::ScrollDown { .. } => "scroll_down",
            Self::ScrollUp { .. } => "scroll_up",
            Self::ExtractContent {} => "extract_content",
            Self::OpenTab { .. } => "open_tab",
            Self::SwitchTab { .. } => "switch_tab",
            Self::CloseTab { .. } => "close_tab",
            Self::Terminate { .. } => "terminate",
        }
    }

    pub fn render(&self) -> String {
        let mut v = serde_json::to_value(self).expect("actions serialize");
        let args = v.as_object_mut().map(|m| {
            m.remove("action");
            m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
        });
        format!("{}({})", self.name(), args.unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabState {
    pub url: String,
    pub scroll_offset: u32,
    pub flags: PageFlags,
}

impl TabState {
    fn at(url: &str) -> Self {
        Self { url: url.to_string(), scroll_offset: 0, flags: PageFlags::default() }
    }
}

/// The true state of the simulated browser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowserState {
    pub tabs: Vec<TabState>,
    pub active_tab: usize,
    pub navigation_history: Vec<String>,
}

impl Default for BrowserState {
    fn default() -> Self {
        Self { tabs: vec![TabState::at(BLANK_URL)], active_tab: 0, navigation_history: Vec::new() }
    }
}

impl BrowserState {
    pub fn active(&self) -> &TabState {
        &self.tabs[self.active_tab]
    }

    fn active_mut(&mut self) -> &mut TabState {
        &mut self.tabs[self.active_tab]
    }

    pub fn is_valid(&self, site: &SimSiteGraph) -> bool {
        self.active_tab < self.tabs.len()
            && self.tabs.iter().all(|t| match site.pages.get(&t.url) {
                Some(p) => t.scroll_offset <= max_offset(p.layout(&t.flags).total_height),
                None => t.url == BLANK_URL && t.scroll_offset == 0,
            })
    }
}

/// What the policy sees of the page: the element listing and an opaque
/// reference standing in for the rendered screenshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageSnapshot {
    pub text: String,
    pub screenshot_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub url: String,
    pub content: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActOutcome {
    pub result: String,
    pub finding: Option<Finding>,
    pub terminated: bool,
}

impl ActOutcome {
    fn text(result: impl Into<String>) -> Self {
        Self { result: result.into(), ..Self::default() }
    }
}

/// Observation and transition contract shared by the simulator and any
/// live-browser adapter.
pub trait BrowserEnvironment: Send {
    fn snapshot(&self) -> PageSnapshot;
    fn act(&mut self, action: &BrowserAction) -> ActOutcome;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdfPage {
    pub text: String,
    pub next_offset: usize,
    pub done: bool,
}

/// One page of a stored PDF, counted in characters.
pub fn pdf_to_markdown(site: &SimSiteGraph, url: &str, offset: usize, budget: usize) -> Result<PdfPage, String> {
    if budget == 0 {
        return Err("budget must be positive".into());
    }
    let doc = site.pdf_store.get(url).ok_or_else(|| format!("no PDF at {url}"))?;
    let total = doc.chars().count();
    let text: String = doc.chars().skip(offset).take(budget).collect();
    let next_offset = (offset + text.chars().count()).min(total.max(offset));
    Ok(PdfPage { done: next_offset >= total, next_offset, text })
}

fn max_offset(total_height: u32) -> u32 {
    total_height.saturating_sub(VIEWPORT_HEIGHT)
}

/// Interactive elements inside the viewport, in document order. While a
/// pop-up is open it is the only element.
fn visible_controls<'a>(layout: &Layout<'a>, offset: u32) -> Vec<(String, &'a Block)> {
    if let Some((path, block)) = &layout.popup {
        return vec![(path.clone(), *block)];
    }
    layout
        .items
        .iter()
        .filter(|(_, o, b)| b.is_interactive() && (offset..offset + VIEWPORT_HEIGHT).contains(o))
        .map(|(p, _, b)| (p.clone(), *b))
        .collect()
}

fn markup(block: &Block, flags: &PageFlags, path: &str) -> String {
    match block {
        Block::Link { label, href, .. } => format!("<a href=\"{href}\">{label}</a>"),
        Block::Button { label, .. } => format!("<button>{label}</button>"),
        Block::Input { name, label, .. } => {
            let value = flags.inputs.get(name).map(String::as_str).unwrap_or("");
            format!("<input name=\"{name}\" placeholder=\"{label}\" value=\"{value}\">")
        }
        Block::Collapsible { label, .. } => {
            let state = if flags.expanded.contains(path) { "expanded" } else { "collapsed" };
            format!("<details {state}>{label}</details>")
        }
        Block::Popup { text } => format!("<dialog>{text} [close]</dialog>"),
        Block::Text { text, .. } => text.clone(),
        Block::Lazy { .. } => "<div>loading...</div>".to_string(),
    }
}

fn url_encode(value: &str) -> String {
    value.split_whitespace().collect::<Vec<_>>().join("+")
}

/// Deterministic browser over an immutable site graph.
pub struct SimBrowser {
    site: Arc<SimSiteGraph>,
    state: BrowserState,
    pdf_page_chars: usize,
}

impl SimBrowser {
    pub fn new(site: Arc<SimSiteGraph>, pdf_page_chars: usize) -> Self {
        Self { site, state: BrowserState::default(), pdf_page_chars }
    }

    pub fn state(&self) -> &BrowserState {
        &self.state
    }

    pub fn site(&self) -> &SimSiteGraph {
        &self.site
    }

    fn page(&self, url: &str) -> Option<&SimPage> {
        self.site.pages.get(url)
    }

    fn navigate(&mut self, url: &str) -> ActOutcome {
        if self.page(url).is_none() {
            if self.site.pdf_store.contains_key(url) {
                return ActOutcome::text(format!("navigation failed: {url} is a PDF; use pdf_to_markdown"));
            }
            return ActOutcome::text(format!("navigation failed: {url}"));
        }
        *self.state.active_mut() = TabState::at(url);
        self.state.navigation_history.push(url.to_string());
        let title = &self.page(url).expect("checked above").title;
        ActOutcome::text(format!("loaded {url} ({title})"))
    }

    fn scroll(&mut self, down: bool, amount: Option<u32>) -> ActOutcome {
        let site = Arc::clone(&self.site);
        let tab = self.state.active_mut();
        let Some(page) = site.pages.get(&tab.url) else {
            return ActOutcome::text("nothing to scroll");
        };
        let amount = amount.unwrap_or(VIEWPORT_HEIGHT);
        let max = max_offset(page.layout(&tab.flags).total_height);
        tab.scroll_offset = if down { (tab.scroll_offset + amount).min(max) } else { tab.scroll_offset.saturating_sub(amount) };
        // Lazy regions that came into view load, which may reveal more.
        loop {
            let layout = page.layout(&tab.flags);
            let end = tab.scroll_offset + VIEWPORT_HEIGHT;
            let due: Vec<String> = layout
                .items
                .iter()
                .filter(|(p, o, b)| matches!(b, Block::Lazy { .. }) && *o < end && !tab.flags.materialized.contains(p))
                .map(|(p, _, _)| p.clone())
                .collect();
            if due.is_empty() {
                break;
            }
            tab.flags.materialized.extend(due);
            let max = max_offset(page.layout(&tab.flags).total_height);
            tab.scroll_offset = tab.scroll_offset.min(max);
        }
        let total = page.layout(&tab.flags).total_height;
        ActOutcome::text(format!("scrolled to {} of {}", tab.scroll_offset, total))
    }

    fn element(&self, index: usize) -> Option<(String, Block)> {
        let tab = self.state.active();
        let page = self.page(&tab.url)?;
        let layout = page.layout(&tab.flags);
        visible_controls(&layout, tab.scroll_offset)
            .into_iter()
            .nth(index.checked_sub(1)?)
            .map(|(p, b)| (p, b.clone()))
    }

    fn click(&mut self, index: usize) -> ActOutcome {
        let Some((path, block)) = self.element(index) else {
            return ActOutcome::text(format!("no such element: [{index}]"));
        };
        match block {
            Block::Popup { .. } => {
                self.state.active_mut().flags.dismissed.insert(path);
                ActOutcome::text("pop-up dismissed")
            }
            Block::Link { href, dead: true, .. } => ActOutcome::text(format!("navigation failed: {href}")),
            Block::Link { href, .. } => self.navigate(&href),
            Block::Button { href: Some(href), .. } => {
                let mut target = href.clone();
                for (name, value) in &self.state.active().flags.inputs {
                    target = target.replace(&format!("{{{name}}}"), &url_encode(value));
                }
                self.navigate(&target)
            }
            Block::Button { message: Some(m), .. } => ActOutcome::text(m),
            Block::Button { label, .. } => ActOutcome::text(format!("clicked {label}")),
            Block::Input { name, .. } => ActOutcome::text(format!("focused input '{name}'; use input_text to type")),
            Block::Collapsible { label, .. } => {
                let flags = &mut self.state.active_mut().flags;
                if flags.expanded.remove(&path) {
                    ActOutcome::text(format!("collapsed '{label}'"))
                } else {
                    flags.expanded.insert(path);
                    ActOutcome::text(format!("expanded '{label}'"))
                }
            }
            Block::Text { .. } | Block::Lazy { .. } => ActOutcome::text(format!("no such element: [{index}]")),
        }
    }

    fn extract(&self) -> ActOutcome {
        let tab = self.state.active();
        let Some(page) = self.page(&tab.url) else {
            return ActOutcome::text("no page loaded");
        };
        let layout = page.layout(&tab.flags);
        if layout.popup.is_some() {
            return ActOutcome::text("content is obstructed by a pop-up; dismiss it first");
        }
        let mut content = format!("# {}\n", page.title);
        for (_, _, block) in &layout.items {
            match block {
                Block::Text { text, .. } => {
                    let _ = write!(content, "\n{text}\n");
                }
                Block::Link { label, href, .. } => {
                    let _ = write!(content, "\n[{label}]({href})\n");
                }
                _ => {}
            }
        }
        ActOutcome {
            result: content.clone(),
            finding: Some(Finding { url: tab.url.clone(), content }),
            terminated: false,
        }
    }

    fn search(&self, query: &str) -> ActOutcome {
        let results = self.site.search(query);
        if results.is_empty() {
            return ActOutcome::text(format!("no results for '{query}'"));
        }
        let mut out = format!("Results for '{query}':");
        for (i, url) in results.iter().enumerate() {
            let (title, snippet) = self.site.snippet(url);
            let _ = write!(out, "\n{}. {title} <{url}>\n   {snippet}", i + 1);
        }
        ActOutcome::text(out)
    }
}

impl BrowserEnvironment for SimBrowser {
    fn snapshot(&self) -> PageSnapshot {
        let st = &self.state;
        let tab = st.active();
        let mut text = String::new();
        let _ = writeln!(text, "URL: {}", tab.url);
        let tabs: Vec<String> = st
            .tabs
            .iter()
            .enumerate()
            .map(|(i, t)| format!("[{i}] {}{}", t.url, if i == st.active_tab { " (active)" } else { "" }))
            .collect();
        match self.page(&tab.url) {
            None => {
                let _ = writeln!(text, "Title: (blank)\nTabs: {}", tabs.join(" | "));
            }
            Some(page) => {
                let layout = page.layout(&tab.flags);
                let end = tab.scroll_offset + VIEWPORT_HEIGHT;
                let _ = writeln!(text, "Title: {}\nTabs: {}", page.title, tabs.join(" | "));
                let _ = writeln!(
                    text,
                    "Viewport: {}-{} of {}",
                    tab.scroll_offset,
                    end.min(layout.total_height.max(tab.scroll_offset)),
                    layout.total_height
                );
                if let Some((path, block)) = &layout.popup {
                    let _ = writeln!(text, "A pop-up covers the page.\n[1] {}", markup(block, &tab.flags, path));
                } else {
                    let mut index = 0;
                    for (path, offset, block) in &layout.items {
                        if !(tab.scroll_offset..end).contains(offset) {
                            continue;
                        }
                        if block.is_interactive() {
                            index += 1;
                            let _ = writeln!(text, "[{index}] {}", markup(block, &tab.flags, path));
                        } else {
                            let snippet: String = markup(block, &tab.flags, path).chars().take(200).collect();
                            let _ = writeln!(text, "    {snippet}");
                        }
                    }
                }
            }
        }
        let digest = Sha256::digest(text.as_bytes());
        let screenshot_ref = format!("sim-screenshot:{}", digest.iter().take(12).map(|b| format!("{b:02x}")).collect::<String>());
        PageSnapshot { text, screenshot_ref }
    }

    fn act(&mut self, action: &BrowserAction) -> ActOutcome {
        match action {
            BrowserAction::WebSearch { query } => self.search(query),
            BrowserAction::PdfToMarkdown { url, offset, budget } => {
                match pdf_to_markdown(&self.site, url, *offset, budget.unwrap_or(self.pdf_page_chars)) {
                    Ok(page) => {
                        let status = if page.done {
                            "end of document".to_string()
                        } else {
                            format!("continue with offset={}", page.next_offset)
                        };
                        let header = format!("PDF {url} from offset {offset} ({status})");
                        ActOutcome {
                            result: format!("{header}\n{}", page.text),
                            finding: Some(Finding { url: url.clone(), content: page.text }),
                            terminated: false,
                        }
                    }
                    Err(e) => ActOutcome::text(format!("pdf_to_markdown failed: {e}")),
                }
            }
            BrowserAction::GoToUrl { url } => self.navigate(url),
            BrowserAction::ClickElement { index } => self.click(*index),
            BrowserAction::InputText { index, text } => match self.element(*index) {
                Some((_, Block::Input { name, .. })) => {
                    self.state.active_mut().flags.inputs.insert(name.clone(), text.clone());
                    ActOutcome::text(format!("typed into '{name}'"))
                }
                Some(_) => ActOutcome::text(format!("element [{index}] is not an input field")),
                None => ActOutcome::text(format!("no such element: [{index}]")),
            },
            BrowserAction::ScrollDown { amount } => self.scroll(true, *amount),
            BrowserAction::ScrollUp { amount } => self.scroll(false, *amount),
            BrowserAction::ExtractContent {} => self.extract(),
            BrowserAction::OpenTab { url } => {
                let target = url.as_deref().unwrap_or(BLANK_URL);
                if target != BLANK_URL && self.page(target).is_none() {
                    return ActOutcome::text(format!("navigation failed: {target}"));
                }
                self.state.tabs.push(TabState::at(target));
                self.state.active_tab = self.state.tabs.len() - 1;
                if target != BLANK_URL {
                    self.state.navigation_history.push(target.to_string());
                }
                ActOutcome::text(format!("opened tab [{}] at {target}", self.state.active_tab))
            }
            BrowserAction::SwitchTab { tab } => {
                if *tab >= self.state.tabs.len() {
                    return ActOutcome::text(format!("no such tab: [{tab}]"));
                }
                self.state.active_tab = *tab;
                ActOutcome::text(format!("switched to tab [{tab}]"))
            }
            BrowserAction::CloseTab { tab } => {
                let tab = tab.unwrap_or(self.state.active_tab);
                if tab >= self.state.tabs.len() {
                    return ActOutcome::text(format!("no such tab: [{tab}]"));
                }
                if self.state.tabs.len() == 1 {
                    return ActOutcome::text("cannot close the last tab");
                }
                self.state.tabs.remove(tab);
                if self.state.active_tab >= tab && self.state.active_tab > 0 {
                    self.state.active_tab -= 1;
                }
                ActOutcome::text(format!("closed tab [{tab}]"))
            }
            BrowserAction::Terminate { summary } => ActOutcome {
                result: summary.clone().unwrap_or_else(|| "terminated".into()),
                finding: None,
                terminated: true,
            },
        }
    }
}

/// Parses a named action with JSON arguments.
pub fn action_from_parts(name: &str, arguments: &BTreeMap<String, serde_json::Value>) -> Result<BrowserAction, String> {
    if !BrowserAction::NAMES.contains(&name) {
        return Err(format!("unknown browser action '{name}'"));
    }
    let mut obj: serde_json::Map<String, serde_json::Value> =
        arguments.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    obj.insert("action".into(), serde_json::Value::String(name.to_string()));
    serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| format!("bad arguments for {name}: {e}"))
}
