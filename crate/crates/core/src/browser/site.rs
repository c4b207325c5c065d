use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Height of the simulated viewport, in scroll units.
pub const VIEWPORT_HEIGHT: u32 = 1000;

const LINE_HEIGHT: u32 = 20;
const CONTROL_HEIGHT: u32 = 40;

#[derive(Debug, thiserror::Error)]
pub enum SiteError {
    #[error("cannot read site fixture {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("site fixture is not valid: {0}")]
    Parse(String),
    #[error("site fixture is inconsistent: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Block {
    Text {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<u32>,
    },
    Link {
        label: String,
        href: String,
        /// External target that fails to load.
        #[serde(default)]
        dead: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<u32>,
    },
    /// Navigates to `href` (with `{input}` placeholders filled from the
    /// page's inputs) or reports `message`.
    Button {
        label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        href: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<u32>,
    },
    Input {
        name: String,
        #[serde(default)]
        label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<u32>,
    },
    /// Header that hides `children` until clicked.
    Collapsible {
        label: String,
        children: Vec<Block>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<u32>,
    },
    /// Placeholder replaced by `children` once scrolled into view.
    Lazy {
        children: Vec<Block>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<u32>,
    },
    /// Overlay that hides the page until dismissed by a click.
    Popup { text: String },
}

impl Block {
    fn height(&self) -> u32 {
        match self {
            Block::Text { text, height } => {
                height.unwrap_or_else(|| LINE_HEIGHT * (text.chars().count() as u32).div_ceil(100).max(1))
            }
            Block::Link { height, .. }
            | Block::Button { height, .. }
            | Block::Input { height, .. }
            | Block::Collapsible { height, .. }
            | Block::Lazy { height, .. } => height.unwrap_or(CONTROL_HEIGHT),
            Block::Popup { .. } => 0,
        }
    }

    pub fn is_interactive(&self) -> bool {
        !matches!(self, Block::Text { .. } | Block::Lazy { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimPage {
    pub title: String,
    pub blocks: Vec<Block>,
}

/// Immutable simulated web: pages, a search index and converted PDFs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSiteGraph {
    pub pages: BTreeMap<String, SimPage>,
    #[serde(default)]
    pub search_index: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub pdf_store: BTreeMap<String, String>,
}

/// Per-tab flags that change how a page lays out.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageFlags {
    pub expanded: BTreeSet<String>,
    pub materialized: BTreeSet<String>,
    pub dismissed: BTreeSet<String>,
    pub inputs: BTreeMap<String, String>,
}

/// Blocks in document order as `(path, offset, block)`.
#[derive(Debug, Clone)]
pub struct Layout<'a> {
    pub items: Vec<(String, u32, &'a Block)>,
    pub total_height: u32,
    /// First undismissed pop-up, if any.
    pub popup: Option<(String, &'a Block)>,
}

fn place<'a>(blocks: &'a [Block], prefix: &str, flags: &PageFlags, cursor: &mut u32, out: &mut Layout<'a>) {
    for (i, block) in blocks.iter().enumerate() {
        let path = if prefix.is_empty() { i.to_string() } else { format!("{prefix}.{i}") };
        match block {
            Block::Popup { .. } => {
                if out.popup.is_none() && !flags.dismissed.contains(&path) {
                    out.popup = Some((path, block));
                }
            }
            Block::Lazy { children, .. } if flags.materialized.contains(&path) => {
                place(children, &path, flags, cursor, out);
            }
            Block::Collapsible { children, .. } => {
                out.items.push((path.clone(), *cursor, block));
                *cursor += block.height();
                if flags.expanded.contains(&path) {
                    place(children, &path, flags, cursor, out);
                }
            }
            _ => {
                out.items.push((path, *cursor, block));
                *cursor += block.height();
            }
        }
    }
}

impl SimPage {
    pub fn layout(&self, flags: &PageFlags) -> Layout<'_> {
        let mut out = Layout { items: Vec::new(), total_height: 0, popup: None };
        let mut cursor = 0;
        place(&self.blocks, "", flags, &mut cursor, &mut out);
        out.total_height = cursor;
        out
    }
}

fn walk<'a>(blocks: &'a [Block], f: &mut impl FnMut(&'a Block)) {
    for b in blocks {
        f(b);
        if let Block::Collapsible { children, .. } | Block::Lazy { children, .. } = b {
            walk(children, f);
        }
    }
}

impl SimSiteGraph {
    pub fn from_json(text: &str) -> Result<Self, SiteError> {
        let graph: SimSiteGraph = serde_json::from_str(text).map_err(|e| SiteError::Parse(e.to_string()))?;
        graph.validate()?;
        Ok(graph)
    }

    pub fn load(path: &Path) -> Result<Self, SiteError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SiteError::Io { path: path.display().to_string(), detail: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn resolves(&self, url: &str) -> bool {
        self.pages.contains_key(url) || self.pdf_store.contains_key(url)
    }

    /// Every link target resolves or is marked dead; every indexed search
    /// result exists.
    pub fn validate(&self) -> Result<(), SiteError> {
        for (url, page) in &self.pages {
            let mut bad = None;
            walk(&page.blocks, &mut |b| match b {
                Block::Link { href, dead: false, .. } if !self.resolves(href) => bad = Some(href.clone()),
                Block::Button { href: Some(h), .. } if !h.contains('{') && !self.resolves(h) => bad = Some(h.clone()),
                _ => {}
            });
            if let Some(target) = bad {
                return Err(SiteError::Invalid(format!("page {url} links to unknown {target}")));
            }
        }
        for (q, urls) in &self.search_index {
            if let Some(u) = urls.iter().find(|u| !self.resolves(u)) {
                return Err(SiteError::Invalid(format!("search result {u} for '{q}' is not a page or pdf")));
            }
        }
        Ok(())
    }

    /// Ranked results: exact query, then case-insensitive match, then the
    /// indexed query sharing the most words.
    pub fn search(&self, query: &str) -> &[String] {
        if let Some(r) = self.search_index.get(query) {
            return r;
        }
        let norm = |s: &str| s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>();
        let q = norm(query);
        if let Some((_, r)) = self.search_index.iter().find(|(k, _)| norm(k) == q) {
            return r;
        }
        let words: BTreeSet<&String> = q.iter().collect();
        let mut best: Option<(usize, &Vec<String>)> = None;
        for (k, r) in &self.search_index {
            let kw = norm(k);
            let overlap = kw.iter().filter(|w| words.contains(w)).count();
            if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, r));
            }
        }
        best.map(|(_, r)| r.as_slice()).unwrap_or(&[])
    }

    /// Short preview of a url for search results.
    pub fn snippet(&self, url: &str) -> (String, String) {
        if let Some(page) = self.pages.get(url) {
            let mut first = String::new();
            walk(&page.blocks, &mut |b| {
                if let Block::Text { text, .. } = b {
                    if first.is_empty() {
                        first = text.chars().take(150).collect();
                    }
                }
            });
            return (page.title.clone(), first);
        }
        if let Some(doc) = self.pdf_store.get(url) {
            return ("PDF document".to_string(), doc.chars().take(150).collect());
        }
        (String::new(), String::new())
    }
}
