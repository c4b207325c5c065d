use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde_json::Value;

use crate::config::{ProviderKind, ReadParseConfig};
use crate::pool::{
    CapabilityDescriptor, CapabilityHandler, CapabilityKind, CostHint, InvocationContext, ParamType, ParameterSpec,
    ToolFailure,
};
use crate::trajectory::{clip_chars, Arguments};

pub const CAPABILITY_NAME: &str = "read_parse";

const TEXT_EXTENSIONS: [&str; 10] = ["txt", "md", "markdown", "json", "jsonl", "log", "xml", "yaml", "yml", "toml"];

pub struct ReadParseTool {
    provider: ProviderKind,
    pages: BTreeMap<String, String>,
    pdf_store: BTreeMap<String, String>,
    max_chars: usize,
    client: Option<reqwest::blocking::Client>,
}

fn load_map(path: Option<&Path>) -> Result<BTreeMap<String, String>, String> {
    match path {
        None => Ok(BTreeMap::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

/// Renders delimited text as a markdown table; the first row is the header.
pub fn table_to_markdown(bytes: &[u8], delimiter: u8) -> Result<String, String> {
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).flexible(true).has_headers(false).from_reader(bytes);
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(|c| c.replace('|', "\\|").replace('\n', " ")).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| format!("cannot parse table: {e}"))?;
    let Some(header) = rows.first() else {
        return Ok(String::new());
    };
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let line = |cells: &[String]| {
        let mut padded: Vec<&str> = cells.iter().map(String::as_str).collect();
        padded.resize(width, "");
        format!("| {} |", padded.join(" | "))
    };
    let mut out = vec![line(header), format!("|{}", " --- |".repeat(width))];
    out.extend(rows[1..].iter().map(|r| line(r)));
    Ok(out.join("\n") + "\n")
}

impl ReadParseTool {
    pub fn fixture(pages: BTreeMap<String, String>, pdf_store: BTreeMap<String, String>, max_chars: usize) -> Self {
        Self { provider: ProviderKind::Fixture, pages, pdf_store, max_chars, client: None }
    }

    pub fn from_config(cfg: &ReadParseConfig) -> Result<Self, String> {
        let mut tool = Self::fixture(load_map(cfg.fixture.as_deref())?, load_map(cfg.pdf_store.as_deref())?, cfg.max_chars);
        if cfg.provider == ProviderKind::Live {
            tool.provider = ProviderKind::Live;
            tool.client = Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(cfg.timeout_secs))
                    .build()
                    .map_err(|e| e.to_string())?,
            );
        }
        Ok(tool)
    }

    fn pdf(&self, key: &str) -> Option<&String> {
        self.pdf_store.get(key).or_else(|| {
            let name = Path::new(key).file_name()?.to_str()?;
            self.pdf_store.get(name)
        })
    }

    fn read_url(&self, url: &str) -> Result<String, ToolFailure> {
        if let Some(md) = self.pages.get(url) {
            return Ok(md.clone());
        }
        if let Some(md) = self.pdf(url) {
            return Ok(md.clone());
        }
        let Some(client) = self.client.as_ref().filter(|_| self.provider == ProviderKind::Live) else {
            return Err(ToolFailure::tool_error(format!("not found: {url}")));
        };
        let resp = client.get(url).send().map_err(|e| ToolFailure::tool_error(format!("unreachable: {url}: {e}")))?;
        if !resp.status().is_success() {
            return Err(ToolFailure::tool_error(format!("fetch of {url} returned {}", resp.status())));
        }
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("text/html")
            .to_ascii_lowercase();
        let body = resp.text().map_err(|e| ToolFailure::tool_error(format!("reading {url}: {e}")))?;
        if content_type.contains("html") {
            htmd::convert(&body).map_err(|e| ToolFailure::tool_error(format!("html conversion failed: {e}")))
        } else if content_type.starts_with("text/") || content_type.contains("json") {
            Ok(body)
        } else {
            Err(ToolFailure::tool_error(format!("unsupported format: {content_type}")))
        }
    }

    fn read_file(&self, source: &str) -> Result<String, ToolFailure> {
        let path = Path::new(source);
        let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
        if ext == "pdf" {
            return self.pdf(source).cloned().ok_or_else(|| {
                let reason = if path.exists() { "no converted text for" } else { "not found:" };
                ToolFailure::tool_error(format!("{reason} {source}"))
            });
        }
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ToolFailure::tool_error(format!("not found: {source}")),
            _ => ToolFailure::tool_error(format!("cannot read {source}: {e}")),
        })?;
        let text = || String::from_utf8(bytes.clone()).map_err(|_| ToolFailure::tool_error(format!("{source} is not UTF-8 text")));
        match ext.as_str() {
            "csv" => table_to_markdown(&bytes, b',').map_err(ToolFailure::tool_error),
            "tsv" => table_to_markdown(&bytes, b'\t').map_err(ToolFailure::tool_error),
            "html" | "htm" => htmd::convert(&text()?).map_err(|e| ToolFailure::tool_error(format!("html conversion failed: {e}"))),
            e if TEXT_EXTENSIONS.contains(&e) => text(),
            "" => Err(ToolFailure::tool_error(format!("unsupported format: {source} has no extension"))),
            other => Err(ToolFailure::tool_error(format!("unsupported format: .{other}"))),
        }
    }

    pub fn read(&self, source: &str) -> Result<String, ToolFailure> {
        let source = source.trim();
        let out = if source.starts_with("http://") || source.starts_with("https://") {
            self.read_url(source)?
        } else {
            self.read_file(source)?
        };
        Ok(clip_chars(&out, self.max_chars))
    }
}

pub fn descriptor() -> CapabilityDescriptor {
    CapabilityDescriptor {
        name: CAPABILITY_NAME.into(),
        kind: CapabilityKind::BasicTool,
        description: "Fetch a web page or read a local file (text, csv, tsv, html, pdf) and return it as markdown."
            .into(),
        parameters: vec![ParameterSpec::required("source", ParamType::String, "A url or a file path")],
        cost_hint: CostHint::LowLatency,
    }
}

impl CapabilityHandler for ReadParseTool {
    fn invoke(&self, args: &Arguments, _ctx: &InvocationContext) -> Result<String, ToolFailure> {
        self.read(args.get("source").and_then(Value::as_str).unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{ObservationStatus, TRUNCATION_MARKER};

    fn tool() -> ReadParseTool {
        let mut pages = BTreeMap::new();
        pages.insert("https://x/a".to_string(), "# A\n\nbody".to_string());
        pages.insert("https://x/big".to_string(), "y".repeat(40_000));
        let mut pdfs = BTreeMap::new();
        pdfs.insert("paper.pdf".to_string(), "pdf text".to_string());
        ReadParseTool::fixture(pages, pdfs, 30_000)
    }

    #[test]
    fn fixture_url_verbatim() {
        assert_eq!(tool().read("https://x/a").unwrap(), "# A\n\nbody");
    }

    #[test]
    fn unknown_url_is_tool_error() {
        let e = tool().read("https://x/none").unwrap_err();
        assert_eq!(e.status, ObservationStatus::ToolError);
        assert!(e.detail.contains("not found"));
    }

    #[test]
    fn output_is_capped() {
        let out = tool().read("https://x/big").unwrap();
        assert!(out.ends_with(TRUNCATION_MARKER));
        assert_eq!(out.chars().count(), 30_000 + TRUNCATION_MARKER.len());
    }

    #[test]
    fn csv_file_becomes_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "name,qty\nbolt,3\nnut,5\n").unwrap();
        let md = tool().read(p.to_str().unwrap()).unwrap();
        assert_eq!(md, "| name | qty |\n| --- | --- |\n| bolt | 3 |\n| nut | 5 |\n");
    }

    #[test]
    fn missing_and_unsupported_files() {
        assert!(tool().read("/nonexistent/file.txt").unwrap_err().detail.contains("not found"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.docx");
        std::fs::write(&p, "x").unwrap();
        assert!(tool().read(p.to_str().unwrap()).unwrap_err().detail.contains("unsupported format: .docx"));
    }

    #[test]
    fn pdf_by_file_name() {
        assert_eq!(tool().read("/somewhere/paper.pdf").unwrap(), "pdf text");
    }
}
