use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ProviderKind, SearchConfig};
use crate::pool::{
    CapabilityDescriptor, CapabilityHandler, CapabilityKind, CostHint, InvocationContext, ParamType, ParameterSpec,
    ToolFailure,
};
use crate::trajectory::Arguments;

pub const CAPABILITY_NAME: &str = "search";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
}

enum Provider {
    /// Seeded index: query to ranked results.
    Fixture(BTreeMap<String, Vec<SearchResult>>),
    /// `GET {endpoint}?q=...&count=...` returning `{"results": [SearchResult...]}`.
    Live { endpoint: String, api_key: Option<String>, client: reqwest::blocking::Client },
}

pub struct SearchTool {
    provider: Provider,
    top_k: usize,
}

impl SearchTool {
    pub fn fixture(index: BTreeMap<String, Vec<SearchResult>>, top_k: usize) -> Self {
        Self { provider: Provider::Fixture(index), top_k }
    }

    pub fn from_config(cfg: &SearchConfig) -> Result<Self, String> {
        match cfg.provider {
            ProviderKind::Fixture => {
                let index = match &cfg.fixture {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                        serde_json::from_str(&text).map_err(|e| format!("search fixture {}: {e}", path.display()))?
                    }
                    None => BTreeMap::new(),
                };
                Ok(Self::fixture(index, cfg.top_k))
            }
            ProviderKind::Live => {
                let endpoint = cfg.endpoint.clone().ok_or("live search needs an endpoint")?;
                let api_key = match &cfg.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?),
                    None => None,
                };
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(30))
                    .build()
                    .map_err(|e| e.to_string())?;
                Ok(Self { provider: Provider::Live { endpoint, api_key, client }, top_k: cfg.top_k })
            }
        }
    }

    /// Exact match first, then the first indexed query that contains or is
    /// contained in the query (case-insensitive).
    pub fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchResult>, String> {
        let mut results = match &self.provider {
            Provider::Fixture(index) => {
                let q = query.trim().to_lowercase();
                index
                    .get(query)
                    .or_else(|| index.iter().find(|(k, _)| k.to_lowercase() == q).map(|(_, v)| v))
                    .or_else(|| {
                        index
                            .iter()
                            .find(|(k, _)| {
                                let k = k.to_lowercase();
                                k.contains(&q) || q.contains(&k)
                            })
                            .map(|(_, v)| v)
                    })
                    .cloned()
                    .unwrap_or_default()
            }
            Provider::Live { endpoint, api_key, client } => {
                let mut req = client.get(endpoint).query(&[("q", query), ("count", &top_k.to_string())]);
                if let Some(k) = api_key {
                    req = req.bearer_auth(k);
                }
                let resp = req.send().map_err(|e| format!("search provider unreachable: {e}"))?;
                if !resp.status().is_success() {
                    return Err(format!("search provider returned {}", resp.status()));
                }
                let body: Value = resp.json().map_err(|e| format!("search provider reply: {e}"))?;
                serde_json::from_value(body.get("results").cloned().unwrap_or(Value::Array(vec![])))
                    .map_err(|e| format!("search provider reply: {e}"))?
            }
        };
        results.truncate(top_k);
        Ok(results)
    }
}

pub fn render_results(query: &str, results: &[SearchResult]) -> String {
    if results.is_empty() {
        return format!("No results for '{query}'.");
    }
    let mut out = format!("Results for '{query}':");
    for (i, r) in results.iter().enumerate() {
        let _ = write!(out, "\n{}. {}\n   {}\n   {}", i + 1, r.title, r.url, r.snippet);
    }
    out
}

pub fn descriptor() -> CapabilityDescriptor {
    CapabilityDescriptor {
        name: CAPABILITY_NAME.into(),
        kind: CapabilityKind::BasicTool,
        description: "Web search. Returns ranked urls with titles and snippets.".into(),
        parameters: vec![
            ParameterSpec::required("query", ParamType::String, "Search query"),
            ParameterSpec::optional("top_k", ParamType::Integer, "Maximum number of results"),
        ],
        cost_hint: CostHint::LowLatency,
    }
}

impl CapabilityHandler for SearchTool {
    fn invoke(&self, args: &Arguments, _ctx: &InvocationContext) -> Result<String, ToolFailure> {
        let query = args.get("query").and_then(Value::as_str).unwrap_or_default();
        let top_k = match args.get("top_k").and_then(Value::as_u64) {
            Some(0) => return Err(ToolFailure::parse_error("top_k must be positive")),
            Some(k) => k as usize,
            None => self.top_k,
        };
        let results = self.search(query, top_k).map_err(ToolFailure::tool_error)?;
        Ok(render_results(query, &results))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tool() -> SearchTool {
        let r = |u: &str| SearchResult { url: u.into(), title: u.to_uppercase(), snippet: String::new() };
        let mut index = BTreeMap::new();
        index.insert("alpha".to_string(), vec![r("u1"), r("u2")]);
        index.insert("beta release date".to_string(), vec![r("u3")]);
        SearchTool::fixture(index, 5)
    }

    #[test]
    fn exact_lookup_respects_top_k() {
        let urls: Vec<_> = tool().search("alpha", 1).unwrap().into_iter().map(|r| r.url).collect();
        assert_eq!(urls, ["u1"]);
    }

    #[test]
    fn substring_lookup() {
        assert_eq!(tool().search("beta release", 5).unwrap()[0].url, "u3");
        assert_eq!(tool().search("ALPHA", 5).unwrap().len(), 2);
    }

    #[test]
    fn no_match_is_empty_ok() {
        let t = tool();
        let results = t.search("gamma", 5).unwrap();
        assert!(results.is_empty());
        assert_eq!(render_results("gamma", &results), "No results for 'gamma'.");
    }
}
