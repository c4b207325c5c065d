//! Basic tools: web search, read & parse, and code execution.

pub mod execute_code;
pub mod read_parse;
pub mod search;

pub use execute_code::ExecuteCodeTool;
pub use read_parse::ReadParseTool;
pub use search::{SearchResult, SearchTool};
