use std::fmt::Write as _;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::trajectory::clip_chars;

pub const PREVIEW_ROWS: usize = 10;
pub const PREVIEW_CHARS: usize = 2000;
const MAX_ARCHIVE_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Csv,
    Tsv,
    Text,
    Archive,
    Unknown,
}

impl FileKind {
    fn as_str(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Tsv => "tsv",
            Self::Text => "text",
            Self::Archive => "zip archive",
            Self::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: String,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub rows: usize,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileProfile {
    pub name: String,
    pub size: u64,
    pub kind: FileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub summaries: Vec<ColumnSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<FileProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FileProfile {
    fn bare(name: &str, size: u64, kind: FileKind) -> Self {
        Self {
            name: name.to_string(),
            size,
            kind,
            schema: None,
            preview: None,
            summaries: Vec::new(),
            members: Vec::new(),
            error: None,
        }
    }

    /// This entry plus all archive members, recursively.
    pub fn entry_count(&self) -> usize {
        1 + self.members.iter().map(FileProfile::entry_count).sum::<usize>()
    }

    fn render_into(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let _ = writeln!(out, "{pad}- {} ({}, {} bytes)", self.name, self.kind.as_str(), self.size);
        if let Some(e) = &self.error {
            let _ = writeln!(out, "{pad}  error: {e}");
        }
        if let Some(s) = &self.schema {
            let _ = writeln!(out, "{pad}  dimensions: {} rows x {} columns", s.rows, s.columns.len());
            let _ = writeln!(out, "{pad}  columns: {}", s.columns.join(", "));
        }
        for c in &self.summaries {
            let _ = writeln!(
                out,
                "{pad}  {}: count={} min={} max={} mean={:.4} sum={}",
                c.column, c.count, c.min, c.max, c.mean, c.sum
            );
        }
        if let Some(p) = &self.preview {
            let _ = writeln!(out, "{pad}  preview:");
            for line in p.lines() {
                let _ = writeln!(out, "{pad}    {line}");
            }
        }
        for m in &self.members {
            m.render_into(out, depth + 1);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataProfile {
    pub files: Vec<FileProfile>,
}

impl DataProfile {
    pub fn entry_count(&self) -> usize {
        self.files.iter().map(FileProfile::entry_count).sum()
    }

    pub fn render(&self) -> String {
        if self.files.is_empty() {
            return "No input files.\n".to_string();
        }
        let mut out = String::new();
        for f in &self.files {
            f.render_into(&mut out, 0);
        }
        out
    }
}

fn kind_for(name: &str, bytes: &[u8]) -> FileKind {
    let ext = Path::new(name).extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
    match ext.as_str() {
        "csv" => FileKind::Csv,
        "tsv" | "tab" => FileKind::Tsv,
        "zip" => FileKind::Archive,
        "txt" | "md" | "markdown" | "json" | "jsonl" | "log" | "xml" | "html" | "htm" | "yaml" | "yml" | "py"
        | "toml" => FileKind::Text,
        _ if bytes.starts_with(b"PK\x03\x04") => FileKind::Archive,
        _ if !bytes.is_empty() && !bytes.contains(&0) && std::str::from_utf8(bytes).is_ok() => FileKind::Text,
        _ => FileKind::Unknown,
    }
}

fn profile_table(p: &mut FileProfile, bytes: &[u8], delimiter: u8) {
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).flexible(true).from_reader(bytes);
    let columns: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(e) => {
            p.error = Some(format!("cannot parse header: {e}"));
            return;
        }
    };
    let mut rows = 0usize;
    let mut head: Vec<Vec<String>> = Vec::new();
    let mut numeric: Vec<Option<Vec<f64>>> = vec![Some(Vec::new()); columns.len()];
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                p.error = Some(format!("row {}: {e}", rows + 1));
                break;
            }
        };
        rows += 1;
        if head.len() < PREVIEW_ROWS {
            head.push(record.iter().map(str::to_string).collect());
        }
        for (i, slot) in numeric.iter_mut().enumerate() {
            let Some(values) = slot else { continue };
            match record.get(i).map(str::trim) {
                None | Some("") => {}
                Some(v) => match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => values.push(x),
                    _ => *slot = None,
                },
            }
        }
    }
    let delim = (delimiter as char).to_string();
    let mut preview = columns.join(&delim);
    for row in &head {
        preview.push('\n');
        preview.push_str(&row.join(&delim));
    }
    p.preview = Some(clip_chars(&preview, PREVIEW_CHARS));
    p.summaries = columns
        .iter()
        .zip(numeric)
        .filter_map(|(c, v)| {
            let v = v.filter(|v| !v.is_empty())?;
            let sum: f64 = v.iter().sum();
            Some(ColumnSummary {
                column: c.clone(),
                count: v.len(),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean: sum / v.len() as f64,
                sum,
            })
        })
        .collect();
    p.schema = Some(Schema { rows, columns });
}

fn profile_archive(p: &mut FileProfile, bytes: &[u8], depth: usize) {
    if depth >= MAX_ARCHIVE_DEPTH {
        p.error = Some("archive nesting too deep; members not expanded".into());
        return;
    }
    let mut archive = match zip::ZipArchive::new(Cursor::new(bytes)) {
        Ok(a) => a,
        Err(e) => {
            p.error = Some(format!("cannot open archive: {e}"));
            return;
        }
    };
    for i in 0..archive.len() {
        let mut entry = match archive.by_index(i) {
            Ok(e) => e,
            Err(e) => {
                p.members.push(FileProfile { error: Some(e.to_string()), ..FileProfile::bare(&format!("#{i}"), 0, FileKind::Unknown) });
                continue;
            }
        };
        if entry.is_dir() {
            continue;
        }
        let name = entry.name().to_string();
        let mut data = Vec::new();
        match entry.read_to_end(&mut data) {
            Ok(_) => p.members.push(profile_bytes(&name, &data, depth + 1)),
            Err(e) => p.members.push(FileProfile {
                error: Some(format!("cannot read member: {e}")),
                ..FileProfile::bare(&name, entry.size(), FileKind::Unknown)
            }),
        }
    }
}

/// Profiles in-memory content under the given name.
pub fn profile_bytes(name: &str, bytes: &[u8], depth: usize) -> FileProfile {
    let kind = kind_for(name, bytes);
    let mut p = FileProfile::bare(name, bytes.len() as u64, kind);
    if bytes.is_empty() {
        p.preview = Some("empty".into());
        return p;
    }
    match kind {
        FileKind::Csv => profile_table(&mut p, bytes, b','),
        FileKind::Tsv => profile_table(&mut p, bytes, b'\t'),
        FileKind::Text => p.preview = Some(clip_chars(&String::from_utf8_lossy(bytes), PREVIEW_CHARS)),
        FileKind::Archive => profile_archive(&mut p, bytes, depth),
        FileKind::Unknown => {}
    }
    p
}

/// Profiles every file; unreadable files get an entry carrying the error.
pub fn profile(files: &[PathBuf]) -> DataProfile {
    let files = files
        .iter()
        .map(|path| {
            let name = path.display().to_string();
            match std::fs::read(path) {
                Ok(bytes) => profile_bytes(&name, &bytes, 0),
                Err(e) => {
                    let size = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
                    let kind = kind_for(&name, &[]);
                    FileProfile { error: Some(format!("unreadable: {e}")), ..FileProfile::bare(&name, size, kind) }
                }
            }
        })
        .collect();
    DataProfile { files }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn zip_of(members: &[(&str, &[u8])]) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = zip::ZipWriter::new(&mut buf);
            for (name, data) in members {
                w.start_file(*name, zip::write::SimpleFileOptions::default()).unwrap();
                w.write_all(data).unwrap();
            }
            w.finish().unwrap();
        }
        buf.into_inner()
    }

    #[test]
    fn small_csv() {
        let p = profile_bytes("t.csv", b"a,b\n1,x\n2,y\n3,z\n", 0);
        let s = p.schema.as_ref().unwrap();
        assert_eq!((s.rows, s.columns.len()), (3, 2));
        assert_eq!(s.columns, ["a", "b"]);
        assert_eq!(p.preview.as_deref().unwrap().lines().count(), 4);
        assert_eq!(p.summaries.len(), 1);
        assert_eq!(p.summaries[0].sum, 6.0);
        assert_eq!(p.summaries[0].mean, 2.0);
    }

    #[test]
    fn head_rows_capped() {
        let mut data = String::from("n\n");
        for i in 0..50 {
            data.push_str(&format!("{i}\n"));
        }
        let p = profile_bytes("n.csv", data.as_bytes(), 0);
        assert_eq!(p.schema.unwrap().rows, 50);
        assert_eq!(p.preview.unwrap().lines().count(), 1 + PREVIEW_ROWS);
    }

    #[test]
    fn empty_file() {
        let p = profile_bytes("e.csv", b"", 0);
        assert_eq!(p.size, 0);
        assert_eq!(p.preview.as_deref(), Some("empty"));
    }

    #[test]
    fn text_snippet_bounded() {
        let p = profile_bytes("notes.txt", "x".repeat(5000).as_bytes(), 0);
        assert!(p.preview.unwrap().chars().count() <= PREVIEW_CHARS + crate::trajectory::TRUNCATION_MARKER.len());
    }

    #[test]
    fn archive_members_profiled() {
        let z = zip_of(&[("a.csv", b"x\n1\n"), ("b.csv", b"y\n2\n")]);
        let p = profile_bytes("d.zip", &z, 0);
        assert_eq!(p.kind, FileKind::Archive);
        assert_eq!(p.members.len(), 2);
        assert_eq!(p.entry_count(), 3);
        assert!(p.members.iter().all(|m| m.schema.is_some()));
    }

    #[test]
    fn unknown_binary_is_metadata_only() {
        let p = profile_bytes("blob.bin", &[0, 159, 146, 150], 0);
        assert_eq!(p.kind, FileKind::Unknown);
        assert!(p.preview.is_none() && p.schema.is_none());
    }

    #[test]
    fn unreadable_file_keeps_entry() {
        let d = profile(&[PathBuf::from("/nonexistent/x.csv")]);
        assert_eq!(d.entry_count(), 1);
        assert!(d.files[0].error.as_ref().unwrap().contains("unreadable"));
    }
}
