//! Repository walking and function-level code extraction.

mod normalize;
mod python;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::records::Warning;

pub use normalize::normalize_code;
pub use python::PythonBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeConfig {
    /// File extensions (without the dot) treated as source files.
    pub source_extensions: Vec<String>,
    /// Directory names skipped anywhere in the tree. Hidden directories are
    /// always skipped.
    pub exclude_dirs: Vec<String>,
    /// Functions with fewer body statements are flagged trivial.
    pub min_statements: usize,
    /// Drop trivial functions from retrieval and sampling pools.
    pub exclude_trivial: bool,
    /// Identifies the normalization rule set recorded with datasets.
    pub normalization_version: String,
}

impl Default for CodeConfig {
    fn default() -> Self {
        CodeConfig {
            source_extensions: vec!["py".into()],
            exclude_dirs: [
                "tests", "test", "docs", "doc", "examples", "build", "dist", "__pycache__",
                "site-packages", "node_modules", "venv", "env",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            min_statements: 2,
            exclude_trivial: true,
            normalization_version: normalize::NORMALIZATION_VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    /// Repository-relative path with forward slashes.
    pub file_path: String,
    pub content: String,
    pub line_count: usize,
    /// Set when invalid UTF-8 was replaced during decoding.
    pub lossy: bool,
}

impl SourceFile {
    pub fn new(file_path: impl Into<String>, content: impl Into<String>) -> Self {
        let content = content.into();
        SourceFile {
            file_path: file_path.into(),
            line_count: content.lines().count(),
            content,
            lossy: false,
        }
    }

    /// Lines `start..=end` (1-based) joined with `\n`.
    pub fn slice_lines(&self, start: usize, end: usize) -> String {
        self.content
            .split('\n')
            .skip(start - 1)
            .take(end + 1 - start)
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionUnit {
    pub function_id: String,
    pub project_id: String,
    pub qualified_name: String,
    pub file_path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub raw_body: String,
    pub normalized_body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_comment: Option<String>,
    pub decorator_names: Vec<String>,
    pub is_method: bool,
    pub statements: usize,
    pub trivial: bool,
    /// 1 + branching constructs in this function's own body.
    pub cyclomatic: usize,
}

pub fn function_id(project_id: &str, file_path: &str, qualified_name: &str, start_line: usize) -> String {
    format!("{project_id}:{file_path}:{qualified_name}:{start_line}")
}

/// Result of scanning a repository tree.
#[derive(Debug, Default)]
pub struct Scan {
    pub files: Vec<SourceFile>,
    pub warnings: Vec<Warning>,
}

/// Collects source files under `repo` in lexicographic path order.
pub fn scan_repository(repo: &Path, cfg: &CodeConfig) -> Result<Scan> {
    let meta = fs::metadata(repo).map_err(|e| Error::io(repo, e))?;
    if !meta.is_dir() {
        return Err(Error::validation(format!("{} is not a directory", repo.display())));
    }
    fs::read_dir(repo).map_err(|e| Error::io(repo, e))?;

    let mut scan = Scan::default();
    let walker = WalkDir::new(repo).follow_links(false).into_iter().filter_entry(|e| {
        if e.depth() == 0 || !e.file_type().is_dir() {
            return true;
        }
        let name = e.file_name().to_string_lossy();
        !(name.starts_with('.') || cfg.exclude_dirs.iter().any(|d| d == name.as_ref()))
    });
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let subject = e.path().map(|p| p.display().to_string()).unwrap_or_default();
                scan.warnings.push(Warning::new("scan", subject, e.to_string()));
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let ext_ok = entry
            .path()
            .extension()
            .map(|x| cfg.source_extensions.iter().any(|s| s.as_str() == x.to_string_lossy()))
            .unwrap_or(false);
        if !ext_ok {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(repo)
            .expect("walkdir yields children of root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        match fs::read(entry.path()) {
            Ok(bytes) => {
                let (content, lossy) = match String::from_utf8(bytes) {
                    Ok(s) => (s, false),
                    Err(e) => (String::from_utf8_lossy(e.as_bytes()).into_owned(), true),
                };
                if lossy {
                    scan.warnings
                        .push(Warning::new("scan", &rel, "invalid UTF-8 replaced"));
                }
                let mut f = SourceFile::new(rel, content);
                f.lossy = lossy;
                scan.files.push(f);
            }
            Err(e) => scan.warnings.push(Warning::new("scan", rel, e.to_string())),
        }
    }
    scan.files.sort_by(|a, b| a.file_path.cmp(&b.file_path));
    Ok(scan)
}

/// Functions extracted from one file, plus any parse warning.
#[derive(Debug, Default)]
pub struct Extraction {
    pub units: Vec<FunctionUnit>,
    pub warnings: Vec<Warning>,
}

/// Extracts every function and method definition (nested ones included).
/// A file that fails to parse yields no units and one warning.
pub fn extract_functions(project_id: &str, file: &SourceFile, cfg: &CodeConfig) -> Extraction {
    PythonBackend::new().extract(project_id, file, cfg)
}

/// Extracts functions from all files; parsing runs in parallel but the
/// result keeps file order.
pub fn extract_all(project_id: &str, files: &[SourceFile], cfg: &CodeConfig) -> Extraction {
    use rayon::prelude::*;
    let parts: Vec<Extraction> = files
        .par_iter()
        .map(|f| extract_functions(project_id, f, cfg))
        .collect();
    let mut out = Extraction::default();
    for p in parts {
        out.units.extend(p.units);
        out.warnings.extend(p.warnings);
    }
    out
}

/// Per-project figures mirroring the usual software-metrics table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectStats {
    pub lines_of_code: u64,
    pub num_files: u64,
    pub num_functions: u64,
    pub cyclomatic_complexity: u64,
    #[serde(default)]
    pub stars: u64,
    #[serde(default)]
    pub citations: u64,
}

/// Computes code statistics from scanned files and extracted units.
/// Popularity fields are left at zero; they are user-supplied metadata.
pub fn compute_stats(files: &[SourceFile], units: &[FunctionUnit]) -> ProjectStats {
    ProjectStats {
        lines_of_code: files
            .iter()
            .map(|f| f.content.lines().filter(|l| !l.trim().is_empty()).count() as u64)
            .sum(),
        num_files: files.len() as u64,
        num_functions: units.len() as u64,
        cyclomatic_complexity: units.iter().map(|u| u.cyclomatic as u64).sum(),
        stars: 0,
        citations: 0,
    }
}
