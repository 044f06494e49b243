//! Versioned JSON envelopes for every command output.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{AppError, AppResult};

/// Bumped whenever a field is renamed or removed.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Report<C, R> {
    pub schema_version: u32,
    pub library_version: &'static str,
    pub command: &'static str,
    pub config: C,
    pub results: R,
}

impl<C: Serialize, R: Serialize> Report<C, R> {
    pub fn new(command: &'static str, config: C, results: R) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            library_version: depboot_core::VERSION,
            command,
            config,
            results,
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> AppResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| AppError::Input(format!("cannot encode JSON: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Writes to `path`, or stdout when `path` is `None` or `-`.
pub fn write_output(path: Option<&Path>, contents: &str) -> AppResult<()> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            std::fs::write(p, contents).map_err(|e| AppError::io(format!("cannot write {}", p.display()), e))
        }
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())
                .map_err(|e| AppError::io("cannot write stdout", e))
        }
    }
}

/// Writes via a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &str) -> AppResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| AppError::io(format!("cannot write {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| AppError::io(format!("cannot rename to {}", path.display()), e))
}
