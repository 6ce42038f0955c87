use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One instruction-tuning pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftExample {
    pub prompt: String,
    pub response: String,
}

/// JSON lines with `prompt` and `response`.
pub fn read_sft(path: &Path) -> Result<Vec<SftExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    sft_from_str(&text)
}

pub fn sft_from_str(text: &str) -> Result<Vec<SftExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: SftExample = serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if ex.response.trim().is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty response".into() });
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn sft_to_string(examples: &[SftExample]) -> String {
    examples.iter().map(|e| serde_json::to_string(e).expect("sft example serializes") + "\n").collect()
}
