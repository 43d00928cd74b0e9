use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{ChatExchange, LlmError};
use crate::canonical::to_canonical_string;

/// Recorded exchanges keyed by request hash.
#[derive(Debug, Default, Clone)]
pub struct Cassette {
    entries: BTreeMap<String, ChatExchange>,
}

impl Cassette {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, hash: &str) -> Option<&ChatExchange> {
        self.entries.get(hash)
    }

    pub fn insert(&mut self, exchange: ChatExchange) {
        self.entries.insert(exchange.request_hash.clone(), exchange);
    }

    /// Load a JSONL cassette. Returns the number of lines read; entries
    /// already present are replaced, so importing twice changes nothing.
    pub fn import(&mut self, path: &Path) -> Result<usize, LlmError> {
        let file = fs::File::open(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        let mut staged = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: ChatExchange = serde_json::from_str(&line)
                .map_err(|e| LlmError::CorruptCassette { line: i + 1, reason: e.to_string() })?;
            if ex.request.hash() != ex.request_hash {
                return Err(LlmError::CorruptCassette { line: i + 1, reason: "request_hash mismatch".into() });
            }
            staged.push(ex);
        }
        let n = staged.len();
        for ex in staged {
            self.insert(ex);
        }
        Ok(n)
    }

    /// Write entries (all, or only `only`) as canonical JSONL sorted by hash.
    pub fn export(&self, path: &Path, only: Option<&BTreeSet<String>>) -> Result<usize, LlmError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| LlmError::Io(e.to_string()))?;
        }
        let mut w = BufWriter::new(fs::File::create(path).map_err(|e| LlmError::Io(e.to_string()))?);
        let mut n = 0;
        for (hash, ex) in &self.entries {
            if only.is_some_and(|set| !set.contains(hash)) {
                continue;
            }
            let line = to_canonical_string(ex).map_err(|e| LlmError::Io(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| LlmError::Io(e.to_string()))?;
            n += 1;
        }
        w.flush().map_err(|e| LlmError::Io(e.to_string()))?;
        Ok(n)
    }
}
