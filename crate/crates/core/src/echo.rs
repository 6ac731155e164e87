//! Ordered `key=value` config echoes and their content hash.

use std::fmt::Display;

use sha2::{Digest, Sha256};

use crate::error::{Result, RsanError};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigEcho {
    entries: Vec<(String, String)>,
}

impl ConfigEcho {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn extend(&mut self, other: &ConfigEcho) {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
    }

    /// One `key=value` line per entry, in insertion order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut echo = Self::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                RsanError::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(RsanError::Config(format!("line {}: empty key", lineno + 1)));
            }
            if echo.get(k).is_some() {
                return Err(RsanError::Config(format!(
                    "line {}: duplicate key '{k}'",
                    lineno + 1
                )));
            }
            echo.set(k, v.trim());
        }
        Ok(echo)
    }

    /// First 8 bytes of SHA-256 over the key-sorted text, as 16 hex digits.
    /// Insensitive to entry order.
    pub fn hash(&self) -> String {
        let mut sorted = self.entries.clone();
        sorted.sort();
        let mut hasher = Sha256::new();
        for (k, v) in &sorted {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The 64-bit prefix of [`hash`](Self::hash) as an integer.
    pub fn hash_u64(&self) -> u64 {
        u64::from_str_radix(&self.hash(), 16).expect("hex digest")
    }
}
