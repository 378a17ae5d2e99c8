//! Canonical `key=value` text documents.
//!
//! Share files, policy files, site configuration, ceremony state and log
//! events all use the same bit-exact serialization: one `key=value` pair per
//! line, keys sorted lexicographically (byte order), every line newline
//! terminated, no insignificant whitespace. Values escape backslash, newline
//! and carriage return so the line structure is unambiguous. A document may
//! carry a `digest` entry holding the hex SHA-256 of its own serialization
//! without that entry.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Reserved key for the self-integrity digest.
pub const DIGEST_KEY: &str = "digest";

#[derive(Debug, Error)]
pub enum DocError {
    #[error("invalid key {0:?}")]
    InvalidKey(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("line {0} is not a key=value pair")]
    MalformedLine(usize),
    #[error("bad escape sequence in value for key {0:?}")]
    BadEscape(String),
    #[error("document is not newline-terminated")]
    MissingNewline,
    #[error("document is not valid UTF-8")]
    NotUtf8,
    #[error("missing required key {0:?}")]
    MissingKey(String),
    #[error("invalid value for key {key:?}: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("integrity digest mismatch")]
    DigestMismatch,
    #[error("document has no integrity digest")]
    MissingDigest,
}

/// An ordered key/value document with canonical byte serialization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Doc {
    entries: BTreeMap<String, String>,
}

fn key_is_valid(key: &str) -> bool {
    !key.is_empty()
        && key.bytes().all(|b| {
            b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'.' | b'_' | b'-' | b'/')
        })
}

fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(value: &str, key: &str) -> Result<String, DocError> {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            _ => return Err(DocError::BadEscape(key.to_string())),
        }
    }
    Ok(out)
}

impl Doc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces an entry. Panics on an invalid key; keys are
    /// chosen by this crate, never by external input.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        assert!(key_is_valid(&key), "invalid canonical key {key:?}");
        self.entries.insert(key, value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, DocError> {
        self.get(key)
            .ok_or_else(|| DocError::MissingKey(key.to_string()))
    }

    pub fn require_u64(&self, key: &str) -> Result<u64, DocError> {
        self.require(key)?
            .parse()
            .map_err(|_| DocError::InvalidValue {
                key: key.to_string(),
                reason: "expected unsigned integer".to_string(),
            })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Canonical serialization: sorted `key=value` lines, each newline
    /// terminated.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (key, value) in &self.entries {
            out.extend_from_slice(key.as_bytes());
            out.push(b'=');
            out.extend_from_slice(escape(value).as_bytes());
            out.push(b'\n');
        }
        out
    }

    /// Serialization with a `digest` entry covering every other line.
    pub fn to_bytes_with_digest(&self) -> Vec<u8> {
        let mut doc = self.clone();
        doc.entries.remove(DIGEST_KEY);
        let digest = Sha256::digest(doc.to_bytes());
        doc.set(DIGEST_KEY, hex::encode(digest));
        doc.to_bytes()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, DocError> {
        let text = std::str::from_utf8(bytes).map_err(|_| DocError::NotUtf8)?;
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(DocError::MissingNewline);
        }
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let (key, raw) = line
                .split_once('=')
                .ok_or(DocError::MalformedLine(lineno + 1))?;
            if !key_is_valid(key) {
                return Err(DocError::InvalidKey(key.to_string()));
            }
            let value = unescape(raw, key)?;
            if entries.insert(key.to_string(), value).is_some() {
                return Err(DocError::DuplicateKey(key.to_string()));
            }
        }
        Ok(Self { entries })
    }

    /// Parses and checks the embedded `digest` entry.
    pub fn parse_with_digest(bytes: &[u8]) -> Result<Self, DocError> {
        let doc = Self::parse(bytes)?;
        let stated = doc.get(DIGEST_KEY).ok_or(DocError::MissingDigest)?;
        let mut body = doc.clone();
        body.entries.remove(DIGEST_KEY);
        let expected = hex::encode(Sha256::digest(body.to_bytes()));
        if stated != expected {
            return Err(DocError::DigestMismatch);
        }
        Ok(body)
    }
}
