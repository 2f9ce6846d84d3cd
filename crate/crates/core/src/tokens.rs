//! Token stream serialization: the TOK1 binary format and JSON-lines.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOK1_MAGIC: &[u8; 4] = b"TOK1";

/// A class-conditioned token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    #[serde(rename = "class")]
    pub class_id: u32,
    pub tokens: Vec<u32>,
}

/// `"TOK1"`, count (u32 LE), then `count` u32 LE indices.
pub fn decode_tok1(bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.len() < 8 {
        return Err(Error::parse(
            format!("byte {}", bytes.len()),
            "truncated TOK1 header",
        ));
    }
    if &bytes[..4] != TOK1_MAGIC {
        return Err(Error::parse("byte 0", "bad magic, expected \"TOK1\""));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload = &bytes[8..];
    if !payload.len().is_multiple_of(4) || payload.len() / 4 != count {
        return Err(Error::parse(
            format!("byte {}", 8 + payload.len() / 4 * 4),
            format!(
                "header declares {count} tokens, payload holds {} bytes",
                payload.len()
            ),
        ));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn encode_tok1(tokens: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * tokens.len());
    out.extend_from_slice(TOK1_MAGIC);
    out.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
    for t in tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

/// One `{"tokens": [...], "class": int}` object per non-blank line.
pub fn parse_jsonl(text: &str) -> Result<Vec<TokenSequence>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::parse(format!("row {}", i + 1), e.to_string()))
        })
        .collect()
}

pub fn to_jsonl(sequences: &[TokenSequence]) -> String {
    let mut out = String::new();
    for s in sequences {
        out.push_str(&serde_json::to_string(s).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

/// Fails if any token is `>= size`.
pub fn check_range(tokens: &[u32], size: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t as usize >= size) {
        Some(&t) => Err(Error::IndexOutOfRange {
            index: t as usize,
            size,
        }),
        None => Ok(()),
    }
}

pub fn load_tok1(path: &Path) -> Result<Vec<u32>> {
    decode_tok1(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_tok1(path: &Path, tokens: &[u32]) -> Result<()> {
    fs::write(path, encode_tok1(tokens)).map_err(|e| Error::io(path, e))
}
