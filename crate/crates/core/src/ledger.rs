//! Append-only, hash-chained audit log of aggregated model versions.
//!
//! Each entry's digest is SHA-256 over the following preimage, all integers
//! little-endian, in this order:
//!
//! | field          | bytes                                   |
//! |----------------|-----------------------------------------|
//! | index          | u64                                     |
//! | timestamp (ms) | u64                                     |
//! | param_hash     | 32                                      |
//! | mode           | u32 byte length, then UTF-8 bytes       |
//! | client_count   | u32                                     |
//! | epsilon        | f64 (IEEE-754 bits)                     |
//! | prev_hash      | 32                                      |
//!
//! The first entry links to 32 zero bytes. A chain cut short at its tail
//! still verifies: an append-only log cannot tell a truncated history from
//! a shorter one.
//!
//! On disk the chain is newline-delimited JSON, one entry per line, with
//! digests hex-encoded and epsilon written as a decimal string (`"inf"`
//! when unbounded).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ParamVector;

pub type Digest32 = [u8; 32];

pub const GENESIS_PREV: Digest32 = [0u8; 32];

/// SHA-256 of the canonical byte serialization of a parameter vector.
pub fn param_digest(params: &ParamVector) -> Digest32 {
    Sha256::digest(params.to_bytes()).into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryMeta {
    pub mode: String,
    pub client_count: u32,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerEntry {
    pub index: u64,
    pub timestamp_ms: u64,
    pub param_hash: Digest32,
    pub meta: EntryMeta,
    pub prev_hash: Digest32,
    pub entry_hash: Digest32,
}

impl LedgerEntry {
    pub fn preimage(index: u64, timestamp_ms: u64, param_hash: &Digest32, meta: &EntryMeta, prev: &Digest32) -> Vec<u8> {
        let mode = meta.mode.as_bytes();
        let mut out = Vec::with_capacity(8 + 8 + 32 + 4 + mode.len() + 4 + 8 + 32);
        out.extend_from_slice(&index.to_le_bytes());
        out.extend_from_slice(&timestamp_ms.to_le_bytes());
        out.extend_from_slice(param_hash);
        out.extend_from_slice(&(mode.len() as u32).to_le_bytes());
        out.extend_from_slice(mode);
        out.extend_from_slice(&meta.client_count.to_le_bytes());
        out.extend_from_slice(&meta.epsilon.to_le_bytes());
        out.extend_from_slice(prev);
        out
    }

    pub fn compute_hash(&self) -> Digest32 {
        Sha256::digest(Self::preimage(self.index, self.timestamp_ms, &self.param_hash, &self.meta, &self.prev_hash)).into()
    }
}

/// Outcome of a failed verification: the first entry that does not check out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TamperReport {
    pub index: u64,
    pub reason: String,
}

impl From<TamperReport> for Error {
    fn from(r: TamperReport) -> Self {
        Error::Tamper { index: r.index, reason: r.reason }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    index: u64,
    timestamp_ms: u64,
    param_hash: String,
    mode: String,
    client_count: u32,
    epsilon: String,
    prev_hash: String,
    entry_hash: String,
}

fn parse_digest(s: &str, line: usize) -> Result<Digest32> {
    let bytes = hex::decode(s).map_err(|e| Error::Parse { line, reason: format!("bad hex digest: {e}") })?;
    bytes.try_into().map_err(|_| Error::Parse { line, reason: "digest must be 32 bytes".into() })
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<LedgerEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut Vec<LedgerEntry> {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head_hash(&self) -> Digest32 {
        self.entries.last().map_or(GENESIS_PREV, |e| e.entry_hash)
    }

    /// Checks indices, hashes and links, reporting the first failing entry.
    pub fn verify(&self) -> std::result::Result<(), TamperReport> {
        let mut prev = GENESIS_PREV;
        for (i, e) in self.entries.iter().enumerate() {
            let index = i as u64;
            if e.index != index {
                return Err(TamperReport { index, reason: format!("stored index {} out of sequence", e.index) });
            }
            if e.prev_hash != prev {
                return Err(TamperReport { index, reason: "previous-hash link broken".into() });
            }
            if e.compute_hash() != e.entry_hash {
                return Err(TamperReport { index, reason: "entry hash does not recompute".into() });
            }
            prev = e.entry_hash;
        }
        Ok(())
    }

    /// Appends a new entry after verifying the existing chain.
    pub fn append(&mut self, param_hash: Digest32, timestamp_ms: u64, meta: EntryMeta) -> Result<&LedgerEntry> {
        self.verify()?;
        let index = self.entries.len() as u64;
        let prev_hash = self.head_hash();
        let mut entry = LedgerEntry { index, timestamp_ms, param_hash, meta, prev_hash, entry_hash: [0; 32] };
        entry.entry_hash = entry.compute_hash();
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let rec = Record {
                index: e.index,
                timestamp_ms: e.timestamp_ms,
                param_hash: hex::encode(e.param_hash),
                mode: e.meta.mode.clone(),
                client_count: e.meta.client_count,
                epsilon: e.meta.epsilon.to_string(),
                prev_hash: hex::encode(e.prev_hash),
                entry_hash: hex::encode(e.entry_hash),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses the on-disk form. Does not verify; call [`Ledger::verify`].
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse { line: n, reason: e.to_string() })?;
            let epsilon = rec
                .epsilon
                .parse::<f64>()
                .map_err(|e| Error::Parse { line: n, reason: format!("bad epsilon: {e}") })?;
            entries.push(LedgerEntry {
                index: rec.index,
                timestamp_ms: rec.timestamp_ms,
                param_hash: parse_digest(&rec.param_hash, n)?,
                meta: EntryMeta { mode: rec.mode, client_count: rec.client_count, epsilon },
                prev_hash: parse_digest(&rec.prev_hash, n)?,
                entry_hash: parse_digest(&rec.entry_hash, n)?,
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(BufReader::new(fs::File::open(path)?))
    }
}
