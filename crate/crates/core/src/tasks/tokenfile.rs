//! Flat binary token files.
//!
//! ```text
//! magic "INFTOKEN" | u32 version | u32 kind | u32 records | u32 payload_len
//! per record: u32 len | (recall only) u32 cue_pos, u32 query_pos | len × u32 token
//! ```
//!
//! All integers little-endian. `kind` 0 holds plain token streams, 1 holds
//! recall instances whose payload is the last `payload_len` tokens.

use std::path::Path;

use crate::error::{InfiniError, Result};

use super::recall::RecallInstance;

pub const TOKEN_MAGIC: &[u8; 8] = b"INFTOKEN";
pub const TOKEN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenFileKind {
    Plain,
    Recall,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub tokens: Vec<usize>,
    /// `(cue_pos, query_pos)` for recall records.
    pub marks: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFile {
    pub kind: TokenFileKind,
    pub payload_len: usize,
    pub records: Vec<TokenRecord>,
}

impl TokenFile {
    pub fn plain(streams: Vec<Vec<usize>>) -> Self {
        Self {
            kind: TokenFileKind::Plain,
            payload_len: 0,
            records: streams
                .into_iter()
                .map(|tokens| TokenRecord { tokens, marks: None })
                .collect(),
        }
    }

    pub fn from_recall(instances: &[RecallInstance]) -> Result<Self> {
        let payload_len = instances.first().map_or(0, |i| i.payload.len());
        if instances.iter().any(|i| i.payload.len() != payload_len) {
            return Err(InfiniError::Input("recall instances disagree on payload length".into()));
        }
        Ok(Self {
            kind: TokenFileKind::Recall,
            payload_len,
            records: instances
                .iter()
                .map(|i| TokenRecord {
                    tokens: i.tokens.clone(),
                    marks: Some((i.cue_pos, i.query_pos)),
                })
                .collect(),
        })
    }

    pub fn to_recall(&self) -> Result<Vec<RecallInstance>> {
        if self.kind != TokenFileKind::Recall {
            return Err(InfiniError::Input("token file holds plain streams, not recall instances".into()));
        }
        self.records
            .iter()
            .map(|r| {
                let (cue_pos, query_pos) = r.marks.expect("recall records carry marks");
                Ok(RecallInstance {
                    payload: r.tokens[r.tokens.len() - self.payload_len..].to_vec(),
                    tokens: r.tokens.clone(),
                    cue_pos,
                    query_pos,
                })
            })
            .collect()
    }

    /// Every token of every record, in order.
    pub fn concatenated(&self) -> Vec<usize> {
        self.records.iter().flat_map(|r| r.tokens.iter().copied()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TOKEN_MAGIC);
        let kind = match self.kind {
            TokenFileKind::Plain => 0u32,
            TokenFileKind::Recall => 1,
        };
        for v in [TOKEN_VERSION, kind, self.records.len() as u32, self.payload_len as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for r in &self.records {
            out.extend_from_slice(&(r.tokens.len() as u32).to_le_bytes());
            if let Some((c, q)) = r.marks {
                out.extend_from_slice(&(c as u32).to_le_bytes());
                out.extend_from_slice(&(q as u32).to_le_bytes());
            }
            for &t in &r.tokens {
                out.extend_from_slice(&(t as u32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| InfiniError::Input(format!("token file: {msg}"));
        if bytes.len() < 24 || &bytes[..8] != TOKEN_MAGIC {
            return Err(bad("missing INFTOKEN header"));
        }
        let mut pos = 8;
        let mut word = || -> Result<u32> {
            let b = bytes.get(pos..pos + 4).ok_or_else(|| bad("truncated"))?;
            pos += 4;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        let version = word()?;
        if version != TOKEN_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = match word()? {
            0 => TokenFileKind::Plain,
            1 => TokenFileKind::Recall,
            k => return Err(bad(&format!("unknown kind {k}"))),
        };
        let n = word()? as usize;
        let payload_len = word()? as usize;
        let mut records = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = word()? as usize;
            let marks = match kind {
                TokenFileKind::Plain => None,
                TokenFileKind::Recall => Some((word()? as usize, word()? as usize)),
            };
            let tokens = (0..len)
                .map(|_| word().map(|t| t as usize))
                .collect::<Result<Vec<_>>>()?;
            if kind == TokenFileKind::Recall && tokens.len() < payload_len {
                return Err(bad("recall record shorter than its payload"));
            }
            records.push(TokenRecord { tokens, marks });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            kind,
            payload_len,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
