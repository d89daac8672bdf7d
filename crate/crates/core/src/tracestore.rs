//! Episode trace files.
//!
//! Plaintext traces start with the line `DSTP1` followed by one JSON episode
//! per line, each terminated by `\n`. Encrypted traces wrap a plaintext trace:
//!
//! ```text
//! "DSTE" | version 0x01 | salt[16] | nonce[12] | ciphertext+tag
//! ```
//!
//! The key is Argon2id (default parameters) over the passphrase and salt;
//! the cipher is ChaCha20-Poly1305 with the 33-byte header as associated
//! data, so any modification to the file fails authentication.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use argon2::Argon2;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agentloop::{count_episode, Episode, EPISODE_SCHEMA_VERSION};

pub const PLAIN_MAGIC: &[u8] = b"DSTP1\n";
pub const ENC_MAGIC: &[u8; 4] = b"DSTE";
pub const ENC_VERSION: u8 = 1;
const SALT_LEN: usize = 16;
const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;
pub const ENC_HEADER_LEN: usize = ENC_MAGIC.len() + 1 + SALT_LEN + NONCE_LEN;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("not a trace file")]
    BadMagic,
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u32),
    #[error("trace truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("malformed record at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("decryption failed: wrong passphrase or corrupted file")]
    Authentication,
    #[error("trace is encrypted; a passphrase is required")]
    PassphraseRequired,
    #[error("key derivation failed: {0}")]
    Kdf(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_plain(episodes: &[Episode]) -> Vec<u8> {
    let mut out = PLAIN_MAGIC.to_vec();
    for ep in episodes {
        serde_json::to_writer(&mut out, ep).expect("episodes serialize");
        out.push(b'\n');
    }
    out
}

pub fn decode_plain(bytes: &[u8]) -> Result<Vec<Episode>, TraceError> {
    if !bytes.starts_with(PLAIN_MAGIC) {
        return Err(TraceError::BadMagic);
    }
    let mut episodes = Vec::new();
    let mut offset = PLAIN_MAGIC.len();
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(TraceError::Truncated { offset });
        };
        let line = &rest[..end];
        if !line.iter().all(u8::is_ascii_whitespace) {
            let ep: Episode = serde_json::from_slice(line).map_err(|e| TraceError::Parse {
                offset,
                message: e.to_string(),
            })?;
            if ep.schema_version > EPISODE_SCHEMA_VERSION {
                return Err(TraceError::UnsupportedVersion(ep.schema_version));
            }
            episodes.push(ep);
        }
        offset += end + 1;
    }
    Ok(episodes)
}

fn derive_key(passphrase: &str, salt: &[u8]) -> Result<Key, TraceError> {
    let mut key = [0u8; 32];
    Argon2::default()
        .hash_password_into(passphrase.as_bytes(), salt, &mut key)
        .map_err(|e| TraceError::Kdf(e.to_string()))?;
    Ok(key.into())
}

pub fn encrypt_bytes(plain: &[u8], passphrase: &str) -> Result<Vec<u8>, TraceError> {
    let salt: [u8; SALT_LEN] = rand::random();
    let nonce: [u8; NONCE_LEN] = rand::random();
    let mut out = Vec::with_capacity(ENC_HEADER_LEN + plain.len() + TAG_LEN);
    out.extend_from_slice(ENC_MAGIC);
    out.push(ENC_VERSION);
    out.extend_from_slice(&salt);
    out.extend_from_slice(&nonce);
    let cipher = ChaCha20Poly1305::new(&derive_key(passphrase, &salt)?);
    let sealed = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: plain, aad: &out })
        .map_err(|_| TraceError::Authentication)?;
    out.extend_from_slice(&sealed);
    Ok(out)
}

pub fn decrypt_bytes(data: &[u8], passphrase: &str) -> Result<Vec<u8>, TraceError> {
    if data.len() < ENC_MAGIC.len() {
        return Err(TraceError::Truncated { offset: data.len() });
    }
    if &data[..4] != ENC_MAGIC {
        return Err(TraceError::BadMagic);
    }
    if data.len() < ENC_HEADER_LEN + TAG_LEN {
        return Err(TraceError::Truncated { offset: data.len() });
    }
    if data[4] != ENC_VERSION {
        return Err(TraceError::UnsupportedVersion(data[4] as u32));
    }
    let (header, body) = data.split_at(ENC_HEADER_LEN);
    let salt = &header[5..5 + SALT_LEN];
    let nonce = &header[5 + SALT_LEN..];
    let cipher = ChaCha20Poly1305::new(&derive_key(passphrase, salt)?);
    cipher
        .decrypt(Nonce::from_slice(nonce), Payload { msg: body, aad: header })
        .map_err(|_| TraceError::Authentication)
}

pub fn is_encrypted(data: &[u8]) -> bool {
    data.starts_with(ENC_MAGIC)
}

/// Decodes either format. Encrypted input needs `passphrase`.
pub fn decode(data: &[u8], passphrase: Option<&str>) -> Result<Vec<Episode>, TraceError> {
    if is_encrypted(data) {
        let pass = passphrase.ok_or(TraceError::PassphraseRequired)?;
        decode_plain(&decrypt_bytes(data, pass)?)
    } else {
        decode_plain(data)
    }
}

/// Writes via a sibling temp file and rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn write_traces(path: &Path, episodes: &[Episode], passphrase: Option<&str>) -> Result<(), TraceError> {
    let plain = encode_plain(episodes);
    let bytes = match passphrase {
        Some(p) => encrypt_bytes(&plain, p)?,
        None => plain,
    };
    Ok(write_atomic(path, &bytes)?)
}

pub fn read_traces(path: &Path, passphrase: Option<&str>) -> Result<Vec<Episode>, TraceError> {
    decode(&fs::read(path)?, passphrase)
}

pub fn encrypt_file(src: &Path, dst: &Path, passphrase: &str) -> Result<usize, TraceError> {
    let data = fs::read(src)?;
    let episodes = decode_plain(&data)?;
    write_atomic(dst, &encrypt_bytes(&data, passphrase)?)?;
    Ok(episodes.len())
}

pub fn decrypt_file(src: &Path, dst: &Path, passphrase: &str) -> Result<usize, TraceError> {
    let plain = decrypt_bytes(&fs::read(src)?, passphrase)?;
    let n = decode_plain(&plain)?.len();
    write_atomic(dst, &plain)?;
    Ok(n)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub n_episodes: usize,
    pub n_searches: usize,
    /// Share of issued queries containing a quoted phrase.
    pub quoted_fraction: f64,
    /// Whitespace-separated terms per issued query.
    pub avg_query_terms: f64,
    /// Searches per episode → number of episodes.
    pub search_histogram: BTreeMap<usize, usize>,
}

/// True for a straight-quoted span (`"..."`, empty allowed) or a curly one.
pub fn has_quoted_phrase(q: &str) -> bool {
    if q.matches('"').count() >= 2 {
        return true;
    }
    q.find('\u{201c}').is_some_and(|open| q[open..].contains('\u{201d}'))
}

/// Statistics over the queries the agent wrote, before any reformulation.
pub fn analyze_queries(episodes: &[Episode]) -> QueryStats {
    let mut stats = QueryStats {
        n_episodes: episodes.len(),
        ..Default::default()
    };
    let (mut quoted, mut terms) = (0usize, 0usize);
    for ep in episodes {
        *stats
            .search_histogram
            .entry(count_episode(ep).search_calls)
            .or_default() += 1;
        for (q, _) in ep.search_steps() {
            stats.n_searches += 1;
            quoted += has_quoted_phrase(q) as usize;
            terms += q.split_whitespace().count();
        }
    }
    if stats.n_searches > 0 {
        stats.quoted_fraction = quoted as f64 / stats.n_searches as f64;
        stats.avg_query_terms = terms as f64 / stats.n_searches as f64;
    }
    stats
}
