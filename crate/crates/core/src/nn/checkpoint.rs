//! Single-file checkpoint: a text manifest (magic, config line with an
//! FNV-1a integrity hash, metadata, tensor shapes) followed by raw
//! little-endian f64 blocks in manifest order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{Parameters, Tensor};

const MAGIC: &str = "TSPD1";

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Format(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io error: {e}"),
            CheckpointError::Format(m) => write!(f, "bad checkpoint: {m}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub meta: BTreeMap<String, String>,
    pub params: Parameters,
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    if ckpt.config.contains('\n') {
        return Err(CheckpointError::Format("config must be a single line".into()));
    }
    for key in ckpt.meta.keys() {
        if key.contains(char::is_whitespace) {
            return Err(CheckpointError::Format(format!("meta key {key:?} has whitespace")));
        }
    }
    for name in ckpt.params.keys() {
        if name.contains(char::is_whitespace) {
            return Err(CheckpointError::Format(format!("tensor name {name:?} has whitespace")));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "config {}", ckpt.config)?;
    writeln!(w, "hash {}", fnv1a(&ckpt.config))?;
    for (k, v) in &ckpt.meta {
        writeln!(w, "meta {k} {v}")?;
    }
    for (name, t) in &ckpt.params {
        writeln!(w, "tensor {name} {} {} f64", t.rows, t.cols)?;
    }
    writeln!(w, "data")?;
    for t in ckpt.params.values() {
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;

    // The manifest is the text up to and including the "data" line.
    let mut pos = 0usize;
    let mut next_line = |bytes: &[u8]| -> Result<String, CheckpointError> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(CheckpointError::Format("truncated manifest".into()));
        }
        let line = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| CheckpointError::Format("manifest is not utf-8".into()))?
            .to_string();
        pos += 1;
        Ok(line)
    };

    if next_line(&bytes)? != MAGIC {
        return Err(CheckpointError::Format(format!("missing {MAGIC} magic")));
    }
    let config_line = next_line(&bytes)?;
    let config = config_line
        .strip_prefix("config ")
        .ok_or_else(|| CheckpointError::Format("expected config line".into()))?
        .to_string();
    let hash_line = next_line(&bytes)?;
    let hash: u64 = hash_line
        .strip_prefix("hash ")
        .and_then(|h| h.parse().ok())
        .ok_or_else(|| CheckpointError::Format("expected hash line".into()))?;
    if hash != fnv1a(&config) {
        return Err(CheckpointError::Format("config hash mismatch".into()));
    }

    let mut meta = BTreeMap::new();
    let mut shapes: Vec<(String, usize, usize)> = Vec::new();
    loop {
        let line = next_line(&bytes)?;
        if line == "data" {
            break;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once(' ')
                .ok_or_else(|| CheckpointError::Format(format!("bad meta line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 4 || parts[3] != "f64" {
                return Err(CheckpointError::Format(format!("bad tensor line {line:?}")));
            }
            let rows: usize = parts[1]
                .parse()
                .map_err(|_| CheckpointError::Format(format!("bad rows in {line:?}")))?;
            let cols: usize = parts[2]
                .parse()
                .map_err(|_| CheckpointError::Format(format!("bad cols in {line:?}")))?;
            shapes.push((parts[0].to_string(), rows, cols));
        } else {
            return Err(CheckpointError::Format(format!("unexpected manifest line {line:?}")));
        }
    }

    let mut params = Parameters::new();
    for (name, rows, cols) in shapes {
        let count = rows * cols;
        let need = count * 8;
        if pos + need > bytes.len() {
            return Err(CheckpointError::Format(format!("tensor {name} data truncated")));
        }
        let mut data = Vec::with_capacity(count);
        for k in 0..count {
            let off = pos + k * 8;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[off..off + 8]);
            data.push(f64::from_le_bytes(buf));
        }
        pos += need;
        if params.insert(name.clone(), Tensor::from_vec(rows, cols, data)).is_some() {
            return Err(CheckpointError::Format(format!("duplicate tensor {name}")));
        }
    }
    if pos != bytes.len() {
        return Err(CheckpointError::Format("trailing bytes after tensor data".into()));
    }
    Ok(Checkpoint { config, meta, params })
}
