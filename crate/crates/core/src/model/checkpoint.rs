//! Binary checkpoint layout, all integers and reals little-endian:
//!
//! ```text
//! b"CORTINET1"
//! u64 config length, config text (`key = value` lines, UTF-8)
//! every parameter tensor in declaration order, f64 values
//! running mean then running variance of every batch-norm block, f64
//! u64 byte count of everything above
//! ```

use std::path::Path;

use super::{ModelConfig, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 9] = b"CORTINET1";

pub fn to_bytes(network: &Network) -> Vec<u8> {
    let config = network.config().to_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    for (_, t) in network.named_parameters() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for enc in network.encoders() {
        for stats in enc.running_stats() {
            for v in stats.mean.iter().chain(&stats.var) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let total = out.len() as u64;
    out.extend_from_slice(&total.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn fill(&mut self, dst: &mut [f64]) -> Option<()> {
        for v in dst {
            *v = f64::from_le_bytes(self.take(8)?.try_into().ok()?);
        }
        Some(())
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Network> {
    let bad = |reason: &str| Error::Format {
        kind: "checkpoint",
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let truncated = || bad("truncated");
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic bytes"));
    }
    let len = r.u64().ok_or_else(truncated)? as usize;
    let text = std::str::from_utf8(r.take(len).ok_or_else(truncated)?)
        .map_err(|_| bad("config block is not UTF-8"))?;
    let config = ModelConfig::from_text(text).map_err(|e| bad(&e.to_string()))?;
    let mut network = Network::zeros(&config)?;
    for t in network.parameters_mut() {
        r.fill(t.data_mut()).ok_or_else(truncated)?;
    }
    for enc in network.encoders_mut() {
        for stats in enc.running_stats_mut() {
            r.fill(&mut stats.mean).ok_or_else(truncated)?;
            r.fill(&mut stats.var).ok_or_else(truncated)?;
        }
    }
    let body = r.pos as u64;
    if r.u64().ok_or_else(truncated)? != body {
        return Err(bad("length checksum mismatch"));
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after checksum"));
    }
    Ok(network)
}

pub fn save_checkpoint(network: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(network))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    from_bytes(&std::fs::read(path)?, path)
}
