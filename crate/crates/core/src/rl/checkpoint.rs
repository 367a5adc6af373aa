//! Binary network checkpoints.
//!
//! Layout (little endian): magic `OSQN`, format version `u32`, input channels,
//! hidden width and kernel size as `u32`, parameter count `u64`, the parameters
//! as `f64`, then the SHA-256 digest of the parameter bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::net::{NetShape, QNetwork};
use super::RlError;

const MAGIC: &[u8; 4] = b"OSQN";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 3 * 4 + 8;

pub fn to_bytes(net: &QNetwork) -> Vec<u8> {
    let shape = net.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + net.params().len() * 8 + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [shape.in_channels, shape.hidden, shape.kernel] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
    let body_start = out.len();
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out[body_start..]);
    out.extend_from_slice(&digest);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<QNetwork, RlError> {
    let bad = |m: &str| RlError::Checkpoint(m.to_string());
    if bytes.len() < HEADER_LEN + 32 {
        return Err(bad("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(RlError::Checkpoint(format!("unsupported version {version}")));
    }
    let shape = NetShape {
        in_channels: u32_at(8) as usize,
        hidden: u32_at(12) as usize,
        kernel: u32_at(16) as usize,
    };
    let count = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    let body_end = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| bad("parameter count overflow"))?;
    if bytes.len() != body_end + 32 {
        return Err(bad("length does not match parameter count"));
    }
    let body = &bytes[HEADER_LEN..body_end];
    if Sha256::digest(body).as_slice() != &bytes[body_end..] {
        return Err(bad("checksum mismatch"));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    QNetwork::from_params(shape, params)
}

pub fn save(net: &QNetwork, path: &Path) -> Result<(), RlError> {
    fs::write(path, to_bytes(net)).map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<QNetwork, RlError> {
    let bytes = fs::read(path).map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
