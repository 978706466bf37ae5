use std::io::{Read, Write};

use super::mlp::Mlp;

pub const MAGIC: &[u8; 4] = b"RSQN";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("configuration fingerprint mismatch")]
    Fingerprint,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
}

/// Layout: magic, version (u32), 32-byte config hash, layer count (u64),
/// layer sizes (u64 each), parameter count (u64), parameters (f64), all little-endian.
pub fn write_checkpoint<W: Write>(w: &mut W, net: &Mlp, config_hash: &[u8; 32]) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(config_hash)?;
    w.write_all(&(net.layers.len() as u64).to_le_bytes())?;
    for &l in &net.layers {
        w.write_all(&(l as u64).to_le_bytes())?;
    }
    w.write_all(&(net.params.len() as u64).to_le_bytes())?;
    for p in &net.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a checkpoint; when `expect_hash` is given it must match the stored hash.
pub fn read_checkpoint<R: Read>(r: &mut R, expect_hash: Option<&[u8; 32]>) -> Result<(Mlp, [u8; 32]), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if expect_hash.is_some_and(|h| h != &hash) {
        return Err(CheckpointError::Fingerprint);
    }
    let n_layers = read_u64(r)?;
    if n_layers > 64 {
        return Err(CheckpointError::Corrupt("layer count"));
    }
    let layers = (0..n_layers)
        .map(|_| read_u64(r).map(|x| x as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let n = read_u64(r)? as usize;
    if n > (1 << 32) {
        return Err(CheckpointError::Corrupt("parameter count"));
    }
    let mut params = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        params.push(f64::from_le_bytes(b));
    }
    let net = Mlp::from_params(layers, params).ok_or(CheckpointError::Corrupt("parameter count does not match layers"))?;
    Ok((net, hash))
}
