//! Binary cache of a solved surface.
//!
//! Layout (little endian):
//!
//! ```text
//! magic    8 bytes   "OTCMMVS1"
//! version  u32
//! meta_len u64, meta JSON (key, grid, factor model, market, solver settings, times)
//! n_slices u64, n_nodes u64, n_slices * n_nodes f64
//! sha256   32 bytes over everything above
//! ```
//!
//! The `key` is chosen by the caller (the CLI uses a hash of everything that
//! determines the surface) and is checked before a cached surface is reused.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factor::FactorModel;
use crate::grid::FactorGrid;
use crate::model::MarketSpec;
use crate::solver::{SolverConfig, ValueSurface};

pub const MAGIC: &[u8; 8] = b"OTCMMVS1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    key: String,
    grid: FactorGrid,
    times: Vec<f64>,
    factor_model: FactorModel,
    market: MarketSpec,
    config: SolverConfig,
    dt: f64,
    steps: usize,
}

fn cache_err(msg: impl Into<String>) -> Error {
    Error::Cache(msg.into())
}

pub fn encode_surface(surface: &ValueSurface, key: &str) -> Result<Vec<u8>> {
    let meta = Meta {
        key: key.to_string(),
        grid: surface.grid.clone(),
        times: surface.times.clone(),
        factor_model: surface.factor_model.clone(),
        market: surface.market.clone(),
        config: surface.config.clone(),
        dt: surface.dt,
        steps: surface.steps,
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| cache_err(e.to_string()))?;
    let n_nodes = surface.grid.len();
    let mut buf = Vec::with_capacity(64 + meta.len() + 8 * n_nodes * surface.slices.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(surface.slices.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(n_nodes as u64).to_le_bytes());
    for slice in &surface.slices {
        for v in slice {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

/// Decode a cache blob; returns the surface and its key.
pub fn decode_surface(bytes: &[u8]) -> Result<(ValueSurface, String)> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(cache_err("not a surface cache (bad magic)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(cache_err(format!("cache format version {version}, this build reads {FORMAT_VERSION}")));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(cache_err("checksum mismatch; the cache file is corrupt"));
    }
    let mut cur = Cursor { buf: body, at: 12 };
    let meta_len = cur.u64()? as usize;
    let meta: Meta = serde_json::from_slice(cur.take(meta_len)?).map_err(|e| cache_err(e.to_string()))?;
    let n_slices = cur.u64()? as usize;
    let n_nodes = cur.u64()? as usize;
    if n_nodes != meta.grid.len() || n_slices != meta.times.len() {
        return Err(cache_err("slice shape does not match the stored grid"));
    }
    let mut slices = Vec::with_capacity(n_slices);
    for _ in 0..n_slices {
        let raw = cur.take(8 * n_nodes)?;
        slices.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if cur.at != body.len() {
        return Err(cache_err("trailing bytes after surface data"));
    }
    let surface = ValueSurface {
        grid: meta.grid,
        times: meta.times,
        slices,
        factor_model: meta.factor_model,
        market: meta.market,
        config: meta.config,
        dt: meta.dt,
        steps: meta.steps,
    };
    Ok((surface, meta.key))
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| cache_err("truncated cache"))?;
        let out = &self.buf[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_surface(w: &mut impl Write, surface: &ValueSurface, key: &str) -> Result<()> {
    w.write_all(&encode_surface(surface, key)?)?;
    Ok(())
}

pub fn read_surface(r: &mut impl Read) -> Result<(ValueSurface, String)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_surface(&bytes)
}

pub fn save_surface(path: &Path, surface: &ValueSurface, key: &str) -> Result<()> {
    std::fs::write(path, encode_surface(surface, key)?)?;
    Ok(())
}

pub fn load_surface(path: &Path) -> Result<(ValueSurface, String)> {
    let bytes = std::fs::read(path).map_err(|e| cache_err(format!("cannot read {}: {e}", path.display())))?;
    decode_surface(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{AssetSpec, LogisticIntensity, RiskPenalty, SizeDistribution};
    use crate::solver::{grid_for, solve};

    fn surface() -> ValueSurface {
        let it = LogisticIntensity::new(30.0, 0.7, 30.0).unwrap();
        let sizes = SizeDistribution::single(10000.0).unwrap();
        let m = MarketSpec::new(
            vec![AssetSpec::symmetric(100.0, 1.2, it, sizes)],
            Matrix::identity(1),
            0.2,
            1.0,
            1e10,
            RiskPenalty::quadratic(8e-7),
        )
        .unwrap();
        let fm = FactorModel::identity(m.covariance());
        solve(&m, &fm, &grid_for(&m, &fm, &[21]).unwrap(), &SolverConfig::default()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let s = surface();
        let bytes = encode_surface(&s, "abc").unwrap();
        let (back, key) = decode_surface(&bytes).unwrap();
        assert_eq!(key, "abc");
        assert_eq!(back, s);
        assert_eq!(encode_surface(&back, "abc").unwrap(), bytes);
    }

    #[test]
    fn corruption_and_version_are_detected() {
        let s = surface();
        let mut bytes = encode_surface(&s, "k").unwrap();
        let n = bytes.len();
        bytes[n - 40] ^= 1;
        assert!(decode_surface(&bytes).unwrap_err().to_string().contains("checksum"));
        let mut bytes = encode_surface(&s, "k").unwrap();
        bytes[8] = 9;
        assert!(decode_surface(&bytes).unwrap_err().to_string().contains("version"));
        assert!(decode_surface(b"nonsense").is_err());
    }
}
