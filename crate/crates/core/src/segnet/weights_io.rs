//! Binary weight files.
//!
//! Layout (little endian): magic `CBWT`, u32 version, u32 input size,
//! u32 depth, u32 base channels, u32 layer count, then per layer
//! u32 cin / cout / k, then u64 parameter count and the f64 payload.

use std::io::{Read, Write};
use std::path::Path;

use super::layers::ConvShape;
use super::net::{ModelWeights, NetConfig};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CBWT";
pub const WEIGHTS_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid("value does not fit in u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_weights(w: &ModelWeights) -> Result<Vec<u8>> {
    let cfg = w.config();
    let mut out = Vec::with_capacity(64 + 8 * w.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    put_u32(&mut out, cfg.input_size)?;
    put_u32(&mut out, cfg.depth)?;
    put_u32(&mut out, cfg.base_channels)?;
    put_u32(&mut out, w.shapes().len())?;
    for s in w.shapes() {
        put_u32(&mut out, s.cin)?;
        put_u32(&mut out, s.cout)?;
        put_u32(&mut out, s.k)?;
    }
    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for p in w.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::malformed(self.path, "truncated weight file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// `path` is only used in error messages.
pub fn decode_weights(buf: &[u8], path: &Path) -> Result<ModelWeights> {
    let mut c = Cursor { buf, pos: 0, path };
    if c.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::malformed(path, "not a weight file (bad magic)"));
    }
    let version = c.u32()?;
    if version != WEIGHTS_VERSION as usize {
        return Err(Error::malformed(path, format!("unsupported weight file version {version}")));
    }
    let config = NetConfig {
        input_size: c.u32()?,
        depth: c.u32()?,
        base_channels: c.u32()?,
    };
    config
        .validate()
        .map_err(|e| Error::malformed(path, format!("bad network config: {e}")))?;
    let expected: Vec<ConvShape> = config.layers().into_iter().map(|(_, s)| s).collect();
    let n_layers = c.u32()?;
    if n_layers != expected.len() {
        return Err(Error::malformed(
            path,
            format!("layer table has {n_layers} entries, config implies {}", expected.len()),
        ));
    }
    for (i, want) in expected.iter().enumerate() {
        let got = ConvShape {
            cin: c.u32()?,
            cout: c.u32()?,
            k: c.u32()?,
        };
        if got != *want {
            return Err(Error::malformed(path, format!("layer {i} shape {got:?} != expected {want:?}")));
        }
    }
    let count = u64::from_le_bytes(c.take(8)?.try_into().unwrap()) as usize;
    if count != config.param_count() {
        return Err(Error::malformed(
            path,
            format!("{count} parameters stored, config implies {}", config.param_count()),
        ));
    }
    let bytes = c.take(count.checked_mul(8).ok_or_else(|| Error::malformed(path, "size overflow"))?)?;
    if c.pos != buf.len() {
        return Err(Error::malformed(path, "trailing bytes after payload"));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::malformed(path, format!("parameter {i} is not finite")));
    }
    ModelWeights::from_params(config, params)
}

pub fn save_weights(w: &ModelWeights, path: &Path) -> Result<()> {
    let bytes = encode_weights(w)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_weights(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> NetConfig {
        NetConfig {
            input_size: 16,
            depth: 2,
            base_channels: 2,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = ModelWeights::he_uniform(cfg(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        save_weights(&w, &p).unwrap();
        let back = load_weights(&p).unwrap();
        assert_eq!(back, w);
        assert_eq!(&std::fs::read(&p).unwrap()[..4], b"CBWT");
    }

    #[test]
    fn corrupt_files_rejected() {
        let w = ModelWeights::zeros(cfg()).unwrap();
        let good = encode_weights(&w).unwrap();
        let p = Path::new("w.bin");
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_weights(&bad_magic, p).is_err());
        assert!(decode_weights(&good[..good.len() - 3], p).is_err());
        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_weights(&nan, p), Err(Error::Malformed { .. })));
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_weights(&extra, p).is_err());
        let mut version = good;
        version[4] = 9;
        assert!(decode_weights(&version, p).is_err());
    }
}
