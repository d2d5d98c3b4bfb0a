//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                               |
//! |--------|------|-------------------------------------|
//! | 0      | 8    | magic `BSCMODEL`                    |
//! | 8      | 4    | format version (u32, currently 1)   |
//! | 12     | 4    | config length `J` in bytes (u32)    |
//! | 16     | J    | UTF-8 JSON `ModelConfig`            |
//! | 16+J   | 8    | parameter count `P` (u64)           |
//! | 24+J   | 8    | buffer count `B` (u64)              |
//! | 32+J   | 4P   | parameters, f32, declared order     |
//! | ..     | 4B   | normalization running statistics    |
//!
//! Nothing may follow the last buffer value.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::model::{Model, ModelConfig};
use crate::error::{format_err, Result};

pub const MAGIC: &[u8; 8] = b"BSCMODEL";
pub const VERSION: u32 = 1;

pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(model.config())?;
    let mut out = Vec::with_capacity(32 + cfg.len() + 4 * (model.params().len() + model.buffers().len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    out.extend_from_slice(&(model.buffers().len() as u64).to_le_bytes());
    for v in model.params().iter().chain(model.buffers()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(
                self.buf.len() as u64,
                format!("file ends while reading {what} ({n} bytes needed at offset {})", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).unwrap_or(usize::MAX), what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn model_from_bytes(buf: &[u8]) -> Result<Model> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(format_err(0, "not a model checkpoint (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(format_err(8, format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let len = c.u32("config length")? as usize;
    let cfg_bytes = c.take(len, "config")?;
    let config: ModelConfig =
        serde_json::from_slice(cfg_bytes).map_err(|e| format_err(16, format!("bad model config: {e}")))?;
    config.validate().map_err(|e| format_err(16, e.to_string()))?;
    let count_at = c.pos as u64;
    let np = c.u64("parameter count")? as usize;
    let nb = c.u64("buffer count")? as usize;
    let probe = Model::<f32>::new(ModelConfig { seed: 0, ..config.clone() })?;
    if np != probe.params().len() || nb != probe.buffers().len() {
        return Err(format_err(
            count_at,
            format!(
                "config implies {} parameters and {} buffers, file declares {np} and {nb}",
                probe.params().len(),
                probe.buffers().len()
            ),
        ));
    }
    let params = c.f32s(np, "parameters")?;
    let buffers = c.f32s(nb, "buffers")?;
    if c.pos != buf.len() {
        return Err(format_err(c.pos as u64, format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Model::from_parts(config, params, buffers)
}

/// Writes through a temporary sibling and renames, so a failed save never
/// leaves a partial checkpoint behind.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn offset(e: Error) -> u64 {
        match e {
            Error::Format { offset, .. } => offset,
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = Model::<f32>::new(ModelConfig { seed: 4, ..ModelConfig::tiny() }).unwrap();
        let bytes = model_to_bytes(&m).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), m.params());
        assert_eq!(back.buffers(), m.buffers());
        assert_eq!(model_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn version_and_magic_checked() {
        let m = Model::<f32>::new(ModelConfig::tiny()).unwrap();
        let mut bytes = model_to_bytes(&m).unwrap();
        bytes[8] = 2;
        let e = model_from_bytes(&bytes).unwrap_err();
        assert!(e.to_string().contains("version 2"));
        assert_eq!(offset(e), 8);
        bytes[8] = 1;
        bytes[0] = b'X';
        assert_eq!(offset(model_from_bytes(&bytes).unwrap_err()), 0);
    }

    #[test]
    fn truncation_reports_offset() {
        let m = Model::<f32>::new(ModelConfig::tiny()).unwrap();
        let bytes = model_to_bytes(&m).unwrap();
        for cut in [3, 10, 20, bytes.len() - 1] {
            assert_eq!(offset(model_from_bytes(&bytes[..cut]).unwrap_err()), cut as u64);
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(offset(model_from_bytes(&long).unwrap_err()), bytes.len() as u64);
    }

    #[test]
    fn failed_load_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        assert!(matches!(load_model(&p), Err(Error::Io(_))));
        let m = Model::<f32>::new(ModelConfig::tiny()).unwrap();
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p).unwrap().params(), m.params());
        assert!(!p.with_extension("partial").exists());
    }
}
