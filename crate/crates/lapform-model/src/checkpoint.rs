//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//! magic `LPFM` | version u32 | digest_len u32 | SHA-256 of the JSON model
//! config | param count u32 | then per parameter: name_len u32, name bytes,
//! ndim u32, each dim u64, each value f64.
//!
//! The config digest ties a parameter file to the exact model shape it was
//! saved from; loading under a different config is refused.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{ModelError, ModelResult};
use crate::params::{Param, ParamSet};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LPFM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn config_digest(cfg: &ModelConfig) -> ModelResult<[u8; 32]> {
    let json = serde_json::to_vec(cfg)
        .map_err(|e| ModelError::Internal(format!("config serialization failed: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(&json);
    Ok(hasher.finalize().into())
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ParamSet) -> ModelResult<()> {
    let digest = config_digest(cfg)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(digest.len() as u32).to_le_bytes())?;
    w.write_all(&digest)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.params() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for d in &p.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct TrackedReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> TrackedReader<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> ModelResult<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| ModelError::Format {
            offset: at,
            detail: format!("reading {what}: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> ModelResult<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> ModelResult<u64> {
        let mut b = [0u8; 8];
        self.take(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
}

pub fn load_checkpoint(path: &Path, cfg: &ModelConfig) -> ModelResult<ParamSet> {
    let mut r = TrackedReader { inner: BufReader::new(File::open(path)?), offset: 0 };

    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Format {
            offset: 0,
            detail: format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        });
    }
    let version_at = r.offset;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Format {
            offset: version_at,
            detail: format!("unsupported version {version}"),
        });
    }
    let digest_len_at = r.offset;
    let digest_len = r.u32("digest length")?;
    if digest_len != 32 {
        return Err(ModelError::Format {
            offset: digest_len_at,
            detail: format!("digest length {digest_len}, expected 32"),
        });
    }
    let digest_at = r.offset;
    let mut digest = [0u8; 32];
    r.take(&mut digest, "config digest")?;
    let expected = config_digest(cfg)?;
    if digest != expected {
        return Err(ModelError::Format {
            offset: digest_at,
            detail: "config digest mismatch: checkpoint was saved from a different model \
                     configuration"
                .into(),
        });
    }

    let count = r.u32("parameter count")? as usize;
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > 4096 {
            return Err(ModelError::Format {
                offset: r.offset - 4,
                detail: format!("implausible name length {name_len}"),
            });
        }
        let name_at = r.offset;
        let mut name_bytes = vec![0u8; name_len];
        r.take(&mut name_bytes, "parameter name")?;
        let name = String::from_utf8(name_bytes).map_err(|e| ModelError::Format {
            offset: name_at,
            detail: format!("parameter name is not UTF-8: {e}"),
        })?;
        let ndim = r.u32("dimension count")? as usize;
        if ndim > 8 {
            return Err(ModelError::Format {
                offset: r.offset - 4,
                detail: format!("implausible rank {ndim} for {name}"),
            });
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let len: usize = shape.iter().product();
        if len > (1 << 30) {
            return Err(ModelError::Format {
                offset: r.offset,
                detail: format!("implausible size {len} for {name}"),
            });
        }
        let data_at = r.offset;
        let mut data = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            r.take(&mut b, "parameter data")?;
            data.push(f64::from_le_bytes(b));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Format {
                offset: data_at,
                detail: format!("non-finite value in {name}"),
            });
        }
        if params.iter().any(|p: &Param| p.name == name) {
            return Err(ModelError::Format {
                offset: name_at,
                detail: format!("duplicate parameter {name} (entry {i})"),
            });
        }
        params.push(Param { name, shape, data });
    }

    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(ModelError::Io)? != 0 {
        return Err(ModelError::Format {
            offset: r.offset,
            detail: "trailing data after last parameter".into(),
        });
    }
    Ok(ParamSet::from_params(params))
}
