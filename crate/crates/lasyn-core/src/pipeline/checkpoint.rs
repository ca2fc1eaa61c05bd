use std::io::{Read, Write};
use std::path::Path;

use crate::nn::{ParamSet, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"LSYN";
const VERSION: u32 = 1;

/// Binary layout, all integers little-endian:
///
/// ```text
/// magic "LSYN" | version u32 | name_len u64 | name utf-8 | config_hash [32]
/// | tensor_count u64 | per tensor:
///     name_len u64 | name | rank u64 | dims u64 x rank | frozen u8
///     | values f32 x prod(dims)
/// ```
pub fn save_checkpoint(
    path: &Path,
    component: &str,
    config_hash: &[u8; 32],
    params: &ParamSet<f32>,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(component.len() as u64).to_le_bytes());
    buf.extend_from_slice(component.as_bytes());
    buf.extend_from_slice(config_hash);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, entry) in params.iter() {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let shape = entry.tensor.shape();
        buf.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.push(entry.frozen as u8);
        for &v in entry.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                offset: self.offset as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u64(what)? as usize;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint {
            offset: self.offset as u64,
            msg: format!("{what} is not utf-8"),
        })
    }
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub component: String,
    pub config_hash: [u8; 32],
    pub params: ParamSet<f32>,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint {
            offset: 0,
            msg: format!("cannot open {}: {e}", path.display()),
        })?
        .read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, offset: 0 };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            msg: format!("bad magic {magic:?}"),
        });
    }
    let version = cur.u32("version")?;
    if version > VERSION {
        return Err(Error::Checkpoint {
            offset: 4,
            msg: format!("format version {version} is ahead of supported {VERSION}"),
        });
    }
    let component = cur.string("component name")?;
    let hash_bytes = cur.take(32, "config hash")?;
    let mut config_hash = [0u8; 32];
    config_hash.copy_from_slice(hash_bytes);

    let count = cur.u64("tensor count")? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = cur.string("tensor name")?;
        let rank = cur.u64("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("dim")? as usize);
        }
        let frozen = cur.take(1, "freeze flag")?[0] != 0;
        let n: usize = shape.iter().product();
        let raw = cur.take(4 * n, &format!("tensor `{name}` data"))?;
        let mut data = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        params.insert(&name, Tensor::from_vec(&shape, data));
        params.set_frozen(&name, frozen);
    }
    if cur.offset != bytes.len() {
        return Err(Error::Checkpoint {
            offset: cur.offset as u64,
            msg: "trailing bytes after last tensor".into(),
        });
    }
    Ok(LoadedCheckpoint {
        component,
        config_hash,
        params,
    })
}

/// Load and verify component name and config hash. A hash mismatch is a
/// warning by default (returned as `false`) and an error in strict mode.
pub fn load_verified(
    path: &Path,
    component: &str,
    config_hash: &[u8; 32],
    strict: bool,
) -> Result<(ParamSet<f32>, bool)> {
    let loaded = load_checkpoint(path)?;
    if loaded.component != component {
        return Err(Error::Checkpoint {
            offset: 0,
            msg: format!("component `{}`, expected `{component}`", loaded.component),
        });
    }
    let hash_ok = &loaded.config_hash == config_hash;
    if !hash_ok && strict {
        return Err(Error::Checkpoint {
            offset: 0,
            msg: "config hash mismatch (strict mode)".into(),
        });
    }
    Ok((loaded.params, hash_ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_stream;

    fn sample_params() -> ParamSet<f32> {
        let mut rng = seeded_stream(0, "ckpt");
        let mut p = ParamSet::new();
        p.insert(
            "w",
            Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.normal_f64() as f32).collect()),
        );
        p.insert("b", Tensor::from_vec(&[4], vec![0.1, -0.2, 0.3, -0.4]));
        p.set_frozen("b", true);
        p
    }

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("lasyn-ckpt-{name}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tmpdir("roundtrip");
        let path = dir.join("m.ckpt");
        let params = sample_params();
        let hash = [7u8; 32];
        save_checkpoint(&path, "asr", &hash, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.component, "asr");
        assert_eq!(loaded.config_hash, hash);
        assert_eq!(loaded.params.content_hash(), params.content_hash());
        assert!(loaded.params.is_frozen("b"));
    }

    #[test]
    fn corrupted_magic_is_error() {
        let dir = tmpdir("magic");
        let path = dir.join("m.ckpt");
        save_checkpoint(&path, "asr", &[0u8; 32], &sample_params()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncation_reports_byte_offset() {
        let dir = tmpdir("trunc");
        let path = dir.join("m.ckpt");
        save_checkpoint(&path, "asr", &[0u8; 32], &sample_params()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Cut inside the first tensor's data.
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint { offset, msg }) => {
                assert!(offset > 0);
                assert!(msg.contains("truncated"), "{msg}");
            }
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn future_version_rejected() {
        let dir = tmpdir("version");
        let path = dir.join("m.ckpt");
        save_checkpoint(&path, "asr", &[0u8; 32], &sample_params()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn strict_mode_rejects_hash_mismatch() {
        let dir = tmpdir("strict");
        let path = dir.join("m.ckpt");
        save_checkpoint(&path, "asr", &[1u8; 32], &sample_params()).unwrap();
        // Lenient: loads with a warning flag.
        let (_, ok) = load_verified(&path, "asr", &[2u8; 32], false).unwrap();
        assert!(!ok);
        // Strict: error.
        assert!(load_verified(&path, "asr", &[2u8; 32], true).is_err());
        // Wrong component is always an error.
        assert!(load_verified(&path, "synth", &[1u8; 32], false).is_err());
    }
}
