//! Binary checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "SEPLCKPT"
//! version      u32
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (CheckpointMeta)
//! n_arrays     u32
//! n_arrays × {
//!     name_len u32, name (UTF-8),
//!     rows u32, cols u32,
//!     rows·cols f64, row-major
//! }
//! ```
//!
//! Optimizer moments are stored as arrays named `optim.m.<param>` and
//! `optim.v.<param>`. Arrays are written in name order, so equal states give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"SEPLCKPT";
pub const VERSION: u32 = 1;
const M_PREFIX: &str = "optim.m.";
const V_PREFIX: &str = "optim.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Full configuration as TOML.
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    /// Stage the run is in (1 or 2).
    pub stage: u8,
    /// Steps completed within `stage`.
    pub step: usize,
    pub adam_t: u64,
    pub skip_pretrain: bool,
    /// True once both stages have run to completion.
    pub complete: bool,
    pub best_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    pub adam_m: BTreeMap<String, Tensor>,
    pub adam_v: BTreeMap<String, Tensor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_array(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_u32(out, name.len(), "name length")?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.nrows(), "rows")?;
    put_u32(out, t.ncols(), "cols")?;
    for v in t.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

impl Checkpoint {
    pub fn config(&self) -> Result<Config> {
        Config::from_toml_str(&self.meta.config)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.meta)?;
        put_u32(&mut out, header.len(), "header length")?;
        out.extend_from_slice(&header);
        let n = self.params.len() + self.adam_m.len() + self.adam_v.len();
        put_u32(&mut out, n, "array count")?;
        for (name, t) in self.params.iter() {
            put_array(&mut out, name, t)?;
        }
        for (name, t) in &self.adam_m {
            put_array(&mut out, &format!("{M_PREFIX}{name}"), t)?;
        }
        for (name, t) in &self.adam_v {
            put_array(&mut out, &format!("{V_PREFIX}{name}"), t)?;
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()? as u32;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = r.u32()?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(hlen)?)?;
        let n = r.u32()?;
        let mut params = ParamStore::new();
        let mut adam_m = BTreeMap::new();
        let mut adam_v = BTreeMap::new();
        for _ in 0..n {
            let len = r.u32()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Checkpoint(format!("array name: {e}")))?
                .to_string();
            let (rows, cols) = (r.u32()?, r.u32()?);
            let bytes = r.take(rows * cols * 8)?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_shape_vec((rows, cols), data).expect("length checked");
            if let Some(p) = name.strip_prefix(M_PREFIX) {
                adam_m.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix(V_PREFIX) {
                adam_v.insert(p.to_string(), t);
            } else if params.contains(&name) {
                return Err(Error::Checkpoint(format!("duplicate array `{name}`")));
            } else {
                params.insert(name, t);
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        let ck = Self {
            meta,
            params,
            adam_m,
            adam_v,
        };
        let hash = ck.config()?.hash();
        if hash != ck.meta.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: header {}, recomputed {hash}",
                ck.meta.config_hash
            )));
        }
        Ok(ck)
    }

    /// Write via a temporary file and rename. Refuses to replace an existing
    /// file unless `overwrite`.
    pub fn save(&self, path: impl AsRef<Path>, overwrite: bool) -> Result<()> {
        let path = path.as_ref();
        if path.exists() && !overwrite {
            return Err(Error::Checkpoint(format!(
                "{} exists; pass --force to overwrite",
                path.display()
            )));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
