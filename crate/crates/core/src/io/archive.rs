//! Named collections of tensor files, used for checkpoints and data volumes.
//!
//! ```text
//! "DASC"  u32 version  u32 entry count
//! repeated: u32 name length, UTF-8 name, embedded DAST tensor file
//! ```
//!
//! Entries are written in sorted name order so equal contents give equal
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::FmcData;
use crate::io::tensorfile::{Reader, TensorFile};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 4] = b"DASC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub entries: BTreeMap<String, TensorFile>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: TensorFile) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&TensorFile> {
        self.entries.get(name)
    }

    fn require(&self, name: &str, path: &Path) -> Result<&TensorFile> {
        self.get(name).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("missing entry {name}"),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&t.encode());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4, "magic")? != MAGIC {
            return Err(r.error(0, "bad magic, expected \"DASC\"".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error(4, format!("unsupported version {version}")));
        }
        let count = r.u32("entry count")?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| r.error(at + 4, "entry name is not UTF-8".into()))?
                .to_string();
            let (t, _) = TensorFile::decode_at(&mut r)?;
            if entries.insert(name.clone(), t).is_some() {
                return Err(r.error(at, format!("duplicate entry {name}")));
            }
        }
        if r.remaining() != 0 {
            return Err(r.error(r.pos as u64, format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?, path)
    }
}

const ADAM_PREFIX: &str = "adam.";

/// Parameters and, optionally, the optimiser state in one archive.
pub fn checkpoint_archive(params: &ParamSet, adam: Option<&AdamState>) -> Archive {
    let mut a = Archive::new();
    for (name, t) in params.iter() {
        a.insert(name, TensorFile::from(t));
    }
    if let Some(st) = adam {
        let c = st.config;
        let cfg = vec![c.learning_rate, c.beta1, c.beta2, c.epsilon];
        a.insert("adam.config", TensorFile::f64(&[4], cfg).unwrap());
        a.insert("adam.step", TensorFile::f64(&[1], vec![st.step as f64]).unwrap());
        for (name, m) in &st.first_moment {
            a.insert(format!("adam.m.{name}"), TensorFile::from(m));
        }
        for (name, v) in &st.second_moment {
            a.insert(format!("adam.v.{name}"), TensorFile::from(v));
        }
    }
    a
}

pub fn save_checkpoint(path: &Path, params: &ParamSet, adam: Option<&AdamState>) -> Result<()> {
    checkpoint_archive(params, adam).write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, Option<AdamState>)> {
    let a = Archive::read(path)?;
    let mut params = ParamSet::new();
    for (name, t) in &a.entries {
        if !name.starts_with(ADAM_PREFIX) {
            params.insert(name.clone(), t.to_tensor()?)?;
        }
    }
    let adam = match a.get("adam.config") {
        None => None,
        Some(cfg) => {
            let c = cfg.to_f64();
            if c.len() != 4 {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: 0,
                    reason: "adam.config must hold 4 values".into(),
                });
            }
            let mut st = AdamState::new(AdamConfig {
                learning_rate: c[0],
                beta1: c[1],
                beta2: c[2],
                epsilon: c[3],
            });
            st.step = a.require("adam.step", path)?.to_f64()[0] as u64;
            for (name, t) in &a.entries {
                if let Some(p) = name.strip_prefix("adam.m.") {
                    st.first_moment.insert(p.to_string(), t.to_tensor()?);
                } else if let Some(p) = name.strip_prefix("adam.v.") {
                    st.second_moment.insert(p.to_string(), t.to_tensor()?);
                }
            }
            Some(st)
        }
    };
    Ok((params, adam))
}

/// A data volume with its sampling frequency, source ids and mask.
pub fn fmc_archive(f: &FmcData) -> Archive {
    let [n_t, n_s, n_r] = f.dims();
    let mut a = Archive::new();
    a.insert("samples", TensorFile::f64(&[n_t, n_s, n_r], f.samples().to_vec()).unwrap());
    a.insert("sampling_frequency_hz", TensorFile::f64(&[1], vec![f.sampling_frequency()]).unwrap());
    let ids = f.source_ids().iter().map(|&s| s as f64).collect();
    a.insert("source_ids", TensorFile::f64(&[n_s], ids).unwrap());
    let mask = f.active_sources().iter().map(|&b| u8::from(b)).collect();
    a.insert("active_sources", TensorFile::u8(&[n_s], mask).unwrap());
    a
}

pub fn save_fmc(path: &Path, f: &FmcData) -> Result<()> {
    fmc_archive(f).write(path)
}

pub fn load_fmc(path: &Path) -> Result<FmcData> {
    let a = Archive::read(path)?;
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), offset: 0, reason };
    let s = a.require("samples", path)?;
    let &[n_t, n_s, n_r] = s.dims() else {
        return Err(bad(format!("samples must be 3-D, got {:?}", s.dims())));
    };
    let fs = a.require("sampling_frequency_hz", path)?.to_f64();
    let ids = a.require("source_ids", path)?.to_f64();
    let mask = a.require("active_sources", path)?.to_f64();
    if fs.len() != 1 || ids.len() != n_s || mask.len() != n_s {
        return Err(bad("metadata does not match the sample volume".into()));
    }
    let ids = ids.into_iter().map(|v| v as usize).collect();
    let mask = mask.into_iter().map(|v| v != 0.0).collect();
    FmcData::with_mask(n_t, n_r, fs[0], ids, mask, s.to_f64())
}
