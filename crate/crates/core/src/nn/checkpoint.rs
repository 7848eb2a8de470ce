//! Versioned named-tensor checkpoint files.
//!
//! Layout: a text header (`FSCKPT <version>`, `kind <name>`, one
//! `hparam key=value` line per hyperparameter, `tensors <count>`), then per
//! tensor a line `<name> f64 <rows> <cols>` followed by `rows*cols`
//! little-endian doubles.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::graph::Tensor;
use crate::nn::hparams::Hparams;
use crate::nn::params::ParamSet;

const MAGIC: &str = "FSCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub hparams: Hparams,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(kind: &str, hparams: Hparams, params: ParamSet) -> Self {
        Checkpoint { kind: kind.to_string(), hparams, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(format!("{MAGIC} {VERSION}\nkind {}\n", self.kind).as_bytes());
        for (k, v) in &self.hparams {
            out.extend_from_slice(format!("hparam {k}={v}\n").as_bytes());
        }
        out.extend_from_slice(format!("tensors {}\n", self.params.len()).as_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(format!("{name} f64 {} {}\n", t.nrows(), t.ncols()).as_bytes());
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let mut line = String::new();
        let next_line = |r: &mut BufReader<R>, line: &mut String| -> Result<()> {
            line.clear();
            if r.read_line(line)? == 0 {
                return Err(Error::Data("truncated checkpoint header".into()));
            }
            if line.ends_with('\n') {
                line.pop();
            }
            Ok(())
        };
        next_line(&mut r, &mut line)?;
        let version = line
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::Data("not a checkpoint file".into()))?;
        if version != VERSION.to_string() {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        next_line(&mut r, &mut line)?;
        let kind = line
            .strip_prefix("kind ")
            .ok_or_else(|| Error::Data("checkpoint missing kind".into()))?
            .to_string();
        let mut hparams = Hparams::new();
        let count: usize = loop {
            next_line(&mut r, &mut line)?;
            if let Some(kv) = line.strip_prefix("hparam ") {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Data(format!("bad hparam line {kv}")))?;
                hparams.insert(k.to_string(), v.to_string());
            } else if let Some(n) = line.strip_prefix("tensors ") {
                break n.parse().map_err(|_| Error::Data(format!("bad tensor count {n}")))?;
            } else {
                return Err(Error::Data(format!("unexpected checkpoint line {line}")));
            }
        };
        let mut params = ParamSet::new();
        for _ in 0..count {
            next_line(&mut r, &mut line)?;
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 4 || parts[1] != "f64" {
                return Err(Error::Data(format!("bad tensor line {line}")));
            }
            let rows: usize = parts[2].parse().map_err(|_| Error::Data("bad tensor rows".into()))?;
            let cols: usize = parts[3].parse().map_err(|_| Error::Data("bad tensor cols".into()))?;
            let mut buf = vec![0u8; rows * cols * 8];
            r.read_exact(&mut buf)
                .map_err(|_| Error::Data(format!("truncated tensor {}", parts[0])))?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if params.slot(parts[0]).is_some() {
                return Err(Error::Data(format!("duplicate tensor {}", parts[0])));
            }
            params.add(parts[0], Tensor::from_shape_vec((rows, cols), data).expect("sized buffer"));
        }
        Ok(Checkpoint { kind, hparams, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// SHA-256 of the serialized form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

/// SHA-256 of a parameter set's values alone.
pub fn params_hash(params: &ParamSet) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.iter() {
        h.update(name.as_bytes());
        for v in t.iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
