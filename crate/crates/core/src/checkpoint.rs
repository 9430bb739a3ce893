//! On-disk checkpoints.
//!
//! Layout of a checkpoint directory:
//!
//! ```text
//! manifest.tsv   name, shape, dtype, file, byte_offset  (one row per array)
//! meta.tsv       iteration, config_hash, seed, optimizer step counts
//! resolved.cfg   the full training configuration
//! arrays/*.f32   raw little-endian float32 data
//! ```
//!
//! Network parameters are named `<network>/<param>`; optimizer moments
//! `opt/<group>/<m|v>/<network>/<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::config::{TrainConfig, RESOLVED_FILE};
use crate::error::{Error, IoContext, Result};
use crate::models::{NetworkId, Networks};

pub const MANIFEST: &str = "manifest.tsv";
pub const META: &str = "meta.tsv";
const ARRAY_DIR: &str = "arrays";

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Array {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Ok(Self {
            shape: t.dims().to_vec(),
            data: t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?,
        })
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, self.shape.as_slice(), device)?.to_dtype(dtype)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed training iterations.
    pub iteration: u64,
    pub arrays: BTreeMap<String, Array>,
    /// Extra integer metadata (optimizer step counts).
    pub counters: BTreeMap<String, u64>,
}

pub fn param_key(net: NetworkId, name: &str) -> String {
    format!("{}/{}", net.as_str(), name)
}

impl Checkpoint {
    pub fn from_networks(config: &TrainConfig, iteration: u64, nets: &Networks) -> Result<Self> {
        let mut arrays = BTreeMap::new();
        for id in NetworkId::ALL {
            for p in nets.params(id).iter() {
                arrays.insert(
                    param_key(id, &p.name),
                    Array::from_tensor(p.var.as_tensor())?,
                );
            }
        }
        Ok(Self {
            config: config.clone(),
            iteration,
            arrays,
            counters: BTreeMap::new(),
        })
    }

    /// Build the architecture described by the stored config and load every
    /// parameter into it. Missing, extra, or mis-shaped arrays are rejected.
    pub fn networks(&self, dtype: DType, device: &Device) -> Result<Networks> {
        let nets = Networks::new(&self.config.model(), self.config.seed, dtype, device)?;
        let mut expected = 0usize;
        for id in NetworkId::ALL {
            for p in nets.params(id).iter() {
                expected += 1;
                let key = param_key(id, &p.name);
                let arr = self
                    .arrays
                    .get(&key)
                    .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter `{key}`")))?;
                if arr.shape != p.shape() {
                    return Err(Error::invalid(format!(
                        "checkpoint parameter `{key}` has shape {:?}, architecture expects {:?}",
                        arr.shape,
                        p.shape()
                    )));
                }
                p.var.set(&arr.to_tensor(dtype, device)?)?;
            }
        }
        let stored = self
            .arrays
            .keys()
            .filter(|k| !k.starts_with("opt/"))
            .count();
        if stored != expected {
            return Err(Error::invalid(format!(
                "checkpoint holds {stored} network arrays, architecture has {expected}"
            )));
        }
        Ok(nets)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let arr_dir = dir.join(ARRAY_DIR);
        fs::create_dir_all(&arr_dir).with_path(&arr_dir)?;
        let mut manifest = String::from("name\tshape\tdtype\tfile\tbyte_offset\n");
        for (i, (name, arr)) in self.arrays.iter().enumerate() {
            let file = format!("{ARRAY_DIR}/{i:05}.f32");
            let mut bytes = Vec::with_capacity(arr.data.len() * 4);
            for v in &arr.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let path = dir.join(&file);
            fs::write(&path, bytes).with_path(&path)?;
            let shape = arr
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            manifest.push_str(&format!("{name}\t{shape}\tf32\t{file}\t0\n"));
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).with_path(&path)?;
        let mut meta = format!(
            "iteration\t{}\nconfig_hash\t{:016x}\nseed\t{}\n",
            self.iteration,
            self.config.hash(),
            self.config.seed
        );
        for (k, v) in &self.counters {
            meta.push_str(&format!("{k}\t{v}\n"));
        }
        let path = dir.join(META);
        fs::write(&path, meta).with_path(&path)?;
        self.config.write_resolved(dir)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let config = TrainConfig::read_file(&dir.join(RESOLVED_FILE))?;
        let meta_path = dir.join(META);
        let meta = fs::read_to_string(&meta_path).with_path(&meta_path)?;
        let mut iteration = None;
        let mut hash = None;
        let mut counters = BTreeMap::new();
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("{META}: malformed line `{line}`")))?;
            match k {
                "iteration" => iteration = v.parse().ok(),
                "config_hash" => hash = u64::from_str_radix(v, 16).ok(),
                "seed" => {}
                other => {
                    let n = v
                        .parse()
                        .map_err(|_| Error::Format(format!("{META}: bad value for `{other}`")))?;
                    counters.insert(other.to_string(), n);
                }
            }
        }
        let iteration =
            iteration.ok_or_else(|| Error::Format(format!("{META}: missing iteration")))?;
        if hash != Some(config.hash()) {
            return Err(Error::invalid(format!(
                "{}: config hash does not match {RESOLVED_FILE}",
                dir.display()
            )));
        }

        let man_path = dir.join(MANIFEST);
        let manifest = fs::read_to_string(&man_path).with_path(&man_path)?;
        let mut arrays = BTreeMap::new();
        for line in manifest.lines().skip(1).filter(|l| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::Format(format!(
                    "{MANIFEST}: expected 5 columns in `{line}`"
                )));
            }
            if cols[2] != "f32" {
                return Err(Error::Format(format!(
                    "{MANIFEST}: unsupported dtype `{}`",
                    cols[2]
                )));
            }
            let shape = cols[1]
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Format(format!("{MANIFEST}: bad shape `{}`", cols[1])))?;
            let offset: usize = cols[4]
                .parse()
                .map_err(|_| Error::Format(format!("{MANIFEST}: bad offset `{}`", cols[4])))?;
            let path = dir.join(cols[3]);
            let bytes = fs::read(&path).with_path(&path)?;
            let n: usize = shape.iter().product();
            let end = offset + 4 * n;
            if bytes.len() < end {
                return Err(Error::Format(format!(
                    "{}: {} bytes, need {end}",
                    path.display(),
                    bytes.len()
                )));
            }
            let data = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.insert(cols[0].to_string(), Array { shape, data });
        }
        Ok(Self {
            config,
            iteration,
            arrays,
            counters,
        })
    }
}
