//! Training configuration and its flat `key = value` file format.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::losses::LossWeights;
use crate::models::ModelConfig;

pub const RESOLVED_FILE: &str = "resolved.cfg";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub image_size: usize,
    pub d_u: usize,
    pub n_classes: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub ablate_lc: bool,
    pub ablate_ls: bool,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub gen_channels: usize,
    pub gen_blocks: usize,
    pub disc_channels: usize,
    pub enc_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            d_u: 8,
            n_classes: 2,
            lr: 6e-5,
            weights: LossWeights::default(),
            batch_size: 4,
            iterations: 1000,
            seed: 0,
            ablate_lc: false,
            ablate_ls: false,
            checkpoint_every: 0,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            gen_channels: 8,
            gen_blocks: 4,
            disc_channels: 8,
            enc_channels: 8,
        }
    }
}

const KEYS: &[&str] = &[
    "image_size",
    "d_u",
    "n_classes",
    "lr",
    "w_gan",
    "w_cyc",
    "w_kl",
    "w_c",
    "w_s",
    "batch_size",
    "iterations",
    "seed",
    "ablate_lc",
    "ablate_ls",
    "checkpoint_every",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "gen_channels",
    "gen_blocks",
    "disc_channels",
    "enc_channels",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Usage(format!("config key `{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Usage(format!(
            "config key `{key}`: expected true/false, got `{v}`"
        ))),
    }
}

impl TrainConfig {
    /// Small configuration for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            d_u: 4,
            batch_size: 2,
            gen_channels: 4,
            gen_blocks: 2,
            disc_channels: 4,
            enc_channels: 4,
            ..Self::default()
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.image_size,
            channels: 3,
            d_u: self.d_u,
            n_classes: self.n_classes,
            gen_channels: self.gen_channels,
            gen_blocks: self.gen_blocks,
            disc_channels: self.disc_channels,
            enc_channels: self.enc_channels,
        }
    }

    /// Loss weights after ablation switches are applied.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            w_c: if self.ablate_lc {
                0.0
            } else {
                self.weights.w_c
            },
            w_s: if self.ablate_ls {
                0.0
            } else {
                self.weights.w_s
            },
            ..self.weights
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "image_size" => self.image_size = parse_num(key, v)?,
            "d_u" => self.d_u = parse_num(key, v)?,
            "n_classes" => self.n_classes = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "w_gan" => self.weights.w_gan = parse_num(key, v)?,
            "w_cyc" => self.weights.w_cyc = parse_num(key, v)?,
            "w_kl" => self.weights.w_kl = parse_num(key, v)?,
            "w_c" => self.weights.w_c = parse_num(key, v)?,
            "w_s" => self.weights.w_s = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "ablate_lc" => self.ablate_lc = parse_bool(key, v)?,
            "ablate_ls" => self.ablate_ls = parse_bool(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "gen_channels" => self.gen_channels = parse_num(key, v)?,
            "gen_blocks" => self.gen_blocks = parse_num(key, v)?,
            "disc_channels" => self.disc_channels = parse_num(key, v)?,
            "enc_channels" => self.enc_channels = parse_num(key, v)?,
            other => return Err(Error::Usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Check invariants; failures name the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(Error::Usage(format!("config key `{k}`: {why}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be > 0");
        }
        for (k, w) in self.weights.named() {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(k, "loss weights must be >= 0");
            }
        }
        if self.iterations < 1 {
            return bad("iterations", "must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be >= 1");
        }
        if self.image_size < 16 || self.image_size % 8 != 0 || self.image_size > 128 {
            return bad("image_size", "must be a multiple of 8 in [16, 128]");
        }
        if self.d_u < 1 {
            return bad("d_u", "must be >= 1");
        }
        if !(2..=8).contains(&self.n_classes) {
            return bad("n_classes", "must be in [2, 8]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return bad("adam_beta1", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta2", "must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be > 0");
        }
        for (k, v) in [
            ("gen_channels", self.gen_channels),
            ("disc_channels", self.disc_channels),
            ("enc_channels", self.enc_channels),
        ] {
            if v == 0 {
                return bad(k, "must be >= 1");
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = Self::default();
        let explicit_blocks = pairs.iter().any(|(k, _)| k == "gen_blocks");
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        if !explicit_blocks && cfg.image_size >= 128 {
            cfg.gen_blocks = 9;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        line("image_size", self.image_size.to_string());
        line("d_u", self.d_u.to_string());
        line("n_classes", self.n_classes.to_string());
        line("lr", format!("{:e}", self.lr));
        line("w_gan", format!("{:e}", w.w_gan));
        line("w_cyc", format!("{:e}", w.w_cyc));
        line("w_kl", format!("{:e}", w.w_kl));
        line("w_c", format!("{:e}", w.w_c));
        line("w_s", format!("{:e}", w.w_s));
        line("batch_size", self.batch_size.to_string());
        line("iterations", self.iterations.to_string());
        line("seed", self.seed.to_string());
        line("ablate_lc", self.ablate_lc.to_string());
        line("ablate_ls", self.ablate_ls.to_string());
        line("checkpoint_every", self.checkpoint_every.to_string());
        line("adam_beta1", format!("{:e}", self.adam_beta1));
        line("adam_beta2", format!("{:e}", self.adam_beta2));
        line("adam_eps", format!("{:e}", self.adam_eps));
        line("gen_channels", self.gen_channels.to_string());
        line("gen_blocks", self.gen_blocks.to_string());
        line("disc_channels", self.disc_channels.to_string());
        line("enc_channels", self.enc_channels.to_string());
        s
    }

    /// FNV-1a of the canonical text; identifies a configuration in checkpoint metadata.
    pub fn hash(&self) -> u64 {
        self.to_text()
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
            })
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_FILE);
        fs::write(&path, self.to_text()).with_path(&path)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_path(path)?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!("config line {}: expected `key = value`", i + 1))
        })?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Usage(format!("unknown config key `{k}`")));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// File values over defaults, then `overrides` over the file.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).with_path(p)?,
        None => String::new(),
    };
    let mut pairs = parse_pairs(&text)?;
    pairs.extend(overrides.iter().cloned());
    let mut cfg = TrainConfig::default();
    let explicit_blocks = pairs.iter().any(|(k, _)| k == "gen_blocks");
    for (k, v) in &pairs {
        cfg.set(k, v)?;
    }
    if !explicit_blocks && cfg.image_size >= 128 {
        cfg.gen_blocks = 9;
    }
    cfg.validate()?;
    Ok(cfg)
}
