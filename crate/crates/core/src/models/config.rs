use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::record::{List, Record, RecordWriter};

/// Classification head arrangement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HeadConfig {
    /// One binary head for both tasks; attacks of either task are class 0.
    #[default]
    Shared2,
    /// One 3-way head: bonafide, spoof attack, forgery attack.
    Shared3,
    /// One binary head per task, routed by task id.
    Separate2,
}

impl HeadConfig {
    pub fn outputs(self) -> usize {
        match self {
            HeadConfig::Shared3 => 3,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadConfig::Shared2 => "1h2c",
            HeadConfig::Shared3 => "1h3c",
            HeadConfig::Separate2 => "2h2c",
        }
    }
}

impl fmt::Display for HeadConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1h2c" | "shared_1head_2class" => Ok(HeadConfig::Shared2),
            "1h3c" | "shared_1head_3class" => Ok(HeadConfig::Shared3),
            "2h2c" | "separate_2heads_2class" => Ok(HeadConfig::Separate2),
            _ => Err(Error::Config(format!(
                "unknown head mode '{s}' (expected 1h2c|1h3c|2h2c)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Fusion {
    None,
    Concat,
    #[default]
    WeightedNorm,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::None => "none",
            Fusion::Concat => "concat",
            Fusion::WeightedNorm => "weighted_norm",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Fusion::None),
            "concat" => Ok(Fusion::Concat),
            "weighted_norm" => Ok(Fusion::WeightedNorm),
            _ => Err(Error::Config(format!(
                "unknown fusion '{s}' (expected none|concat|weighted_norm)"
            ))),
        }
    }
}

/// Input branch used when there is no fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Modality {
    Appearance,
    #[default]
    Rppg,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Appearance => "appearance",
            Modality::Rppg => "rppg",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appearance" => Ok(Modality::Appearance),
            "rppg" => Ok(Modality::Rppg),
            _ => Err(Error::Config(format!(
                "unknown modality '{s}' (expected appearance|rppg)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureConfig {
    /// Total conv blocks per encoder.
    pub n_layers: usize,
    /// Leading blocks shared by both tasks.
    pub n_shared: usize,
    pub head: HeadConfig,
    pub fusion: Fusion,
    pub modality: Modality,
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            n_layers: 3,
            n_shared: 2,
            head: HeadConfig::Shared2,
            fusion: Fusion::WeightedNorm,
            modality: Modality::Rppg,
            theta: 0.8,
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

impl ArchitectureConfig {
    pub fn n_specific(&self) -> usize {
        self.n_layers - self.n_shared.min(self.n_layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Parameter("n_layers must be at least 1".into()));
        }
        if self.n_shared > self.n_layers {
            return Err(Error::Parameter(format!(
                "n_shared {} exceeds n_layers {}",
                self.n_shared, self.n_layers
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Parameter(format!("theta {} outside [0, 1]", self.theta)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Parameter(format!(
                "alpha {} and beta {} must be non-negative",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn uses_appearance(&self) -> bool {
        self.fusion != Fusion::None || self.modality == Modality::Appearance
    }

    pub fn uses_rppg(&self) -> bool {
        self.fusion != Fusion::None || self.modality == Modality::Rppg
    }
}

/// One encoder's input handling and width. The stored map is average-pooled
/// by `pool` (height, width) before it reaches the first conv block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Dimensions of the map as stored on disk: `[H, W, 3]` or `[H, W]`.
    pub map_dims: Vec<usize>,
    pub pool: [usize; 2],
    pub block_channels: Vec<usize>,
    pub feature_dim: usize,
}

impl EncoderConfig {
    /// `[channels, height, width]` seen by the first conv block.
    pub fn input_shape(&self) -> [usize; 3] {
        [3, self.map_dims[0] / self.pool[0], self.map_dims[1] / self.pool[1]]
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        let rank_ok = match self.map_dims.len() {
            2 => true,
            3 => self.map_dims[2] == 3,
            _ => false,
        };
        if !rank_ok {
            return Err(Error::Parameter(format!(
                "encoder maps must be [H, W] or [H, W, 3], got {:?}",
                self.map_dims
            )));
        }
        if self.pool.contains(&0) {
            return Err(Error::Parameter("stem pool factors must be positive".into()));
        }
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return Err(Error::Parameter(format!(
                "encoder needs at least one block with positive width, got {:?}",
                self.block_channels
            )));
        }
        if self.block_channels.len() != n_layers {
            return Err(Error::Parameter(format!(
                "encoder has {} blocks but n_layers is {n_layers}",
                self.block_channels.len()
            )));
        }
        if self.feature_dim < 2 {
            return Err(Error::Parameter(format!("feature_dim {} < 2", self.feature_dim)));
        }
        let [_, h, w] = self.input_shape();
        let min = 1usize << self.block_channels.len();
        if h < min || w < min {
            return Err(Error::Parameter(format!(
                "pooled input {h}x{w} too small for {} blocks (need ≥ {min}x{min})",
                self.block_channels.len()
            )));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub arch: ArchitectureConfig,
    pub block_channels: Vec<usize>,
    pub feature_dim: usize,
    pub app_dims: Vec<usize>,
    pub app_pool: [usize; 2],
    pub mst_dims: Vec<usize>,
    pub mst_pool: [usize; 2],
    pub wav_dims: Vec<usize>,
    pub wav_pool: [usize; 2],
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: ArchitectureConfig::default(),
            block_channels: vec![4, 8, 16],
            feature_dim: 128,
            app_dims: vec![32, 32, 3],
            app_pool: [1, 1],
            mst_dims: vec![63, 300, 3],
            mst_pool: [3, 4],
            wav_dims: vec![236, 300],
            wav_pool: [8, 10],
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    fn encoder(&self, dims: &[usize], pool: [usize; 2]) -> EncoderConfig {
        EncoderConfig {
            map_dims: dims.to_vec(),
            pool,
            block_channels: self.block_channels.clone(),
            feature_dim: self.feature_dim,
        }
    }

    pub fn app_encoder(&self) -> EncoderConfig {
        self.encoder(&self.app_dims, self.app_pool)
    }

    pub fn mst_encoder(&self) -> EncoderConfig {
        self.encoder(&self.mst_dims, self.mst_pool)
    }

    pub fn wav_encoder(&self) -> EncoderConfig {
        self.encoder(&self.wav_dims, self.wav_pool)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let n = self.arch.n_layers;
        if self.arch.uses_appearance() {
            self.app_encoder().validate(n)?;
        }
        if self.arch.uses_rppg() {
            self.mst_encoder().validate(n)?;
            self.wav_encoder().validate(n)?;
        }
        Ok(())
    }

    pub fn to_record(&self) -> String {
        let mut w = RecordWriter::new();
        self.write_fields(&mut w);
        w.put("init_seed", self.init_seed);
        w.finish()
    }

    /// Writes every key except `init_seed`.
    pub fn write_fields(&self, w: &mut RecordWriter) {
        let pool = |p: [usize; 2]| List(p.to_vec());
        let a = &self.arch;
        w.put("fusion", a.fusion)
            .put("modality", a.modality)
            .put("heads", a.head)
            .put("n_layers", a.n_layers)
            .put("n_shared", a.n_shared)
            .put("theta", a.theta)
            .put("alpha", a.alpha)
            .put("beta", a.beta)
            .put("block_channels", List(self.block_channels.clone()))
            .put("feature_dim", self.feature_dim)
            .put("app_dims", List(self.app_dims.clone()))
            .put("app_pool", pool(self.app_pool))
            .put("mst_dims", List(self.mst_dims.clone()))
            .put("mst_pool", pool(self.mst_pool))
            .put("wav_dims", List(self.wav_dims.clone()))
            .put("wav_pool", pool(self.wav_pool));
    }

    pub fn from_record(text: &str, origin: &Path) -> Result<Self> {
        let mut r = Record::parse(text, origin)?;
        let cfg = Self::take_from(&mut r)?;
        r.finish()?;
        Ok(cfg)
    }

    /// Consumes the model keys of `r`, keeping defaults for absent keys.
    pub fn take_from(r: &mut Record) -> Result<Self> {
        let init_seed = r.take_or("init_seed", Self::default().init_seed)?;
        Ok(Self {
            init_seed,
            ..Self::take_fields(r)?
        })
    }

    /// As [`Self::take_from`] without `init_seed`.
    pub fn take_fields(r: &mut Record) -> Result<Self> {
        let d = Self::default();
        let pool = |r: &mut Record, key: &str, default: [usize; 2]| -> Result<[usize; 2]> {
            match r.take::<List<usize>>(key)? {
                None => Ok(default),
                Some(List(v)) if v.len() == 2 => Ok([v[0], v[1]]),
                Some(List(v)) => Err(Error::Config(format!("'{key}' needs 2 values, got {v:?}"))),
            }
        };
        let dims = |r: &mut Record, key: &str, default: &[usize]| -> Result<Vec<usize>> {
            Ok(r.take::<List<usize>>(key)?.map_or_else(|| default.to_vec(), |l| l.0))
        };
        let arch = ArchitectureConfig {
            fusion: r.take_or("fusion", d.arch.fusion)?,
            modality: r.take_or("modality", d.arch.modality)?,
            head: r.take_or("heads", d.arch.head)?,
            n_layers: r.take_or("n_layers", d.arch.n_layers)?,
            n_shared: r.take_or("n_shared", d.arch.n_shared)?,
            theta: r.take_or("theta", d.arch.theta)?,
            alpha: r.take_or("alpha", d.arch.alpha)?,
            beta: r.take_or("beta", d.arch.beta)?,
        };
        Ok(Self {
            arch,
            block_channels: dims(r, "block_channels", &d.block_channels)?,
            feature_dim: r.take_or("feature_dim", d.feature_dim)?,
            app_dims: dims(r, "app_dims", &d.app_dims)?,
            app_pool: pool(r, "app_pool", d.app_pool)?,
            mst_dims: dims(r, "mst_dims", &d.mst_dims)?,
            mst_pool: pool(r, "mst_pool", d.mst_pool)?,
            wav_dims: dims(r, "wav_dims", &d.wav_dims)?,
            wav_pool: pool(r, "wav_pool", d.wav_pool)?,
            init_seed: d.init_seed,
        })
    }
}
