//! Architecture, training and data settings, and the flat `key = value`
//! run-configuration format that carries them.
//!
//! Defaults are the full-size benchmark setting: filter widths, the
//! noise-rate table, SGD hyperparameters and tiling geometry for
//! 6000x6000 scenes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::config_err;
use crate::Result;

/// Channels fed to each encoder (IR-R-G and B-NDVI-DSM).
pub const ENCODER_INPUT_CHANNELS: usize = 3;

/// Dilated branches and 1x1 layers of the spatial correlation correction block.
#[derive(Debug, Clone, PartialEq)]
pub struct SccbConfig {
    pub pool_size: usize,
    /// `(dilation, filters)` per parallel 3x3 branch.
    pub branches: Vec<(usize, usize)>,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
}

/// Base noiserates, before any schedule decay.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    /// `(max input feature maps, rate)`, ascending. Wider inputs use the last band.
    pub bands: Vec<(usize, f64)>,
    pub residual: f64,
    pub sccb: f64,
}

impl NoiseTable {
    pub fn rate_for(&self, channels: usize) -> f64 {
        self.bands
            .iter()
            .find(|(max, _)| channels <= *max)
            .or(self.bands.last())
            .map_or(0.0, |&(_, r)| r)
    }
}

impl Default for NoiseTable {
    fn default() -> Self {
        Self {
            bands: vec![(64, 0.0625), (128, 0.125), (256, 0.1875), (512, 0.25)],
            residual: 0.0625,
            sccb: 0.0625,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub num_encoder_blocks: usize,
    pub primary_filters: Vec<usize>,
    pub auxiliary_filters: Vec<usize>,
    pub decoder_filters: usize,
    pub decoder_dilation: usize,
    pub num_additional_residual_blocks: usize,
    pub moving_average_size: usize,
    pub sccb: SccbConfig,
    pub num_classes: usize,
    pub input_scale_divisor: f64,
    pub output_scale_divisor: f64,
    pub noise: NoiseTable,
}

impl NetworkConfig {
    /// The seven-block instance for full-size scenes.
    pub fn benchmark() -> Self {
        Self {
            num_encoder_blocks: 7,
            primary_filters: vec![64, 128, 256, 512, 512, 512, 512],
            auxiliary_filters: vec![64, 128, 256, 256, 256, 256, 256],
            decoder_filters: 300,
            decoder_dilation: 2,
            num_additional_residual_blocks: 1,
            moving_average_size: 5,
            sccb: SccbConfig {
                pool_size: 5,
                branches: vec![(5, 25), (11, 25)],
                conv1_filters: 6,
                conv2_filters: 6,
            },
            num_classes: 6,
            input_scale_divisor: 6.0,
            output_scale_divisor: 20.0,
            noise: NoiseTable::default(),
        }
    }

    /// Three-block network small enough to train on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            num_encoder_blocks: 3,
            primary_filters: vec![16, 32, 64],
            auxiliary_filters: vec![16, 32, 32],
            decoder_filters: 32,
            sccb: SccbConfig {
                branches: vec![(5, 8), (11, 8)],
                ..Self::benchmark().sccb
            },
            ..Self::benchmark()
        }
    }

    /// Extents must be divisible by this.
    pub fn required_divisor(&self) -> usize {
        1 << self.num_encoder_blocks
    }

    /// 3x3 convolutions in an encoder block (1-based): two in the first two
    /// blocks, three from the third on.
    pub fn convs_in_block(block: usize) -> usize {
        if block <= 2 {
            2
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_encoder_blocks;
        if n == 0 {
            return Err(config_err!("at least one encoder block is required"));
        }
        if n > 12 {
            return Err(config_err!(
                "{n} encoder blocks is beyond any usable raster size"
            ));
        }
        for (side, f) in [
            ("primary", &self.primary_filters),
            ("auxiliary", &self.auxiliary_filters),
        ] {
            if f.len() != n {
                return Err(config_err!(
                    "{side}_filters lists {} widths for {n} encoder blocks",
                    f.len()
                ));
            }
            if f.contains(&0) {
                return Err(config_err!("{side}_filters contains a zero width"));
            }
        }
        if self.decoder_filters == 0 || self.num_classes == 0 {
            return Err(config_err!(
                "decoder_filters and num_classes must be positive"
            ));
        }
        if self.decoder_dilation == 0 || self.moving_average_size == 0 || self.sccb.pool_size == 0 {
            return Err(config_err!("dilation and window sizes must be positive"));
        }
        if self.sccb.branches.is_empty()
            || self.sccb.branches.iter().any(|&(d, f)| d == 0 || f == 0)
        {
            return Err(config_err!(
                "sccb needs at least one branch with positive dilation and width"
            ));
        }
        if self.sccb.conv1_filters == 0 {
            return Err(config_err!("sccb conv1 width must be positive"));
        }
        if self.sccb.conv2_filters != self.num_classes {
            return Err(config_err!(
                "sccb conv2 produces decision activations and needs {} filters, not {}",
                self.num_classes,
                self.sccb.conv2_filters
            ));
        }
        if !(self.input_scale_divisor > 0.0 && self.output_scale_divisor > 0.0) {
            return Err(config_err!("scale divisors must be positive"));
        }
        let rates = self
            .noise
            .bands
            .iter()
            .map(|b| b.1)
            .chain([self.noise.residual, self.noise.sccb]);
        for r in rates {
            if !(0.0..1.0).contains(&r) {
                return Err(config_err!("noiserate {r} outside [0, 1)"));
            }
        }
        if self.noise.bands.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(config_err!("noise bands must be strictly ascending"));
        }
        Ok(())
    }
}

/// Multiplicative decay applied to the three noise regions at each
/// fine-tuning plateau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDecay {
    pub encoder: f64,
    pub decoder: f64,
    pub sccb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub fine_tune_momentum: f64,
    pub lr_decay: f64,
    pub plateau_window: u64,
    pub improvement_threshold: f64,
    pub eval_interval: u64,
    pub max_iterations: u64,
    pub checkpoint_interval: u64,
    pub noise_decay: NoiseDecay,
    /// Parameter-path prefixes frozen at the start of training.
    pub frozen_blocks: Vec<String>,
    /// Blocks released one per fine-tuning plateau, in order.
    pub unfreeze_order: Vec<String>,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.99,
            fine_tune_momentum: 0.999,
            lr_decay: 10.0,
            plateau_window: 25_000,
            improvement_threshold: 1e-6,
            eval_interval: 1_000,
            max_iterations: 350_000,
            checkpoint_interval: 10_000,
            noise_decay: NoiseDecay {
                encoder: 0.75,
                decoder: 0.375,
                sccb: 0.25,
            },
            frozen_blocks: vec![
                "encoder.primary.block1".into(),
                "encoder.primary.block2".into(),
            ],
            unfreeze_order: vec![
                "encoder.primary.block2".into(),
                "encoder.primary.block1".into(),
            ],
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!(
                "learning_rate must be a finite non-negative number"
            ));
        }
        for (name, m) in [
            ("momentum", self.momentum),
            ("fine_tune_momentum", self.fine_tune_momentum),
        ] {
            if !(0.0..1.0).contains(&m) {
                return Err(config_err!("{name} must lie in [0, 1)"));
            }
        }
        if self.lr_decay < 1.0 {
            return Err(config_err!("lr_decay must be >= 1"));
        }
        if self.eval_interval == 0 || self.plateau_window == 0 {
            return Err(config_err!(
                "eval_interval and plateau_window must be positive"
            ));
        }
        let d = self.noise_decay;
        if [d.encoder, d.decoder, d.sccb]
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(config_err!("noise decay factors must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub tile_size: usize,
    pub overlap: f64,
    pub val_fraction: f64,
    pub optical_divisor: f64,
    pub dsm_divisor: f64,
    pub infer_tile: usize,
    pub infer_stride: usize,
    pub infer_center: usize,
    /// Output directory of `prepare`, read by `train`.
    pub tiles_dir: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            tile_size: 1024,
            overlap: 0.66,
            val_fraction: 0.10,
            optical_divisor: 100.0,
            dsm_divisor: 35.0,
            infer_tile: 1024,
            infer_stride: 256,
            infer_center: 512,
            tiles_dir: String::new(),
        }
    }
}

/// Everything a run needs, serialized as sorted `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub trainer: TrainerConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::benchmark(),
            trainer: TrainerConfig::default(),
            data: DataConfig::default(),
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn pairs<A: ToString, B: ToString>(v: &[(A, B)]) -> String {
    v.iter()
        .map(|(a, b)| format!("{}:{}", a.to_string(), b.to_string()))
        .collect::<Vec<_>>()
        .join(",")
}

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Result<String> {
        self.map
            .remove(key)
            .ok_or_else(|| config_err!("missing key `{key}`"))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.take(key)?;
        raw.parse()
            .map_err(|_| config_err!("`{key}`: cannot parse `{raw}`"))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        let raw = self.take(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| config_err!("`{key}`: bad element `{s}`"))
            })
            .collect()
    }

    fn pair_list<A: std::str::FromStr, B: std::str::FromStr>(
        &mut self,
        key: &str,
    ) -> Result<Vec<(A, B)>> {
        let raw = self.take(key)?;
        raw.split(',')
            .map(|item| {
                let (a, b) = item
                    .split_once(':')
                    .ok_or_else(|| config_err!("`{key}`: expected `a:b`, got `{item}`"))?;
                let a = a
                    .trim()
                    .parse()
                    .map_err(|_| config_err!("`{key}`: bad `{item}`"))?;
                let b = b
                    .trim()
                    .parse()
                    .map_err(|_| config_err!("`{key}`: bad `{item}`"))?;
                Ok((a, b))
            })
            .collect()
    }
}

impl RunConfig {
    /// Desk-scale preset: small network, short run, small tiles.
    pub fn desk() -> Self {
        Self {
            network: NetworkConfig::desk(),
            trainer: TrainerConfig {
                max_iterations: 5_000,
                checkpoint_interval: 1_000,
                ..TrainerConfig::default()
            },
            data: DataConfig {
                tile_size: 64,
                overlap: 0.5,
                infer_tile: 128,
                infer_stride: 32,
                infer_center: 64,
                ..DataConfig::default()
            },
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let n = &self.network;
        let t = &self.trainer;
        let d = &self.data;
        let entries: Vec<(&str, String)> = vec![
            (
                "network.num_encoder_blocks",
                n.num_encoder_blocks.to_string(),
            ),
            ("network.primary_filters", join(&n.primary_filters)),
            ("network.auxiliary_filters", join(&n.auxiliary_filters)),
            ("network.decoder_filters", n.decoder_filters.to_string()),
            ("network.decoder_dilation", n.decoder_dilation.to_string()),
            (
                "network.additional_residual_blocks",
                n.num_additional_residual_blocks.to_string(),
            ),
            (
                "network.moving_average_size",
                n.moving_average_size.to_string(),
            ),
            ("network.num_classes", n.num_classes.to_string()),
            (
                "network.input_scale_divisor",
                n.input_scale_divisor.to_string(),
            ),
            (
                "network.output_scale_divisor",
                n.output_scale_divisor.to_string(),
            ),
            ("network.sccb.pool_size", n.sccb.pool_size.to_string()),
            ("network.sccb.branches", pairs(&n.sccb.branches)),
            (
                "network.sccb.conv1_filters",
                n.sccb.conv1_filters.to_string(),
            ),
            (
                "network.sccb.conv2_filters",
                n.sccb.conv2_filters.to_string(),
            ),
            ("network.noise.bands", pairs(&n.noise.bands)),
            ("network.noise.residual", n.noise.residual.to_string()),
            ("network.noise.sccb", n.noise.sccb.to_string()),
            ("trainer.learning_rate", t.learning_rate.to_string()),
            ("trainer.momentum", t.momentum.to_string()),
            (
                "trainer.fine_tune_momentum",
                t.fine_tune_momentum.to_string(),
            ),
            ("trainer.lr_decay", t.lr_decay.to_string()),
            ("trainer.plateau_window", t.plateau_window.to_string()),
            (
                "trainer.improvement_threshold",
                t.improvement_threshold.to_string(),
            ),
            ("trainer.eval_interval", t.eval_interval.to_string()),
            ("trainer.max_iterations", t.max_iterations.to_string()),
            (
                "trainer.checkpoint_interval",
                t.checkpoint_interval.to_string(),
            ),
            (
                "trainer.noise_decay.encoder",
                t.noise_decay.encoder.to_string(),
            ),
            (
                "trainer.noise_decay.decoder",
                t.noise_decay.decoder.to_string(),
            ),
            ("trainer.noise_decay.sccb", t.noise_decay.sccb.to_string()),
            ("trainer.frozen_blocks", t.frozen_blocks.join(",")),
            ("trainer.unfreeze_order", t.unfreeze_order.join(",")),
            ("trainer.seed", t.seed.to_string()),
            ("data.tile_size", d.tile_size.to_string()),
            ("data.overlap", d.overlap.to_string()),
            ("data.val_fraction", d.val_fraction.to_string()),
            ("data.optical_divisor", d.optical_divisor.to_string()),
            ("data.dsm_divisor", d.dsm_divisor.to_string()),
            ("data.infer_tile", d.infer_tile.to_string()),
            ("data.infer_stride", d.infer_stride.to_string()),
            ("data.infer_center", d.infer_center.to_string()),
            ("data.tiles_dir", d.tiles_dir.clone()),
        ];
        entries
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let mut f = Fields { map };
        let network = NetworkConfig {
            num_encoder_blocks: f.parse("network.num_encoder_blocks")?,
            primary_filters: f.list("network.primary_filters")?,
            auxiliary_filters: f.list("network.auxiliary_filters")?,
            decoder_filters: f.parse("network.decoder_filters")?,
            decoder_dilation: f.parse("network.decoder_dilation")?,
            num_additional_residual_blocks: f.parse("network.additional_residual_blocks")?,
            moving_average_size: f.parse("network.moving_average_size")?,
            num_classes: f.parse("network.num_classes")?,
            input_scale_divisor: f.parse("network.input_scale_divisor")?,
            output_scale_divisor: f.parse("network.output_scale_divisor")?,
            sccb: SccbConfig {
                pool_size: f.parse("network.sccb.pool_size")?,
                branches: f.pair_list("network.sccb.branches")?,
                conv1_filters: f.parse("network.sccb.conv1_filters")?,
                conv2_filters: f.parse("network.sccb.conv2_filters")?,
            },
            noise: NoiseTable {
                bands: f.pair_list("network.noise.bands")?,
                residual: f.parse("network.noise.residual")?,
                sccb: f.parse("network.noise.sccb")?,
            },
        };
        let trainer = TrainerConfig {
            learning_rate: f.parse("trainer.learning_rate")?,
            momentum: f.parse("trainer.momentum")?,
            fine_tune_momentum: f.parse("trainer.fine_tune_momentum")?,
            lr_decay: f.parse("trainer.lr_decay")?,
            plateau_window: f.parse("trainer.plateau_window")?,
            improvement_threshold: f.parse("trainer.improvement_threshold")?,
            eval_interval: f.parse("trainer.eval_interval")?,
            max_iterations: f.parse("trainer.max_iterations")?,
            checkpoint_interval: f.parse("trainer.checkpoint_interval")?,
            noise_decay: NoiseDecay {
                encoder: f.parse("trainer.noise_decay.encoder")?,
                decoder: f.parse("trainer.noise_decay.decoder")?,
                sccb: f.parse("trainer.noise_decay.sccb")?,
            },
            frozen_blocks: f.list("trainer.frozen_blocks")?,
            unfreeze_order: f.list("trainer.unfreeze_order")?,
            seed: f.parse("trainer.seed")?,
        };
        let data = DataConfig {
            tile_size: f.parse("data.tile_size")?,
            overlap: f.parse("data.overlap")?,
            val_fraction: f.parse("data.val_fraction")?,
            optical_divisor: f.parse("data.optical_divisor")?,
            dsm_divisor: f.parse("data.dsm_divisor")?,
            infer_tile: f.parse("data.infer_tile")?,
            infer_stride: f.parse("data.infer_stride")?,
            infer_center: f.parse("data.infer_center")?,
            tiles_dir: f.take("data.tiles_dir")?,
        };
        debug_assert!(f.map.is_empty());
        let cfg = Self {
            network,
            trainer,
            data,
        };
        cfg.network.validate()?;
        cfg.trainer.validate()?;
        Ok(cfg)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    /// Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::default().to_map();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim();
            match map.get_mut(key) {
                Some(slot) => *slot = value.trim().to_string(),
                None => return Err(config_err!("line {}: unknown key `{key}`", lineno + 1)),
            }
        }
        Self::from_map(map)
    }

    /// Canonical text: every key, sorted, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
