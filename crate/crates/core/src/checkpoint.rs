//! Binary training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OSCK" | u32 version
//! u8 len + digest algorithm name | u8 len + digest of the config text
//! u32 len + canonical config text
//! u64 iteration | u8 phase | f64 lr | f64 momentum | f64 x3 noise scales
//! f64 best loss | u64 best iteration | u32 plateaus
//! u32 count + (u32 len + name) frozen prefixes
//! u64 seed | f64 train-loss sum | u64 train-loss count
//! u32 count + parameter records | u32 count + velocity records
//! record: u32 len + name | u8 trainable | u8 dtype (1 = f32) | u8 rank
//!         | u32 x rank extents | payload
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use orthoseg_tensor::Tensor;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::data_err;
use crate::network::NoiseScale;
use crate::params::ModelParams;
use crate::trainer::schedule::{Phase, PlateauTracker, Schedule};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"OSCK";
const VERSION: u32 = 1;
const DIGEST_ALGORITHM: &str = "sha256";

pub fn config_digest(config_text: &str) -> Vec<u8> {
    Sha256::digest(config_text.as_bytes()).to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub iteration: u64,
    pub schedule: Schedule,
    pub tracker: PlateauTracker,
    pub seed: u64,
    pub train_loss_sum: f64,
    pub train_loss_count: u64,
    pub params: ModelParams,
    pub velocities: BTreeMap<String, Tensor>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str32(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn record(&mut self, name: &str, trainable: bool, t: &Tensor) {
        self.str32(name);
        self.u8(trainable as u8);
        self.u8(1);
        self.u8(t.shape().len() as u8);
        for &d in t.shape() {
            self.u32(d);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(data_err!("checkpoint is truncated"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str32(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| data_err!("checkpoint string is not UTF-8"))
    }
    fn record(&mut self) -> Result<(String, bool, Tensor)> {
        let name = self.str32()?;
        let trainable = self.u8()? != 0;
        let dtype = self.u8()?;
        if dtype != 1 {
            return Err(data_err!("{name}: unsupported dtype code {dtype}"));
        }
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = len
            .and_then(|l| l.checked_mul(4))
            .ok_or_else(|| data_err!("{name}: extents overflow"))?;
        let data = self
            .take(bytes)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| data_err!("{name}: {e}"))?;
        Ok((name, trainable, t))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.u8(DIGEST_ALGORITHM.len() as u8);
        w.0.extend_from_slice(DIGEST_ALGORITHM.as_bytes());
        let digest = config_digest(&self.config_text);
        w.u8(digest.len() as u8);
        w.0.extend_from_slice(&digest);
        w.str32(&self.config_text);
        let s = &self.schedule;
        w.u64(self.iteration);
        w.u8(s.phase.code());
        w.f64(s.lr);
        w.f64(s.momentum);
        for v in [s.noise.encoder, s.noise.decoder, s.noise.sccb] {
            w.f64(v);
        }
        w.f64(self.tracker.best_loss);
        w.u64(self.tracker.best_iteration);
        w.u32(s.plateaus as usize);
        w.u32(s.frozen.len());
        for f in &s.frozen {
            w.str32(f);
        }
        w.u64(self.seed);
        w.f64(self.train_loss_sum);
        w.u64(self.train_loss_count);
        w.u32(self.params.len());
        for (name, p) in self.params.iter() {
            w.record(name, p.trainable, &p.value);
        }
        w.u32(self.velocities.len());
        for (name, v) in &self.velocities {
            w.record(name, true, v);
        }
        w.0
    }

    /// Parses a checkpoint. The tracker's window and threshold come from
    /// the embedded configuration.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        if r.take(4)? != MAGIC {
            return Err(data_err!("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(data_err!("unsupported checkpoint version {version}"));
        }
        let n = r.u8()? as usize;
        let algorithm = r.take(n)?;
        if algorithm != DIGEST_ALGORITHM.as_bytes() {
            return Err(data_err!(
                "unknown digest algorithm {}",
                String::from_utf8_lossy(algorithm)
            ));
        }
        let n = r.u8()? as usize;
        let digest = r.take(n)?.to_vec();
        let config_text = r.str32()?;
        if config_digest(&config_text) != digest {
            return Err(data_err!(
                "checkpoint config digest does not match its embedded config"
            ));
        }
        let config = RunConfig::parse(&config_text)?;
        let iteration = r.u64()?;
        let phase = Phase::from_code(r.u8()?).ok_or_else(|| data_err!("bad phase code"))?;
        let lr = r.f64()?;
        let momentum = r.f64()?;
        let noise = NoiseScale {
            encoder: r.f64()?,
            decoder: r.f64()?,
            sccb: r.f64()?,
        };
        let mut tracker = PlateauTracker::new(
            config.trainer.plateau_window,
            config.trainer.improvement_threshold,
        );
        tracker.best_loss = r.f64()?;
        tracker.best_iteration = r.u64()?;
        let plateaus = r.u32()? as u32;
        let frozen = (0..r.u32()?)
            .map(|_| r.str32())
            .collect::<Result<Vec<_>>>()?;
        let seed = r.u64()?;
        let train_loss_sum = r.f64()?;
        let train_loss_count = r.u64()?;
        let mut params = ModelParams::new();
        for _ in 0..r.u32()? {
            let (name, trainable, t) = r.record()?;
            params.insert(name.clone(), t)?;
            if !trainable {
                params.set_trainable(&name, false)?;
            }
        }
        let mut velocities = BTreeMap::new();
        for _ in 0..r.u32()? {
            let (name, _, t) = r.record()?;
            if velocities.insert(name.clone(), t).is_some() {
                return Err(data_err!("duplicate velocity {name}"));
            }
        }
        if !r.0.is_empty() {
            return Err(data_err!("{} trailing bytes in checkpoint", r.0.len()));
        }
        Ok(Self {
            config_text,
            iteration,
            schedule: Schedule {
                lr,
                momentum,
                phase,
                noise,
                plateaus,
                frozen,
            },
            tracker,
            seed,
            train_loss_sum,
            train_loss_count,
            params,
            velocities,
        })
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config_text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint. When `expected` is given, its canonical text must
    /// hash to the stored digest unless `allow_mismatch` is set.
    pub fn load(path: &Path, expected: Option<&RunConfig>, allow_mismatch: bool) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(cfg) = expected {
            if !allow_mismatch && config_digest(&cfg.to_text()) != config_digest(&ck.config_text) {
                return Err(Error::Config(format!(
                    "{}: checkpoint was written under a different configuration",
                    path.display()
                )));
            }
        }
        Ok(ck)
    }
}

/// Parameters of a checkpoint file, for weight import.
pub fn read_weights(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    Ok(Checkpoint::load(path, None, true)?.params.export())
}
