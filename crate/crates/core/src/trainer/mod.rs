//! Phased SGD training: Nesterov momentum, plateau-driven decay, noise
//! decay and staged unfreezing, with checkpoints and a metrics log.

pub mod optim;
pub mod schedule;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use orthoseg_tensor::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{assemble_inputs, Prepared, Sample};
use crate::error::data_err;
use crate::network::{build_network, ForwardOptions, Network};
use crate::params::ModelParams;
use crate::{Error, Result};

pub use optim::nesterov_update;
pub use schedule::{Phase, PlateauTracker, Schedule, Transition};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str =
    "iteration,train_loss,val_loss,lr,momentum,phase,noise_scale_encoder,noise_scale_decoder,noise_scale_sccb,unfrozen";

/// Assembled training and validation samples. Every sample has labels.
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn from_prepared(p: &Prepared, cfg: &RunConfig) -> Result<Self> {
        let classes = cfg.network.num_classes;
        let assemble = |tiles: &[crate::data::Raster]| -> Result<Vec<Sample>> {
            tiles
                .iter()
                .map(|t| {
                    let s = assemble_inputs(t, &cfg.data, classes)?;
                    if s.labels.is_none() {
                        return Err(data_err!("training tile without a LABEL channel"));
                    }
                    Ok(s)
                })
                .collect()
        };
        let data = Self {
            train: assemble(&p.train)?,
            val: assemble(&p.val)?,
        };
        if data.train.is_empty() || data.val.is_empty() {
            return Err(data_err!(
                "need training and validation tiles, got {} and {}",
                data.train.len(),
                data.val.len()
            ));
        }
        Ok(data)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub momentum: f64,
    pub phase: Phase,
    pub noise: crate::network::NoiseScale,
    pub unfrozen: Vec<String>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.train_loss,
            self.val_loss,
            self.lr,
            self.momentum,
            self.phase.name(),
            self.noise.encoder,
            self.noise.decoder,
            self.noise.sccb,
            self.unfrozen.join(";")
        )
    }
}

/// Something that happened during [`Trainer::run`].
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Evaluated(MetricsRow),
    Plateau(Transition),
}

pub struct Trainer {
    network: Network,
    config: RunConfig,
    config_text: String,
    params: ModelParams,
    velocities: BTreeMap<String, Tensor>,
    schedule: Schedule,
    tracker: PlateauTracker,
    iteration: u64,
    seed: u64,
    loss_sum: f64,
    loss_count: u64,
    order: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.trainer.validate()?;
        let seed = config.trainer.seed;
        let (network, params) = build_network(&config.network, seed)?;
        let schedule = Schedule::initial(&config.trainer);
        let tracker = PlateauTracker::new(
            config.trainer.plateau_window,
            config.trainer.improvement_threshold,
        );
        let mut t = Self {
            network,
            config_text: config.to_text(),
            config,
            params,
            velocities: BTreeMap::new(),
            schedule,
            tracker,
            iteration: 0,
            seed,
            loss_sum: 0.0,
            loss_count: 0,
            order: None,
        };
        t.apply_freeze()?;
        Ok(t)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config = ck.config()?;
        let network = Network::new(&config.network)?;
        check_params(&network, &ck.params)?;
        let mut t = Self {
            network,
            config_text: ck.config_text,
            config,
            params: ck.params,
            velocities: ck.velocities,
            schedule: ck.schedule,
            tracker: ck.tracker,
            iteration: ck.iteration,
            seed: ck.seed,
            loss_sum: ck.train_loss_sum,
            loss_count: ck.train_loss_count,
            order: None,
        };
        t.apply_freeze()?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_text: self.config_text.clone(),
            iteration: self.iteration,
            schedule: self.schedule.clone(),
            tracker: self.tracker,
            seed: self.seed,
            train_loss_sum: self.loss_sum,
            train_loss_count: self.loss_count,
            params: self.params.clone(),
            velocities: self.velocities.clone(),
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Syncs trainable flags with the schedule's frozen list. Velocities
    /// exist exactly for trainable parameters; newly released ones start
    /// at zero.
    fn apply_freeze(&mut self) -> Result<()> {
        let names: Vec<String> = self.params.names().map(String::from).collect();
        for name in &names {
            let frozen = self.schedule.frozen.iter().any(|f| {
                name.strip_prefix(f.as_str())
                    .is_some_and(|r| r.starts_with('.'))
            });
            self.params.set_trainable(name, !frozen)?;
            if frozen {
                self.velocities.remove(name);
            } else if !self.velocities.contains_key(name) {
                let shape = self.params.tensor(name)?.shape().to_vec();
                self.velocities.insert(name.clone(), Tensor::zeros(&shape));
            }
        }
        for f in &self.schedule.frozen {
            if !names.iter().any(|n| n.starts_with(&format!("{f}."))) {
                return Err(Error::Usage(format!(
                    "frozen block `{f}` matches no parameter"
                )));
            }
        }
        Ok(())
    }

    /// Training sample for an iteration: seeded shuffled epochs.
    fn sample_index(&mut self, iteration: u64, n: usize) -> usize {
        let epoch = iteration / n as u64;
        let stale = self
            .order
            .as_ref()
            .map_or(true, |(e, o)| *e != epoch || o.len() != n);
        if stale {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0f_e90c);
            rng.set_stream(epoch);
            order.shuffle(&mut rng);
            self.order = Some((epoch, order));
        }
        self.order.as_ref().unwrap().1[(iteration % n as u64) as usize]
    }

    /// One optimizer step on one training tile. Returns the (noisy) loss.
    pub fn step(&mut self, data: &Dataset) -> Result<f64> {
        if data.train.is_empty() {
            return Err(data_err!("empty training set"));
        }
        let idx = self.sample_index(self.iteration, data.train.len());
        let sample = &data.train[idx];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.iteration);

        let (loss, grads) = {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g);
            let mut opts = ForwardOptions::training(&mut rng, self.schedule.noise);
            let out = self.network.forward(
                &mut g,
                &p,
                &Var::constant(sample.primary.clone()),
                &Var::constant(sample.auxiliary.clone()),
                &mut opts,
            )?;
            let labels = sample
                .labels
                .as_ref()
                .ok_or_else(|| data_err!("sample without labels"))?;
            let loss = g.cross_entropy_loss(&out.probs, labels)?;
            let value = loss.value().data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at iteration {}",
                    self.iteration
                )));
            }
            let mut grads = g.backward(&loss)?;
            let mut taken = Vec::new();
            for (name, var) in p.iter() {
                if self.params.is_trainable(name) {
                    let grad = grads.remove(var).ok_or_else(|| {
                        Error::Numerical(format!("internal: no gradient for trainable {name}"))
                    })?;
                    taken.push((name.clone(), grad));
                }
            }
            (value, taken)
        };

        let lr = self.schedule.lr as f32;
        let mu = self.schedule.momentum as f32;
        for (name, grad) in grads {
            let v = self
                .velocities
                .get_mut(&name)
                .ok_or_else(|| Error::Numerical(format!("internal: no velocity for {name}")))?;
            let theta = self.params.value_mut(&name)?;
            nesterov_update(theta.data_mut(), v.data_mut(), grad.data(), lr, mu);
        }
        self.iteration += 1;
        self.loss_sum += loss;
        self.loss_count += 1;
        Ok(loss)
    }

    /// Mean cross-entropy over samples in inference mode.
    pub fn mean_loss(&self, samples: &[Sample]) -> Result<f64> {
        let mut total = 0.0;
        for s in samples {
            let probs = self
                .network
                .predict(&self.params, &s.primary, &s.auxiliary)?;
            let labels = s
                .labels
                .as_ref()
                .ok_or_else(|| data_err!("sample without labels"))?;
            let mut g = Graph::inference();
            total += g
                .cross_entropy_loss(&Var::constant(probs), labels)?
                .value()
                .data()[0] as f64;
        }
        Ok(total / samples.len().max(1) as f64)
    }

    /// Fraction of correctly labelled pixels at network resolution.
    pub fn pixel_accuracy(&self, samples: &[Sample]) -> Result<f64> {
        let (mut right, mut total) = (0usize, 0usize);
        for s in samples {
            let probs = self
                .network
                .predict(&self.params, &s.primary, &s.auxiliary)?;
            let labels = s
                .labels
                .as_ref()
                .ok_or_else(|| data_err!("sample without labels"))?;
            let pred = crate::inference::argmax_channels(&probs)?;
            right += pred
                .iter()
                .zip(labels)
                .filter(|(p, l)| **p as usize == **l)
                .count();
            total += labels.len();
        }
        Ok(right as f64 / total.max(1) as f64)
    }

    /// Evaluates, updates the plateau tracker and applies any transition.
    /// Returns the row and whether the validation loss was a new best.
    pub fn evaluate(
        &mut self,
        data: &Dataset,
        events: &mut dyn FnMut(Event),
    ) -> Result<(MetricsRow, bool)> {
        let val_loss = self.mean_loss(&data.val)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation loss at iteration {}",
                self.iteration
            )));
        }
        let before = self.tracker.best_loss;
        let fired = self.tracker.observe(self.iteration, val_loss);
        let improved = self.tracker.best_loss < before;
        let row = MetricsRow {
            iteration: self.iteration,
            train_loss: if self.loss_count == 0 {
                f64::NAN
            } else {
                self.loss_sum / self.loss_count as f64
            },
            val_loss,
            lr: self.schedule.lr,
            momentum: self.schedule.momentum,
            phase: self.schedule.phase,
            noise: self.schedule.noise,
            unfrozen: self.schedule.unfrozen(&self.config.trainer),
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        events(Event::Evaluated(row.clone()));
        if fired {
            let t = self.schedule.on_plateau(&self.config.trainer);
            self.apply_freeze()?;
            events(Event::Plateau(t));
        }
        Ok((row, improved))
    }

    /// Trains until `iterations` total steps. With `out`, appends to the
    /// metrics log and writes checkpoints there; a non-finite loss leaves a
    /// `diagnostic.ckpt` behind.
    pub fn run(
        &mut self,
        data: &Dataset,
        iterations: u64,
        out: Option<&Path>,
        events: &mut dyn FnMut(Event),
    ) -> Result<()> {
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let cfg = self.config.trainer.clone();
        while self.iteration < iterations {
            if let Err(e) = self.step(data) {
                if let (Error::Numerical(_), Some(dir)) = (&e, out) {
                    self.checkpoint().save(&dir.join("diagnostic.ckpt"))?;
                }
                return Err(e);
            }
            if self.iteration % cfg.eval_interval == 0 {
                let (row, improved) = match self.evaluate(data, events) {
                    Err(e @ Error::Numerical(_)) => {
                        if let Some(dir) = out {
                            self.checkpoint().save(&dir.join("diagnostic.ckpt"))?;
                        }
                        return Err(e);
                    }
                    other => other?,
                };
                if let Some(dir) = out {
                    append_metrics(&dir.join(METRICS_FILE), &row)?;
                    if improved {
                        self.checkpoint().save(&dir.join("best.ckpt"))?;
                    }
                }
            }
            if let Some(dir) = out {
                if cfg.checkpoint_interval > 0 && self.iteration % cfg.checkpoint_interval == 0 {
                    self.checkpoint()
                        .save(&dir.join(format!("checkpoint_{:08}.ckpt", self.iteration)))?;
                }
            }
        }
        if let Some(dir) = out {
            self.checkpoint().save(&dir.join("final.ckpt"))?;
        }
        Ok(())
    }
}

/// Verifies that `params` holds exactly the network's tensors, shapes included.
pub fn check_params(network: &Network, params: &ModelParams) -> Result<()> {
    let mut expected = 0;
    for l in network.layers() {
        for (name, shape) in [
            (
                format!("{}.weights", l.name),
                vec![l.out_c, l.in_c, l.kernel, l.kernel],
            ),
            (format!("{}.bias", l.name), vec![l.out_c]),
        ] {
            let got = params
                .get(&name)
                .ok_or_else(|| data_err!("checkpoint lacks parameter {name}"))?;
            if got.value.shape() != shape.as_slice() {
                return Err(data_err!(
                    "{name}: shape {:?} does not fit the configured network's {shape:?}",
                    got.value.shape()
                ));
            }
            expected += 1;
        }
    }
    if params.len() != expected {
        return Err(data_err!(
            "checkpoint holds parameters the network does not use"
        ));
    }
    Ok(())
}

fn append_metrics(path: &Path, row: &MetricsRow) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    text.push_str(&row.to_csv());
    text.push('\n');
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}
