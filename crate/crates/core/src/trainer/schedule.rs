//! Plateau detection and the phased training schedule.

use crate::config::TrainerConfig;
use crate::network::NoiseScale;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Initial,
    FineTuning,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::FineTuning => "fine_tuning",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Phase::Initial => 0,
            Phase::FineTuning => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Phase> {
        match code {
            0 => Some(Phase::Initial),
            1 => Some(Phase::FineTuning),
            _ => None,
        }
    }
}

/// Fires when validation loss has not improved for `window` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauTracker {
    pub window: u64,
    pub threshold: f64,
    pub best_loss: f64,
    pub best_iteration: u64,
}

impl PlateauTracker {
    pub fn new(window: u64, threshold: f64) -> Self {
        Self {
            window,
            threshold,
            best_loss: f64::INFINITY,
            best_iteration: 0,
        }
    }

    /// Records an evaluation. A loss below `best - threshold` is a new best;
    /// otherwise the tracker fires once `iteration - best_iteration`
    /// reaches the window, and restarts the window from `iteration`.
    pub fn observe(&mut self, iteration: u64, loss: f64) -> bool {
        if loss < self.best_loss - self.threshold {
            self.best_loss = loss;
            self.best_iteration = iteration;
            return false;
        }
        if iteration.saturating_sub(self.best_iteration) >= self.window {
            self.best_iteration = iteration;
            return true;
        }
        false
    }
}

/// Hyperparameters that change over training.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub lr: f64,
    pub momentum: f64,
    pub phase: Phase,
    pub noise: NoiseScale,
    pub plateaus: u32,
    /// Parameter-path prefixes currently frozen.
    pub frozen: Vec<String>,
}

/// What a plateau changed.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub plateau: u32,
    pub lr: f64,
    pub entered_fine_tuning: bool,
    pub noise_decayed: bool,
    pub unfrozen: Option<String>,
}

impl Schedule {
    pub fn initial(cfg: &TrainerConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            momentum: cfg.momentum,
            phase: Phase::Initial,
            noise: NoiseScale::default(),
            plateaus: 0,
            frozen: cfg.frozen_blocks.clone(),
        }
    }

    /// Applies one plateau. The learning rate always drops. The first
    /// plateau enters fine-tuning; every plateau inside fine-tuning decays
    /// the noise and releases the next block in the unfreeze order.
    pub fn on_plateau(&mut self, cfg: &TrainerConfig) -> Transition {
        self.plateaus += 1;
        self.lr /= cfg.lr_decay;
        let mut t = Transition {
            plateau: self.plateaus,
            lr: self.lr,
            entered_fine_tuning: false,
            noise_decayed: false,
            unfrozen: None,
        };
        match self.phase {
            Phase::Initial => {
                self.phase = Phase::FineTuning;
                self.momentum = cfg.fine_tune_momentum;
                t.entered_fine_tuning = true;
            }
            Phase::FineTuning => {
                let d = cfg.noise_decay;
                self.noise.encoder *= d.encoder;
                self.noise.decoder *= d.decoder;
                self.noise.sccb *= d.sccb;
                t.noise_decayed = true;
                let released = (self.plateaus - 2) as usize;
                if let Some(block) = cfg.unfreeze_order.get(released) {
                    self.frozen.retain(|f| f != block);
                    t.unfrozen = Some(block.clone());
                }
            }
        }
        t
    }

    /// Blocks from the unfreeze order that have been released so far.
    pub fn unfrozen(&self, cfg: &TrainerConfig) -> Vec<String> {
        cfg.unfreeze_order
            .iter()
            .filter(|b| !self.frozen.contains(b))
            .cloned()
            .collect()
    }
}
