//! Adam training loop with dev-driven learning-rate decay and early stopping.
//!
//! After every epoch the mean dev loss decides two things: if it is higher
//! than the best dev loss seen so far the learning rate is multiplied by
//! `lr_decay`, and once `min_epochs` have run, training stops when the
//! relative reduction against the previous epoch falls below `rel_tol`.
//! The weights with the lowest dev loss are kept as the result.
//!
//! Every epoch draws its shuffle from `(seed, epoch)`, so a run resumed from
//! a saved state continues exactly as the uninterrupted run would have.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::Example;
use crate::losses::{LossKind, LossWeights};
use crate::net::{self, Gradients, Model, NetConfig, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub min_epochs: usize,
    /// Hard cap on epochs regardless of the stopping rule.
    pub max_epochs: usize,
    pub rel_tol: f64,
    pub loss: LossKind,
    pub weights: LossWeights,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global-norm clipping threshold; 0 disables.
    pub clip_norm: f64,
    /// Truncate the phase-sensitive target's cosine to [0, 1].
    pub psm_clamp: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.0005,
            lr_decay: 0.7,
            batch_size: 16,
            min_epochs: 30,
            max_epochs: 100,
            rel_tol: 0.01,
            loss: LossKind::Mtsal,
            weights: LossWeights::default(),
            seed: 0,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            psm_clamp: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad(format!("lr_decay must be in (0, 1), got {}", self.lr_decay));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 || self.max_epochs < self.min_epochs {
            return bad(format!(
                "max_epochs ({}) must be ≥ max(1, min_epochs = {})",
                self.max_epochs, self.min_epochs
            ));
        }
        if !(self.rel_tol >= 0.0) {
            return bad("rel_tol must be non-negative".into());
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam needs 0 ≤ β < 1 and ε > 0".into());
        }
        self.weights.validate()
    }
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts the step
/// before anything is modified.
pub fn adam_step(
    params: &mut [f64],
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.values.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(vec![params.len()], vec![grads.values.len()]));
    }
    if let Some(i) = grads.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(format!("parameter index {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(&grads.values)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Scale `g` down to `max_norm` if its global norm exceeds it. Returns the
/// norm before clipping.
pub fn clip_global_norm(g: &mut Gradients, max_norm: f64) -> f64 {
    let norm = g.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        g.scale(max_norm / norm);
    }
    norm
}

/// Learning-rate and stopping state driven by dev losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr: f64,
    pub decays: u32,
    pub best_dev: Option<f64>,
    pub prev_dev: Option<f64>,
    pub epochs_seen: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    /// Learning rate for the next epoch.
    pub lr: f64,
    pub improved: bool,
    pub stop: bool,
}

impl Schedule {
    pub fn new(lr0: f64) -> Self {
        Self {
            lr: lr0,
            decays: 0,
            best_dev: None,
            prev_dev: None,
            epochs_seen: 0,
        }
    }

    /// Feed the dev loss of the epoch just finished.
    pub fn observe(&mut self, dev_loss: f64, cfg: &TrainConfig) -> ScheduleStep {
        self.epochs_seen += 1;
        let improved = self.best_dev.is_none_or(|b| dev_loss < b);
        if self.best_dev.is_some_and(|b| dev_loss > b) {
            self.lr *= cfg.lr_decay;
            self.decays += 1;
        }
        let converged = self
            .prev_dev
            .is_some_and(|p| (p - dev_loss) / p.abs() < cfg.rel_tol);
        let stop = self.epochs_seen >= cfg.max_epochs
            || (self.epochs_seen >= cfg.min_epochs && converged);
        if improved {
            self.best_dev = Some(dev_loss);
        }
        self.prev_dev = Some(dev_loss);
        ScheduleStep {
            lr: self.lr,
            improved,
            stop,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub wall_sec: f64,
}

/// Split `lengths.len()` items into minibatches: seeded shuffle, then within
/// groups of four batches sort by length so each batch holds similar
/// lengths, then shuffle the batch order.
pub fn make_batches(lengths: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for bucket in order.chunks_mut(4 * batch_size.max(1)) {
        bucket.sort_by_key(|&i| lengths[i]);
        batches.extend(bucket.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

/// Training position saved next to the weights so a run can resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub format: String,
    pub version: u32,
    pub epoch: usize,
    pub config: TrainConfig,
    pub schedule: Schedule,
    pub adam: AdamState,
    pub best_epoch: Option<usize>,
    pub stopped: bool,
}

const STATE_FORMAT: &str = "spex-trainer-state";

/// File names inside a training output directory.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    /// Latest weights.
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.json")
    }
    /// Weights with the lowest dev loss.
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.json")
    }
    pub fn state(&self) -> PathBuf {
        self.dir.join("optimizer.json")
    }
    pub fn log(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    model: Model,
    best: Model,
    state: TrainerState,
    train: &'a [Example],
    dev: &'a [Example],
    exec: Execution,
    pub history: Vec<EpochLog>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        net_cfg: NetConfig,
        cfg: TrainConfig,
        train: &'a [Example],
        dev: &'a [Example],
        exec: Execution,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || dev.is_empty() {
            return Err(Error::Data("training and dev sets must be nonempty".into()));
        }
        let model = Model::new(net_cfg, cfg.seed)?;
        let state = TrainerState {
            format: STATE_FORMAT.into(),
            version: 1,
            epoch: 0,
            config: cfg,
            schedule: Schedule::new(cfg.lr0),
            adam: AdamState::new(model.param_count()),
            best_epoch: None,
            stopped: false,
        };
        Ok(Self {
            cfg,
            best: model.clone(),
            model,
            state,
            train,
            dev,
            exec,
            history: Vec::new(),
        })
    }

    /// Continue from the files a previous run left in `files.dir`.
    pub fn resume(files: &RunFiles, train: &'a [Example], dev: &'a [Example], exec: Execution) -> Result<Self> {
        let state: TrainerState = read_json(&files.state())?;
        if state.format != STATE_FORMAT {
            return Err(Error::Checkpoint(format!("unknown trainer state format {:?}", state.format)));
        }
        let model = net::load_checkpoint(files.last())?;
        let best = net::load_checkpoint(files.best())?;
        if state.adam.m.len() != model.param_count() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        let history = read_log(&files.log())?;
        Ok(Self {
            cfg: state.config,
            model,
            best,
            state,
            train,
            dev,
            exec,
            history,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn best_model(&self) -> &Model {
        &self.best
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.stopped
    }

    fn samples<'e>(set: &'e [Example], idx: &[usize]) -> Vec<Sample<'e>> {
        idx.iter().map(|&i| set[i].sample()).collect()
    }

    pub fn dev_loss(&self, model: &Model) -> Result<f64> {
        let all: Vec<Sample<'_>> = self.dev.iter().map(Example::sample).collect();
        model.mean_loss(&all, self.cfg.loss, &self.cfg.weights, self.exec)
    }

    /// Run one epoch over the training set and update the schedule.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.state.epoch + 1;
        let lr = self.state.schedule.lr;
        let lengths: Vec<usize> = self.train.iter().map(Example::n_frames).collect();
        let batches = make_batches(&lengths, self.cfg.batch_size, self.cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut clipped = 0usize;
        for idx in &batches {
            let batch = Self::samples(self.train, idx);
            let (loss, mut g) =
                self.model
                    .batch_gradients(&batch, self.cfg.loss, &self.cfg.weights, self.exec)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let norm = clip_global_norm(&mut g, self.cfg.clip_norm);
            if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
                clipped += 1;
                log::debug!("epoch {epoch}: gradient norm {norm:.3} clipped to {}", self.cfg.clip_norm);
            }
            adam_step(&mut self.model.params, &g, &mut self.state.adam, lr, &self.cfg.adam)?;
            loss_sum += loss * idx.len() as f64;
        }
        if clipped > 0 {
            log::info!("epoch {epoch}: clipped {clipped} of {} updates", batches.len());
        }
        let train_loss = loss_sum / self.train.len() as f64;
        let dev_loss = self.dev_loss(&self.model)?;
        if !dev_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let step = self.state.schedule.observe(dev_loss, &self.cfg);
        if step.improved {
            self.best.params.clone_from(&self.model.params);
            self.state.best_epoch = Some(epoch);
        }
        self.state.epoch = epoch;
        self.state.stopped = step.stop;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss,
            dev_loss,
            wall_sec: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train {train_loss:.5} dev {dev_loss:.5}{}",
            if step.improved { " *" } else { "" }
        );
        self.history.push(entry.clone());
        Ok(entry)
    }

    /// Persist weights, best weights and optimizer state; append the log.
    pub fn save(&self, files: &RunFiles) -> Result<()> {
        fs::create_dir_all(&files.dir).map_err(|e| Error::io(&files.dir, e))?;
        net::save_checkpoint(&self.model, files.last())?;
        net::save_checkpoint(&self.best, files.best())?;
        write_json(&files.state(), &self.state)?;
        let mut text = String::new();
        for e in &self.history {
            text.push_str(&serde_json::to_string(e).expect("plain struct serializes"));
            text.push('\n');
        }
        let mut f = fs::File::create(files.log()).map_err(|e| Error::io(files.log(), e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(files.log(), e))
    }

    /// Train until the stopping rule fires, saving after every epoch when
    /// `files` is given.
    pub fn run(&mut self, files: Option<&RunFiles>) -> Result<()> {
        while !self.state.stopped {
            self.run_epoch()?;
            if let Some(f) = files {
                self.save(f)?;
            }
        }
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })
        })
        .collect()
}

/// Train from scratch and return the best-dev model with its log.
pub fn train(
    train: &[Example],
    dev: &[Example],
    net_cfg: NetConfig,
    cfg: TrainConfig,
    exec: Execution,
    files: Option<&RunFiles>,
) -> Result<(Model, Vec<EpochLog>)> {
    let mut t = Trainer::new(net_cfg, cfg, train, dev, exec)?;
    t.run(files)?;
    Ok((t.best, t.history))
}
