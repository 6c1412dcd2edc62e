//! Training loop with periodic validation, top-k checkpoint averaging and
//! resumable state.
//!
//! Every random draw at step `s` comes from streams derived from the root
//! seed and `s` (`batch/<epoch>`, `dropout/<s>`), so a resumed run replays
//! the uninterrupted one exactly when the parameters are stored losslessly
//! (32-bit training; 64-bit runs are rounded to 32 bits on disk).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Batch, Example, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{read_checkpoint, write_checkpoint, TransformerModel};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{average_checkpoints, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    /// Padded positions per batch.
    pub max_tokens: usize,
    pub adam: AdamConfig,
    /// Validation (and checkpoint) interval in steps.
    pub eval_every: u64,
    /// Number of best validation checkpoints averaged at the end.
    pub average_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 2000, max_tokens: 512, adam: AdamConfig::default(), eval_every: 250, average_k: 3, seed: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// `(step, training loss)` for every step.
    pub train_loss: Vec<(u64, f64)>,
    /// `(step, validation loss)` at each evaluation.
    pub validation: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SavedState {
    step: u64,
    best: Vec<(f64, u64)>,
    log: TrainLog,
}

pub struct Trainer<'a, T: Scalar> {
    model: TransformerModel<T>,
    adam: AdamState<T>,
    config: TrainConfig,
    vocab: &'a Vocabulary,
    train: &'a [Example],
    valid: Vec<Batch>,
    batches_per_epoch: usize,
    epoch: Option<(u64, Vec<Batch>)>,
    best: Vec<(f64, u64, ParamStore<T>)>,
    log: TrainLog,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(
        model: TransformerModel<T>,
        vocab: &'a Vocabulary,
        train: &'a [Example],
        valid: &[Example],
        config: TrainConfig,
    ) -> Result<Self> {
        if config.average_k == 0 || config.eval_every == 0 || config.max_tokens == 0 {
            return Err(Error::Config("average_k, eval_every and max_tokens must be positive".into()));
        }
        let max_len = model.config().max_seq_len;
        let probe = make_batches(train, vocab, config.max_tokens, max_len, &mut Rng::stream(config.seed, "batch/0"))?;
        if probe.batches.is_empty() {
            return Err(Error::data("no usable training examples"));
        }
        let valid = make_batches(valid, vocab, config.max_tokens, max_len, &mut Rng::stream(config.seed, "valid"))?.batches;
        let adam = AdamState::new(model.params());
        Ok(Trainer {
            batches_per_epoch: probe.batches.len(),
            epoch: Some((0, probe.batches)),
            model,
            adam,
            config,
            vocab,
            train,
            valid,
            best: Vec::new(),
            log: TrainLog::default(),
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn model(&self) -> &TransformerModel<T> {
        &self.model
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    fn batch_for(&mut self, step: u64) -> Result<&Batch> {
        let n = self.batches_per_epoch as u64;
        let epoch = step / n;
        if self.epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = Rng::stream(self.config.seed, &format!("batch/{epoch}"));
            let plan = make_batches(self.train, self.vocab, self.config.max_tokens, self.model.config().max_seq_len, &mut rng)?;
            self.epoch = Some((epoch, plan.batches));
        }
        let batches = &self.epoch.as_ref().expect("set above").1;
        Ok(&batches[(step % n) as usize])
    }

    /// One optimizer update; returns the training loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let step = self.adam.step;
        let batch = self.batch_for(step)?.clone();
        let mut rng = Rng::stream(self.config.seed, &format!("dropout/{step}"));
        let (loss, grads) = self.model.loss_and_grads(&batch, &mut rng)?;
        adam_step(self.model.params_mut(), &grads, &mut self.adam, &self.config.adam)?;
        self.log.train_loss.push((step + 1, loss));
        Ok(loss)
    }

    /// Token-weighted mean validation cross entropy.
    pub fn validate(&self) -> Result<f64> {
        if self.valid.is_empty() {
            return Err(Error::data("no validation examples"));
        }
        let (mut total, mut count) = (0.0, 0usize);
        for b in &self.valid {
            let n = b.target_tokens();
            total += self.model.forward_loss(b)? * n as f64;
            count += n;
        }
        Ok(total / count as f64)
    }

    fn record_validation(&mut self) -> Result<()> {
        let step = self.adam.step;
        let loss = self.validate()?;
        log::info!("step {step}: validation loss {loss:.4}");
        self.log.validation.push((step, loss));
        self.best.push((loss, step, self.model.params().clone()));
        self.best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        self.best.truncate(self.config.average_k);
        Ok(())
    }

    /// Trains up to `config.steps`, validating every `eval_every` steps and
    /// saving resumable state into `state_dir` at each validation.
    pub fn run(&mut self, state_dir: Option<&Path>) -> Result<()> {
        self.run_until(self.config.steps, state_dir)
    }

    pub fn run_until(&mut self, steps: u64, state_dir: Option<&Path>) -> Result<()> {
        while self.adam.step < steps.min(self.config.steps) {
            self.train_step()?;
            let s = self.adam.step;
            if !self.valid.is_empty() && (s.is_multiple_of(self.config.eval_every) || s == self.config.steps) {
                self.record_validation()?;
                if let Some(dir) = state_dir {
                    self.save_state(dir)?;
                }
            }
        }
        Ok(())
    }

    /// Element-wise mean of the best `average_k` validation checkpoints (the
    /// final weights when nothing was validated).
    pub fn finish(self) -> Result<(TransformerModel<T>, TrainLog)> {
        if self.best.is_empty() {
            return Ok((self.model, self.log));
        }
        let stores: Vec<ParamStore<T>> = self.best.into_iter().map(|(_, _, p)| p).collect();
        let averaged = average_checkpoints(&stores)?;
        Ok((TransformerModel::from_params(self.model.config().clone(), averaged)?, self.log))
    }

    pub fn save_state(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let cfg = self.model.config();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, cfg, self.model.params())?;
        std::fs::write(dir.join("latest.ckpt"), &buf)?;
        let mut moments = ParamStore::new();
        for (id, (name, t)) in self.model.params().iter().enumerate() {
            moments.insert(format!("m/{name}"), crate::tensor::Tensor::new(t.shape().to_vec(), self.adam.first[id].clone())?);
            moments.insert(format!("v/{name}"), crate::tensor::Tensor::new(t.shape().to_vec(), self.adam.second[id].clone())?);
        }
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, cfg, &moments)?;
        std::fs::write(dir.join("adam.ckpt"), &buf)?;
        for (_, step, params) in &self.best {
            let path = dir.join(format!("best-{step}.ckpt"));
            if !path.exists() {
                let mut buf = Vec::new();
                write_checkpoint(&mut buf, cfg, params)?;
                std::fs::write(path, &buf)?;
            }
        }
        let state = SavedState {
            step: self.adam.step,
            best: self.best.iter().map(|(l, s, _)| (*l, *s)).collect(),
            log: self.log.clone(),
        };
        let json = serde_json::to_string(&state).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join("trainer.json"), json)?;
        Ok(())
    }

    /// Restores a trainer saved by [`Trainer::save_state`].
    pub fn resume(
        dir: &Path,
        vocab: &'a Vocabulary,
        train: &'a [Example],
        valid: &[Example],
        config: TrainConfig,
    ) -> Result<Self> {
        let read = |name: &str| -> Result<(crate::model::ModelConfig, ParamStore<T>)> {
            let bytes = std::fs::read(dir.join(name))?;
            read_checkpoint(&mut bytes.as_slice())
        };
        let (model_cfg, params) = read("latest.ckpt")?;
        let model = TransformerModel::from_params(model_cfg, params)?;
        let (_, moments) = read("adam.ckpt")?;
        let text = std::fs::read_to_string(dir.join("trainer.json"))?;
        let state: SavedState = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let mut trainer = Trainer::new(model, vocab, train, valid, config)?;
        for id in 0..trainer.model.params().len() {
            let name = trainer.model.params().name(id).to_string();
            let get = |k: &str| {
                moments
                    .get(&format!("{k}/{name}"))
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| Error::Format(format!("optimizer state lacks '{k}/{name}'")))
            };
            trainer.adam.first[id] = get("m")?;
            trainer.adam.second[id] = get("v")?;
        }
        trainer.adam.step = state.step;
        for (loss, step) in state.best {
            let (_, params) = read(&format!("best-{step}.ckpt"))?;
            trainer.best.push((loss, step, params));
        }
        trainer.log = state.log;
        Ok(trainer)
    }
}

/// Trains from scratch and returns the averaged model.
pub fn train<T: Scalar>(
    model: TransformerModel<T>,
    vocab: &Vocabulary,
    train: &[Example],
    valid: &[Example],
    config: TrainConfig,
) -> Result<(TransformerModel<T>, TrainLog)> {
    let mut trainer = Trainer::new(model, vocab, train, valid, config)?;
    trainer.run(None)?;
    trainer.finish()
}
