//! Adam optimization with plateau learning-rate decay.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math when built without std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::compute::{Graph, ParamStore};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::RuiModel;

/// Learning-rate schedule state: decay by `decay` once validation loss has
/// failed to improve for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub current_lr: f64,
    pub best_val_loss: f64,
    pub stagnant_epochs: usize,
    pub decays: u32,
}

impl ScheduleState {
    pub fn new(lr0: f64) -> Self {
        Self {
            current_lr: lr0,
            best_val_loss: f64::INFINITY,
            stagnant_epochs: 0,
            decays: 0,
        }
    }
}

pub fn lr_step(state: &ScheduleState, val_loss: f64, cfg: &TrainConfig) -> Result<ScheduleState> {
    if !val_loss.is_finite() {
        return Err(Error::NaN {
            op: String::from("validation loss"),
        });
    }
    let mut s = state.clone();
    if val_loss < s.best_val_loss {
        s.best_val_loss = val_loss;
        s.stagnant_epochs = 0;
    } else {
        s.stagnant_epochs += 1;
        if s.stagnant_epochs >= cfg.patience {
            s.decays += 1;
            s.current_lr = cfg.lr0 * cfg.decay.powi(s.decays as i32);
            s.stagnant_epochs = 0;
        }
    }
    Ok(s)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: ParamStore<f32>,
    v: ParamStore<f32>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &ParamStore<f32>,
        lr: f64,
    ) -> Result<()> {
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let names: Vec<String> = params.names().map(String::from).collect();
        for name in &names {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Shape(format!("no gradient for {name}")))?;
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("no parameter {name}")))?;
            let m = self
                .m
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("no moment for {name}")))?;
            let v = self
                .v
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("no moment for {name}")))?;
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let gv = gv as f64;
                let mn = b1 * *mv as f64 + (1.0 - b1) * gv;
                let vn = b2 * *vv as f64 + (1.0 - b2) * gv * gv;
                *mv = mn as f32;
                *vv = vn as f32;
                let upd = lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *pv = (*pv as f64 - upd) as f32;
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamStore<f32>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|(_, t)| t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale_all((max_norm / norm) as f32);
    }
    norm
}

/// One training pair.
#[derive(Debug, Clone)]
pub struct Example {
    pub noisy: AudioClip,
    pub clean: AudioClip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub improved: bool,
}

impl EpochSummary {
    /// `epoch,train_loss,val_loss,lr,wall_seconds`
    pub fn log_line(&self, wall_seconds: f64) -> String {
        format!(
            "{},{:.6},{:.6},{:e},{:.3}",
            self.epoch, self.train_loss, self.val_loss, self.lr, wall_seconds
        )
    }
}

/// Training state for one model. Utterances of a batch are processed in a
/// fixed order and their gradients summed in that order, so a run is
/// reproducible from the seed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: RuiModel,
    pub config: TrainConfig,
    pub schedule: ScheduleState,
    pub adam: Adam,
    pub epoch: usize,
    pub best: Option<ParamStore<f32>>,
}

impl Trainer {
    pub fn new(model: RuiModel) -> Self {
        let config = model.config.train.clone();
        let adam = Adam::new(&model.params);
        Self {
            schedule: ScheduleState::new(config.lr0),
            config,
            adam,
            model,
            epoch: 0,
            best: None,
        }
    }

    /// Loss and gradients for one utterance.
    pub fn utterance_grads(&self, ex: &Example) -> Result<(f64, ParamStore<f32>)> {
        let mut g = Graph::<f32>::new();
        let b = self.model.params.bind(&mut g)?;
        let (total, _, _) = self.model.loss(&mut g, &b, &ex.noisy, &ex.clean)?;
        let loss = g.value(total).item() as f64;
        if !loss.is_finite() {
            return Err(Error::NaN {
                op: String::from("training loss"),
            });
        }
        let mut grads = g.backward(total)?;
        Ok((loss, b.collect(&g, &mut grads)))
    }

    /// One optimizer step on a batch; returns the mean loss.
    pub fn step(&mut self, batch: &[&Example]) -> Result<f64> {
        let mut sum = self.model.params.zeros_like();
        let mut loss = 0.0;
        for ex in batch {
            let (l, g) = self.utterance_grads(ex)?;
            loss += l;
            sum.accumulate(&g)?;
        }
        let k = batch.len().max(1) as f64;
        sum.scale_all((1.0 / k) as f32);
        clip_global_norm(&mut sum, self.config.clip_norm);
        self.adam
            .step(&mut self.model.params, &sum, self.schedule.current_lr)?;
        if self.model.params.iter().any(|(_, t)| !t.all_finite()) {
            return Err(Error::NaN {
                op: String::from("parameter update"),
            });
        }
        Ok(loss / k)
    }

    /// Mean loss over `data` without updating anything.
    pub fn mean_loss(&self, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Inventory("empty evaluation set".into()));
        }
        let mut tot = 0.0;
        for ex in data {
            let l = self.model.evaluate_loss(&ex.noisy, &ex.clean)?.total;
            if !l.is_finite() {
                return Err(Error::NaN {
                    op: String::from("validation loss"),
                });
            }
            tot += l;
        }
        Ok(tot / data.len() as f64)
    }

    /// A full pass over `train` in a seeded shuffled order, then validation
    /// and a schedule update. The best-validation parameters are kept.
    pub fn run_epoch(&mut self, train: &[Example], val: &[Example]) -> Result<EpochSummary> {
        if train.is_empty() {
            return Err(Error::Inventory("empty training set".into()));
        }
        self.epoch += 1;
        let lr = self.schedule.current_lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            self.config.seed.wrapping_add(self.epoch as u64),
        ));
        let mut tot = 0.0;
        let mut count = 0;
        for chunk in order.chunks(self.config.batch.max(1)) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            tot += self.step(&batch)? * batch.len() as f64;
            count += batch.len();
        }
        let train_loss = tot / count as f64;
        let val_loss = self.mean_loss(val)?;
        let improved = val_loss < self.schedule.best_val_loss;
        self.schedule = lr_step(&self.schedule, val_loss, &self.config)?;
        if improved {
            self.best = Some(self.model.params.clone());
        }
        Ok(EpochSummary {
            epoch: self.epoch,
            train_loss,
            val_loss,
            lr,
            improved,
        })
    }

    /// Model carrying the best-validation parameters seen so far.
    pub fn best_model(&self) -> RuiModel {
        let mut m = self.model.clone();
        if let Some(p) = &self.best {
            m.params = p.clone();
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::Tensor;

    fn run(losses: &[f64]) -> ScheduleState {
        let cfg = TrainConfig::default();
        let mut s = ScheduleState::new(cfg.lr0);
        for &l in losses {
            s = lr_step(&s, l, &cfg).unwrap();
        }
        s
    }

    #[test]
    fn improving_keeps_rate() {
        assert_eq!(run(&[1.0, 0.9, 0.8]).current_lr, 0.001);
    }

    #[test]
    fn three_stagnant_epochs_decay() {
        let s = run(&[1.0, 1.1, 1.2]);
        assert_eq!(s.current_lr, 0.001);
        let s = run(&[1.0, 1.1, 1.2, 1.3]);
        assert_eq!(s.current_lr, 0.001 * 0.75);
        assert_eq!(s.stagnant_epochs, 0);
        let s = run(&[1.0, 1.1, 1.2, 1.3, 1.1, 1.1, 1.1]);
        assert!((s.current_lr - 0.0005625).abs() < 1e-15);
    }

    #[test]
    fn nan_validation_aborts() {
        let s = ScheduleState::new(1e-3);
        assert!(matches!(
            lr_step(&s, f64::NAN, &TrainConfig::default()),
            Err(Error::NaN { .. })
        ));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = ParamStore::new();
        g.insert("a", Tensor::new(&[2], alloc::vec![3.0f32, 4.0]).unwrap())
            .unwrap();
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let d = g.get("a").unwrap().data();
        assert!((d[0] - 0.6).abs() < 1e-6 && (d[1] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(&[2], alloc::vec![1.0f32, -1.0]).unwrap())
            .unwrap();
        let mut g = ParamStore::new();
        g.insert("w", Tensor::new(&[2], alloc::vec![0.5f32, -2.0]).unwrap())
            .unwrap();
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.01).unwrap();
        let d = p.get("w").unwrap().data();
        assert!((d[0] - 0.99).abs() < 1e-6 && (d[1] + 0.99).abs() < 1e-6);
    }
}
