//! Adam optimizer and the mini-batch training loop.

use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use trajmatch_core::seed::{derive_named, rng};

use crate::input::Example;
use crate::network::loss_and_gradients;
use crate::params::{ComponentMask, Transformer};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over every coordinate.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    let all = 0..params.len();
    adam_step_ranges(params, grads, state, cfg, std::slice::from_ref(&all));
}

/// Adam update restricted to `active` index ranges; other coordinates and
/// their moments are left untouched.
pub fn adam_step_ranges(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
    active: &[Range<usize>],
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for r in active {
        for i in r.clone() {
            let g = grads[i];
            let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
            state.m[i] = m;
            state.v[i] = v;
            params[i] -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Rescale the gradient when its global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LossRow>,
}

impl TrainLog {
    /// Mean loss of each epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,step,loss")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.epoch, r.step, r.loss)?;
        }
        Ok(())
    }
}

/// Trains every parameter.
pub fn train(model: &mut Transformer, corpus: &[Example], cfg: &TrainConfig) -> Result<TrainLog, ModelError> {
    fine_tune(model, corpus, &ComponentMask::full(), cfg)
}

/// Trains only the tensors whose component is in `mask`; all others stay
/// bit-identical.
pub fn fine_tune(
    model: &mut Transformer,
    corpus: &[Example],
    mask: &ComponentMask,
    cfg: &TrainConfig,
) -> Result<TrainLog, ModelError> {
    fine_tune_with(model, corpus, mask, cfg, |_, _| {})
}

/// Like [`fine_tune`], calling `on_epoch(epoch, mean_loss)` after each epoch.
pub fn fine_tune_with(
    model: &mut Transformer,
    corpus: &[Example],
    mask: &ComponentMask,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainLog, ModelError> {
    if cfg.batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
    }
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let active = model.layout().ranges_for(mask);
    let mut state = AdamState::new(model.n_params());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut shuffle_rng = rng(derive_named(cfg.seed, "shuffle"));
    let mut dropout_rng = rng(derive_named(cfg.seed, "dropout"));
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut n = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &corpus[i]).collect();
            let (loss, mut grads) = loss_and_gradients(model, &batch, Some(&mut dropout_rng))?;
            if let Some(max) = cfg.clip_norm {
                let norm = active
                    .iter()
                    .flat_map(|r| grads[r.clone()].iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    let k = max / norm;
                    grads.iter_mut().for_each(|g| *g *= k);
                }
            }
            adam_step_ranges(model.params_mut(), &grads, &mut state, &cfg.adam, &active);
            log.rows.push(LossRow { epoch, step, loss });
            sum += loss;
            n += 1;
            step += 1;
        }
        on_epoch(epoch, sum / n as f64);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let before = p.clone();
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, &AdamConfig::default());
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0; 4];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &[0.5, -3.0, 1e-3, -40.0], &mut s, &cfg);
        for (x, sign) in p.iter().zip([-1.0, 1.0, -1.0, 1.0]) {
            assert!((x - sign * cfg.lr).abs() < cfg.lr * 1e-3, "{x}");
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut x = vec![5.0];
        let mut s = AdamState::new(1);
        for _ in 0..200 {
            let g = 2.0 * (x[0] - 3.0);
            adam_step(&mut x, &[g], &mut s, &cfg);
        }
        assert!((x[0] - 3.0).abs() < 1e-2, "{}", x[0]);
    }

    #[test]
    fn inactive_ranges_untouched() {
        let mut p = vec![1.0; 6];
        let mut s = AdamState::new(6);
        adam_step_ranges(&mut p, &[1.0; 6], &mut s, &AdamConfig::default(), &[2..4]);
        assert_eq!(&p[..2], &[1.0, 1.0]);
        assert_eq!(&p[4..], &[1.0, 1.0]);
        assert!(p[2] < 1.0 && p[3] < 1.0);
    }

    #[test]
    fn epoch_means_and_csv() {
        let log = TrainLog {
            rows: vec![
                LossRow {
                    epoch: 0,
                    step: 0,
                    loss: 2.0,
                },
                LossRow {
                    epoch: 0,
                    step: 1,
                    loss: 4.0,
                },
                LossRow {
                    epoch: 1,
                    step: 2,
                    loss: 1.0,
                },
            ],
        };
        assert_eq!(log.epoch_means(), vec![3.0, 1.0]);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,step,loss\n0,0,2\n0,1,4\n1,2,1\n"
        );
    }
}
