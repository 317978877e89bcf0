use serde::{Deserialize, Serialize};

use super::loss::denoise_loss_tape;
use super::model::{DenoiserModel, TokenId, NULL_TOKEN};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::gradcore::{Optimizer, Tape, Tensor};
use crate::rng::{stream_with, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Probability of replacing the condition with the null token, which
    /// teaches the model an unconditional mode.
    pub cond_dropout: f64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        BaseTrainConfig {
            steps: 8000,
            batch: 16,
            lr: 2e-4,
            seed: 0,
            cond_dropout: 0.1,
        }
    }
}

/// Trains the denoiser in place over labeled clean images; every parameter
/// group is trainable. Returns the per-step loss curve.
pub fn train_base(
    model: &mut DenoiserModel,
    s: &NoiseSchedule,
    data: &[(Tensor, TokenId)],
    cfg: &BaseTrainConfig,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::DegenerateInput("empty training set".into()));
    }
    if cfg.batch == 0 || cfg.steps == 0 {
        return Err(Error::config("steps and batch must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.cond_dropout) {
        return Err(Error::config("cond_dropout must lie in [0,1]"));
    }
    let d = model.cfg.input_dim();
    for (img, tok) in data {
        if img.len() != d {
            return Err(Error::config(format!(
                "training image has {} values, model wants {d}",
                img.len()
            )));
        }
        if *tok >= model.vocab.len() {
            return Err(Error::Token(format!("token id {tok} out of range")));
        }
    }

    let mut opt = Optimizer::adam(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut pick = StreamRng::new(cfg.seed, stream_with("base.pick", step as u64));
        let mut tdraw = StreamRng::new(cfg.seed, stream_with("base.t", step as u64));
        let mut edraw = StreamRng::new(cfg.seed, stream_with("base.eps", step as u64));
        let mut drop = StreamRng::new(cfg.seed, stream_with("base.drop", step as u64));

        let mut x0 = Vec::with_capacity(cfg.batch * d);
        let mut eps = Vec::with_capacity(cfg.batch * d);
        let mut ts = Vec::with_capacity(cfg.batch);
        let mut conds = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let idx = pick.uniform_int(0, (data.len() - 1) as u64) as usize;
            let (img, tok) = &data[idx];
            x0.extend_from_slice(img.data());
            eps.extend(edraw.normal_vec(d));
            ts.push(tdraw.uniform_int(1, s.t_count() as u64) as usize);
            let tok = if drop.uniform() < cfg.cond_dropout {
                NULL_TOKEN
            } else {
                *tok
            };
            conds.push(tok);
        }

        let x0 = Tensor::new(vec![cfg.batch, d], x0)?;
        let eps = Tensor::new(vec![cfg.batch, d], eps)?;
        let mut tape = Tape::new();
        let loss = denoise_loss_tape(&mut tape, model, s, &x0, &ts, &conds, &eps, &|_| true)?;
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss);
        opt.step(&mut model.params, &grads)?;
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::{ModelConfig, Vocab};
    use crate::diffusion::schedule::make_schedule;

    fn toy_data(d: usize) -> Vec<(Tensor, TokenId)> {
        // Two flat-colored pseudo-images per class keep this fast.
        let mut out = Vec::new();
        for (tok, level) in [(1usize, 0.2), (2, 0.8)] {
            for k in 0..2 {
                let v = level + 0.02 * k as f64;
                out.push((Tensor::from_vec(vec![v; d]), tok));
            }
        }
        out
    }

    #[test]
    fn loss_curve_trends_down() {
        let cfg = ModelConfig {
            image_h: 2,
            image_w: 2,
            image_c: 3,
            hidden: 24,
            blocks: 2,
            time_features: 8,
            embed_dim: 8,
        };
        let vocab = Vocab::new(&["dark".into(), "light".into()], 1).unwrap();
        let mut m = DenoiserModel::init(cfg, vocab, 7).unwrap();
        let s = make_schedule(25, 1e-3, 0.1).unwrap();
        let tc = BaseTrainConfig {
            steps: 300,
            batch: 8,
            lr: 3e-3,
            seed: 1,
            cond_dropout: 0.1,
        };
        let losses = train_base(&mut m, &s, &toy_data(12), &tc).unwrap();
        let head: f64 = losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(
            tail < 0.6 * head,
            "training should reduce loss: head {head:.4} tail {tail:.4}"
        );
        assert!(losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let cfg = ModelConfig {
            image_h: 2,
            image_w: 2,
            image_c: 1,
            hidden: 8,
            blocks: 1,
            time_features: 4,
            embed_dim: 4,
        };
        let vocab = Vocab::new(&["a".into(), "b".into()], 1).unwrap();
        let s = make_schedule(10, 1e-3, 0.1).unwrap();
        let tc = BaseTrainConfig {
            steps: 40,
            batch: 4,
            lr: 1e-3,
            seed: 3,
            cond_dropout: 0.2,
        };
        let mut m1 = DenoiserModel::init(cfg, vocab.clone(), 2).unwrap();
        let mut m2 = DenoiserModel::init(cfg, vocab, 2).unwrap();
        let l1 = train_base(&mut m1, &s, &toy_data(4), &tc).unwrap();
        let l2 = train_base(&mut m2, &s, &toy_data(4), &tc).unwrap();
        assert_eq!(l1, l2);
        for (a, b) in m1.params.entries().iter().zip(m2.params.entries()) {
            assert_eq!(a.tensor.data(), b.tensor.data(), "param {}", a.name);
        }
    }

    #[test]
    fn empty_dataset_is_degenerate() {
        let cfg = ModelConfig {
            image_h: 2,
            image_w: 2,
            image_c: 1,
            hidden: 8,
            blocks: 1,
            time_features: 4,
            embed_dim: 4,
        };
        let vocab = Vocab::new(&["a".into()], 0).unwrap();
        let mut m = DenoiserModel::init(cfg, vocab, 2).unwrap();
        let s = make_schedule(10, 1e-3, 0.1).unwrap();
        let err = train_base(&mut m, &s, &[], &BaseTrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }
}
