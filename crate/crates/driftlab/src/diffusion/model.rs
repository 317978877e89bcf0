use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{grad_check_fn, GradCheckReport, GradMap, NodeId, ParamStore, Tape, Tensor};
use crate::rng::StreamRng;

pub type TokenId = usize;

/// Condition vocabulary: token 0 is the unconditional null token, followed by
/// the base class tokens, then a bank of reserve tokens for new concepts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    names: Vec<String>,
    n_base: usize,
    n_reserve: usize,
}

pub const NULL_TOKEN: TokenId = 0;

impl Vocab {
    pub fn new(class_names: &[String], n_reserve: usize) -> Result<Self> {
        let mut names = Vec::with_capacity(1 + class_names.len() + n_reserve);
        names.push("<null>".to_string());
        names.extend_from_slice(class_names);
        for i in 0..n_reserve {
            names.push(format!("<rare{i:02}>"));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::config("vocabulary contains duplicate names"));
        }
        Ok(Vocab {
            names,
            n_base: class_names.len(),
            n_reserve,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: TokenId) -> Result<&str> {
        self.names
            .get(id)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Token(format!("token id {id} out of range")))
    }

    pub fn lookup(&self, name: &str) -> Result<TokenId> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Token(format!("unknown token name {name:?}")))
    }

    /// Base class token ids in declaration order.
    pub fn base_tokens(&self) -> Vec<TokenId> {
        (1..1 + self.n_base).collect()
    }

    /// Reserve token ids available for new concepts.
    pub fn reserve_tokens(&self) -> Vec<TokenId> {
        (1 + self.n_base..1 + self.n_base + self.n_reserve).collect()
    }

    pub fn is_reserve(&self, id: TokenId) -> bool {
        id >= 1 + self.n_base && id < 1 + self.n_base + self.n_reserve
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Sinusoidal time feature width; must be even.
    pub time_features: usize,
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_h: 16,
            image_w: 16,
            image_c: 3,
            hidden: 256,
            blocks: 3,
            time_features: 32,
            embed_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.image_h * self.image_w * self.image_c
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim() == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.time_features == 0 || self.time_features % 2 != 0 {
            return Err(Error::config("time_features must be positive and even"));
        }
        Ok(())
    }
}

pub const GROUP_TRUNK: &str = "trunk";
pub const GROUP_TIME: &str = "time_proj";
pub const GROUP_COND_EMBED: &str = "cond_embed";
pub const GROUP_COND_PROJ: &str = "cond_proj";

/// Conditional epsilon-prediction network. A shared MLP trunk of residual
/// blocks consumes the noisy image; time and condition enter each block
/// additively after their own projections.
///
/// Parameter groups: trunk, time_proj, cond_embed, cond_proj. Customization
/// in the condition-subset scope trains only the last two.
#[derive(Clone, Debug)]
pub struct DenoiserModel {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

fn init_matrix(rng: &mut StreamRng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let std = scale / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

impl DenoiserModel {
    pub fn init(cfg: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if vocab.len() < 2 {
            return Err(Error::config("vocabulary must hold null plus at least one token"));
        }
        let d = cfg.input_dim();
        let h = cfg.hidden;
        let mut rng = StreamRng::from_tag(seed, "model.init");
        let mut p = ParamStore::new();

        p.insert("time_proj.w", GROUP_TIME, init_matrix(&mut rng, cfg.time_features, h, 1.0))?;
        p.insert("time_proj.b", GROUP_TIME, Tensor::zeros(&[h]))?;

        let emb = {
            let data = (0..vocab.len() * cfg.embed_dim)
                .map(|_| 0.1 * rng.normal())
                .collect();
            Tensor::new(vec![vocab.len(), cfg.embed_dim], data).unwrap()
        };
        p.insert("cond_embed.table", GROUP_COND_EMBED, emb)?;
        p.insert("cond_proj.w", GROUP_COND_PROJ, init_matrix(&mut rng, cfg.embed_dim, h, 1.0))?;
        p.insert("cond_proj.b", GROUP_COND_PROJ, Tensor::zeros(&[h]))?;

        p.insert("trunk.in.w", GROUP_TRUNK, init_matrix(&mut rng, d, h, 1.0))?;
        p.insert("trunk.in.b", GROUP_TRUNK, Tensor::zeros(&[h]))?;
        for b in 0..cfg.blocks {
            p.insert(&format!("trunk.block{b}.w1"), GROUP_TRUNK, init_matrix(&mut rng, h, h, 1.0))?;
            p.insert(&format!("trunk.block{b}.b1"), GROUP_TRUNK, Tensor::zeros(&[h]))?;
            // Residual branch output starts small so depth does not blow up
            // activations at init.
            p.insert(&format!("trunk.block{b}.w2"), GROUP_TRUNK, init_matrix(&mut rng, h, h, 0.1))?;
            p.insert(&format!("trunk.block{b}.b2"), GROUP_TRUNK, Tensor::zeros(&[h]))?;
        }
        p.insert("trunk.out.w", GROUP_TRUNK, init_matrix(&mut rng, h, d, 0.1))?;
        p.insert("trunk.out.b", GROUP_TRUNK, Tensor::zeros(&[d]))?;

        Ok(DenoiserModel { cfg, vocab, params: p })
    }

    /// Sinusoidal features for one timestep: pairs (sin, cos) over a
    /// geometric frequency ladder, 10000^(-k / (F/2)).
    pub fn time_feature_row(&self, t: usize) -> Vec<f64> {
        let f = self.cfg.time_features;
        let half = f / 2;
        let mut row = Vec::with_capacity(f);
        for k in 0..half {
            let omega = (10_000_f64).powf(-(k as f64) / half as f64);
            let arg = t as f64 * omega;
            row.push(arg.sin());
            row.push(arg.cos());
        }
        row
    }

    fn validate_inputs(&self, x: &Tensor, ts: &[usize], conds: &[TokenId]) -> Result<usize> {
        if x.shape().len() != 2 || x.cols() != self.cfg.input_dim() {
            return Err(Error::config(format!(
                "input shape {:?} does not match [batch, {}]",
                x.shape(),
                self.cfg.input_dim()
            )));
        }
        let b = x.rows();
        if ts.len() != b || conds.len() != b {
            return Err(Error::config(format!(
                "batch {} but {} timesteps, {} conditions",
                b,
                ts.len(),
                conds.len()
            )));
        }
        if let Some(t) = ts.iter().find(|&&t| t == 0) {
            return Err(Error::config(format!("timestep {t} must be >= 1")));
        }
        for &c in conds {
            if c >= self.vocab.len() {
                return Err(Error::Token(format!(
                    "token id {c} out of range (vocab {})",
                    self.vocab.len()
                )));
            }
        }
        Ok(b)
    }

    /// Builds the epsilon prediction onto an existing tape. Parameters in
    /// groups accepted by `trainable` become differentiable leaves; all
    /// others enter as constants.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        ts: &[usize],
        conds: &[TokenId],
        trainable: &dyn Fn(&str) -> bool,
    ) -> Result<NodeId> {
        self.validate_inputs(x, ts, conds)?;
        let leaf = |tape: &mut Tape, name: &str| -> NodeId {
            let e = self.params.get(name).expect("model param");
            let group = self.params.group_of(name).expect("model param group");
            if trainable(group) {
                tape.param(name, e.clone())
            } else {
                tape.constant(e.clone())
            }
        };

        let tf = Tensor::from_rows(
            &ts.iter().map(|&t| self.time_feature_row(t)).collect::<Vec<_>>(),
        )?;
        let tf = tape.constant(tf);
        let tw = leaf(tape, "time_proj.w");
        let tb = leaf(tape, "time_proj.b");
        let temb = tape.matmul(tf, tw);
        let temb = tape.add_row(temb, tb);
        let temb = tape.silu(temb);

        let table = leaf(tape, "cond_embed.table");
        let cemb = tape.embed_rows(table, conds);
        let cw = leaf(tape, "cond_proj.w");
        let cb = leaf(tape, "cond_proj.b");
        let cvec = tape.matmul(cemb, cw);
        let cvec = tape.add_row(cvec, cb);
        let cvec = tape.silu(cvec);

        let xn = tape.constant(x.clone());
        let inw = leaf(tape, "trunk.in.w");
        let inb = leaf(tape, "trunk.in.b");
        let mut h = tape.matmul(xn, inw);
        h = tape.add_row(h, inb);

        for blk in 0..self.cfg.blocks {
            let w1 = leaf(tape, &format!("trunk.block{blk}.w1"));
            let b1 = leaf(tape, &format!("trunk.block{blk}.b1"));
            let w2 = leaf(tape, &format!("trunk.block{blk}.w2"));
            let b2 = leaf(tape, &format!("trunk.block{blk}.b2"));
            let u = tape.add(h, temb);
            let u = tape.add(u, cvec);
            let r = tape.matmul(u, w1);
            let r = tape.add_row(r, b1);
            let r = tape.silu(r);
            let r = tape.matmul(r, w2);
            let r = tape.add_row(r, b2);
            h = tape.add(h, r);
        }

        let ow = leaf(tape, "trunk.out.w");
        let ob = leaf(tape, "trunk.out.b");
        let out = tape.matmul(h, ow);
        Ok(tape.add_row(out, ob))
    }

    /// Pure prediction. Runs the identical op sequence as `forward_tape` with
    /// every parameter constant, so the two agree bitwise.
    pub fn forward(&self, x: &Tensor, ts: &[usize], conds: &[TokenId]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, x, ts, conds, &|_| false)?;
        Ok(tape.value(out).clone())
    }
}

/// Prediction plus gradients of mean(prediction) over every parameter group.
pub fn forward_backward(
    model: &DenoiserModel,
    x: &Tensor,
    ts: &[usize],
    conds: &[TokenId],
) -> Result<(Tensor, GradMap)> {
    let mut tape = Tape::new();
    let pred = model.forward_tape(&mut tape, x, ts, conds, &|_| true)?;
    let root = tape.mean_all(pred);
    let grads = tape.backward(root);
    Ok((tape.value(pred).clone(), grads))
}

/// Finite-difference audit of the full model gradient through the denoising
/// objective mean((eps - model(x, t, c))^2) at a fixed seeded probe.
pub fn grad_check(model: &DenoiserModel, n_probes: usize, h: f64) -> Result<GradCheckReport> {
    let d = model.cfg.input_dim();
    let b = 2;
    let mut xr = StreamRng::from_tag(0xD1FF, "gradcheck.x");
    let mut er = StreamRng::from_tag(0xD1FF, "gradcheck.eps");
    let x = Tensor::new(vec![b, d], xr.normal_vec(b * d))?;
    let eps = Tensor::new(vec![b, d], er.normal_vec(b * d))?;
    let ts = vec![1, 7];
    let conds = vec![NULL_TOKEN, (model.vocab.len() - 1).min(1)];

    let mut probe = model.clone();
    let cfg = probe.cfg;
    let vocab = probe.vocab.clone();
    let eval = move |params: &ParamStore, want: bool| {
        let m = DenoiserModel {
            cfg,
            vocab: vocab.clone(),
            params: params.clone(),
        };
        let mut tape = Tape::new();
        let pred = m.forward_tape(&mut tape, &x, &ts, &conds, &|_| true)?;
        let target = tape.constant(eps.clone());
        let loss = tape.mean_sq_diff(pred, target);
        let value = tape.value(loss).item();
        Ok((value, want.then(|| tape.backward(loss))))
    };
    grad_check_fn(&mut probe.params, eval, n_probes, h, 0xD1FF)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> DenoiserModel {
        let cfg = ModelConfig {
            image_h: 2,
            image_w: 2,
            image_c: 3,
            hidden: 16,
            blocks: 2,
            time_features: 8,
            embed_dim: 6,
        };
        let vocab = Vocab::new(&["a".into(), "b".into(), "c".into()], 2).unwrap();
        DenoiserModel::init(cfg, vocab, 11).unwrap()
    }

    #[test]
    fn vocab_layout_and_lookup() {
        let v = Vocab::new(&["circle_red".into(), "square_red".into()], 3).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.name(NULL_TOKEN).unwrap(), "<null>");
        assert_eq!(v.lookup("circle_red").unwrap(), 1);
        assert_eq!(v.base_tokens(), vec![1, 2]);
        assert_eq!(v.reserve_tokens(), vec![3, 4, 5]);
        assert!(v.is_reserve(3));
        assert!(!v.is_reserve(1));
        assert!(matches!(v.lookup("nope"), Err(Error::Token(_))));
    }

    #[test]
    fn forward_matches_tape_forward_bitwise() {
        let m = tiny_model();
        let mut rng = StreamRng::from_tag(3, "t");
        let x = Tensor::new(vec![2, 12], rng.normal_vec(24)).unwrap();
        let pure = m.forward(&x, &[1, 5], &[0, 2]).unwrap();
        let mut tape = Tape::new();
        let node = m
            .forward_tape(&mut tape, &x, &[1, 5], &[0, 2], &|_| true)
            .unwrap();
        assert_eq!(pure.data(), tape.value(node).data());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = tiny_model();
        let b = tiny_model();
        for (ea, eb) in a.params.entries().iter().zip(b.params.entries()) {
            assert_eq!(ea.tensor.data(), eb.tensor.data());
        }
        let c = DenoiserModel::init(a.cfg, a.vocab.clone(), 12).unwrap();
        assert_ne!(
            a.params.get("trunk.in.w").unwrap().data(),
            c.params.get("trunk.in.w").unwrap().data()
        );
    }

    #[test]
    fn condition_and_time_change_the_prediction() {
        let m = tiny_model();
        let x = Tensor::new(vec![1, 12], vec![0.3; 12]).unwrap();
        let base = m.forward(&x, &[3], &[1]).unwrap();
        let other_cond = m.forward(&x, &[3], &[2]).unwrap();
        let other_t = m.forward(&x, &[4], &[1]).unwrap();
        assert_ne!(base.data(), other_cond.data());
        assert_ne!(base.data(), other_t.data());
    }

    #[test]
    fn input_validation_errors() {
        let m = tiny_model();
        let x = Tensor::new(vec![1, 12], vec![0.0; 12]).unwrap();
        let bad = Tensor::new(vec![1, 10], vec![0.0; 10]).unwrap();
        assert!(matches!(m.forward(&bad, &[1], &[0]), Err(Error::Config(_))));
        assert!(matches!(m.forward(&x, &[1, 2], &[0]), Err(Error::Config(_))));
        assert!(matches!(m.forward(&x, &[0], &[0]), Err(Error::Config(_))));
        assert!(matches!(m.forward(&x, &[1], &[99]), Err(Error::Token(_))));
    }

    #[test]
    fn forward_backward_covers_all_groups() {
        let m = tiny_model();
        let x = Tensor::new(vec![1, 12], vec![0.1; 12]).unwrap();
        let (pred, grads) = forward_backward(&m, &x, &[2], &[1]).unwrap();
        assert_eq!(pred.shape(), &[1, 12]);
        for group in [GROUP_TRUNK, GROUP_TIME, GROUP_COND_EMBED, GROUP_COND_PROJ] {
            assert!(
                grads.keys().any(|k| m.params.group_of(k) == Some(group)),
                "missing grads for group {group}"
            );
        }
        // embed gradient is sparse: only the used row may be nonzero
        let ge = &grads["cond_embed.table"];
        let e = m.cfg.embed_dim;
        for row in 0..m.vocab.len() {
            let nz = ge.data()[row * e..(row + 1) * e]
                .iter()
                .any(|&v| v != 0.0);
            assert_eq!(nz, row == 1, "row {row}");
        }
    }

    #[test]
    fn frozen_groups_are_absent_from_gradients() {
        let m = tiny_model();
        let x = Tensor::new(vec![1, 12], vec![0.1; 12]).unwrap();
        let mut tape = Tape::new();
        let pred = m
            .forward_tape(&mut tape, &x, &[2], &[1], &|g| {
                g == GROUP_COND_EMBED || g == GROUP_COND_PROJ
            })
            .unwrap();
        let root = tape.mean_all(pred);
        let grads = tape.backward(root);
        assert!(grads.keys().all(|k| {
            let g = m.params.group_of(k).unwrap();
            g == GROUP_COND_EMBED || g == GROUP_COND_PROJ
        }));
        assert!(grads.contains_key("cond_embed.table"));
        assert!(grads.contains_key("cond_proj.w"));
    }

    #[test]
    fn grad_check_on_tiny_model_is_clean() {
        let m = tiny_model();
        let r = grad_check(&m, 48, 1e-5).unwrap();
        assert!(r.used > 0);
        assert!(r.max_rel_err < 1e-4, "max_rel_err {}", r.max_rel_err);
    }
}
