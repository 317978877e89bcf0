//! Few-shot concept customization. A reserve token is bound to a handful of
//! shot images by finetuning the denoiser, with three regularization
//! regimes layered on top of the plain objective:
//!
//!   plain        shot term only
//!   prior        shot + lambda * prior replay on superclass samples
//!   dc           shot + prior (weight 1) + lambda * distillation to the base
//!   dc-no-prior  shot + lambda * distillation only
//!
//! The prior and distillation terms share one corrupted draw per step, so a
//! single student forward on the prior image feeds both. The frozen base
//! model is never mutated; freeze contracts are asserted after every run.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{encode_denoiser, hex_sha256};
use crate::diffusion::{
    q_sample, sample, DenoiserModel, GenerationRequest, NoiseSchedule, SamplerKind, TokenId,
    GROUP_COND_EMBED, GROUP_COND_PROJ,
};
use crate::error::{Error, Result};
use crate::gradcore::{Optimizer, Tape, Tensor};
use crate::rng::{stream_with, StreamRng};
use crate::world::ConceptWorld;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Plain,
    Prior,
    Dc,
    DcNoPrior,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::Prior => "prior",
            Method::Dc => "dc",
            Method::DcNoPrior => "dc-no-prior",
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            Method::Plain => 0.0,
            Method::Prior => 1.0,
            Method::Dc | Method::DcNoPrior => 10.0,
        }
    }

    pub fn uses_prior_term(self) -> bool {
        matches!(self, Method::Prior | Method::Dc)
    }

    pub fn uses_distill_term(self) -> bool {
        matches!(self, Method::Dc | Method::DcNoPrior)
    }

    pub fn needs_buffer(self) -> bool {
        self != Method::Plain
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Method::Plain),
            "prior" => Ok(Method::Prior),
            "dc" => Ok(Method::Dc),
            "dc-no-prior" | "dc_no_prior" => Ok(Method::DcNoPrior),
            other => Err(Error::config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScope {
    All,
    CondSubset,
}

impl ParamScope {
    pub fn label(self) -> &'static str {
        match self {
            ParamScope::All => "all",
            ParamScope::CondSubset => "cond",
        }
    }

    pub fn trainable(self, group: &str) -> bool {
        match self {
            ParamScope::All => true,
            ParamScope::CondSubset => group == GROUP_COND_EMBED || group == GROUP_COND_PROJ,
        }
    }
}

impl FromStr for ParamScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ParamScope::All),
            "cond" | "cond_subset" => Ok(ParamScope::CondSubset),
            other => Err(Error::config(format!("unknown scope {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CustomizeConfig {
    pub method: Method,
    pub scope: ParamScope,
    pub lambda: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Prior buffer size; plain runs may set 0.
    pub buffer: usize,
    pub seed: u64,
    /// Reserve token housing the concept; None picks the first reserve slot.
    pub rare_token: Option<TokenId>,
    /// Deterministic sampler steps used to generate the buffer.
    pub buffer_sample_steps: usize,
}

impl CustomizeConfig {
    pub fn new(method: Method) -> Self {
        CustomizeConfig {
            method,
            scope: ParamScope::All,
            lambda: method.default_lambda(),
            steps: 500,
            lr: 1e-4,
            batch: 1,
            buffer: 200,
            seed: 0,
            rare_token: None,
            buffer_sample_steps: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::config("lambda must be finite and non-negative"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch must be positive"));
        }
        if self.method.needs_buffer() && self.buffer == 0 {
            return Err(Error::config(format!(
                "method {} needs a non-empty prior buffer",
                self.method.label()
            )));
        }
        Ok(())
    }
}

/// Superclass samples generated by the frozen base model before training.
#[derive(Clone, Debug)]
pub struct PriorBuffer {
    pub cond: TokenId,
    pub images: Vec<Tensor>,
    pub seeds: Vec<u64>,
    /// Hash of the base checkpoint that produced every image.
    pub base_hash: String,
}

pub fn build_prior_buffer(
    base: &DenoiserModel,
    s: &NoiseSchedule,
    superclass_token: TokenId,
    n: usize,
    seed: u64,
    sampler_steps: usize,
    base_hash: &str,
) -> Result<PriorBuffer> {
    let seeds: Vec<u64> = (0..n as u64).map(|i| seed + i).collect();
    let images: Vec<Tensor> = seeds
        .par_iter()
        .map(|&sd| {
            sample(
                base,
                s,
                &GenerationRequest {
                    cond: superclass_token,
                    seed: sd,
                    kind: SamplerKind::DdimDeterministic,
                    steps: sampler_steps,
                },
            )
        })
        .collect::<Result<_>>()?;
    Ok(PriorBuffer {
        cond: superclass_token,
        images,
        seeds,
        base_hash: base_hash.to_string(),
    })
}

/// Everything stochastic about one training step, drawn from per-purpose
/// streams keyed by step index so methods sharing a seed see identical shot
/// draws regardless of which extra terms they compute.
#[derive(Clone, Debug)]
pub struct StepDraw {
    pub shot_rows: Vec<usize>,
    pub t: usize,
    pub eps: Tensor,
    pub prior_rows: Vec<usize>,
    pub t_prime: usize,
    pub eps_prime: Tensor,
}

pub fn draw_step(
    seed: u64,
    step: usize,
    t_count: usize,
    batch: usize,
    dim: usize,
    n_shots: usize,
    n_prior: usize,
) -> StepDraw {
    let k = step as u64;
    let mut pick = StreamRng::new(seed, stream_with("cust.shot", k));
    let shot_rows = (0..batch)
        .map(|_| pick.uniform_int(0, (n_shots - 1) as u64) as usize)
        .collect();
    let mut trng = StreamRng::new(seed, stream_with("cust.t", k));
    let t = trng.uniform_int(1, t_count as u64) as usize;
    let mut erng = StreamRng::new(seed, stream_with("cust.eps", k));
    let eps = Tensor::new(vec![batch, dim], erng.normal_vec(batch * dim)).unwrap();

    let (prior_rows, t_prime, eps_prime) = if n_prior > 0 {
        let mut ppick = StreamRng::new(seed, stream_with("cust.prior", k));
        let rows = (0..batch)
            .map(|_| ppick.uniform_int(0, (n_prior - 1) as u64) as usize)
            .collect();
        let mut tprng = StreamRng::new(seed, stream_with("cust.tprime", k));
        let tp = tprng.uniform_int(1, t_count as u64) as usize;
        let mut eprng = StreamRng::new(seed, stream_with("cust.epsprime", k));
        let ep = Tensor::new(vec![batch, dim], eprng.normal_vec(batch * dim)).unwrap();
        (rows, tp, ep)
    } else {
        (Vec::new(), 1, Tensor::zeros(&[0]))
    };
    StepDraw {
        shot_rows,
        t,
        eps,
        prior_rows,
        t_prime,
        eps_prime,
    }
}

/// Raw per-term values (mean squared error, before lambda and loss weights).
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub shot: f64,
    pub prior: f64,
    pub distill: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub shot_loss: f64,
    pub prior_loss: f64,
    pub distill_loss: f64,
}

fn q_sample_rows(s: &NoiseSchedule, rows: &[&Tensor], t: usize, eps: &Tensor) -> Result<Tensor> {
    let mut out = Vec::with_capacity(eps.len());
    for (i, x0) in rows.iter().enumerate() {
        out.extend(q_sample(s, x0.data(), t, eps.row_slice(i))?);
    }
    Tensor::new(vec![rows.len(), eps.cols()], out)
}

/// Builds the combined customization objective onto a tape. Terms with a
/// zero coefficient are omitted entirely, so a dc-no-prior run at lambda 0
/// constructs the identical graph to a plain run.
#[allow(clippy::too_many_arguments)]
pub fn customization_loss_tape(
    tape: &mut Tape,
    model: &DenoiserModel,
    base: &DenoiserModel,
    s: &NoiseSchedule,
    shot_x0: &[&Tensor],
    rare_token: TokenId,
    prior_x0: &[&Tensor],
    prior_token: TokenId,
    draw: &StepDraw,
    method: Method,
    lambda: f64,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<(crate::gradcore::NodeId, LossComponents)> {
    if shot_x0.is_empty() {
        return Err(Error::config("empty shot batch"));
    }
    if method.needs_buffer() && prior_x0.is_empty() {
        return Err(Error::config(format!(
            "method {} requires a prior batch",
            method.label()
        )));
    }
    let b = shot_x0.len();
    let w_t = s.loss_weight(draw.t)?;

    let xt = q_sample_rows(s, shot_x0, draw.t, &draw.eps)?;
    let pred_shot = model.forward_tape(tape, &xt, &vec![draw.t; b], &vec![rare_token; b], trainable)?;
    let eps_node = tape.constant(draw.eps.clone());
    let shot_msd = tape.mean_sq_diff(pred_shot, eps_node);
    let mut comps = LossComponents {
        shot: tape.value(shot_msd).item(),
        ..LossComponents::default()
    };
    let mut terms = vec![(shot_msd, w_t)];

    let prior_coeff = match method {
        Method::Prior => lambda,
        Method::Dc => 1.0,
        _ => 0.0,
    };
    let distill_coeff = if method.uses_distill_term() { lambda } else { 0.0 };

    if prior_coeff != 0.0 || distill_coeff != 0.0 {
        let w_tp = s.loss_weight(draw.t_prime)?;
        let xpt = q_sample_rows(s, prior_x0, draw.t_prime, &draw.eps_prime)?;
        let ts = vec![draw.t_prime; prior_x0.len()];
        let conds = vec![prior_token; prior_x0.len()];
        let pred_prior = model.forward_tape(tape, &xpt, &ts, &conds, trainable)?;
        if prior_coeff != 0.0 {
            let epsp_node = tape.constant(draw.eps_prime.clone());
            let prior_msd = tape.mean_sq_diff(pred_prior, epsp_node);
            comps.prior = tape.value(prior_msd).item();
            terms.push((prior_msd, prior_coeff * w_tp));
        }
        if distill_coeff != 0.0 {
            let target = base.forward(&xpt, &ts, &conds)?;
            let target_node = tape.constant(target);
            let distill_msd = tape.mean_sq_diff(pred_prior, target_node);
            comps.distill = tape.value(distill_msd).item();
            terms.push((distill_msd, distill_coeff * w_tp));
        }
    }

    Ok((tape.weighted_sum(&terms), comps))
}

/// Loss value without gradients, for oracle tests and probes.
#[allow(clippy::too_many_arguments)]
pub fn customization_loss(
    model: &DenoiserModel,
    base: &DenoiserModel,
    s: &NoiseSchedule,
    shot_x0: &[&Tensor],
    rare_token: TokenId,
    prior_x0: &[&Tensor],
    prior_token: TokenId,
    draw: &StepDraw,
    method: Method,
    lambda: f64,
) -> Result<(f64, LossComponents)> {
    let mut tape = Tape::new();
    let (node, comps) = customization_loss_tape(
        &mut tape, model, base, s, shot_x0, rare_token, prior_x0, prior_token, draw, method,
        lambda, &|_| false,
    )?;
    Ok((tape.value(node).item(), comps))
}

#[derive(Debug)]
pub struct CustomizationOutcome {
    pub model: DenoiserModel,
    pub log: Vec<TrainLogRow>,
    pub rare_token: TokenId,
    pub superclass_token: TokenId,
    pub base_hash: String,
}

/// Binds a concept to a reserve token by finetuning a clone of the base
/// model. The adapted model differs from the base only in groups the scope
/// allows; everything else is asserted bit-identical after the run.
pub fn run_customization(
    base: &DenoiserModel,
    s: &NoiseSchedule,
    concept_id: &str,
    cfg: &CustomizeConfig,
    world: &ConceptWorld,
) -> Result<CustomizationOutcome> {
    cfg.validate()?;
    world.concept(concept_id)?;
    let shots = world.shots_for(concept_id)?;
    if shots.images.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "concept {concept_id} has no shots"
        )));
    }
    let superclass = world.neighbors.superclass_of(concept_id)?;
    let superclass_token = world.class_token(superclass)?;
    let rare_token = match cfg.rare_token {
        Some(t) => t,
        None => *base
            .vocab
            .reserve_tokens()
            .first()
            .ok_or_else(|| Error::config("vocabulary has no reserve tokens"))?,
    };
    if !base.vocab.is_reserve(rare_token) {
        return Err(Error::config(format!(
            "token {rare_token} is not a reserve slot"
        )));
    }

    let base_hash = hex_sha256(&encode_denoiser(base, s, Default::default())?);

    if cfg.steps == 0 {
        return Ok(CustomizationOutcome {
            model: base.clone(),
            log: Vec::new(),
            rare_token,
            superclass_token,
            base_hash,
        });
    }

    let buffer = if cfg.method.needs_buffer() {
        build_prior_buffer(
            base,
            s,
            superclass_token,
            cfg.buffer,
            cfg.seed,
            cfg.buffer_sample_steps,
            &base_hash,
        )?
    } else {
        PriorBuffer {
            cond: superclass_token,
            images: Vec::new(),
            seeds: Vec::new(),
            base_hash: base_hash.clone(),
        }
    };

    let frozen_digests: Vec<(String, [u8; 32])> = base
        .params
        .groups()
        .into_iter()
        .filter(|g| !cfg.scope.trainable(g))
        .map(|g| {
            let d = base.params.group_digest(&g);
            (g, d)
        })
        .collect();

    let mut model = base.clone();
    {
        // seed the reserve slot near its superclass so the token starts as
        // a plausible synonym rather than random noise
        let embed_dim = model.cfg.embed_dim;
        let table = model.params.get_mut("cond_embed.table").unwrap();
        let mut init_rng = StreamRng::from_tag(cfg.seed, "cust.tokeninit");
        let super_row: Vec<f64> = table.row_slice(superclass_token).to_vec();
        let rare_start = rare_token * embed_dim;
        for (j, v) in super_row.iter().enumerate() {
            table.data_mut()[rare_start + j] = v + 0.01 * init_rng.normal();
        }
    }

    let dim = model.cfg.image_h * model.cfg.image_w * model.cfg.image_c;
    let trainable = |g: &str| cfg.scope.trainable(g);
    let mut opt = Optimizer::adam(cfg.lr);
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let draw = draw_step(
            cfg.seed,
            step,
            s.t_count(),
            cfg.batch,
            dim,
            shots.images.len(),
            buffer.images.len(),
        );
        let shot_rows: Vec<&Tensor> = draw.shot_rows.iter().map(|&i| &shots.images[i]).collect();
        let prior_rows: Vec<&Tensor> =
            draw.prior_rows.iter().map(|&i| &buffer.images[i]).collect();

        let mut tape = Tape::new();
        let (node, comps) = customization_loss_tape(
            &mut tape,
            &model,
            base,
            s,
            &shot_rows,
            rare_token,
            &prior_rows,
            buffer.cond,
            &draw,
            cfg.method,
            cfg.lambda,
            &trainable,
        )?;
        let grads = tape.backward(node);
        opt.step(&mut model.params, &grads)?;
        log.push(TrainLogRow {
            step,
            shot_loss: comps.shot,
            prior_loss: comps.prior,
            distill_loss: comps.distill,
        });
    }

    for (group, before) in &frozen_digests {
        assert!(
            model.params.group_digest(group) == *before,
            "frozen group {group} was mutated during customization"
        );
    }
    Ok(CustomizationOutcome {
        model,
        log,
        rare_token,
        superclass_token,
        base_hash,
    })
}
