use serde::{Deserialize, Serialize};

use super::model::{DenoiserModel, TokenId};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{stream_tag, stream_with, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Deterministic probe-flow sampler; the reference for all drift
    /// comparisons because it removes sampling variance between models.
    DdimDeterministic,
    /// Stochastic ancestral sampler. Per-step noise is keyed by (seed,
    /// timestep) only, never by model state, so two models given the same
    /// request see identical noise.
    DdpmAncestral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub cond: TokenId,
    pub seed: u64,
    pub kind: SamplerKind,
    /// Number of sampler steps; must lie in [1, t_count].
    pub steps: usize,
}

/// Descending timestep grid tau_S > ... > tau_1 with tau_S = T, spaced
/// evenly over [1, T].
pub fn timestep_grid(t_count: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_count {
        return Err(Error::config(format!(
            "steps {steps} outside [1, {t_count}]"
        )));
    }
    let mut taus: Vec<usize> = (1..=steps)
        .map(|j| ((j * t_count) as f64 / steps as f64).round() as usize)
        .map(|t| t.clamp(1, t_count))
        .collect();
    taus.dedup();
    taus.reverse();
    Ok(taus)
}

struct StepTrace {
    timestep: usize,
    noise_norm: f64,
}

fn run(
    model: &DenoiserModel,
    s: &NoiseSchedule,
    req: &GenerationRequest,
    trace: Option<&mut Vec<(usize, f64)>>,
) -> Result<Tensor> {
    if req.cond >= model.vocab.len() {
        return Err(Error::Token(format!(
            "token id {} out of range (vocab {})",
            req.cond,
            model.vocab.len()
        )));
    }
    let taus = timestep_grid(s.t_count(), req.steps)?;
    let d = model.cfg.input_dim();

    let mut init = StreamRng::new(req.seed, stream_tag("sample.init"));
    let mut x = init.normal_vec(d);
    let mut steps_trace: Vec<StepTrace> = Vec::new();

    for (i, &t) in taus.iter().enumerate() {
        let t_prev = if i + 1 < taus.len() { taus[i + 1] } else { 0 };
        let xt = Tensor::new(vec![1, d], x.clone())?;
        let eps_hat = model.forward(&xt, &[t], &[req.cond])?;
        let eps_hat = eps_hat.data();

        let ab = s.alpha_bar(t)?;
        let abp = s.alpha_bar0(t_prev)?;
        let (sab, somb) = (ab.sqrt(), (1.0 - ab).sqrt());

        match req.kind {
            SamplerKind::DdimDeterministic => {
                // x0_hat = (x - sqrt(1-abar) eps) / sqrt(abar), then jump to
                // the previous grid point along the same predicted direction.
                let (sabp, sombp) = (abp.sqrt(), (1.0 - abp).sqrt());
                for j in 0..d {
                    let x0 = (x[j] - somb * eps_hat[j]) / sab;
                    x[j] = sabp * x0 + sombp * eps_hat[j];
                }
            }
            SamplerKind::DdpmAncestral => {
                // Posterior q(x_prev | x_t, x0_hat) over the strided grid.
                let a_step = ab / abp;
                let b_step = 1.0 - a_step;
                let mean_x0 = abp.sqrt() * b_step / (1.0 - ab);
                let mean_xt = a_step.sqrt() * (1.0 - abp) / (1.0 - ab);
                let var = b_step * (1.0 - abp) / (1.0 - ab);
                let sigma = var.max(0.0).sqrt();

                let mut zr = StreamRng::new(req.seed, stream_with("sample.ancestral", t as u64));
                let mut norm2 = 0.0;
                for j in 0..d {
                    let x0 = (x[j] - somb * eps_hat[j]) / sab;
                    let z = if t_prev == 0 { 0.0 } else { zr.normal() };
                    norm2 += z * z;
                    x[j] = mean_x0 * x0 + mean_xt * x[j] + sigma * z;
                }
                steps_trace.push(StepTrace {
                    timestep: t,
                    noise_norm: norm2.sqrt(),
                });
            }
        }
    }

    for v in x.iter_mut() {
        if !v.is_finite() {
            return Err(Error::numerics("sampler produced non-finite values"));
        }
        *v = v.clamp(0.0, 1.0);
    }
    if let Some(out) = trace {
        out.extend(steps_trace.iter().map(|s| (s.timestep, s.noise_norm)));
    }
    Tensor::new(vec![d], x)
}

/// Draws one image for a request. Output is flattened h*w*c, clamped to
/// [0, 1] only after the final step.
pub fn sample(model: &DenoiserModel, s: &NoiseSchedule, req: &GenerationRequest) -> Result<Tensor> {
    run(model, s, req, None)
}

/// Like `sample` but also reports (timestep, ancestral noise norm) per step,
/// which pins down that stochastic noise depends only on (seed, t).
pub fn sample_with_noise_trace(
    model: &DenoiserModel,
    s: &NoiseSchedule,
    req: &GenerationRequest,
) -> Result<(Tensor, Vec<(usize, f64)>)> {
    let mut trace = Vec::new();
    let img = run(model, s, req, Some(&mut trace))?;
    Ok((img, trace))
}
