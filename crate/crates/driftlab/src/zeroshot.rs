//! Zero-shot classification by denoising error. Each candidate token scores
//! an input by how well the conditional model predicts the injected noise on
//! corrupted copies; the candidate with the lowest reconstruction error wins.
//!
//! Trials are paired: every candidate sees the same (t, eps) draws, so the
//! comparison between candidates is low-variance even with few trials. The
//! staged schedule spends a few trials eliminating hopeless candidates, then
//! concentrates the budget on the survivors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{q_sample, DenoiserModel, NoiseSchedule, TokenId};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{stream_with, StreamRng};

#[derive(Clone, Debug)]
pub struct EvalNoise {
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Frozen evaluation noise: the same pairs score every candidate and every
/// image, which makes accuracies comparable across models and runs.
#[derive(Clone, Debug)]
pub struct EvalNoiseSet {
    pub pairs: Vec<EvalNoise>,
}

impl EvalNoiseSet {
    /// Timesteps stay in the middle band [0.2 T, 0.8 T]. Very small t makes
    /// every candidate trivially right, very large t is pure noise; both
    /// regimes waste trials.
    pub fn generate(n: usize, dim: usize, t_count: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("need at least one eval pair"));
        }
        if dim == 0 {
            return Err(Error::config("zero-dimensional eval noise"));
        }
        if t_count < 5 {
            return Err(Error::config("schedule too short for banded eval"));
        }
        let lo = ((0.2 * t_count as f64).ceil() as usize).max(1);
        let hi = (0.8 * t_count as f64).floor() as usize;
        let mut t_rng = StreamRng::from_tag(seed, "evalnoise.t");
        let pairs = (0..n)
            .map(|i| {
                let t = t_rng.uniform_int(lo as u64, hi as u64) as usize;
                let mut e = StreamRng::new(seed, stream_with("evalnoise.eps", i as u64));
                EvalNoise {
                    t,
                    eps: e.normal_vec(dim),
                }
            })
            .collect();
        Ok(EvalNoiseSet { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    /// Fresh trials added in this stage.
    pub trials: usize,
    /// Candidates surviving into the next stage.
    pub keep: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stages: Vec<StageSpec>,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            stages: vec![
                StageSpec { trials: 8, keep: 6 },
                StageSpec { trials: 32, keep: 1 },
            ],
        }
    }
}

impl StageConfig {
    /// Keeps must shrink strictly and end at exactly one winner.
    pub fn validate(&self, n_candidates: usize) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("no stages configured"));
        }
        if n_candidates == 0 {
            return Err(Error::config("no candidates to stage over"));
        }
        let mut prev = n_candidates;
        for (i, s) in self.stages.iter().enumerate() {
            if s.trials == 0 {
                return Err(Error::config(format!("stage {i} has zero trials")));
            }
            if s.keep == 0 || s.keep >= prev {
                return Err(Error::config(format!(
                    "stage {i} keeps {} of {prev} candidates; keeps must shrink",
                    s.keep
                )));
            }
            prev = s.keep;
        }
        if prev != 1 {
            return Err(Error::config("final stage must keep exactly one candidate"));
        }
        Ok(())
    }

    pub fn total_trials(&self) -> usize {
        self.stages.iter().map(|s| s.trials).sum()
    }
}

/// One paired trial: corrupt the input once, predict the noise under every
/// candidate in a single batched forward, return per-candidate mean squared
/// error per pixel.
fn trial_errors(
    model: &DenoiserModel,
    s: &NoiseSchedule,
    x0: &[f64],
    pair: &EvalNoise,
    cands: &[TokenId],
) -> Result<Vec<f64>> {
    let xt = q_sample(s, x0, pair.t, &pair.eps)?;
    let d = xt.len();
    let mut data = Vec::with_capacity(cands.len() * d);
    for _ in 0..cands.len() {
        data.extend_from_slice(&xt);
    }
    let x = Tensor::new(vec![cands.len(), d], data)?;
    let ts = vec![pair.t; cands.len()];
    let pred = model.forward(&x, &ts, cands)?;
    Ok((0..cands.len())
        .map(|r| {
            let p = pred.row_slice(r);
            let mut acc = 0.0;
            for (a, b) in p.iter().zip(&pair.eps) {
                let e = a - b;
                acc += e * e;
            }
            acc / d as f64
        })
        .collect())
}

fn validate_candidates(cands: &[TokenId]) -> Result<()> {
    if cands.is_empty() {
        return Err(Error::DegenerateInput("no candidate tokens".into()));
    }
    let mut seen = cands.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != cands.len() {
        return Err(Error::config("duplicate candidate tokens"));
    }
    Ok(())
}

/// Softmax of negated mean errors, computed with a max shift so constant
/// error vectors give an exactly uniform posterior.
pub fn class_posterior(
    model: &DenoiserModel,
    s: &NoiseSchedule,
    x0: &Tensor,
    cands: &[TokenId],
    noise: &EvalNoiseSet,
) -> Result<Vec<f64>> {
    validate_candidates(cands)?;
    if noise.is_empty() {
        return Err(Error::config("empty eval noise set"));
    }
    let mut sums = vec![0.0f64; cands.len()];
    for pair in &noise.pairs {
        let errs = trial_errors(model, s, x0.data(), pair, cands)?;
        for (acc, e) in sums.iter_mut().zip(&errs) {
            *acc += e;
        }
    }
    let n = noise.len() as f64;
    let z: Vec<f64> = sums.iter().map(|e| -(e / n)).collect();
    let zmax = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    let total: f64 = exps.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::numerics("posterior normalization failed"));
    }
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[derive(Clone, Debug)]
pub struct StagedClassification {
    pub token: TokenId,
    /// Survivors after each stage, best first.
    pub survivors: Vec<Vec<TokenId>>,
    /// Running mean error per candidate, over however many trials it saw.
    pub errors: BTreeMap<TokenId, f64>,
    pub trials_used: usize,
}

/// Classifies with a shrinking candidate set. Error means accumulate across
/// stages, so later stages refine rather than restart; ties always resolve
/// toward the lowest token id.
pub fn classify_staged(
    model: &DenoiserModel,
    s: &NoiseSchedule,
    x0: &Tensor,
    cands: &[TokenId],
    stages: &StageConfig,
    noise: &EvalNoiseSet,
) -> Result<StagedClassification> {
    validate_candidates(cands)?;
    stages.validate(cands.len())?;
    if noise.len() < stages.total_trials() {
        return Err(Error::config(format!(
            "noise set has {} pairs but stages need {}",
            noise.len(),
            stages.total_trials()
        )));
    }

    let mut sums: BTreeMap<TokenId, (f64, usize)> =
        cands.iter().map(|&c| (c, (0.0, 0))).collect();
    let mut alive: Vec<TokenId> = cands.to_vec();
    let mut survivors = Vec::with_capacity(stages.stages.len());
    let mut cursor = 0usize;

    for stage in &stages.stages {
        for pair in &noise.pairs[cursor..cursor + stage.trials] {
            let errs = trial_errors(model, s, x0.data(), pair, &alive)?;
            for (tok, e) in alive.iter().zip(&errs) {
                let slot = sums.get_mut(tok).unwrap();
                slot.0 += e;
                slot.1 += 1;
            }
        }
        cursor += stage.trials;
        alive.sort_by(|a, b| {
            let ma = sums[a].0 / sums[a].1 as f64;
            let mb = sums[b].0 / sums[b].1 as f64;
            ma.total_cmp(&mb).then(a.cmp(b))
        });
        alive.truncate(stage.keep);
        survivors.push(alive.clone());
    }

    let errors = sums
        .into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(tok, (sum, n))| (tok, sum / n as f64))
        .collect();
    Ok(StagedClassification {
        token: alive[0],
        survivors,
        errors,
        trials_used: cursor,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ClassScore {
    pub n: usize,
    pub correct: usize,
}

impl ClassScore {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_class: BTreeMap<TokenId, ClassScore>,
    pub trials_per_image: usize,
}

impl EvalReport {
    pub fn class_accuracies(&self) -> BTreeMap<TokenId, f64> {
        self.per_class
            .iter()
            .map(|(&t, s)| (t, s.accuracy()))
            .collect()
    }
}

/// Staged classification over a labeled set, one shared noise set for all
/// images. Images are scored in parallel; the report is order-independent.
pub fn eval_dataset(
    model: &DenoiserModel,
    s: &NoiseSchedule,
    data: &[(Tensor, TokenId)],
    cands: &[TokenId],
    stages: &StageConfig,
    seed: u64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::DegenerateInput("empty evaluation set".into()));
    }
    validate_candidates(cands)?;
    stages.validate(cands.len())?;
    for (_, label) in data {
        if !cands.contains(label) {
            return Err(Error::config(format!(
                "label token {label} is not among the candidates"
            )));
        }
    }
    let dim = data[0].0.len();
    let noise = EvalNoiseSet::generate(stages.total_trials(), dim, s.t_count(), seed)?;

    let picks: Vec<TokenId> = data
        .par_iter()
        .map(|(img, _)| classify_staged(model, s, img, cands, stages, &noise).map(|c| c.token))
        .collect::<Result<_>>()?;

    let mut per_class: BTreeMap<TokenId, ClassScore> = BTreeMap::new();
    let mut correct = 0usize;
    for ((_, label), pick) in data.iter().zip(&picks) {
        let slot = per_class
            .entry(*label)
            .or_insert(ClassScore { n: 0, correct: 0 });
        slot.n += 1;
        if pick == label {
            slot.correct += 1;
            correct += 1;
        }
    }
    for c in cands {
        if !per_class.contains_key(c) {
            log::warn!("candidate token {c} has no examples in the eval set");
        }
    }
    Ok(EvalReport {
        n: data.len(),
        correct,
        accuracy: correct as f64 / data.len() as f64,
        per_class,
        trials_per_image: stages.total_trials(),
    })
}

/// Largest per-class accuracy drop from `before` to `after`. Both maps must
/// cover the same classes; ties resolve toward the lowest token id.
pub fn worst_class_drop(
    before: &BTreeMap<TokenId, f64>,
    after: &BTreeMap<TokenId, f64>,
) -> Result<(f64, TokenId)> {
    if before.is_empty() {
        return Err(Error::DegenerateInput("no classes to compare".into()));
    }
    if before.len() != after.len() || before.keys().any(|k| !after.contains_key(k)) {
        return Err(Error::config("class sets differ between the two reports"));
    }
    let mut best: Option<(f64, TokenId)> = None;
    for (&tok, &b) in before {
        let drop = b - after[&tok];
        match best {
            Some((d, _)) if drop <= d => {}
            _ => best = Some((drop, tok)),
        }
    }
    Ok(best.unwrap())
}
