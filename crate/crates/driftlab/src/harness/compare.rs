//! Quick two-checkpoint diagnostic: seed-matched similarity, a zero-shot
//! accuracy delta, and color drift on a handful of conditions. Runs fully
//! in memory; nothing is stored.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_denoiser;
use crate::diffusion::{sample, GenerationRequest, SamplerKind, TokenId};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::metrics::{
    color_drift_index, cosine, summarize, train_embedder, EmbedderConfig, FeatureEmbedder,
    SimilarityDistribution, DEFAULT_RESOLUTION,
};
use crate::world::{build_world, ConceptWorld, WorldConfig};
use crate::zeroshot::{eval_dataset, StageConfig};

use super::experiment::eval_subset;
use super::store::config_hash;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareConfig {
    /// Probe world; must reproduce the vocabulary both checkpoints trained on.
    pub world: WorldConfig,
    pub embedder: EmbedderConfig,
    pub sampler_steps: usize,
    /// Seed-matched generation pairs per probe condition.
    pub pairs_per_condition: usize,
    /// Number of base-class conditions probed.
    pub probe_conditions: usize,
    /// Total zero-shot probe images (split evenly over classes).
    pub eval_images: usize,
    pub eval_stages: StageConfig,
    pub eval_seed: u64,
    pub gen_seed_base: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            world: WorldConfig::default(),
            embedder: EmbedderConfig::default(),
            sampler_steps: 20,
            pairs_per_condition: 20,
            probe_conditions: 5,
            eval_images: 100,
            eval_stages: StageConfig::default(),
            eval_seed: 1717,
            gen_seed_base: 30_000_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareSummary {
    pub base_hash: String,
    pub adapted_hash: String,
    pub similarity: SimilarityDistribution,
    pub base_accuracy: f64,
    pub adapted_accuracy: f64,
    /// adapted minus base; negative means the adapted model forgot.
    pub accuracy_delta: f64,
    /// Per probe condition: color drift between seed-matched sets.
    pub cdi: Vec<(String, f64)>,
    pub n_eval_images: usize,
}

impl CompareSummary {
    pub fn cdi_mean(&self) -> f64 {
        if self.cdi.is_empty() {
            return 0.0;
        }
        self.cdi.iter().map(|(_, v)| v).sum::<f64>() / self.cdi.len() as f64
    }
}

impl fmt::Display for CompareSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "base     {}", &self.base_hash[..16])?;
        writeln!(f, "adapted  {}", &self.adapted_hash[..16])?;
        writeln!(
            f,
            "similarity  mean {:.6}  median {:.6}  q05 {:.6}",
            self.similarity.mean, self.similarity.median, self.similarity.q05
        )?;
        writeln!(
            f,
            "zero-shot   base {:.4}  adapted {:.4}  delta {:+.4}  ({} images)",
            self.base_accuracy, self.adapted_accuracy, self.accuracy_delta, self.n_eval_images
        )?;
        writeln!(f, "color drift (vs base, seed-matched)")?;
        for (cond, v) in &self.cdi {
            writeln!(f, "  {cond:<16} {v:.6}")?;
        }
        write!(f, "  mean             {:.6}", self.cdi_mean())
    }
}

fn generate_set(
    model: &crate::diffusion::DenoiserModel,
    s: &crate::diffusion::NoiseSchedule,
    cond: TokenId,
    seed_base: u64,
    n: usize,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let req = GenerationRequest {
                cond,
                seed: seed_base + i as u64,
                kind: SamplerKind::DdimDeterministic,
                steps,
            };
            Ok(sample(model, s, &req)?.data().to_vec())
        })
        .collect()
}

fn embed_all(emb: &FeatureEmbedder, sets: &[Vec<f64>], d: usize) -> Result<Vec<Vec<f64>>> {
    let mut flat = Vec::with_capacity(sets.len() * d);
    for s in sets {
        flat.extend_from_slice(s);
    }
    emb.embed_batch(&Tensor::new(vec![sets.len(), d], flat)?)
}

fn check_world_matches(world: &ConceptWorld, vocab: &crate::diffusion::Vocab) -> Result<()> {
    if world.vocab.len() != vocab.len() {
        return Err(Error::config(format!(
            "probe world vocabulary size {} does not match checkpoint {}",
            world.vocab.len(),
            vocab.len()
        )));
    }
    for id in 0..vocab.len() {
        if world.vocab.name(id)? != vocab.name(id)? {
            return Err(Error::config(format!(
                "probe world token {id} is {:?}, checkpoint has {:?}",
                world.vocab.name(id)?,
                vocab.name(id)?
            )));
        }
    }
    Ok(())
}

/// Loads both checkpoints and probes how far the adapted model drifted from
/// the base: seed-matched feature similarity, a small zero-shot accuracy
/// delta, and per-condition color drift.
pub fn compare_models(
    base_path: &Path,
    adapted_path: &Path,
    cfg: &CompareConfig,
) -> Result<CompareSummary> {
    let base = load_denoiser(base_path)?;
    let adapted = load_denoiser(adapted_path)?;
    if base.model.cfg != adapted.model.cfg {
        return Err(Error::config(format!(
            "architecture mismatch: base {:?} vs adapted {:?}",
            base.model.cfg, adapted.model.cfg
        )));
    }
    if base.model.vocab != adapted.model.vocab {
        return Err(Error::config("vocabulary mismatch between checkpoints"));
    }
    if base.schedule.spec() != adapted.schedule.spec() {
        return Err(Error::config("noise schedule mismatch between checkpoints"));
    }
    let mcfg = base.model.cfg;
    if cfg.world.image_h != mcfg.image_h || cfg.world.image_w != mcfg.image_w {
        return Err(Error::config(format!(
            "probe world renders {}x{}, checkpoints want {}x{}",
            cfg.world.image_h, cfg.world.image_w, mcfg.image_h, mcfg.image_w
        )));
    }
    if cfg.sampler_steps == 0 || cfg.sampler_steps > base.schedule.t_count() {
        return Err(Error::config("sampler_steps outside [1, t_count]"));
    }
    if cfg.pairs_per_condition < 2 || cfg.probe_conditions == 0 {
        return Err(Error::config(
            "probe needs at least 2 pairs and 1 condition",
        ));
    }

    let world = build_world(cfg.world.clone())?;
    check_world_matches(&world, &base.model.vocab)?;

    let train: Vec<(Tensor, usize)> = world
        .train
        .iter()
        .map(|l| (l.image.clone(), l.class_index))
        .collect();
    let emb = train_embedder(
        &train,
        world.cfg.classes.len(),
        &cfg.embedder,
        &config_hash(&cfg.world)?,
    )?;

    let d = mcfg.input_dim();
    let conds: Vec<TokenId> = base
        .model
        .vocab
        .base_tokens()
        .into_iter()
        .take(cfg.probe_conditions)
        .collect();

    let mut sims = Vec::new();
    let mut cdi = Vec::new();
    for &tok in &conds {
        let seed0 = cfg.gen_seed_base + tok as u64 * cfg.pairs_per_condition as u64;
        let n = cfg.pairs_per_condition;
        let set_b = generate_set(&base.model, &base.schedule, tok, seed0, n, cfg.sampler_steps)?;
        let set_a = generate_set(
            &adapted.model,
            &adapted.schedule,
            tok,
            seed0,
            n,
            cfg.sampler_steps,
        )?;
        let fb = embed_all(&emb, &set_b, d)?;
        let fa = embed_all(&emb, &set_a, d)?;
        for (a, b) in fa.iter().zip(&fb) {
            sims.push(cosine(a, b)?);
        }
        cdi.push((
            base.model.vocab.name(tok)?.to_string(),
            color_drift_index(&set_b, &set_a, DEFAULT_RESOLUTION)?,
        ));
    }

    let cap = (cfg.eval_images / world.cfg.classes.len()).max(1);
    let data = eval_subset(&world, cap);
    let cands = base.model.vocab.base_tokens();
    let ev_b = eval_dataset(
        &base.model,
        &base.schedule,
        &data,
        &cands,
        &cfg.eval_stages,
        cfg.eval_seed,
    )?;
    let ev_a = eval_dataset(
        &adapted.model,
        &adapted.schedule,
        &data,
        &cands,
        &cfg.eval_stages,
        cfg.eval_seed,
    )?;

    Ok(CompareSummary {
        base_hash: base.file_hash,
        adapted_hash: adapted.file_hash,
        similarity: summarize(&sims)?,
        base_accuracy: ev_b.accuracy,
        adapted_accuracy: ev_a.accuracy,
        accuracy_delta: ev_a.accuracy - ev_b.accuracy,
        cdi,
        n_eval_images: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::save_denoiser;
    use crate::diffusion::{
        make_schedule, train_base, BaseTrainConfig, DenoiserModel, ModelConfig,
    };
    use crate::world::{default_classes, default_concepts};

    fn tiny_world_cfg() -> WorldConfig {
        WorldConfig {
            image_h: 4,
            image_w: 4,
            train_per_class: 2,
            test_per_class: 1,
            train_seed_base: 1_000,
            test_seed_base: 2_000,
            shot_seed_base: 3_000,
            reserve_tokens: 16,
            classes: default_classes(),
            concepts: default_concepts(),
        }
    }

    fn tiny_cfg() -> CompareConfig {
        CompareConfig {
            world: tiny_world_cfg(),
            embedder: EmbedderConfig {
                steps: 250,
                batch: 8,
                min_accuracy: 0.8,
                ..EmbedderConfig::default()
            },
            sampler_steps: 3,
            pairs_per_condition: 3,
            probe_conditions: 2,
            eval_images: 12,
            eval_seed: 3,
            ..CompareConfig::default()
        }
    }

    fn trained_base(dir: &Path, name: &str, hidden: usize) -> std::path::PathBuf {
        let world = build_world(tiny_world_cfg()).unwrap();
        let mcfg = ModelConfig {
            image_h: 4,
            image_w: 4,
            image_c: 3,
            hidden,
            blocks: 1,
            time_features: 8,
            embed_dim: 8,
        };
        let mut m = DenoiserModel::init(mcfg, world.vocab.clone(), 7).unwrap();
        let s = make_schedule(10, 1e-3, 0.05).unwrap();
        let tc = BaseTrainConfig {
            steps: 25,
            batch: 4,
            lr: 1e-3,
            seed: 5,
            cond_dropout: 0.1,
        };
        train_base(&mut m, &s, &world.train_pairs(), &tc).unwrap();
        let path = dir.join(name);
        save_denoiser(&path, &m, &s, Default::default()).unwrap();
        path
    }

    #[test]
    fn identical_checkpoints_hit_identity_values() {
        let tmp = tempfile::tempdir().unwrap();
        let p1 = trained_base(tmp.path(), "a.dlab", 16);
        let p2 = tmp.path().join("b.dlab");
        std::fs::copy(&p1, &p2).unwrap();
        let sum = compare_models(&p1, &p2, &tiny_cfg()).unwrap();
        assert_eq!(sum.similarity.mean, 1.0);
        assert_eq!(sum.similarity.min, 1.0);
        assert_eq!(sum.accuracy_delta, 0.0);
        for (cond, v) in &sum.cdi {
            assert_eq!(*v, 0.0, "cdi for {cond}");
        }
        assert_eq!(sum.base_hash, sum.adapted_hash);
    }

    #[test]
    fn architecture_mismatch_is_a_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let p1 = trained_base(tmp.path(), "a.dlab", 16);
        let p2 = trained_base(tmp.path(), "b.dlab", 24);
        let err = compare_models(&p1, &p2, &tiny_cfg()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn summary_prints_without_panicking() {
        let tmp = tempfile::tempdir().unwrap();
        let p1 = trained_base(tmp.path(), "a.dlab", 16);
        let sum = compare_models(&p1, &p1, &tiny_cfg()).unwrap();
        let text = format!("{sum}");
        assert!(text.contains("zero-shot"));
        assert!(text.contains("color drift"));
    }
}
