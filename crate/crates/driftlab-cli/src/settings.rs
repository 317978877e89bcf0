//! Mapping from the sectioned key-value config file onto harness specs.
//! Every knob has the library default; a config file overrides selectively
//! and command-line flags override the file.

use driftlab::config::ConfigFile;
use driftlab::customize::{Method, ParamScope};
use driftlab::diffusion::{BaseTrainConfig, ModelConfig, ScheduleSpec};
use driftlab::error::{Error, Result};
use driftlab::harness::{CompareConfig, CustomizeMatrix, PipelineSpec};
use driftlab::metrics::EmbedderConfig;
use driftlab::world::WorldConfig;
use driftlab::zeroshot::{StageConfig, StageSpec};

pub fn world_config(c: &ConfigFile) -> Result<WorldConfig> {
    let d = WorldConfig::default();
    Ok(WorldConfig {
        image_h: c.get_usize("world", "image_h", d.image_h)?,
        image_w: c.get_usize("world", "image_w", d.image_w)?,
        train_per_class: c.get_usize("world", "train_per_class", d.train_per_class)?,
        test_per_class: c.get_usize("world", "test_per_class", d.test_per_class)?,
        train_seed_base: c.get_u64("world", "train_seed_base", d.train_seed_base)?,
        test_seed_base: c.get_u64("world", "test_seed_base", d.test_seed_base)?,
        shot_seed_base: c.get_u64("world", "shot_seed_base", d.shot_seed_base)?,
        reserve_tokens: c.get_usize("world", "reserve_tokens", d.reserve_tokens)?,
        classes: d.classes,
        concepts: d.concepts,
    })
}

fn model_config(c: &ConfigFile, world: &WorldConfig) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    Ok(ModelConfig {
        image_h: world.image_h,
        image_w: world.image_w,
        image_c: d.image_c,
        hidden: c.get_usize("model", "hidden", d.hidden)?,
        blocks: c.get_usize("model", "blocks", d.blocks)?,
        time_features: c.get_usize("model", "time_features", d.time_features)?,
        embed_dim: c.get_usize("model", "embed_dim", d.embed_dim)?,
    })
}

/// "8:6,32:1" -> two stages (8 trials keep 6, 32 trials keep 1).
pub fn parse_stages(text: &str) -> Result<StageConfig> {
    let mut stages = Vec::new();
    for part in text.split(',') {
        let (t, k) = part
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::config(format!("stage {part:?} is not trials:keep")))?;
        stages.push(StageSpec {
            trials: t
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad trial count {t:?}")))?,
            keep: k
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad keep count {k:?}")))?,
        });
    }
    Ok(StageConfig { stages })
}

pub fn pipeline_spec(c: &ConfigFile) -> Result<PipelineSpec> {
    let d = PipelineSpec::default();
    let world = world_config(c)?;
    let model = model_config(c, &world)?;
    let eval_stages = match c.get("eval", "stages") {
        Some(text) => parse_stages(text)?,
        None => d.eval_stages,
    };
    let de = EmbedderConfig::default();
    let spec = PipelineSpec {
        model,
        schedule: ScheduleSpec {
            t_count: c.get_usize("schedule", "t_count", d.schedule.t_count)?,
            beta_start: c.get_f64("schedule", "beta_start", d.schedule.beta_start)?,
            beta_end: c.get_f64("schedule", "beta_end", d.schedule.beta_end)?,
        },
        base_train: BaseTrainConfig {
            steps: c.get_usize("train", "steps", d.base_train.steps)?,
            batch: c.get_usize("train", "batch", d.base_train.batch)?,
            lr: c.get_f64("train", "lr", d.base_train.lr)?,
            seed: c.get_u64("train", "seed", d.base_train.seed)?,
            cond_dropout: c.get_f64("train", "cond_dropout", d.base_train.cond_dropout)?,
        },
        model_seed: c.get_u64("train", "model_seed", d.model_seed)?,
        embedder: EmbedderConfig {
            hidden1: c.get_usize("embedder", "hidden1", de.hidden1)?,
            hidden2: c.get_usize("embedder", "hidden2", de.hidden2)?,
            steps: c.get_usize("embedder", "steps", de.steps)?,
            batch: c.get_usize("embedder", "batch", de.batch)?,
            lr: c.get_f64("embedder", "lr", de.lr)?,
            seed: c.get_u64("embedder", "seed", de.seed)?,
            min_accuracy: c.get_f64("embedder", "min_accuracy", de.min_accuracy)?,
        },
        sampler_steps: c.get_usize("sampler", "steps", d.sampler_steps)?,
        images_per_condition: c.get_usize("sampler", "images_per_condition", d.images_per_condition)?,
        eval_stages,
        eval_seed: c.get_u64("eval", "seed", d.eval_seed)?,
        eval_per_class: c.get_usize("eval", "per_class", d.eval_per_class)?,
        gen_seed_base: c.get_u64("seeds", "gen_seed_base", d.gen_seed_base)?,
        ref_seed_base: c.get_u64("seeds", "ref_seed_base", d.ref_seed_base)?,
        world,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn customize_matrix(c: &ConfigFile) -> Result<CustomizeMatrix> {
    let d = CustomizeMatrix::default();
    Ok(CustomizeMatrix {
        steps: c.get_usize("custom", "steps", d.steps)?,
        lr: c.get_f64("custom", "lr", d.lr)?,
        batch: c.get_usize("custom", "batch", d.batch)?,
        buffer: c.get_usize("custom", "buffer", d.buffer)?,
        buffer_sample_steps: c.get_usize("custom", "buffer_sample_steps", d.buffer_sample_steps)?,
        lambda: match c.get("custom", "lambda") {
            Some(raw) => Some(raw.parse::<f64>().map_err(|_| {
                Error::config(format!("[custom] lambda = {raw:?} is not a number"))
            })?),
            None => d.lambda,
        },
    })
}

pub fn compare_config(c: &ConfigFile) -> Result<CompareConfig> {
    let d = CompareConfig::default();
    let eval_stages = match c.get("eval", "stages") {
        Some(text) => parse_stages(text)?,
        None => d.eval_stages,
    };
    let de = EmbedderConfig::default();
    Ok(CompareConfig {
        world: world_config(c)?,
        embedder: EmbedderConfig {
            hidden1: c.get_usize("embedder", "hidden1", de.hidden1)?,
            hidden2: c.get_usize("embedder", "hidden2", de.hidden2)?,
            steps: c.get_usize("embedder", "steps", de.steps)?,
            batch: c.get_usize("embedder", "batch", de.batch)?,
            lr: c.get_f64("embedder", "lr", de.lr)?,
            seed: c.get_u64("embedder", "seed", de.seed)?,
            min_accuracy: c.get_f64("embedder", "min_accuracy", de.min_accuracy)?,
        },
        sampler_steps: c.get_usize("compare", "sampler_steps", d.sampler_steps)?,
        pairs_per_condition: c.get_usize("compare", "pairs_per_condition", d.pairs_per_condition)?,
        probe_conditions: c.get_usize("compare", "probe_conditions", d.probe_conditions)?,
        eval_images: c.get_usize("compare", "eval_images", d.eval_images)?,
        eval_stages,
        eval_seed: c.get_u64("eval", "seed", d.eval_seed)?,
        gen_seed_base: c.get_u64("compare", "gen_seed_base", d.gen_seed_base)?,
    })
}

pub fn parse_methods(items: &[String]) -> Result<Vec<Method>> {
    items.iter().map(|s| s.parse()).collect()
}

pub fn parse_scopes(items: &[String]) -> Result<Vec<ParamScope>> {
    items.iter().map(|s| s.parse()).collect()
}
