//! Experiment drivers: named, resumable pipelines from world construction to
//! a finished DriftReport.
//!
//! Every expensive step (base training, embedder fitting, customization,
//! image generation, the report itself) is a store stage keyed by its full
//! upstream config, so interrupted runs resume and identical configs are
//! no-ops. Metrics are always computed from PNG-loaded pixels; the one
//! quantization to u8 happens at generation time and never again, which is
//! what makes fresh and resumed runs agree byte for byte.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_denoiser, save_denoiser};
use crate::customize::{run_customization, CustomizeConfig, Method, ParamScope};
use crate::diffusion::{
    make_schedule, sample, train_base, BaseTrainConfig, DenoiserModel, GenerationRequest,
    ModelConfig, NoiseSchedule, SamplerKind, ScheduleSpec, TokenId,
};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::metrics::{
    color_drift_index, cosine, diversity, fid, kid, load_embedder, save_embedder, summarize,
    train_embedder, EmbedderConfig, FeatureEmbedder, DEFAULT_RESOLUTION,
};
use crate::world::{build_world, ConceptWorld, WorldConfig};
use crate::zeroshot::{eval_dataset, worst_class_drop, EvalReport, StageConfig};

use super::images::{load_image_set, save_image_set};
use super::report::{AccuracyRow, DriftReport, SimilarityRow};
use super::store::{config_hash, write_json, ArtifactStore};

// ── Pipeline spec ──

/// Everything the shared upstream stages (world, base model, embedder,
/// generation) depend on. Stage keys embed the relevant slices of this spec,
/// so editing a knob invalidates exactly the stages that read it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleSpec,
    pub base_train: BaseTrainConfig,
    pub model_seed: u64,
    pub embedder: EmbedderConfig,
    /// Deterministic sampler steps for every generated image set.
    pub sampler_steps: usize,
    pub images_per_condition: usize,
    pub eval_stages: StageConfig,
    pub eval_seed: u64,
    /// Cap on test images per class during zero-shot evals; 0 keeps all.
    pub eval_per_class: usize,
    /// Seeds for treatment generations; the control set reuses these.
    pub gen_seed_base: u64,
    /// Seeds for the base reference sets; must not overlap gen seeds.
    pub ref_seed_base: u64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            world: WorldConfig::default(),
            model: ModelConfig::default(),
            schedule: ScheduleSpec {
                t_count: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
            base_train: BaseTrainConfig::default(),
            model_seed: 7,
            embedder: EmbedderConfig::default(),
            sampler_steps: 50,
            images_per_condition: 200,
            eval_stages: StageConfig::default(),
            eval_seed: 1717,
            eval_per_class: 0,
            gen_seed_base: 10_000_000,
            ref_seed_base: 20_000_000,
        }
    }
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        make_schedule(
            self.schedule.t_count,
            self.schedule.beta_start,
            self.schedule.beta_end,
        )?;
        if self.model.image_h != self.world.image_h || self.model.image_w != self.world.image_w {
            return Err(Error::config(format!(
                "model expects {}x{} images, world renders {}x{}",
                self.model.image_h, self.model.image_w, self.world.image_h, self.world.image_w
            )));
        }
        if self.sampler_steps == 0 || self.sampler_steps > self.schedule.t_count {
            return Err(Error::config("sampler_steps outside [1, t_count]"));
        }
        if self.images_per_condition < 2 {
            return Err(Error::config(
                "images_per_condition must be at least 2 for set metrics",
            ));
        }
        // one seed block per condition token; blocks from the two bases must
        // never collide or the control stops being independent evidence
        let span = (1 + self.world.classes.len() + self.world.reserve_tokens) as u64
            * self.images_per_condition as u64;
        let (g0, g1) = (self.gen_seed_base, self.gen_seed_base + span);
        let (r0, r1) = (self.ref_seed_base, self.ref_seed_base + span);
        if g0 < r1 && r0 < g1 {
            return Err(Error::config(format!(
                "generation seed ranges overlap: gen [{g0},{g1}) vs ref [{r0},{r1})"
            )));
        }
        Ok(())
    }

    pub fn cond_seed(&self, base: u64, cond: TokenId, i: usize) -> u64 {
        base + cond as u64 * self.images_per_condition as u64 + i as u64
    }
}

// ── Stage keys ──

#[derive(Serialize)]
struct BaseKey<'a> {
    world: &'a WorldConfig,
    model: &'a ModelConfig,
    schedule: &'a ScheduleSpec,
    train: &'a BaseTrainConfig,
    model_seed: u64,
}

#[derive(Serialize)]
struct EmbedderKey<'a> {
    world: &'a WorldConfig,
    embedder: &'a EmbedderConfig,
}

#[derive(Serialize)]
struct CustomKey<'a> {
    parent: &'a str,
    concept: &'a str,
    cfg: &'a CustomizeConfig,
}

#[derive(Serialize)]
struct GenKey<'a> {
    model: &'a str,
    cond: TokenId,
    seed_base: u64,
    n: usize,
    steps: usize,
}

#[derive(Serialize)]
struct ProbeKey<'a> {
    model: &'a str,
    conds: &'a [TokenId],
    seed_base: u64,
    n: usize,
    steps: usize,
}

// ── Pipeline ──

/// A loaded model plus the digest that keys every artifact derived from it.
#[derive(Clone, Debug)]
pub struct ModelRef {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub digest: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CustomMeta {
    pub concept: String,
    pub rare_token: TokenId,
    pub superclass_token: TokenId,
    pub parent: String,
}

pub struct Pipeline<'a> {
    pub store: &'a ArtifactStore,
    pub spec: &'a PipelineSpec,
    provenance: RefCell<BTreeMap<String, String>>,
    timings: RefCell<Vec<(String, f64)>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(store: &'a ArtifactStore, spec: &'a PipelineSpec) -> Pipeline<'a> {
        Pipeline {
            store,
            spec,
            provenance: RefCell::new(BTreeMap::new()),
            timings: RefCell::new(Vec::new()),
        }
    }

    fn note(&self, label: &str, hash: String, started: Instant) {
        self.provenance.borrow_mut().insert(label.to_string(), hash);
        self.timings
            .borrow_mut()
            .push((label.to_string(), started.elapsed().as_secs_f64()));
    }

    pub fn provenance(&self) -> BTreeMap<String, String> {
        self.provenance.borrow().clone()
    }

    pub fn timings(&self) -> Vec<(String, f64)> {
        self.timings.borrow().clone()
    }

    pub fn world(&self) -> Result<ConceptWorld> {
        let w = build_world(self.spec.world.clone())?;
        self.provenance
            .borrow_mut()
            .insert("world".into(), config_hash(&self.spec.world)?);
        Ok(w)
    }

    /// Trains (or reloads) the base denoiser.
    pub fn base(&self) -> Result<ModelRef> {
        let started = Instant::now();
        let key = BaseKey {
            world: &self.spec.world,
            model: &self.spec.model,
            schedule: &self.spec.schedule,
            train: &self.spec.base_train,
            model_seed: self.spec.model_seed,
        };
        let spec = self.spec;
        let dir = self.store.stage("base", &key, |dir| {
            let world = build_world(spec.world.clone())?;
            let mut model =
                DenoiserModel::init(spec.model, world.vocab.clone(), spec.model_seed)?;
            let s = make_schedule(
                spec.schedule.t_count,
                spec.schedule.beta_start,
                spec.schedule.beta_end,
            )?;
            let losses = train_base(&mut model, &s, &world.train_pairs(), &spec.base_train)?;
            let mut csv = String::from("step,loss\n");
            for (i, l) in losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l}\n"));
            }
            std::fs::write(dir.join("loss.csv"), csv)?;
            let mut meta = BTreeMap::new();
            meta.insert("world".to_string(), config_hash(&spec.world)?);
            save_denoiser(&dir.join("base.dlab"), &model, &s, meta)?;
            Ok(())
        })?;
        self.note("base", config_hash(&key)?, started);
        self.load_model(dir.join("base.dlab"))
    }

    fn load_model(&self, path: PathBuf) -> Result<ModelRef> {
        let loaded = load_denoiser(&path)?;
        Ok(ModelRef {
            model: loaded.model,
            schedule: loaded.schedule,
            digest: loaded.file_hash,
        })
    }

    /// Trains (or reloads) the frozen feature embedder on the world's train
    /// split.
    pub fn embedder(&self) -> Result<FeatureEmbedder> {
        let started = Instant::now();
        let key = EmbedderKey {
            world: &self.spec.world,
            embedder: &self.spec.embedder,
        };
        let spec = self.spec;
        let dir = self.store.stage("embedder", &key, |dir| {
            let world = build_world(spec.world.clone())?;
            let data: Vec<(Tensor, usize)> = world
                .train
                .iter()
                .map(|l| (l.image.clone(), l.class_index))
                .collect();
            let emb = train_embedder(
                &data,
                world.cfg.classes.len(),
                &spec.embedder,
                &config_hash(&spec.world)?,
            )?;
            save_embedder(&dir.join("embedder.dlab"), &emb)?;
            Ok(())
        })?;
        self.note("embedder", config_hash(&key)?, started);
        load_embedder(&dir.join("embedder.dlab"))
    }

    /// Customizes `parent` on one concept, or reloads the stored result.
    pub fn customize(
        &self,
        parent: &ModelRef,
        concept: &str,
        cfg: &CustomizeConfig,
    ) -> Result<(ModelRef, CustomMeta)> {
        let started = Instant::now();
        let key = CustomKey {
            parent: &parent.digest,
            concept,
            cfg,
        };
        let spec = self.spec;
        let dir = self.store.stage("custom", &key, |dir| {
            let world = build_world(spec.world.clone())?;
            let out = run_customization(&parent.model, &parent.schedule, concept, cfg, &world)?;
            let mut csv = String::from("step,shot_loss,prior_loss,distill_loss\n");
            for row in &out.log {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.step, row.shot_loss, row.prior_loss, row.distill_loss
                ));
            }
            std::fs::write(dir.join("log.csv"), csv)?;
            write_json(
                &dir.join("meta.json"),
                &CustomMeta {
                    concept: concept.to_string(),
                    rare_token: out.rare_token,
                    superclass_token: out.superclass_token,
                    parent: parent.digest.clone(),
                },
            )?;
            let mut meta = BTreeMap::new();
            meta.insert("concept".to_string(), concept.to_string());
            meta.insert("method".to_string(), cfg.method.label().to_string());
            meta.insert("parent".to_string(), parent.digest.clone());
            save_denoiser(&dir.join("adapted.dlab"), &out.model, &parent.schedule, meta)?;
            Ok(())
        })?;
        let label = format!("custom/{concept}/{}", cfg.method.label());
        self.note(&label, config_hash(&key)?, started);
        let meta: CustomMeta = super::store::read_json(&dir.join("meta.json"))?;
        Ok((self.load_model(dir.join("adapted.dlab"))?, meta))
    }

    /// One-condition image set, generated once and always read back from
    /// the stored PNGs.
    pub fn generate(
        &self,
        m: &ModelRef,
        cond: TokenId,
        seed_base: u64,
        n: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let started = Instant::now();
        let key = GenKey {
            model: &m.digest,
            cond,
            seed_base,
            n,
            steps: self.spec.sampler_steps,
        };
        let spec = self.spec;
        let dir = self.store.stage("gen", &key, |dir| {
            let imgs = render_requests(
                m,
                (0..n).map(|i| GenerationRequest {
                    cond,
                    seed: seed_base + i as u64,
                    kind: SamplerKind::DdimDeterministic,
                    steps: spec.sampler_steps,
                }),
            )?;
            save_image_set(&dir.join("images"), &imgs, spec.model.image_h, spec.model.image_w)
        })?;
        self.timings
            .borrow_mut()
            .push((format!("gen/{cond}/{seed_base}"), started.elapsed().as_secs_f64()));
        load_image_set(&dir.join("images"))
    }

    /// Mixed-condition probe set: request i uses `conds[i % len]` and seed
    /// `seed_base + i`, so two models see identical requests.
    pub fn generate_probe(
        &self,
        m: &ModelRef,
        conds: &[TokenId],
        seed_base: u64,
        n: usize,
    ) -> Result<Vec<Vec<f64>>> {
        if conds.is_empty() {
            return Err(Error::config("probe needs at least one condition"));
        }
        let started = Instant::now();
        let key = ProbeKey {
            model: &m.digest,
            conds,
            seed_base,
            n,
            steps: self.spec.sampler_steps,
        };
        let spec = self.spec;
        let dir = self.store.stage("probe", &key, |dir| {
            let imgs = render_requests(
                m,
                (0..n).map(|i| GenerationRequest {
                    cond: conds[i % conds.len()],
                    seed: seed_base + i as u64,
                    kind: SamplerKind::DdimDeterministic,
                    steps: spec.sampler_steps,
                }),
            )?;
            save_image_set(&dir.join("images"), &imgs, spec.model.image_h, spec.model.image_w)
        })?;
        self.timings
            .borrow_mut()
            .push((format!("probe/{seed_base}"), started.elapsed().as_secs_f64()));
        load_image_set(&dir.join("images"))
    }

    /// Zero-shot eval over the capped test split against all base classes.
    pub fn zero_shot_eval(&self, m: &ModelRef, world: &ConceptWorld) -> Result<EvalReport> {
        let data = eval_subset(world, self.spec.eval_per_class);
        let cands = m.model.vocab.base_tokens();
        eval_dataset(
            &m.model,
            &m.schedule,
            &data,
            &cands,
            &self.spec.eval_stages,
            self.spec.eval_seed,
        )
    }

    pub fn embed_set(&self, emb: &FeatureEmbedder, pixels: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.spec.model.input_dim();
        let mut flat = Vec::with_capacity(pixels.len() * d);
        for p in pixels {
            if p.len() != d {
                return Err(Error::config(format!(
                    "image has {} values, expected {d}",
                    p.len()
                )));
            }
            flat.extend_from_slice(p);
        }
        emb.embed_batch(&Tensor::new(vec![pixels.len(), d], flat)?)
    }
}

fn render_requests(
    m: &ModelRef,
    reqs: impl Iterator<Item = GenerationRequest>,
) -> Result<Vec<Tensor>> {
    let reqs: Vec<GenerationRequest> = reqs.collect();
    reqs.par_iter()
        .map(|r| sample(&m.model, &m.schedule, r))
        .collect()
}

/// First `cap` test images per class, in split order; cap 0 keeps all.
pub fn eval_subset(world: &ConceptWorld, cap: usize) -> Vec<(Tensor, TokenId)> {
    let mut taken: BTreeMap<TokenId, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for l in &world.test {
        let c = taken.entry(l.token).or_insert(0);
        if cap == 0 || *c < cap {
            *c += 1;
            out.push((l.image.clone(), l.token));
        }
    }
    out
}

// ── Experiment configs ──

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GlobalDrift,
    SemanticDrift,
    AppearanceDrift,
    LocalDrift,
    BufferAblation,
    Diversity,
    ConceptScaling,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::GlobalDrift,
        ExperimentKind::SemanticDrift,
        ExperimentKind::AppearanceDrift,
        ExperimentKind::LocalDrift,
        ExperimentKind::BufferAblation,
        ExperimentKind::Diversity,
        ExperimentKind::ConceptScaling,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::GlobalDrift => "global-drift",
            ExperimentKind::SemanticDrift => "semantic-drift",
            ExperimentKind::AppearanceDrift => "appearance-drift",
            ExperimentKind::LocalDrift => "local-drift",
            ExperimentKind::BufferAblation => "buffer-ablation",
            ExperimentKind::Diversity => "diversity",
            ExperimentKind::ConceptScaling => "concept-scaling",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::config(format!("unknown experiment kind {s:?}")))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Shared customization knobs for every cell of the experiment matrix;
/// method, scope, and seed come from the cell itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomizeMatrix {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub buffer: usize,
    pub buffer_sample_steps: usize,
    /// None uses each method's default regularizer weight.
    pub lambda: Option<f64>,
}

impl Default for CustomizeMatrix {
    fn default() -> Self {
        CustomizeMatrix {
            steps: 500,
            lr: 1e-4,
            batch: 1,
            buffer: 200,
            buffer_sample_steps: 50,
            lambda: None,
        }
    }
}

impl CustomizeMatrix {
    pub fn cell_config(&self, method: Method, scope: ParamScope, seed: u64) -> CustomizeConfig {
        CustomizeConfig {
            method,
            scope,
            lambda: self.lambda.unwrap_or(method.default_lambda()),
            steps: self.steps,
            lr: self.lr,
            batch: self.batch,
            buffer: self.buffer,
            seed,
            rare_token: None,
            buffer_sample_steps: self.buffer_sample_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub pipeline: PipelineSpec,
    /// Concepts to customize; empty means every world concept.
    pub concepts: Vec<String>,
    pub methods: Vec<Method>,
    pub scopes: Vec<ParamScope>,
    pub run_seeds: Vec<u64>,
    pub custom: CustomizeMatrix,
    /// Base-class conditions for generation experiments; empty means all.
    pub conditions: Vec<String>,
    /// Buffer sizes for buffer-ablation.
    pub buffer_sizes: Vec<usize>,
    /// Concept count ceiling for concept-scaling; 0 means all concepts.
    pub max_concepts: usize,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            pipeline: PipelineSpec::default(),
            concepts: Vec::new(),
            methods: vec![Method::Plain, Method::Prior, Method::Dc, Method::DcNoPrior],
            scopes: vec![ParamScope::All, ParamScope::CondSubset],
            run_seeds: vec![0, 1, 2],
            custom: CustomizeMatrix::default(),
            conditions: Vec::new(),
            buffer_sizes: vec![0, 10, 50, 100, 200],
            max_concepts: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.methods.is_empty() || self.scopes.is_empty() || self.run_seeds.is_empty() {
            return Err(Error::config(
                "methods, scopes, and run_seeds must be non-empty",
            ));
        }
        let known: Vec<&str> = self
            .pipeline
            .world
            .concepts
            .iter()
            .map(|c| c.concept_id.as_str())
            .collect();
        for c in &self.concepts {
            if !known.contains(&c.as_str()) {
                return Err(Error::config(format!("unknown concept {c:?}")));
            }
        }
        let classes: Vec<&str> = self
            .pipeline
            .world
            .classes
            .iter()
            .map(|c| c.class_id.as_str())
            .collect();
        for c in &self.conditions {
            if !classes.contains(&c.as_str()) {
                return Err(Error::config(format!("unknown condition class {c:?}")));
            }
        }
        if self.kind == ExperimentKind::BufferAblation && self.buffer_sizes.is_empty() {
            return Err(Error::config("buffer-ablation needs buffer_sizes"));
        }
        Ok(())
    }

    fn concept_list(&self) -> Vec<String> {
        if self.concepts.is_empty() {
            self.pipeline
                .world
                .concepts
                .iter()
                .map(|c| c.concept_id.clone())
                .collect()
        } else {
            self.concepts.clone()
        }
    }

    fn condition_list(&self) -> Vec<String> {
        if self.conditions.is_empty() {
            self.pipeline
                .world
                .classes
                .iter()
                .map(|c| c.class_id.clone())
                .collect()
        } else {
            self.conditions.clone()
        }
    }
}

/// One point of the concept × method × scope × seed matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub concept: String,
    pub method: Method,
    pub scope: ParamScope,
    pub seed: u64,
}

impl Cell {
    /// Full label, unique across the whole matrix.
    pub fn label(&self) -> String {
        format!("{}/{}", self.concept, self.series())
    }

    /// Label without the concept, for reports where the concept is the
    /// condition axis.
    pub fn series(&self) -> String {
        format!("{}/{}/s{}", self.method.label(), self.scope.label(), self.seed)
    }
}

pub fn matrix_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for concept in cfg.concept_list() {
        for &method in &cfg.methods {
            for &scope in &cfg.scopes {
                for &seed in &cfg.run_seeds {
                    out.push(Cell {
                        concept: concept.clone(),
                        method,
                        scope,
                        seed,
                    });
                }
            }
        }
    }
    out
}

/// Buffer-ablation cannot feed prior or distillation terms with zero prior
/// images; n=0 degrades to a plain shot-only finetune by construction.
pub fn ablation_method(n: usize) -> Method {
    if n == 0 {
        Method::Plain
    } else {
        Method::Dc
    }
}

// ── Runner ──

#[derive(Serialize)]
struct Timings {
    total_seconds: f64,
    phases: Vec<(String, f64)>,
}

/// Runs (or resumes) the experiment and returns the stored report. The
/// report stage is content-addressed like everything else, so a completed
/// experiment is a pure read.
pub fn run_experiment(store: &ArtifactStore, cfg: &ExperimentConfig) -> Result<DriftReport> {
    cfg.validate()?;
    let dir = store.stage("experiment", cfg, |dir| {
        let started = Instant::now();
        let p = Pipeline::new(store, &cfg.pipeline);
        let mut report = DriftReport::new(cfg.kind.label(), config_hash(cfg)?);
        match cfg.kind {
            ExperimentKind::SemanticDrift => semantic_drift(&p, cfg, &mut report)?,
            ExperimentKind::AppearanceDrift => appearance_drift(&p, cfg, &mut report)?,
            ExperimentKind::GlobalDrift => global_drift(&p, cfg, &mut report)?,
            ExperimentKind::LocalDrift => local_drift(&p, cfg, &mut report)?,
            ExperimentKind::BufferAblation => buffer_ablation(&p, cfg, &mut report)?,
            ExperimentKind::Diversity => diversity_experiment(&p, cfg, &mut report)?,
            ExperimentKind::ConceptScaling => concept_scaling(&p, cfg, &mut report)?,
        }
        report.provenance = p.provenance();
        report
            .provenance
            .insert("experiment".into(), config_hash(cfg)?);
        write_json(&dir.join("report.json"), &report)?;
        // wall-clock lives outside the report so reruns stay byte-identical
        write_json(
            &dir.join("timings.json"),
            &Timings {
                total_seconds: started.elapsed().as_secs_f64(),
                phases: p.timings(),
            },
        )?;
        Ok(())
    })?;
    super::store::read_json(&dir.join("report.json"))
}

fn named_accuracies(
    m: &DenoiserModel,
    acc: &BTreeMap<TokenId, f64>,
) -> Result<BTreeMap<String, f64>> {
    acc.iter()
        .map(|(&tok, &a)| Ok((m.vocab.name(tok)?.to_string(), a)))
        .collect()
}

fn accuracy_row(
    series: String,
    m: &DenoiserModel,
    ev: &EvalReport,
    base_acc: Option<&BTreeMap<TokenId, f64>>,
) -> Result<AccuracyRow> {
    let per_class = ev.class_accuracies();
    let (worst_class, worst_drop) = match base_acc {
        Some(b) => {
            let (drop, tok) = worst_class_drop(b, &per_class)?;
            (Some(m.vocab.name(tok)?.to_string()), Some(drop))
        }
        None => (None, None),
    };
    Ok(AccuracyRow {
        series,
        overall: ev.accuracy,
        per_class: named_accuracies(m, &per_class)?,
        worst_class,
        worst_drop,
    })
}

// ── Drivers ──

/// Zero-shot accuracy before and after customization (held-out base
/// classes; the adapted model should stay close to the base).
fn semantic_drift(p: &Pipeline, cfg: &ExperimentConfig, report: &mut DriftReport) -> Result<()> {
    let world = p.world()?;
    let base = p.base()?;
    let base_eval = p.zero_shot_eval(&base, &world)?;
    let base_acc = base_eval.class_accuracies();
    report.accuracy.push(accuracy_row(
        "base".into(),
        &base.model,
        &base_eval,
        None,
    )?);
    report.conditions = cfg.concept_list();

    for cell in matrix_cells(cfg) {
        let ccfg = cfg.custom.cell_config(cell.method, cell.scope, cell.seed);
        let (adapted, _) = p.customize(&base, &cell.concept, &ccfg)?;
        let ev = p.zero_shot_eval(&adapted, &world)?;
        report.accuracy.push(accuracy_row(
            cell.label(),
            &adapted.model,
            &ev,
            Some(&base_acc),
        )?);
        report.push_metric("accuracy", &cell.concept, "base", base_eval.accuracy);
        report.push_metric("accuracy", &cell.concept, &cell.series(), ev.accuracy);
        report.push_metric(
            "accuracy_gap",
            &cell.concept,
            &cell.series(),
            base_eval.accuracy - ev.accuracy,
        );
        let (drop, _) = worst_class_drop(&base_acc, &ev.class_accuracies())?;
        report.push_metric("worst_class_drop", &cell.concept, &cell.series(), drop);
    }
    Ok(())
}

/// Color and feature-space drift of per-class generations. Reference sets
/// come from the base model on one seed block; treatments and the control
/// share a disjoint block, so the control row is the pure seed-noise floor.
fn appearance_drift(p: &Pipeline, cfg: &ExperimentConfig, report: &mut DriftReport) -> Result<()> {
    let world = p.world()?;
    let base = p.base()?;
    let emb = p.embedder()?;
    let spec = p.spec;
    let n = spec.images_per_condition;
    report.conditions = cfg.condition_list();

    let cells = matrix_cells(cfg);
    let mut adapted: Vec<(Cell, ModelRef)> = Vec::with_capacity(cells.len());
    for cell in cells {
        let ccfg = cfg.custom.cell_config(cell.method, cell.scope, cell.seed);
        let (m, _) = p.customize(&base, &cell.concept, &ccfg)?;
        adapted.push((cell, m));
    }

    for class_id in report.conditions.clone() {
        let tok = world.class_token(&class_id)?;
        let reference = p.generate(&base, tok, spec.cond_seed(spec.ref_seed_base, tok, 0), n)?;
        let ref_feats = p.embed_set(&emb, &reference)?;
        let score = |label: &str, pixels: &[Vec<f64>], report: &mut DriftReport| -> Result<()> {
            let feats = p.embed_set(&emb, pixels)?;
            report.push_metric(
                "cdi",
                &class_id,
                label,
                color_drift_index(&reference, pixels, DEFAULT_RESOLUTION)?,
            );
            report.push_metric("kid", &class_id, label, kid(&ref_feats, &feats)?);
            report.push_metric("fid", &class_id, label, fid(&ref_feats, &feats)?);
            Ok(())
        };

        let control = p.generate(&base, tok, spec.cond_seed(spec.gen_seed_base, tok, 0), n)?;
        score("control", &control, report)?;
        for (cell, m) in &adapted {
            let gen = p.generate(m, tok, spec.cond_seed(spec.gen_seed_base, tok, 0), n)?;
            score(&cell.label(), &gen, report)?;
        }
    }
    Ok(())
}

/// Feature similarity of seed-matched generations under mixed conditions;
/// the per-request cosine between a model's output and the base model's
/// output for the identical request.
fn global_drift(p: &Pipeline, cfg: &ExperimentConfig, report: &mut DriftReport) -> Result<()> {
    p.world()?;
    let base = p.base()?;
    let emb = p.embedder()?;
    let n = p.spec.images_per_condition;
    let conds = base.model.vocab.base_tokens();
    let base_set = p.generate_probe(&base, &conds, p.spec.gen_seed_base, n)?;
    let base_feats = p.embed_set(&emb, &base_set)?;
    report.conditions = cfg.concept_list();

    let push_row =
        |condition: &str, series: String, samples: Vec<f64>, report: &mut DriftReport| -> Result<()> {
            let summary = summarize(&samples)?;
            report.push_metric("similarity_median", condition, &series, summary.median);
            report.similarity.push(SimilarityRow {
                condition: condition.to_string(),
                series,
                summary,
                samples,
            });
            Ok(())
        };

    // the base against itself pins the deterministic-sampler ceiling
    let self_sims: Vec<f64> = base_feats
        .iter()
        .map(|f| cosine(f, f))
        .collect::<Result<_>>()?;
    push_row("probe", "control".into(), self_sims, report)?;

    for cell in matrix_cells(cfg) {
        let ccfg = cfg.custom.cell_config(cell.method, cell.scope, cell.seed);
        let (adapted, _) = p.customize(&base, &cell.concept, &ccfg)?;
        let set = p.generate_probe(&adapted, &conds, p.spec.gen_seed_base, n)?;
        let feats = p.embed_set(&emb, &set)?;
        let sims: Vec<f64> = base_feats
            .iter()
            .zip(&feats)
            .map(|(a, b)| cosine(a, b))
            .collect::<Result<_>>()?;
        push_row(&cell.concept, cell.series(), sims, report)?;
    }
    Ok(())
}

/// Accuracy drops split by recipe similarity to the new concept: its
/// nearest base classes against the rest.
fn local_drift(p: &Pipeline, cfg: &ExperimentConfig, report: &mut DriftReport) -> Result<()> {
    const NEAR: usize = 3;
    let world = p.world()?;
    let base = p.base()?;
    let base_eval = p.zero_shot_eval(&base, &world)?;
    let base_acc = base_eval.class_accuracies();
    report.conditions = vec!["near".into(), "far".into()];
    report
        .accuracy
        .push(accuracy_row("base".into(), &base.model, &base_eval, None)?);

    for cell in matrix_cells(cfg) {
        let ccfg = cfg.custom.cell_config(cell.method, cell.scope, cell.seed);
        let (adapted, _) = p.customize(&base, &cell.concept, &ccfg)?;
        let ev = p.zero_shot_eval(&adapted, &world)?;
        let acc = ev.class_accuracies();
        let ranked = world
            .neighbors
            .ranked
            .get(&cell.concept)
            .ok_or_else(|| Error::config(format!("no ranking for {}", cell.concept)))?;
        let near_ids: Vec<&str> = ranked.iter().take(NEAR).map(|(id, _)| id.as_str()).collect();

        let mut near = Vec::new();
        let mut far = Vec::new();
        for (&tok, &b) in &base_acc {
            let name = adapted.model.vocab.name(tok)?;
            let drop = b - acc[&tok];
            report.push_metric("class_drop", name, &cell.label(), drop);
            if near_ids.contains(&name) {
                near.push(drop);
            } else {
                far.push(drop);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        report.push_metric("local_drop", "near", &cell.label(), mean(&near));
        report.push_metric("local_drop", "far", &cell.label(), mean(&far));
        report.accuracy.push(accuracy_row(
            cell.label(),
            &adapted.model,
            &ev,
            Some(&base_acc),
        )?);
    }
    Ok(())
}

/// Zero-shot accuracy as a function of prior-buffer size.
fn buffer_ablation(p: &Pipeline, cfg: &ExperimentConfig, report: &mut DriftReport) -> Result<()> {
    let world = p.world()?;
    let base = p.base()?;
    let concept = cfg
        .concept_list()
        .first()
        .cloned()
        .ok_or_else(|| Error::config("buffer-ablation needs a concept"))?;
    let scope = cfg.scopes[0];
    report.conditions = cfg.buffer_sizes.iter().map(|n| n.to_string()).collect();

    for &n in &cfg.buffer_sizes {
        let mut accs = Vec::new();
        for &seed in &cfg.run_seeds {
            let method = ablation_method(n);
            let mut ccfg = cfg.custom.cell_config(method, scope, seed);
            ccfg.buffer = n;
            let (adapted, _) = p.customize(&base, &concept, &ccfg)?;
            let ev = p.zero_shot_eval(&adapted, &world)?;
            report.push_metric("accuracy", &n.to_string(), &format!("s{seed}"), ev.accuracy);
            accs.push(ev.accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        report.push_metric("accuracy", &n.to_string(), "mean", mean);
    }
    report
        .notes
        .push(format!("buffer-ablation concept: {concept}; n=0 runs plain"));
    Ok(())
}

/// Mean pairwise feature distance of per-class generations.
fn diversity_experiment(p: &Pipeline, cfg: &ExperimentConfig, report: &mut DriftReport) -> Result<()> {
    let world = p.world()?;
    let base = p.base()?;
    let emb = p.embedder()?;
    let spec = p.spec;
    let n = spec.images_per_condition;
    report.conditions = cfg.condition_list();

    let cells = matrix_cells(cfg);
    let mut adapted: Vec<(Cell, ModelRef)> = Vec::with_capacity(cells.len());
    for cell in cells {
        let ccfg = cfg.custom.cell_config(cell.method, cell.scope, cell.seed);
        let (m, _) = p.customize(&base, &cell.concept, &ccfg)?;
        adapted.push((cell, m));
    }

    for class_id in report.conditions.clone() {
        let tok = world.class_token(&class_id)?;
        let seed0 = spec.cond_seed(spec.gen_seed_base, tok, 0);
        let base_set = p.generate(&base, tok, seed0, n)?;
        report.push_metric(
            "diversity",
            &class_id,
            "base",
            diversity(&p.embed_set(&emb, &base_set)?)?,
        );
        for (cell, m) in &adapted {
            let set = p.generate(m, tok, seed0, n)?;
            report.push_metric(
                "diversity",
                &class_id,
                &cell.label(),
                diversity(&p.embed_set(&emb, &set)?)?,
            );
        }
    }
    Ok(())
}

/// Sequential customization: concepts are bound one after another, each new
/// run distilling against the previous model, and accuracy is tracked as
/// the concept count grows.
fn concept_scaling(p: &Pipeline, cfg: &ExperimentConfig, report: &mut DriftReport) -> Result<()> {
    let world = p.world()?;
    let base = p.base()?;
    let base_eval = p.zero_shot_eval(&base, &world)?;
    let order = cfg.concept_list();
    let k_max = if cfg.max_concepts == 0 {
        order.len()
    } else {
        cfg.max_concepts.min(order.len())
    };
    let reserve = base.model.vocab.reserve_tokens();
    if reserve.len() < k_max {
        return Err(Error::config(format!(
            "{k_max} concepts need {k_max} reserve tokens, vocab has {}",
            reserve.len()
        )));
    }
    let method = cfg.methods[0];
    let scope = cfg.scopes[0];
    report.conditions = (1..=k_max).map(|k| k.to_string()).collect();
    report.push_metric("accuracy", "0", "base", base_eval.accuracy);

    for &seed in &cfg.run_seeds {
        let mut current = base.clone();
        for (i, concept) in order[..k_max].iter().enumerate() {
            let mut ccfg = cfg.custom.cell_config(method, scope, seed);
            ccfg.rare_token = Some(reserve[i]);
            let (next, _) = p.customize(&current, concept, &ccfg)?;
            let ev = p.zero_shot_eval(&next, &world)?;
            report.push_metric(
                "accuracy",
                &(i + 1).to_string(),
                &format!("{}/{}/s{seed}", method.label(), scope.label()),
                ev.accuracy,
            );
            current = next;
        }
    }
    report
        .notes
        .push(format!("scaling order: {}", order[..k_max].join(", ")));
    Ok(())
}
