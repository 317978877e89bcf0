//! driftlab command line: world inspection, base training, customization,
//! drift experiments, report rendering, and checkpoint comparison.
//!
//! Configuration layers, weakest first: library defaults, then the
//! `--config` file, then flags. The artifact store root comes from
//! `--store`, falling back to DLAB_HOME, falling back to ./dlab_store.

mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use driftlab::checkpoint::{load_denoiser, save_denoiser};
use driftlab::config::ConfigFile;
use driftlab::customize::{run_customization, CustomizeConfig};
use driftlab::error::{Error, Result};
use driftlab::harness::{
    compare_models, parse_formats, render_report, run_experiment, ArtifactStore, DriftReport,
    ExperimentConfig, ExperimentKind, Pipeline, PipelineSpec,
};
use driftlab::world::build_world;

#[derive(Parser)]
#[command(name = "driftlab", version, about = "Concept drift lab for small conditional diffusion models")]
struct Cli {
    /// Sectioned key = value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact store root (overrides DLAB_HOME).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// World dataset commands.
    World {
        #[command(subcommand)]
        cmd: WorldCmd,
    },
    /// Train (or resume) the base denoiser in the artifact store.
    TrainBase(TrainBaseArgs),
    /// Bind one concept to a rare token by finetuning a base checkpoint.
    Customize(CustomizeArgs),
    /// Run a drift evaluation experiment.
    Eval(EvalArgs),
    /// Run an ablation experiment.
    Ablate(AblateArgs),
    /// List stored experiments or re-render one.
    Report(ReportArgs),
    /// Compare two checkpoints: similarity, accuracy delta, color drift.
    Compare(CompareArgs),
}

#[derive(Subcommand)]
enum WorldCmd {
    /// Render the world and print its composition; optionally export samples.
    Build {
        /// Directory for sample PNGs and the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainBaseArgs {
    /// Override [train] steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Copy the finished checkpoint here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CustomizeArgs {
    /// Base checkpoint to adapt.
    #[arg(long)]
    base: PathBuf,
    /// Concept id from the world (e.g. star_yellow).
    #[arg(long)]
    concept: String,
    /// plain | prior | dc | dc-no-prior
    #[arg(long, default_value = "dc")]
    method: String,
    /// all | cond
    #[arg(long, default_value = "all")]
    scope: String,
    /// Regularizer weight; defaults to the method's standard value.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Write the training curve (step, shot, prior, distill) here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    /// Concepts to customize (default: every world concept).
    #[arg(long, value_delimiter = ',')]
    concepts: Vec<String>,
    /// Methods: plain, prior, dc, dc-no-prior.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Parameter scopes: all, cond.
    #[arg(long, value_delimiter = ',')]
    scopes: Vec<String>,
    /// Customization run seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Base-class conditions for generation metrics (default: all).
    #[arg(long, value_delimiter = ',')]
    conditions: Vec<String>,
    /// Generated images per condition.
    #[arg(long)]
    images: Option<usize>,
    /// Customization steps per run.
    #[arg(long)]
    steps: Option<usize>,
    /// Prior buffer size.
    #[arg(long)]
    buffer: Option<usize>,
    /// Buffer sizes for the buffer ablation.
    #[arg(long, value_delimiter = ',')]
    buffer_sizes: Vec<usize>,
    /// Concept count ceiling for scaling.
    #[arg(long)]
    max_concepts: Option<usize>,
    /// Report output directory (default: render/ inside the experiment stage).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats: csv, json, svg (default: all).
    #[arg(long, value_delimiter = ',')]
    formats: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// semantic | appearance | local | global
    what: String,
    #[command(flatten)]
    matrix: MatrixArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// buffer | diversity | scaling
    what: String,
    #[command(flatten)]
    matrix: MatrixArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment id prefix (see `report --list`).
    #[arg(long)]
    id: Option<String>,
    /// List stored experiments.
    #[arg(long)]
    list: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    formats: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    adapted: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg_file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let store = || -> Result<ArtifactStore> {
        match &cli.store {
            Some(p) => ArtifactStore::open(p.clone()),
            None => ArtifactStore::from_env(),
        }
    };

    match cli.cmd {
        Cmd::World { cmd: WorldCmd::Build { out } } => world_build(&cfg_file, out),
        Cmd::TrainBase(args) => train_base_cmd(&cfg_file, &store()?, args),
        Cmd::Customize(args) => customize_cmd(&cfg_file, args),
        Cmd::Eval(args) => {
            let kind = match args.what.as_str() {
                "semantic" => ExperimentKind::SemanticDrift,
                "appearance" => ExperimentKind::AppearanceDrift,
                "local" => ExperimentKind::LocalDrift,
                "global" => ExperimentKind::GlobalDrift,
                other => {
                    return Err(Error::config(format!(
                        "unknown eval {other:?} (semantic, appearance, local, global)"
                    )))
                }
            };
            experiment_cmd(&cfg_file, &store()?, kind, args.matrix)
        }
        Cmd::Ablate(args) => {
            let kind = match args.what.as_str() {
                "buffer" => ExperimentKind::BufferAblation,
                "diversity" => ExperimentKind::Diversity,
                "scaling" => ExperimentKind::ConceptScaling,
                other => {
                    return Err(Error::config(format!(
                        "unknown ablation {other:?} (buffer, diversity, scaling)"
                    )))
                }
            };
            experiment_cmd(&cfg_file, &store()?, kind, args.matrix)
        }
        Cmd::Report(args) => report_cmd(&store()?, args),
        Cmd::Compare(args) => {
            let cfg = settings::compare_config(&cfg_file)?;
            let summary = compare_models(&args.base, &args.adapted, &cfg)?;
            println!("{summary}");
            Ok(())
        }
    }
}

fn world_build(cfg_file: &ConfigFile, out: Option<PathBuf>) -> Result<()> {
    let wc = settings::world_config(cfg_file)?;
    let world = build_world(wc)?;
    println!(
        "world: {} classes x {} train / {} test, {}x{} px",
        world.cfg.classes.len(),
        world.cfg.train_per_class,
        world.cfg.test_per_class,
        world.cfg.image_h,
        world.cfg.image_w
    );
    for c in &world.cfg.concepts {
        let ranked = &world.neighbors.ranked[&c.concept_id];
        let near: Vec<&str> = ranked.iter().take(3).map(|(id, _)| id.as_str()).collect();
        println!(
            "concept {}: {} shots, nearest classes {}",
            c.concept_id,
            world.shots_for(&c.concept_id)?.images.len(),
            near.join(", ")
        );
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        let (h, w) = (world.cfg.image_h, world.cfg.image_w);
        for spec in &world.cfg.classes {
            let img = world
                .train
                .iter()
                .find(|l| world.cfg.classes[l.class_index].class_id == spec.class_id)
                .ok_or_else(|| Error::config(format!("class {} has no samples", spec.class_id)))?;
            driftlab::harness::save_png(
                &dir.join(format!("class_{}.png", spec.class_id)),
                img.image.data(),
                h,
                w,
            )?;
        }
        for shots in &world.shots {
            for (i, img) in shots.images.iter().enumerate() {
                driftlab::harness::save_png(
                    &dir.join(format!("shot_{}_{i}.png", shots.concept_id)),
                    img.data(),
                    h,
                    w,
                )?;
            }
        }
        let manifest = serde_json::json!({
            "config": world.cfg,
            "hash": driftlab::harness::config_hash(&world.cfg)?,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        println!("samples written to {}", dir.display());
    }
    Ok(())
}

fn train_base_cmd(cfg_file: &ConfigFile, store: &ArtifactStore, args: TrainBaseArgs) -> Result<()> {
    let mut spec = settings::pipeline_spec(cfg_file)?;
    if let Some(steps) = args.steps {
        spec.base_train.steps = steps;
    }
    let p = Pipeline::new(store, &spec);
    let base = p.base()?;
    println!("base checkpoint digest {}", base.digest);
    for (label, hash) in p.provenance() {
        println!("stage {label}: {hash}");
    }
    if let Some(out) = args.out {
        let hash = save_denoiser(&out, &base.model, &base.schedule, Default::default())?;
        println!("exported to {} ({hash})", out.display());
    }
    Ok(())
}

fn customize_cmd(cfg_file: &ConfigFile, args: CustomizeArgs) -> Result<()> {
    let loaded = load_denoiser(&args.base)?;
    let wc = settings::world_config(cfg_file)?;
    let world = build_world(wc)?;
    if world.vocab != loaded.model.vocab {
        return Err(Error::config(
            "config world vocabulary does not match the checkpoint; align [world] with the base model",
        ));
    }
    let matrix = settings::customize_matrix(cfg_file)?;
    let method = args.method.parse()?;
    let cfg = CustomizeConfig {
        method,
        scope: args.scope.parse()?,
        lambda: args.lambda.unwrap_or(method.default_lambda()),
        steps: args.steps.unwrap_or(matrix.steps),
        lr: matrix.lr,
        batch: matrix.batch,
        buffer: args.buffer.unwrap_or(matrix.buffer),
        seed: args.seed,
        rare_token: None,
        buffer_sample_steps: matrix.buffer_sample_steps,
    };
    let out = run_customization(&loaded.model, &loaded.schedule, &args.concept, &cfg, &world)?;
    println!(
        "bound {} to token {} ({}), superclass token {}",
        args.concept,
        out.rare_token,
        out.model.vocab.name(out.rare_token)?,
        out.superclass_token
    );
    if let Some(last) = out.log.last() {
        println!(
            "final losses: shot {:.6} prior {:.6} distill {:.6}",
            last.shot_loss, last.prior_loss, last.distill_loss
        );
    }
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("concept".to_string(), args.concept.clone());
    meta.insert("method".to_string(), cfg.method.label().to_string());
    meta.insert("base".to_string(), out.base_hash.clone());
    let hash = save_denoiser(&args.out, &out.model, &loaded.schedule, meta)?;
    println!("adapted checkpoint {} ({hash})", args.out.display());
    if let Some(log_path) = args.log {
        let mut csv = String::from("step,shot_loss,prior_loss,distill_loss\n");
        for row in &out.log {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                row.step, row.shot_loss, row.prior_loss, row.distill_loss
            ));
        }
        std::fs::write(&log_path, csv)?;
        println!("training log {}", log_path.display());
    }
    Ok(())
}

fn get_list(c: &ConfigFile, key: &str) -> Option<Vec<String>> {
    c.get("matrix", key).map(|s| {
        s.split(',')
            .map(|x| x.trim().to_string())
            .filter(|x| !x.is_empty())
            .collect()
    })
}

fn build_experiment(
    cfg_file: &ConfigFile,
    kind: ExperimentKind,
    spec: PipelineSpec,
    m: &MatrixArgs,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(kind);
    cfg.pipeline = spec;
    cfg.custom = settings::customize_matrix(cfg_file)?;

    if let Some(v) = get_list(cfg_file, "concepts") {
        cfg.concepts = v;
    }
    if let Some(v) = get_list(cfg_file, "methods") {
        cfg.methods = settings::parse_methods(&v)?;
    }
    if let Some(v) = get_list(cfg_file, "scopes") {
        cfg.scopes = settings::parse_scopes(&v)?;
    }
    if let Some(v) = get_list(cfg_file, "seeds") {
        cfg.run_seeds = v
            .iter()
            .map(|s| s.parse().map_err(|_| Error::config(format!("bad seed {s:?}"))))
            .collect::<Result<_>>()?;
    }
    if let Some(v) = get_list(cfg_file, "conditions") {
        cfg.conditions = v;
    }
    if let Some(v) = get_list(cfg_file, "buffer_sizes") {
        cfg.buffer_sizes = v
            .iter()
            .map(|s| s.parse().map_err(|_| Error::config(format!("bad buffer size {s:?}"))))
            .collect::<Result<_>>()?;
    }
    cfg.max_concepts = cfg_file.get_usize("matrix", "max_concepts", cfg.max_concepts)?;

    if !m.concepts.is_empty() {
        cfg.concepts = m.concepts.clone();
    }
    if !m.methods.is_empty() {
        cfg.methods = settings::parse_methods(&m.methods)?;
    }
    if !m.scopes.is_empty() {
        cfg.scopes = settings::parse_scopes(&m.scopes)?;
    }
    if !m.seeds.is_empty() {
        cfg.run_seeds = m.seeds.clone();
    }
    if !m.conditions.is_empty() {
        cfg.conditions = m.conditions.clone();
    }
    if let Some(n) = m.images {
        cfg.pipeline.images_per_condition = n;
    }
    if let Some(n) = m.steps {
        cfg.custom.steps = n;
    }
    if let Some(n) = m.buffer {
        cfg.custom.buffer = n;
    }
    if !m.buffer_sizes.is_empty() {
        cfg.buffer_sizes = m.buffer_sizes.clone();
    }
    if let Some(n) = m.max_concepts {
        cfg.max_concepts = n;
    }
    Ok(cfg)
}

fn experiment_cmd(
    cfg_file: &ConfigFile,
    store: &ArtifactStore,
    kind: ExperimentKind,
    m: MatrixArgs,
) -> Result<()> {
    let spec = settings::pipeline_spec(cfg_file)?;
    let cfg = build_experiment(cfg_file, kind, spec, &m)?;
    let report = run_experiment(store, &cfg)?;
    print_headlines(&report);

    let formats = parse_formats(&m.formats)?;
    let out = match m.out {
        Some(dir) => dir,
        None => store
            .stage_dir("experiment", &cfg)?
            .join("render"),
    };
    let files = render_report(&report, &out, &formats)?;
    println!("report rendered to {}", out.display());
    for f in files {
        println!("  {f}");
    }
    Ok(())
}

fn print_headlines(r: &DriftReport) {
    println!("experiment {} ({})", r.experiment, &r.experiment_id[..16]);
    for row in &r.accuracy {
        match (&row.worst_class, row.worst_drop) {
            (Some(c), Some(d)) => println!(
                "  {}: accuracy {:.4}, worst class {} ({:+.4})",
                row.series, row.overall, c, -d
            ),
            _ => println!("  {}: accuracy {:.4}", row.series, row.overall),
        }
    }
    for row in &r.similarity {
        println!(
            "  {} {}: similarity median {:.4} (q05 {:.4}, n {})",
            row.condition, row.series, row.summary.median, row.summary.q05, row.summary.n
        );
    }
    for family in r.metric_families() {
        println!("  metric {}: {} rows", family, r.family_rows(&family).len());
    }
    for n in &r.notes {
        println!("  note: {n}");
    }
}

fn report_cmd(store: &ArtifactStore, args: ReportArgs) -> Result<()> {
    let root = store.root().join("experiment");
    let mut found: Vec<(String, PathBuf)> = Vec::new();
    if root.exists() {
        for entry in std::fs::read_dir(&root)? {
            let dir = entry?.path();
            if ArtifactStore::is_complete(&dir) && dir.join("report.json").exists() {
                let id = dir
                    .file_name()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                found.push((id, dir));
            }
        }
    }
    found.sort();

    if args.list || args.id.is_none() {
        if found.is_empty() {
            println!("no stored experiments under {}", root.display());
            return Ok(());
        }
        for (id, dir) in &found {
            let report: DriftReport =
                serde_json::from_str(&std::fs::read_to_string(dir.join("report.json"))?)?;
            println!(
                "{id}  {}  {} conditions, {} metric rows",
                report.experiment,
                report.conditions.len(),
                report.metrics.len()
            );
        }
        return Ok(());
    }

    let prefix = args.id.expect("checked above");
    let matches: Vec<&(String, PathBuf)> =
        found.iter().filter(|(id, _)| id.starts_with(&prefix)).collect();
    let (id, dir) = match matches.as_slice() {
        [one] => one,
        [] => {
            return Err(Error::Dependency(format!(
                "no stored experiment matches id {prefix:?}"
            )))
        }
        many => {
            return Err(Error::config(format!(
                "id {prefix:?} is ambiguous: {}",
                many.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    };
    let report: DriftReport =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json"))?)?;
    print_headlines(&report);
    let formats = parse_formats(&args.formats)?;
    let out = args.out.unwrap_or_else(|| dir.join("render"));
    render_report(&report, &out, &formats)?;
    println!("report {id} rendered to {}", out.display());
    Ok(())
}
