//! Procedural shape world: flat-colored geometric sprites on muted
//! backgrounds, a fixed base class grid, and held-out concepts defined by
//! novel shape and hue combinations.
//!
//! Rendering is hard-edged on purpose: every image contains exactly two RGB
//! colors, which makes chromaticity statistics sharp and keeps drift metrics
//! honest about palette changes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::rng::{stream_tag, stream_with, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Cross,
    Star,
}

impl ShapeKind {
    pub fn label(&self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
            ShapeKind::Star => "star",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    /// Center offset, pixels, per axis.
    pub pos: f64,
    /// Relative radius jitter.
    pub scale: f64,
    /// Foreground hue jitter, degrees.
    pub hue: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec {
            pos: 1.2,
            scale: 0.10,
            hue: 6.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub hue_deg: f64,
    pub saturation: f64,
    pub value: f64,
    pub value_jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: String,
    pub shape: ShapeKind,
    pub hue_deg: f64,
    pub jitter: JitterSpec,
    pub background: BackgroundSpec,
}

impl ClassSpec {
    /// Default look: saturated foreground on a complementary low-saturation
    /// background whose lightness jitters.
    pub fn standard(class_id: &str, shape: ShapeKind, hue_deg: f64) -> Self {
        ClassSpec {
            class_id: class_id.to_string(),
            shape,
            hue_deg,
            jitter: JitterSpec::default(),
            background: BackgroundSpec {
                hue_deg: (hue_deg + 180.0).rem_euclid(360.0),
                saturation: 0.08,
                value: 0.45,
                value_jitter: 0.15,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub concept_id: String,
    pub shape: ShapeKind,
    pub hue_deg: f64,
    /// Few-shot budget for customization.
    pub shot_count: usize,
    /// Must equal the top-ranked base class under recipe similarity.
    pub superclass: String,
}

/// Concept shots share one distinctive backdrop so the personal context is
/// visually consistent, the way a user photographs one object at home.
pub fn concept_shot_spec(c: &ConceptSpec) -> ClassSpec {
    ClassSpec {
        class_id: c.concept_id.clone(),
        shape: c.shape,
        hue_deg: c.hue_deg,
        jitter: JitterSpec {
            pos: 0.8,
            scale: 0.06,
            hue: 2.0,
        },
        background: BackgroundSpec {
            hue_deg: 300.0,
            saturation: 0.5,
            value: 0.55,
            value_jitter: 0.05,
        },
    }
}

// ── Color helpers ──

/// HSV to sRGB-encoded values in [0,1]; h in degrees.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

// ── Rasterization ──

fn inside(shape: ShapeKind, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        ShapeKind::Circle => dx * dx + dy * dy <= r * r,
        ShapeKind::Square => {
            let half = 0.89 * r;
            dx.abs() <= half && dy.abs() <= half
        }
        ShapeKind::Triangle => {
            // Upward triangle: apex (0,-r), base corners (+-1.0r, +0.66r).
            let (ax, ay) = (0.0, -r);
            let (bx, by) = (-1.0 * r, 0.66 * r);
            let (cx, cy) = (1.0 * r, 0.66 * r);
            let sign = |x1: f64, y1: f64, x2: f64, y2: f64| (dx - x2) * (y1 - y2) - (x1 - x2) * (dy - y2);
            let d1 = sign(ax, ay, bx, by);
            let d2 = sign(bx, by, cx, cy);
            let d3 = sign(cx, cy, ax, ay);
            let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(neg && pos)
        }
        ShapeKind::Cross => {
            let arm = 0.36 * r;
            (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
        }
        ShapeKind::Star => {
            // Five points up; boundary radius swings between r_in and r as a
            // smoothed pulse of cos(5 theta).
            let r_in = 0.52 * r;
            let theta = dx.atan2(-dy);
            let pulse = ((5.0 * theta).cos() + 1.0) / 2.0;
            let boundary = r_in + (r - r_in) * pulse.powf(2.0);
            dx * dx + dy * dy <= boundary * boundary
        }
    }
}

/// Renders one image plus its foreground mask. Deterministic in
/// (spec, seed): all jitters come from a stream keyed by the class id.
pub fn render_with_mask(spec: &ClassSpec, h: usize, w: usize, seed: u64) -> (Tensor, Vec<bool>) {
    let mut rng = StreamRng::new(
        seed,
        stream_with("world.render", stream_tag(&spec.class_id)),
    );
    let jx = spec.jitter.pos * (2.0 * rng.uniform() - 1.0);
    let jy = spec.jitter.pos * (2.0 * rng.uniform() - 1.0);
    let jr = 1.0 + spec.jitter.scale * (2.0 * rng.uniform() - 1.0);
    let jh = spec.jitter.hue * (2.0 * rng.uniform() - 1.0);
    let jv = spec.background.value_jitter * (2.0 * rng.uniform() - 1.0);

    let cx = w as f64 / 2.0 + jx;
    let cy = h as f64 / 2.0 + jy;
    let r = 0.30 * w.min(h) as f64 * jr;
    let fg = hsv_to_rgb(spec.hue_deg + jh, 0.95, 0.95);
    let bg = hsv_to_rgb(
        spec.background.hue_deg,
        spec.background.saturation,
        (spec.background.value + jv).clamp(0.05, 0.95),
    );

    let mut data = Vec::with_capacity(h * w * 3);
    let mut mask = Vec::with_capacity(h * w);
    for py in 0..h {
        for px in 0..w {
            let dx = px as f64 + 0.5 - cx;
            let dy = py as f64 + 0.5 - cy;
            let hit = inside(spec.shape, dx, dy, r);
            let c = if hit { &fg } else { &bg };
            data.extend_from_slice(c);
            mask.push(hit);
        }
    }
    (Tensor::new(vec![h * w * 3], data).unwrap(), mask)
}

pub fn render_image(spec: &ClassSpec, h: usize, w: usize, seed: u64) -> Tensor {
    render_with_mask(spec, h, w, seed).0
}

// ── Recipe similarity and superclass ranking ──

/// Symmetric affinity between shape families in [0,1].
pub fn shape_affinity(a: ShapeKind, b: ShapeKind) -> f64 {
    use ShapeKind::*;
    if a == b {
        return 1.0;
    }
    let pair = |x: ShapeKind, y: ShapeKind| (a == x && b == y) || (a == y && b == x);
    if pair(Circle, Square) {
        0.50
    } else if pair(Circle, Triangle) {
        0.35
    } else if pair(Circle, Cross) {
        0.30
    } else if pair(Circle, Star) {
        0.55
    } else if pair(Square, Triangle) {
        0.45
    } else if pair(Square, Cross) {
        0.55
    } else if pair(Square, Star) {
        0.35
    } else if pair(Triangle, Cross) {
        0.40
    } else if pair(Triangle, Star) {
        0.60
    } else {
        // cross-star: both concave and pointed
        0.65
    }
}

pub fn hue_affinity(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(360.0);
    let circ = d.min(360.0 - d);
    1.0 - circ / 180.0
}

/// Recipe similarity: equal parts shape affinity and circular hue affinity.
pub fn recipe_similarity(sa: ShapeKind, ha: f64, sb: ShapeKind, hb: f64) -> f64 {
    0.5 * shape_affinity(sa, sb) + 0.5 * hue_affinity(ha, hb)
}

/// Base classes ranked per concept, most similar first. Ties resolve by
/// class declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborMap {
    pub ranked: BTreeMap<String, Vec<(String, f64)>>,
}

impl NeighborMap {
    pub fn superclass_of(&self, concept_id: &str) -> Result<&str> {
        self.ranked
            .get(concept_id)
            .and_then(|v| v.first())
            .map(|(id, _)| id.as_str())
            .ok_or_else(|| Error::config(format!("no ranking for concept {concept_id}")))
    }
}

pub fn superclass_neighbors(
    classes: &[ClassSpec],
    concepts: &[ConceptSpec],
) -> Result<NeighborMap> {
    if classes.is_empty() {
        return Err(Error::config("no base classes to rank"));
    }
    let mut ranked = BTreeMap::new();
    for c in concepts {
        let mut scores: Vec<(usize, f64)> = classes
            .iter()
            .enumerate()
            .map(|(i, k)| (i, recipe_similarity(c.shape, c.hue_deg, k.shape, k.hue_deg)))
            .collect();
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let list: Vec<(String, f64)> = scores
            .into_iter()
            .map(|(i, s)| (classes[i].class_id.clone(), s))
            .collect();
        if list[0].0 != c.superclass {
            return Err(Error::config(format!(
                "concept {} declares superclass {} but ranking picks {}",
                c.concept_id, c.superclass, list[0].0
            )));
        }
        ranked.insert(c.concept_id.clone(), list);
    }
    Ok(NeighborMap { ranked })
}

// ── World assembly ──

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub train_seed_base: u64,
    pub test_seed_base: u64,
    pub shot_seed_base: u64,
    pub reserve_tokens: usize,
    pub classes: Vec<ClassSpec>,
    pub concepts: Vec<ConceptSpec>,
}

pub fn default_classes() -> Vec<ClassSpec> {
    let shapes = [
        ShapeKind::Circle,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
    ];
    let hues = [(0.0, "red"), (120.0, "green"), (240.0, "blue")];
    let mut out = Vec::new();
    for shape in shapes {
        for (hue, hname) in hues {
            let id = format!("{}_{}", shape.label(), hname);
            out.push(ClassSpec::standard(&id, shape, hue));
        }
    }
    out
}

pub fn default_concepts() -> Vec<ConceptSpec> {
    vec![
        ConceptSpec {
            concept_id: "star_yellow".into(),
            shape: ShapeKind::Star,
            hue_deg: 60.0,
            shot_count: 5,
            superclass: "cross_red".into(),
        },
        ConceptSpec {
            concept_id: "circle_yellow".into(),
            shape: ShapeKind::Circle,
            hue_deg: 60.0,
            shot_count: 5,
            superclass: "circle_red".into(),
        },
        ConceptSpec {
            concept_id: "star_cyan".into(),
            shape: ShapeKind::Star,
            hue_deg: 200.0,
            shot_count: 5,
            superclass: "cross_blue".into(),
        },
        ConceptSpec {
            concept_id: "square_yellow".into(),
            shape: ShapeKind::Square,
            hue_deg: 60.0,
            shot_count: 5,
            superclass: "square_red".into(),
        },
    ]
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            image_h: 16,
            image_w: 16,
            train_per_class: 500,
            test_per_class: 40,
            train_seed_base: 1_000_000,
            test_seed_base: 2_000_000,
            shot_seed_base: 3_000_000,
            reserve_tokens: 16,
            classes: default_classes(),
            concepts: default_concepts(),
        }
    }
}

impl WorldConfig {
    fn seed_span_train(&self) -> (u64, u64) {
        let n = (self.classes.len() * self.train_per_class) as u64;
        (self.train_seed_base, self.train_seed_base + n)
    }
    fn seed_span_test(&self) -> (u64, u64) {
        let n = (self.classes.len() * self.test_per_class) as u64;
        (self.test_seed_base, self.test_seed_base + n)
    }
    fn seed_span_shots(&self) -> (u64, u64) {
        let n: u64 = self.concepts.iter().map(|c| c.shot_count as u64).sum();
        (self.shot_seed_base, self.shot_seed_base + n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_h == 0 || self.image_w == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if self.classes.is_empty() {
            return Err(Error::config("world needs at least one class"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::config("per-class counts must be positive"));
        }
        let mut ids: Vec<&str> = self.classes.iter().map(|c| c.class_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.classes.len() {
            return Err(Error::config("duplicate class ids"));
        }
        for c in &self.concepts {
            if c.shot_count == 0 || c.shot_count > 64 {
                return Err(Error::config(format!(
                    "concept {} shot_count {} outside [1,64]",
                    c.concept_id, c.shot_count
                )));
            }
        }
        if self.concepts.len() > self.reserve_tokens {
            return Err(Error::config(format!(
                "{} concepts exceed {} reserve tokens",
                self.concepts.len(),
                self.reserve_tokens
            )));
        }
        let spans = [
            ("train", self.seed_span_train()),
            ("test", self.seed_span_test()),
            ("shots", self.seed_span_shots()),
        ];
        for i in 0..spans.len() {
            for j in i + 1..spans.len() {
                let (_, (a0, a1)) = spans[i];
                let (_, (b0, b1)) = spans[j];
                if a0 < b1 && b0 < a1 {
                    return Err(Error::config(format!(
                        "seed ranges overlap: {} {:?} vs {} {:?}",
                        spans[i].0,
                        (a0, a1),
                        spans[j].0,
                        (b0, b1)
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub image: Tensor,
    pub class_index: usize,
    pub token: TokenId,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ConceptShots {
    pub concept_id: String,
    pub images: Vec<Tensor>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct ConceptWorld {
    pub cfg: WorldConfig,
    pub vocab: Vocab,
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub shots: Vec<ConceptShots>,
    pub neighbors: NeighborMap,
}

impl ConceptWorld {
    pub fn class_token(&self, class_id: &str) -> Result<TokenId> {
        self.vocab.lookup(class_id)
    }

    pub fn concept(&self, concept_id: &str) -> Result<&ConceptSpec> {
        self.cfg
            .concepts
            .iter()
            .find(|c| c.concept_id == concept_id)
            .ok_or_else(|| Error::config(format!("unknown concept {concept_id}")))
    }

    pub fn shots_for(&self, concept_id: &str) -> Result<&ConceptShots> {
        self.shots
            .iter()
            .find(|s| s.concept_id == concept_id)
            .ok_or_else(|| Error::config(format!("no shots for concept {concept_id}")))
    }

    pub fn train_pairs(&self) -> Vec<(Tensor, TokenId)> {
        self.train
            .iter()
            .map(|l| (l.image.clone(), l.token))
            .collect()
    }
}

/// Renders the full dataset. Class token i+1 corresponds to class index i;
/// token 0 stays the null condition.
pub fn build_world(cfg: WorldConfig) -> Result<ConceptWorld> {
    cfg.validate()?;
    let class_names: Vec<String> = cfg.classes.iter().map(|c| c.class_id.clone()).collect();
    let vocab = Vocab::new(&class_names, cfg.reserve_tokens)?;
    let neighbors = superclass_neighbors(&cfg.classes, &cfg.concepts)?;

    let render_split = |seed_base: u64, per_class: usize| -> Vec<LabeledImage> {
        let jobs: Vec<(usize, u64)> = (0..cfg.classes.len())
            .flat_map(|ci| {
                (0..per_class).map(move |i| {
                    let seed = seed_base + (ci * per_class + i) as u64;
                    (ci, seed)
                })
            })
            .collect();
        jobs.into_par_iter()
            .map(|(ci, seed)| LabeledImage {
                image: render_image(&cfg.classes[ci], cfg.image_h, cfg.image_w, seed),
                class_index: ci,
                token: ci + 1,
                seed,
            })
            .collect()
    };

    let train = render_split(cfg.train_seed_base, cfg.train_per_class);
    let test = render_split(cfg.test_seed_base, cfg.test_per_class);

    let mut shots = Vec::new();
    let mut next = cfg.shot_seed_base;
    for c in &cfg.concepts {
        let spec = concept_shot_spec(c);
        let seeds: Vec<u64> = (0..c.shot_count).map(|i| next + i as u64).collect();
        next += c.shot_count as u64;
        let images = seeds
            .iter()
            .map(|&s| render_image(&spec, cfg.image_h, cfg.image_w, s))
            .collect();
        shots.push(ConceptShots {
            concept_id: c.concept_id.clone(),
            images,
            seeds,
        });
    }

    Ok(ConceptWorld {
        cfg,
        vocab,
        train,
        test,
        shots,
        neighbors,
    })
}
