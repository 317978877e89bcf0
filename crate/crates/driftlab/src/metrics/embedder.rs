//! Frozen feature embedder for perceptual metrics: a small classifier
//! trained once on the base world, then used only through its penultimate
//! activations. Training it to high accuracy first makes the embedding
//! class-discriminative, which is what KID/FID/similarity lean on.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointHeader, ParamHeader, PayloadKind};
use crate::error::{Error, Result};
use crate::gradcore::{Optimizer, ParamStore, Tape, Tensor};
use crate::rng::{stream_with, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub hidden1: usize,
    /// Width of the penultimate layer; this is the embedding dimension.
    pub hidden2: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Training accuracy the embedder must reach to be usable.
    pub min_accuracy: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            hidden1: 64,
            hidden2: 32,
            steps: 1500,
            batch: 32,
            lr: 1e-3,
            seed: 0,
            min_accuracy: 0.95,
        }
    }
}

const GROUP: &str = "embedder";

#[derive(Clone, Debug)]
pub struct FeatureEmbedder {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub n_classes: usize,
    pub params: ParamStore,
    pub train_accuracy: f64,
    /// Hash of the dataset manifest this embedder was fitted on.
    pub manifest_hash: String,
}

impl FeatureEmbedder {
    fn forward_parts(&self, xs: &Tensor) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let x = tape.constant(xs.clone());
        let w1 = tape.constant(self.params.get("emb.w1").unwrap().clone());
        let b1 = tape.constant(self.params.get("emb.b1").unwrap().clone());
        let w2 = tape.constant(self.params.get("emb.w2").unwrap().clone());
        let b2 = tape.constant(self.params.get("emb.b2").unwrap().clone());
        let w3 = tape.constant(self.params.get("emb.w3").unwrap().clone());
        let b3 = tape.constant(self.params.get("emb.b3").unwrap().clone());
        let h1 = tape.matmul(x, w1);
        let h1 = tape.add_row(h1, b1);
        let h1 = tape.silu(h1);
        let h2 = tape.matmul(h1, w2);
        let h2 = tape.add_row(h2, b2);
        let h2 = tape.silu(h2);
        let logits = tape.matmul(h2, w3);
        let logits = tape.add_row(logits, b3);
        (tape.value(h2).clone(), tape.value(logits).clone())
    }

    /// Penultimate activations, one row per input row.
    pub fn embed_batch(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        if images.cols() != self.input_dim {
            return Err(Error::config(format!(
                "embedder expects {} values per image, got {}",
                self.input_dim,
                images.cols()
            )));
        }
        let (h2, _) = self.forward_parts(images);
        Ok((0..h2.rows()).map(|r| h2.row_slice(r).to_vec()).collect())
    }

    pub fn embed(&self, image: &Tensor) -> Result<Vec<f64>> {
        let t = Tensor::row(image.data().to_vec());
        Ok(self.embed_batch(&t)?.remove(0))
    }

    pub fn logits(&self, image: &Tensor) -> Result<Vec<f64>> {
        let t = Tensor::row(image.data().to_vec());
        if t.cols() != self.input_dim {
            return Err(Error::config("wrong image size for embedder"));
        }
        let (_, logits) = self.forward_parts(&t);
        Ok(logits.data().to_vec())
    }

    pub fn accuracy(&self, data: &[(Tensor, usize)]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::DegenerateInput("empty evaluation set".into()));
        }
        let mut hits = 0usize;
        for (img, label) in data {
            let lg = self.logits(img)?;
            let pred = lg
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            if pred == *label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

/// Trains the embedder on labeled images (labels are 0-based class indices).
/// Fails with a convergence error if training accuracy stays below the
/// configured floor; a weak embedder would silently corrupt every metric
/// downstream.
pub fn train_embedder(
    data: &[(Tensor, usize)],
    n_classes: usize,
    cfg: &EmbedderConfig,
    manifest_hash: &str,
) -> Result<FeatureEmbedder> {
    if data.is_empty() {
        return Err(Error::DegenerateInput("empty training set".into()));
    }
    if n_classes < 2 {
        return Err(Error::config("need at least two classes"));
    }
    if cfg.batch == 0 || cfg.steps == 0 {
        return Err(Error::config("steps and batch must be positive"));
    }
    let d = data[0].0.len();
    for (img, label) in data {
        if img.len() != d {
            return Err(Error::config("inconsistent image sizes"));
        }
        if *label >= n_classes {
            return Err(Error::config(format!("label {label} out of range")));
        }
    }

    let mut rng = StreamRng::from_tag(cfg.seed, "embedder.init");
    let mut params = ParamStore::new();
    let init =
        |rng: &mut StreamRng, rows: usize, cols: usize| -> Tensor {
            let std = 1.0 / (rows as f64).sqrt();
            Tensor::new(
                vec![rows, cols],
                (0..rows * cols).map(|_| std * rng.normal()).collect(),
            )
            .unwrap()
        };
    params.insert("emb.w1", GROUP, init(&mut rng, d, cfg.hidden1))?;
    params.insert("emb.b1", GROUP, Tensor::zeros(&[cfg.hidden1]))?;
    params.insert("emb.w2", GROUP, init(&mut rng, cfg.hidden1, cfg.hidden2))?;
    params.insert("emb.b2", GROUP, Tensor::zeros(&[cfg.hidden2]))?;
    params.insert("emb.w3", GROUP, init(&mut rng, cfg.hidden2, n_classes))?;
    params.insert("emb.b3", GROUP, Tensor::zeros(&[n_classes]))?;

    let mut opt = Optimizer::adam(cfg.lr);
    for step in 0..cfg.steps {
        let mut pick = StreamRng::new(cfg.seed, stream_with("embedder.pick", step as u64));
        let mut xs = Vec::with_capacity(cfg.batch * d);
        let mut labels = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let idx = pick.uniform_int(0, (data.len() - 1) as u64) as usize;
            xs.extend_from_slice(data[idx].0.data());
            labels.push(data[idx].1);
        }
        let xs = Tensor::new(vec![cfg.batch, d], xs)?;

        let mut tape = Tape::new();
        let x = tape.constant(xs);
        let w1 = tape.param("emb.w1", params.get("emb.w1").unwrap().clone());
        let b1 = tape.param("emb.b1", params.get("emb.b1").unwrap().clone());
        let w2 = tape.param("emb.w2", params.get("emb.w2").unwrap().clone());
        let b2 = tape.param("emb.b2", params.get("emb.b2").unwrap().clone());
        let w3 = tape.param("emb.w3", params.get("emb.w3").unwrap().clone());
        let b3 = tape.param("emb.b3", params.get("emb.b3").unwrap().clone());
        let h1 = tape.matmul(x, w1);
        let h1 = tape.add_row(h1, b1);
        let h1 = tape.silu(h1);
        let h2 = tape.matmul(h1, w2);
        let h2 = tape.add_row(h2, b2);
        let h2 = tape.silu(h2);
        let lg = tape.matmul(h2, w3);
        let lg = tape.add_row(lg, b3);
        let loss = tape.softmax_xent(lg, &labels);
        let grads = tape.backward(loss);
        opt.step(&mut params, &grads)?;
    }

    let emb = FeatureEmbedder {
        input_dim: d,
        hidden1: cfg.hidden1,
        hidden2: cfg.hidden2,
        n_classes,
        params,
        train_accuracy: 0.0,
        manifest_hash: manifest_hash.to_string(),
    };
    let acc = emb.accuracy(data)?;
    if acc < cfg.min_accuracy {
        return Err(Error::Convergence(format!(
            "embedder accuracy {acc:.4} below required {:.2}",
            cfg.min_accuracy
        )));
    }
    Ok(FeatureEmbedder {
        train_accuracy: acc,
        ..emb
    })
}

// ── Persistence through the checkpoint container ──

pub fn save_embedder(path: &std::path::Path, e: &FeatureEmbedder) -> Result<String> {
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("input_dim".to_string(), e.input_dim.to_string());
    meta.insert("hidden1".to_string(), e.hidden1.to_string());
    meta.insert("hidden2".to_string(), e.hidden2.to_string());
    meta.insert("n_classes".to_string(), e.n_classes.to_string());
    meta.insert("train_accuracy".to_string(), e.train_accuracy.to_string());
    meta.insert("manifest_hash".to_string(), e.manifest_hash.clone());
    let header = CheckpointHeader {
        kind: PayloadKind::Embedder,
        model: None,
        vocab: None,
        schedule: None,
        meta,
        params: e
            .params
            .entries()
            .iter()
            .map(|p| ParamHeader {
                name: p.name.clone(),
                group: p.group.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let bytes = checkpoint::encode(&header, &e.params)?;
    std::fs::write(path, &bytes)?;
    Ok(checkpoint::hex_sha256(&bytes))
}

pub fn load_embedder(path: &std::path::Path) -> Result<FeatureEmbedder> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Dependency(format!("embedder {} unreadable: {e}", path.display())))?;
    decode_embedder(&bytes)
}

pub fn decode_embedder(bytes: &[u8]) -> Result<FeatureEmbedder> {
    let ck = checkpoint::decode(bytes)?;
    if ck.header.kind != PayloadKind::Embedder {
        return Err(Error::Format("checkpoint is not an embedder".into()));
    }
    let get = |k: &str| -> Result<usize> {
        ck.header
            .meta
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("missing meta field {k}")))
    };
    let e = FeatureEmbedder {
        input_dim: get("input_dim")?,
        hidden1: get("hidden1")?,
        hidden2: get("hidden2")?,
        n_classes: get("n_classes")?,
        train_accuracy: ck
            .header
            .meta
            .get("train_accuracy")
            .and_then(|v| v.parse().ok())
            .unwrap_or(0.0),
        manifest_hash: ck.header.meta.get("manifest_hash").cloned().unwrap_or_default(),
        params: ck.params,
    };
    // shape audit before anything indexes into the tensors
    let want = [
        ("emb.w1", vec![e.input_dim, e.hidden1]),
        ("emb.b1", vec![e.hidden1]),
        ("emb.w2", vec![e.hidden1, e.hidden2]),
        ("emb.b2", vec![e.hidden2]),
        ("emb.w3", vec![e.hidden2, e.n_classes]),
        ("emb.b3", vec![e.n_classes]),
    ];
    for (name, shape) in want {
        let t = e
            .params
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Format(format!("parameter {name} has wrong shape")));
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, WorldConfig};

    fn tiny_world_data() -> (Vec<(Tensor, usize)>, usize) {
        let cfg = WorldConfig {
            train_per_class: 8,
            test_per_class: 2,
            ..WorldConfig::default()
        };
        let w = build_world(cfg).unwrap();
        let data: Vec<(Tensor, usize)> = w
            .train
            .iter()
            .map(|l| (l.image.clone(), l.class_index))
            .collect();
        (data, w.cfg.classes.len())
    }

    #[test]
    fn trains_to_high_accuracy_on_the_shape_world() {
        let (data, k) = tiny_world_data();
        let cfg = EmbedderConfig {
            steps: 400,
            batch: 16,
            ..EmbedderConfig::default()
        };
        let e = train_embedder(&data, k, &cfg, "testhash").unwrap();
        assert!(e.train_accuracy >= 0.95, "accuracy {}", e.train_accuracy);
        let emb = e.embed(&data[0].0).unwrap();
        assert_eq!(emb.len(), 32);
        assert!(emb.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn embedding_is_deterministic() {
        let (data, k) = tiny_world_data();
        let cfg = EmbedderConfig {
            steps: 120,
            batch: 16,
            min_accuracy: 0.0,
            ..EmbedderConfig::default()
        };
        let e1 = train_embedder(&data, k, &cfg, "h").unwrap();
        let e2 = train_embedder(&data, k, &cfg, "h").unwrap();
        assert_eq!(
            e1.embed(&data[3].0).unwrap(),
            e2.embed(&data[3].0).unwrap()
        );
    }

    #[test]
    fn unreachable_accuracy_floor_fails_loudly() {
        let (data, k) = tiny_world_data();
        let cfg = EmbedderConfig {
            steps: 1,
            batch: 4,
            min_accuracy: 0.99,
            ..EmbedderConfig::default()
        };
        assert!(matches!(
            train_embedder(&data, k, &cfg, "h"),
            Err(Error::Convergence(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let (data, k) = tiny_world_data();
        let cfg = EmbedderConfig {
            steps: 120,
            batch: 16,
            min_accuracy: 0.0,
            ..EmbedderConfig::default()
        };
        let e = train_embedder(&data, k, &cfg, "mh").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.dlab");
        save_embedder(&path, &e).unwrap();
        let l = load_embedder(&path).unwrap();
        assert_eq!(l.manifest_hash, "mh");
        assert_eq!(l.embed(&data[0].0).unwrap(), e.embed(&data[0].0).unwrap());
        assert_eq!(l.train_accuracy, e.train_accuracy);
    }
}
