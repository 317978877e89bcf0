//! Cosine similarity over embedding vectors, plus the summary statistics
//! the drift experiments report (median similarity, pairwise diversity).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-sqrt form: dot / sqrt(|a|^2 * |b|^2). Dividing a vector by itself
/// this way yields exactly 1.0, which the identity tests rely on.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "dimension mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::DegenerateInput("empty vectors".into()));
    }
    let mut dot = 0.0;
    let mut na2 = 0.0;
    let mut nb2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na2 += x * x;
        nb2 += y * y;
    }
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(Error::DegenerateInput("zero-norm vector".into()));
    }
    Ok(dot / (na2 * nb2).sqrt())
}

/// Quantile with linear interpolation between order statistics.
/// `q` in [0, 1]; the input need not be sorted.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("quantile of empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config("quantile must be in [0, 1]"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return Ok(v[lo]);
    }
    let frac = pos - lo as f64;
    Ok(v[lo] + frac * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDistribution {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub min: f64,
    pub max: f64,
}

/// Similarity of each generated embedding to its nearest reference embedding.
pub fn nearest_reference_similarity(
    generated: &[Vec<f64>],
    reference: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::DegenerateInput("empty embedding set".into()));
    }
    let mut out = Vec::with_capacity(generated.len());
    for g in generated {
        let mut best = f64::NEG_INFINITY;
        for r in reference {
            let c = cosine(g, r)?;
            if c > best {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

pub fn summarize(values: &[f64]) -> Result<SimilarityDistribution> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("empty value set".into()));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    Ok(SimilarityDistribution {
        n: values.len(),
        mean: sum / values.len() as f64,
        median: median(values)?,
        q05: quantile(values, 0.05)?,
        q95: quantile(values, 0.95)?,
        min,
        max,
    })
}

/// Mean pairwise (1 - cosine) over all unordered pairs. Zero means the set
/// collapsed to a single direction; needs at least two vectors.
pub fn diversity(embeddings: &[Vec<f64>]) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::DegenerateInput(
            "diversity needs at least two embeddings".into(),
        ));
    }
    let n = embeddings.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += 1.0 - cosine(&embeddings[i], &embeddings[j])?;
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_give_exactly_one() {
        let v = vec![0.3, -1.7, 2.9, 0.0011];
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn hand_cases() {
        assert!((cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap()).abs() < 1e-15);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
        let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(diversity(&[vec![1.0]]).is_err());
    }

    #[test]
    fn median_and_quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 1.0).unwrap(), 5.0);
        assert_eq!(quantile(&[10.0, 20.0], 0.25).unwrap(), 12.5);
    }

    #[test]
    fn diversity_zero_for_collinear_set() {
        let e = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![0.5, 1.0]];
        assert!(diversity(&e).unwrap().abs() < 1e-12);
        let f = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!((diversity(&f).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_reference_picks_the_best_match() {
        let gen = vec![vec![1.0, 0.1]];
        let refs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let sims = nearest_reference_similarity(&gen, &refs).unwrap();
        assert_eq!(sims.len(), 1);
        assert!(sims[0] > 0.9);
        let s = summarize(&sims).unwrap();
        assert_eq!(s.n, 1);
        assert_eq!(s.min, s.max);
    }
}
