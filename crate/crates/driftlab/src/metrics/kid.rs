//! Kernel inception distance over embedding sets, with the cubic polynomial
//! kernel k(u, v) = (u.v / d + 1)^3.
//!
//! For equally sized sets the paired unbiased estimator is used: its terms
//! cancel exactly when the two sets are identical, so KID(S, S) is a true
//! floating point zero rather than a small residual.

use crate::error::{Error, Result};

pub fn poly3_kernel(u: &[f64], v: &[f64]) -> f64 {
    let d = u.len() as f64;
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let base = dot / d + 1.0;
    base * base * base
}

fn validate(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateInput("empty embedding set".into()));
    }
    let d = a[0].len();
    if d == 0 {
        return Err(Error::config("zero-dimensional embeddings"));
    }
    for v in a.iter().chain(b) {
        if v.len() != d {
            return Err(Error::config(format!(
                "embedding dims differ: {} vs {d}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerics("non-finite embedding value"));
        }
    }
    Ok(d)
}

/// Unbiased squared MMD between embedding sets.
pub fn kid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    validate(a, b)?;
    let m = a.len();
    let n = b.len();

    if m == 1 && n == 1 {
        // complete (biased) estimate is the only one defined for singletons
        return Ok(poly3_kernel(&a[0], &a[0]) + poly3_kernel(&b[0], &b[0])
            - 2.0 * poly3_kernel(&a[0], &b[0]));
    }

    if m == n {
        // paired form: sum over i != j of k(xi,xj) + k(yi,yj) - k(xi,yj) - k(xj,yi)
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                acc += poly3_kernel(&a[i], &a[j]) + poly3_kernel(&b[i], &b[j])
                    - poly3_kernel(&a[i], &b[j])
                    - poly3_kernel(&a[j], &b[i]);
            }
        }
        return Ok(acc / (m * (m - 1)) as f64);
    }

    if m < 2 || n < 2 {
        return Err(Error::config(
            "unequal set sizes need at least two samples per side",
        ));
    }
    let mut kaa = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kaa += poly3_kernel(&a[i], &a[j]);
            }
        }
    }
    let mut kbb = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kbb += poly3_kernel(&b[i], &b[j]);
            }
        }
    }
    let mut kab = 0.0;
    for x in a {
        for y in b {
            kab += poly3_kernel(x, y);
        }
    }
    Ok(kaa / (m * (m - 1)) as f64 + kbb / (n * (n - 1)) as f64 - 2.0 * kab / (m * n) as f64)
}
