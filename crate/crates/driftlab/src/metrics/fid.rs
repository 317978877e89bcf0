//! Frechet distance between Gaussian fits of embedding sets:
//! |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)).
//!
//! The matrix square roots go through a cyclic Jacobi eigensolver; embedding
//! dimensions here are small (tens), where Jacobi is simple and accurate.

use crate::error::{Error, Result};

/// Ridge added to both covariances before the square root.
pub const COV_REGULARIZER: f64 = 1e-6;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix, row-major d*d.
/// Returns (eigenvalues, eigenvectors as columns of V flattened row-major).
fn sym_eigen(mat: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = mat.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..d {
            for q in 0..d {
                if p != q {
                    s += a[p * d + q] * a[p * d + q];
                }
            }
        }
        s
    };
    let scale: f64 = mat.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..100 {
        if off(&a) <= 1e-26 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                // stable tangent of the rotation angle
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..d).map(|i| a[i * d + i]).collect();
    (eig, v)
}

fn matmul_sq(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// Symmetric PSD square root via eigendecomposition; tiny negative
/// eigenvalues from rounding clamp to zero.
fn sqrtm_psd(mat: &[f64], d: usize, what: &str) -> Result<Vec<f64>> {
    let (eig, v) = sym_eigen(mat, d);
    let scale = eig.iter().fold(0.0f64, |m, &e| m.max(e.abs())).max(1e-300);
    for &e in &eig {
        if e < -1e-8 * scale {
            return Err(Error::numerics(format!(
                "{what} is not positive semidefinite (eigenvalue {e:.3e})"
            )));
        }
    }
    // V sqrt(L) V^T
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += v[i * d + k] * eig[k].max(0.0).sqrt() * v[j * d + k];
            }
            out[i * d + j] = s;
        }
    }
    Ok(out)
}

/// Frechet distance from explicit Gaussian moments. Covariances are
/// row-major d*d and are regularized internally.
pub fn frechet_from_moments(
    mu_a: &[f64],
    cov_a: &[f64],
    mu_b: &[f64],
    cov_b: &[f64],
) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.len() != d * d || cov_b.len() != d * d {
        return Err(Error::config("moment dimensions disagree"));
    }
    let mut sa = cov_a.to_vec();
    let mut sb = cov_b.to_vec();
    for i in 0..d {
        sa[i * d + i] += COV_REGULARIZER;
        sb[i * d + i] += COV_REGULARIZER;
    }

    let delta2: f64 = mu_a
        .iter()
        .zip(mu_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let tr_a: f64 = (0..d).map(|i| sa[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| sb[i * d + i]).sum();

    // tr((Sa Sb)^(1/2)) = tr((A Sb A)^(1/2)) with A = Sa^(1/2)
    let a_root = sqrtm_psd(&sa, d, "first covariance")?;
    let m = matmul_sq(&matmul_sq(&a_root, &sb, d), &a_root, d);
    // symmetrize before the eigensolve; the product picks up rounding skew
    let mut msym = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            msym[i * d + j] = 0.5 * (m[i * d + j] + m[j * d + i]);
        }
    }
    let (eig, _) = sym_eigen(&msym, d);
    let scale = eig.iter().fold(0.0f64, |mx, &e| mx.max(e.abs())).max(1e-300);
    let mut tr_sqrt = 0.0;
    for &e in &eig {
        if e < -1e-8 * scale {
            return Err(Error::numerics(format!(
                "covariance product not positive semidefinite (eigenvalue {e:.3e})"
            )));
        }
        tr_sqrt += e.max(0.0).sqrt();
    }
    Ok(delta2 + tr_a + tr_b - 2.0 * tr_sqrt)
}

fn moments(set: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = set.len();
    let mut mu = vec![0.0; d];
    for v in set {
        for (m, x) in mu.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for v in set {
        for i in 0..d {
            let di = v[i] - mu[i];
            for j in 0..d {
                cov[i * d + j] += di * (v[j] - mu[j]);
            }
        }
    }
    for c in cov.iter_mut() {
        *c /= (n - 1) as f64;
    }
    (mu, cov)
}

/// Frechet distance between Gaussian fits of two embedding sets.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::config(
            "need at least two samples per side to fit a covariance",
        ));
    }
    let d = a[0].len();
    for v in a.iter().chain(b) {
        if v.len() != d {
            return Err(Error::config("embedding dims differ"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerics("non-finite embedding value"));
        }
    }
    let (mu_a, cov_a) = moments(a, d);
    let (mu_b, cov_b) = moments(b, d);
    frechet_from_moments(&mu_a, &cov_a, &mu_b, &cov_b)
}
