//! Entropic optimal transport in the log domain, with epsilon annealing and
//! a final rounding step onto the transport polytope. Kept fully independent
//! of the exact solver so the two can audit each other.

use serde::{Deserialize, Serialize};

use super::emd::TransportPlan;
use super::histogram::ChromaHistogram;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Final regularization strength. Annealing starts at 1 and halves down
    /// to this value, warm-starting the potentials at each level.
    pub epsilon: f64,
    /// Iteration budget per annealing level.
    pub max_iter: usize,
    /// L1 row-marginal tolerance that counts as converged.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 5e-4,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

const MASS_TOL: f64 = 1e-12;

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

fn logsumexp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropically regularized transport cost between weighted point sets.
/// The reported cost is that of the rounded, exactly feasible plan, so it
/// upper-bounds the true optimum.
pub fn sinkhorn_points(
    a_pos: &[(f64, f64)],
    a_mass: &[f64],
    b_pos: &[(f64, f64)],
    b_mass: &[f64],
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    if !(cfg.epsilon > 0.0) || cfg.max_iter == 0 || !(cfg.tol > 0.0) {
        return Err(Error::config("sinkhorn config values must be positive"));
    }
    if a_pos.len() != a_mass.len() || b_pos.len() != b_mass.len() {
        return Err(Error::config("positions and masses must pair up"));
    }
    for &m in a_mass.iter().chain(b_mass) {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::numerics(format!("bad mass {m}")));
        }
    }
    let ta: f64 = a_mass.iter().sum();
    let tb: f64 = b_mass.iter().sum();
    if ta <= 0.0 || tb <= 0.0 {
        return Err(Error::DegenerateInput("zero total mass".into()));
    }
    if (ta - tb).abs() > 1e-6 * ta.max(tb) {
        return Err(Error::config(format!("total mass mismatch: {ta} vs {tb}")));
    }

    let src: Vec<usize> = (0..a_mass.len()).filter(|&i| a_mass[i] > MASS_TOL).collect();
    let snk: Vec<usize> = (0..b_mass.len()).filter(|&j| b_mass[j] > MASS_TOL).collect();
    let (n, m) = (src.len(), snk.len());
    if n == 0 || m == 0 {
        return Err(Error::DegenerateInput("all mass pruned".into()));
    }
    let a: Vec<f64> = src.iter().map(|&i| a_mass[i] / ta).collect();
    let b: Vec<f64> = snk.iter().map(|&j| b_mass[j] / ta).collect();
    let cost: Vec<f64> = (0..n * m)
        .map(|k| euclid(a_pos[src[k / m]], b_pos[snk[k % m]]))
        .collect();
    let ln_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let ln_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();

    // annealing ladder: 1.0 halving down to the target epsilon
    let mut levels = vec![];
    let mut e = 1.0f64;
    while e > cfg.epsilon {
        levels.push(e);
        e *= 0.5;
    }
    levels.push(cfg.epsilon);

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let mut iterations = 0usize;
    let mut last_err = f64::INFINITY;

    for (li, &eps) in levels.iter().enumerate() {
        let is_final = li == levels.len() - 1;
        let mut converged = false;
        let mut scratch = vec![0.0f64; n.max(m)];
        for _ in 0..cfg.max_iter {
            iterations += 1;
            // f update leaves columns exact wrt g; then g update fixes rows
            for i in 0..n {
                for (j, s) in scratch[..m].iter_mut().enumerate() {
                    *s = (g[j] - cost[i * m + j]) / eps;
                }
                f[i] = eps * (ln_a[i] - logsumexp(&scratch[..m]));
            }
            for j in 0..m {
                for (i, s) in scratch[..n].iter_mut().enumerate() {
                    *s = (f[i] - cost[i * m + j]) / eps;
                }
                g[j] = eps * (ln_b[j] - logsumexp(&scratch[..n]));
            }
            // row marginal error of the implicit plan
            let mut err = 0.0;
            for i in 0..n {
                for (j, s) in scratch[..m].iter_mut().enumerate() {
                    *s = (f[i] + g[j] - cost[i * m + j]) / eps;
                }
                err += (logsumexp(&scratch[..m]).exp() - a[i]).abs();
            }
            last_err = err;
            if err < cfg.tol {
                converged = true;
                break;
            }
        }
        if is_final && !converged {
            return Err(Error::Convergence(format!(
                "sinkhorn marginal error {last_err:.3e} above tol {:.3e} after {iterations} iterations",
                cfg.tol
            )));
        }
    }

    // materialize the plan and round it onto the polytope
    let eps = cfg.epsilon;
    let mut p: Vec<f64> = (0..n * m)
        .map(|k| ((f[k / m] + g[k % m] - cost[k]) / eps).exp())
        .collect();
    // row scale down to row budgets
    for i in 0..n {
        let r: f64 = p[i * m..(i + 1) * m].iter().sum();
        if r > a[i] && r > 0.0 {
            let s = a[i] / r;
            for v in &mut p[i * m..(i + 1) * m] {
                *v *= s;
            }
        }
    }
    // column scale down to column budgets
    for j in 0..m {
        let c: f64 = (0..n).map(|i| p[i * m + j]).sum();
        if c > b[j] && c > 0.0 {
            let s = b[j] / c;
            for i in 0..n {
                p[i * m + j] *= s;
            }
        }
    }
    // distribute the leftover mass proportionally to the deficits
    let row_def: Vec<f64> = (0..n)
        .map(|i| a[i] - p[i * m..(i + 1) * m].iter().sum::<f64>())
        .collect();
    let col_def: Vec<f64> = (0..m)
        .map(|j| b[j] - (0..n).map(|i| p[i * m + j]).sum::<f64>())
        .collect();
    let total_def: f64 = row_def.iter().map(|v| v.max(0.0)).sum();
    if total_def > 0.0 {
        for i in 0..n {
            let rd = row_def[i].max(0.0);
            if rd == 0.0 {
                continue;
            }
            for j in 0..m {
                let cd = col_def[j].max(0.0);
                if cd > 0.0 {
                    p[i * m + j] += rd * cd / total_def;
                }
            }
        }
    }

    let mut flows = Vec::new();
    let mut total_cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let v = p[i * m + j] * ta; // back to caller mass scale
            if v > MASS_TOL {
                total_cost += v * cost[i * m + j];
                flows.push((src[i], snk[j], v));
            }
        }
    }
    Ok(TransportPlan {
        flows,
        cost: total_cost,
        solver: "sinkhorn_log".into(),
        epsilon: Some(cfg.epsilon),
        iterations,
    })
}

/// Entropic EMD between chromaticity histograms on the same grid.
pub fn sinkhorn(
    a: &ChromaHistogram,
    b: &ChromaHistogram,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    if a.resolution != b.resolution {
        return Err(Error::config(format!(
            "histogram resolutions differ: {} vs {}",
            a.resolution, b.resolution
        )));
    }
    let centers: Vec<(f64, f64)> = (0..a.bins()).map(|i| a.bin_center(i)).collect();
    sinkhorn_points(&centers, &a.mass, &centers, &b.mass, cfg)
}
