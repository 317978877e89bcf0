use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forward-process noise schedule. Timesteps are 1-indexed: t in [1, t_count],
/// stored at vector index t-1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    t_count: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    loss_weight: Vec<f64>,
}

/// The parameters the schedule is rebuilt from when loading a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub t_count: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

/// Linear beta ramp. alpha_bar is the running product of (1 - beta_t);
/// per-step loss weights are identically 1.
pub fn make_schedule(t_count: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_count == 0 {
        return Err(Error::config("schedule needs at least one timestep"));
    }
    if !(0.0 < beta_start && beta_start < 1.0) || !(0.0 < beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "betas must lie in (0,1): start {beta_start}, end {beta_end}"
        )));
    }
    if beta_end < beta_start {
        return Err(Error::config("beta_end must be >= beta_start"));
    }
    let mut beta = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let frac = if t_count == 1 {
            0.0
        } else {
            t as f64 / (t_count - 1) as f64
        };
        beta.push(beta_start + (beta_end - beta_start) * frac);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_count);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule {
        t_count,
        beta,
        alpha,
        alpha_bar,
        loss_weight: vec![1.0; t_count],
    })
}

impl NoiseSchedule {
    pub fn t_count(&self) -> usize {
        self.t_count
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            t_count: self.t_count,
            beta_start: self.beta[0],
            beta_end: *self.beta.last().unwrap(),
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_count {
            return Err(Error::config(format!(
                "timestep {t} outside [1, {}]",
                self.t_count
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    /// alpha_bar extended with the convention alpha_bar(0) = 1, which closes
    /// the recurrences used by samplers.
    pub fn alpha_bar0(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.alpha_bar(t)
    }

    pub fn loss_weight(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.loss_weight[t - 1])
    }
}
