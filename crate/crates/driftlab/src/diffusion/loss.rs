use super::model::{DenoiserModel, TokenId};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::gradcore::{NodeId, Tape, Tensor};

/// Closed-form forward diffusion: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
pub fn q_sample(s: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::config(format!(
            "q_sample: x0 len {} vs eps len {}",
            x0.len(),
            eps.len()
        )));
    }
    let ab = s.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Batched denoising objective on a tape:
/// mean over samples of w_t * mean_pixels((eps - pred)^2).
///
/// All rows in one call must share the same loss weight; the shipped
/// schedules weight every timestep at 1, so this never bites in practice.
pub fn denoise_loss_tape(
    tape: &mut Tape,
    model: &DenoiserModel,
    s: &NoiseSchedule,
    x0: &Tensor,
    ts: &[usize],
    conds: &[TokenId],
    eps: &Tensor,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<NodeId> {
    if x0.shape() != eps.shape() {
        return Err(Error::config(format!(
            "x0 shape {:?} vs eps shape {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let b = x0.rows();
    if ts.is_empty() || ts.len() != b {
        return Err(Error::config("one timestep per sample required"));
    }
    let w0 = s.loss_weight(ts[0])?;
    for &t in ts {
        let wt = s.loss_weight(t)?;
        if wt != w0 {
            return Err(Error::config(
                "mixed loss weights in one batch are not supported",
            ));
        }
    }

    let d = x0.cols();
    let mut noisy = Vec::with_capacity(b * d);
    for r in 0..b {
        noisy.extend(q_sample(s, x0.row_slice(r), ts[r], eps.row_slice(r))?);
    }
    let xt = Tensor::new(vec![b, d], noisy)?;
    let pred = model.forward_tape(tape, &xt, ts, conds, trainable)?;
    let target = tape.constant(eps.clone());
    let msd = tape.mean_sq_diff(pred, target);
    Ok(if w0 == 1.0 { msd } else { tape.scale(msd, w0) })
}

/// Scalar objective without gradients.
pub fn denoise_loss(
    model: &DenoiserModel,
    s: &NoiseSchedule,
    x0: &Tensor,
    ts: &[usize],
    conds: &[TokenId],
    eps: &Tensor,
) -> Result<f64> {
    let mut tape = Tape::new();
    let node = denoise_loss_tape(&mut tape, model, s, x0, ts, conds, eps, &|_| false)?;
    Ok(tape.value(node).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::{ModelConfig, Vocab, NULL_TOKEN};
    use crate::diffusion::schedule::make_schedule;
    use crate::rng::StreamRng;

    #[test]
    fn q_sample_closed_form() {
        // abar = 0.25: x_t = 0.5*x0 + sqrt(0.75)*eps.
        let s = make_schedule(1, 0.75, 0.75).unwrap();
        let out = q_sample(&s, &[1.0], 1, &[1.0]).unwrap();
        assert!((out[0] - 1.3660254037844386).abs() < 1e-15);
    }

    #[test]
    fn q_sample_variance_matches_schedule() {
        // Var(x_t) = abar*Var(x0) + (1-abar) for x0 fixed here, so empirical
        // second moment about the mean tracks 1-abar.
        let s = make_schedule(50, 1e-3, 0.2).unwrap();
        let t = 30;
        let ab = s.alpha_bar(t).unwrap();
        let x0 = vec![0.42; 1];
        let mut rng = StreamRng::from_tag(5, "qvar");
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = q_sample(&s, &x0, t, &[rng.normal()]).unwrap()[0];
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - ab.sqrt() * 0.42).abs() < 5e-3, "mean {mean}");
        assert!((var - (1.0 - ab)).abs() < 1e-2, "var {var}");
    }

    #[test]
    fn q_sample_rejects_bad_args() {
        let s = make_schedule(10, 1e-4, 0.02).unwrap();
        assert!(q_sample(&s, &[1.0], 0, &[1.0]).is_err());
        assert!(q_sample(&s, &[1.0], 11, &[1.0]).is_err());
        assert!(q_sample(&s, &[1.0, 2.0], 1, &[1.0]).is_err());
    }

    fn zero_output_model() -> DenoiserModel {
        let cfg = ModelConfig {
            image_h: 2,
            image_w: 2,
            image_c: 1,
            hidden: 8,
            blocks: 1,
            time_features: 4,
            embed_dim: 4,
        };
        let vocab = Vocab::new(&["a".into()], 1).unwrap();
        let mut m = DenoiserModel::init(cfg, vocab, 1).unwrap();
        for name in ["trunk.out.w", "trunk.out.b"] {
            for v in m.params.get_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        m
    }

    #[test]
    fn expected_loss_of_zero_predictor_is_one() {
        // With pred = 0 the objective is mean(eps^2), expectation 1.
        let m = zero_output_model();
        let s = make_schedule(20, 1e-3, 0.1).unwrap();
        let mut rng = StreamRng::from_tag(9, "mc");
        let mut tr = StreamRng::from_tag(9, "mct");
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let x0 = Tensor::row(vec![0.5, 0.2, 0.8, 0.1]);
            let eps = Tensor::row(rng.normal_vec(4));
            let t = tr.uniform_int(1, 20) as usize;
            acc += denoise_loss(&m, &s, &x0, &[t], &[NULL_TOKEN], &eps).unwrap();
        }
        let mean = acc / draws as f64;
        assert!((mean - 1.0).abs() < 0.05, "MC mean {mean}");
    }

    #[test]
    fn batched_loss_equals_mean_of_singles() {
        let m = zero_output_model();
        let s = make_schedule(20, 1e-3, 0.1).unwrap();
        let mut rng = StreamRng::from_tag(4, "b");
        let rows: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(4)).collect();
        let noise: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(4)).collect();
        let x0 = Tensor::from_rows(&rows).unwrap();
        let eps = Tensor::from_rows(&noise).unwrap();
        let ts = [3, 3, 3];
        let conds = [NULL_TOKEN; 3];
        let batch = denoise_loss(&m, &s, &x0, &ts, &conds, &eps).unwrap();
        let mut single = 0.0;
        for r in 0..3 {
            single += denoise_loss(
                &m,
                &s,
                &Tensor::row(rows[r].clone()),
                &[ts[r]],
                &[conds[r]],
                &Tensor::row(noise[r].clone()),
            )
            .unwrap();
        }
        assert!((batch - single / 3.0).abs() < 1e-12);
    }
}
