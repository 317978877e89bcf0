use super::params::ParamStore;
use super::GradMap;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub probes: usize,
    /// Probes that produced a comparable pair (analytic, central difference).
    pub used: usize,
    /// Probes where both sides were ~0 and a relative error is meaningless.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

/// Compares analytic gradients against central finite differences at
/// randomly probed parameter coordinates.
///
/// `eval(params, want_grads)` returns the scalar objective and, when asked,
/// its gradient map. Probed coordinates are restored bit-exactly after each
/// probe. rel_err = |a - cd| / max(|a|, |cd|, 1e-8).
pub fn grad_check_fn<F>(
    params: &mut ParamStore,
    mut eval: F,
    n_probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, bool) -> Result<(f64, Option<GradMap>)>,
{
    if n_probes == 0 {
        return Err(Error::config("grad_check needs at least one probe"));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::config(format!("grad_check step h={h} must be positive")));
    }

    let (_, grads) = eval(params, true)?;
    let grads = grads.ok_or_else(|| Error::config("eval returned no gradients"))?;
    let coords: Vec<(&String, usize)> = grads.iter().map(|(n, g)| (n, g.len())).collect();
    let total: usize = coords.iter().map(|(_, l)| l).sum();
    if total == 0 {
        return Err(Error::DegenerateInput(
            "no trainable coordinates to probe".into(),
        ));
    }

    let mut rng = StreamRng::from_tag(seed, "gradcheck.probe");
    let mut report = GradCheckReport {
        probes: n_probes,
        used: 0,
        skipped: 0,
        max_rel_err: 0.0,
        mean_rel_err: 0.0,
    };

    for _ in 0..n_probes {
        let mut flat = rng.uniform_int(0, (total - 1) as u64) as usize;
        let (name, idx) = {
            let mut found = None;
            for (n, l) in &coords {
                if flat < *l {
                    found = Some(((*n).clone(), flat));
                    break;
                }
                flat -= l;
            }
            found.expect("flat index within total")
        };

        let orig = params.get(&name).expect("grad name in store").data()[idx];
        params.get_mut(&name).unwrap().data_mut()[idx] = orig + h;
        let (lp, _) = eval(params, false)?;
        params.get_mut(&name).unwrap().data_mut()[idx] = orig - h;
        let (lm, _) = eval(params, false)?;
        params.get_mut(&name).unwrap().data_mut()[idx] = orig;

        let cd = (lp - lm) / (2.0 * h);
        let a = grads[&name].data()[idx];
        if a.abs() < 1e-12 && cd.abs() < 1e-12 {
            report.skipped += 1;
            continue;
        }
        let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
        report.used += 1;
        report.max_rel_err = report.max_rel_err.max(rel);
        report.mean_rel_err += rel;
    }
    if report.used > 0 {
        report.mean_rel_err /= report.used as f64;
    }
    Ok(report)
}
