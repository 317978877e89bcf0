//! Exact earth mover's distance between weighted point sets via successive
//! shortest augmenting paths with Johnson potentials. Exact up to floating
//! point arithmetic: every augmentation follows a true shortest path, so the
//! final plan satisfies complementary slackness.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::histogram::ChromaHistogram;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportPlan {
    /// (source index, target index, mass) in deterministic order.
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
    pub solver: String,
    /// Entropic regularization strength, when the solver used one.
    pub epsilon: Option<f64>,
    pub iterations: usize,
}

/// Mass below this is routing noise from normalization rounding, not signal.
const MASS_TOL: f64 = 1e-12;

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap; ties break on node id for determinism
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn validate_side(pos: &[(f64, f64)], mass: &[f64], side: &str) -> Result<f64> {
    if pos.len() != mass.len() {
        return Err(Error::config(format!(
            "{side}: {} positions vs {} masses",
            pos.len(),
            mass.len()
        )));
    }
    let mut total = 0.0;
    for (i, &m) in mass.iter().enumerate() {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::numerics(format!("{side}: bad mass {m} at {i}")));
        }
        total += m;
    }
    for &(x, y) in pos {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::numerics(format!("{side}: non-finite position")));
        }
    }
    if total <= 0.0 {
        return Err(Error::DegenerateInput(format!("{side}: zero total mass")));
    }
    Ok(total)
}

/// Exact transport between two discrete distributions on the plane.
/// Total masses must agree to 1e-6 relative; zero-mass points are pruned up
/// front so sparse inputs stay cheap.
pub fn emd_points(
    a_pos: &[(f64, f64)],
    a_mass: &[f64],
    b_pos: &[(f64, f64)],
    b_mass: &[f64],
) -> Result<TransportPlan> {
    let ta = validate_side(a_pos, a_mass, "source")?;
    let tb = validate_side(b_pos, b_mass, "target")?;
    if (ta - tb).abs() > 1e-6 * ta.max(tb) {
        return Err(Error::config(format!(
            "total mass mismatch: {ta} vs {tb}"
        )));
    }

    // prune zero-mass points, remembering original indices
    let src: Vec<usize> = (0..a_mass.len()).filter(|&i| a_mass[i] > MASS_TOL).collect();
    let snk: Vec<usize> = (0..b_mass.len()).filter(|&j| b_mass[j] > MASS_TOL).collect();
    let n = src.len();
    let m = snk.len();
    if n == 0 || m == 0 {
        return Err(Error::DegenerateInput("all mass pruned".into()));
    }

    let cost = |si: usize, tj: usize| euclid(a_pos[src[si]], b_pos[snk[tj]]);

    let mut supply: Vec<f64> = src.iter().map(|&i| a_mass[i]).collect();
    let mut demand: Vec<f64> = snk.iter().map(|&j| b_mass[j]).collect();
    // route the common mass; sub-tolerance residue is ignored
    let routable = supply.iter().sum::<f64>().min(demand.iter().sum::<f64>());
    let stop_tol = MASS_TOL * routable.max(1.0);

    // flow[si] maps sink -> mass; BTreeMap gives deterministic plan output
    let mut flow: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
    let mut pot = vec![0.0f64; n + m]; // sources 0..n, sinks n..n+m
    let max_rounds = 10 * (n + m) + 100;
    let mut rounds = 0usize;

    loop {
        let active_src: Vec<usize> = (0..n).filter(|&i| supply[i] > stop_tol).collect();
        let active_snk: Vec<usize> = (0..m).filter(|&j| demand[j] > stop_tol).collect();
        if active_src.is_empty() || active_snk.is_empty() {
            break;
        }
        rounds += 1;
        if rounds > max_rounds {
            return Err(Error::Convergence(format!(
                "transport did not finish in {max_rounds} augmentations"
            )));
        }

        // multi-source Dijkstra over the residual graph under reduced costs
        let inf = f64::INFINITY;
        let mut dist = vec![inf; n + m];
        let mut prev = vec![usize::MAX; n + m];
        let mut heap = BinaryHeap::new();
        for &i in &active_src {
            dist[i] = 0.0;
            heap.push(HeapEntry { dist: 0.0, node: i });
        }
        let mut settled = vec![false; n + m];
        while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
            if settled[u] {
                continue;
            }
            settled[u] = true;
            if u < n {
                // forward edges to every sink
                for j in 0..m {
                    let v = n + j;
                    let rc = cost(u, j) + pot[u] - pot[v];
                    let rc = if rc < 0.0 {
                        debug_assert!(rc > -1e-9, "reduced cost {rc}");
                        0.0
                    } else {
                        rc
                    };
                    if d + rc < dist[v] {
                        dist[v] = d + rc;
                        prev[v] = u;
                        heap.push(HeapEntry { dist: dist[v], node: v });
                    }
                }
            } else {
                // backward edges along existing flow
                let j = u - n;
                for i in 0..n {
                    if flow[i].get(&j).copied().unwrap_or(0.0) > MASS_TOL {
                        let rc = -cost(i, j) + pot[u] - pot[i];
                        let rc = if rc < 0.0 {
                            debug_assert!(rc > -1e-9, "reduced cost {rc}");
                            0.0
                        } else {
                            rc
                        };
                        if d + rc < dist[i] {
                            dist[i] = d + rc;
                            prev[i] = u;
                            heap.push(HeapEntry { dist: dist[i], node: i });
                        }
                    }
                }
            }
        }

        // closest reachable sink with remaining demand; ties on index
        let mut target = usize::MAX;
        for &j in &active_snk {
            let v = n + j;
            if dist[v] < inf && (target == usize::MAX || dist[v] < dist[target]) {
                target = v;
            }
        }
        if target == usize::MAX {
            return Err(Error::Convergence("no augmenting path found".into()));
        }
        let d_t = dist[target];

        // bottleneck along the path
        let mut bottleneck = demand[target - n];
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                // backward edge (sink u-n) -> source v: capacity is the flow
                bottleneck = bottleneck.min(flow[v][&(u - n)]);
            }
            v = u;
        }
        bottleneck = bottleneck.min(supply[v]);
        debug_assert!(bottleneck > 0.0);

        // apply augmentation
        let mut v2 = target;
        while prev[v2] != usize::MAX {
            let u = prev[v2];
            if u < n {
                *flow[u].entry(v2 - n).or_insert(0.0) += bottleneck;
            } else {
                let e = flow[v2].get_mut(&(u - n)).expect("backward edge has flow");
                *e -= bottleneck;
                if *e <= MASS_TOL {
                    flow[v2].remove(&(u - n));
                }
            }
            v2 = u;
        }
        supply[v2] -= bottleneck;
        demand[target - n] -= bottleneck;

        // potential update, capped at the target distance
        for node in 0..n + m {
            pot[node] += dist[node].min(d_t);
        }
    }

    let mut flows = Vec::new();
    let mut total_cost = 0.0;
    for i in 0..n {
        for (&j, &f) in &flow[i] {
            if f > MASS_TOL {
                total_cost += f * cost(i, j);
                flows.push((src[i], snk[j], f));
            }
        }
    }
    Ok(TransportPlan {
        flows,
        cost: total_cost,
        solver: "ssp_exact".into(),
        epsilon: None,
        iterations: rounds,
    })
}

/// EMD between two chromaticity histograms on the same grid, with bin
/// centers as ground points and Euclidean xy distance as ground metric.
pub fn emd_exact(a: &ChromaHistogram, b: &ChromaHistogram) -> Result<TransportPlan> {
    if a.resolution != b.resolution {
        return Err(Error::config(format!(
            "histogram resolutions differ: {} vs {}",
            a.resolution, b.resolution
        )));
    }
    let centers: Vec<(f64, f64)> = (0..a.bins()).map(|i| a.bin_center(i)).collect();
    emd_points(&centers, &a.mass, &centers, &b.mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::histogram::chroma_histogram;
    use crate::rng::StreamRng;

    /// Optimality certificate: rebuilds dual potentials from the plan's
    /// support by complementary slackness, then checks dual feasibility for
    /// every pair. Any non-optimal plan fails one of the two.
    fn assert_optimal(
        a_pos: &[(f64, f64)],
        a_mass: &[f64],
        b_pos: &[(f64, f64)],
        b_mass: &[f64],
        plan: &TransportPlan,
    ) {
        let n = a_pos.len();
        let m = b_pos.len();
        // primal feasibility
        let mut out = vec![0.0; n];
        let mut inn = vec![0.0; m];
        for &(i, j, f) in &plan.flows {
            assert!(f > 0.0);
            out[i] += f;
            inn[j] += f;
        }
        for i in 0..n {
            assert!((out[i] - a_mass[i]).abs() < 1e-9, "row {i} marginal");
        }
        for j in 0..m {
            assert!((inn[j] - b_mass[j]).abs() < 1e-9, "col {j} marginal");
        }
        // potentials from the support graph
        let mut pa = vec![f64::NAN; n];
        let mut pb = vec![f64::NAN; m];
        let adj: Vec<(usize, usize)> = plan.flows.iter().map(|&(i, j, _)| (i, j)).collect();
        for start in 0..n {
            if !pa[start].is_nan() || a_mass[start] <= 0.0 {
                continue;
            }
            pa[start] = 0.0;
            let mut stack = vec![(start, true)];
            while let Some((node, is_src)) = stack.pop() {
                for &(i, j) in &adj {
                    let c = euclid(a_pos[i], b_pos[j]);
                    if is_src && i == node {
                        let want = pa[i] + c;
                        if pb[j].is_nan() {
                            pb[j] = want;
                            stack.push((j, false));
                        } else {
                            assert!((pb[j] - want).abs() < 1e-7, "support inconsistency");
                        }
                    } else if !is_src && j == node {
                        let want = pb[j] - c;
                        if pa[i].is_nan() {
                            pa[i] = want;
                            stack.push((i, true));
                        } else {
                            assert!((pa[i] - want).abs() < 1e-7, "support inconsistency");
                        }
                    }
                }
            }
        }
        // dual feasibility: pb[j] - pa[i] <= c_ij for all pairs
        for i in 0..n {
            if a_mass[i] <= 0.0 {
                continue;
            }
            for j in 0..m {
                if b_mass[j] <= 0.0 || pa[i].is_nan() || pb[j].is_nan() {
                    continue;
                }
                let c = euclid(a_pos[i], b_pos[j]);
                assert!(
                    pb[j] - pa[i] <= c + 1e-7,
                    "dual infeasible at ({i},{j}): {} > {c}",
                    pb[j] - pa[i]
                );
            }
        }
        // duality gap: plan cost equals dual objective on the support
        let dual: f64 = (0..n)
            .filter(|&i| !pa[i].is_nan())
            .map(|i| -pa[i] * a_mass[i])
            .sum::<f64>()
            + (0..m)
                .filter(|&j| !pb[j].is_nan())
                .map(|j| pb[j] * b_mass[j])
                .sum::<f64>();
        assert!(
            (plan.cost - dual).abs() < 1e-7,
            "strong duality violated: primal {} dual {}",
            plan.cost,
            dual
        );
    }

    #[test]
    fn single_pair_is_distance_times_mass() {
        let plan = emd_points(&[(0.0, 0.0)], &[2.0], &[(3.0, 4.0)], &[2.0]).unwrap();
        assert!((plan.cost - 10.0).abs() < 1e-12);
        assert_eq!(plan.flows, vec![(0, 0, 2.0)]);
    }

    #[test]
    fn parallel_transport_beats_crossing() {
        // two sources below two sinks; straight up is optimal
        let a = [(0.0, 0.0), (1.0, 0.0)];
        let b = [(0.0, 1.0), (1.0, 1.0)];
        let plan = emd_points(&a, &[0.5, 0.5], &b, &[0.5, 0.5]).unwrap();
        assert!((plan.cost - 1.0).abs() < 1e-12);
        assert_optimal(&a, &[0.5, 0.5], &b, &[0.5, 0.5], &plan);
    }

    #[test]
    fn split_flow_hand_computed() {
        // one source splits 0.3 to distance 1 and 0.7 to distance 2
        let a = [(0.0, 0.0)];
        let b = [(1.0, 0.0), (0.0, 2.0)];
        let plan = emd_points(&a, &[1.0], &b, &[0.3, 0.7]).unwrap();
        assert!((plan.cost - (0.3 + 1.4)).abs() < 1e-12);
        assert_optimal(&a, &[1.0], &b, &[0.3, 0.7], &plan);
    }

    #[test]
    fn self_distance_is_exactly_zero() {
        let pos: Vec<(f64, f64)> = (0..9).map(|i| ((i % 3) as f64, (i / 3) as f64)).collect();
        let mass: Vec<f64> = (0..9).map(|i| (i + 1) as f64 / 45.0).collect();
        let plan = emd_points(&pos, &mass, &pos, &mass).unwrap();
        assert_eq!(plan.cost, 0.0);
    }

    #[test]
    fn random_instances_pass_the_optimality_certificate() {
        let mut rng = StreamRng::from_tag(42, "emd.cert");
        for case in 0..30 {
            let n = 2 + (case % 5);
            let m = 2 + ((case * 3) % 5);
            let a_pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform(), rng.uniform())).collect();
            let b_pos: Vec<(f64, f64)> = (0..m).map(|_| (rng.uniform(), rng.uniform())).collect();
            let mut a_mass: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let mut b_mass: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
            let sa: f64 = a_mass.iter().sum();
            let sb: f64 = b_mass.iter().sum();
            a_mass.iter_mut().for_each(|v| *v /= sa);
            b_mass.iter_mut().for_each(|v| *v /= sb);
            let plan = emd_points(&a_pos, &a_mass, &b_pos, &b_mass).unwrap();
            assert_optimal(&a_pos, &a_mass, &b_pos, &b_mass, &plan);
        }
    }

    fn random_hist(rng: &mut StreamRng, resolution: usize, sparsity: f64) -> ChromaHistogram {
        let bins = resolution * resolution;
        let mut mass = vec![0.0; bins];
        let mut total = 0.0;
        for m in mass.iter_mut() {
            if rng.uniform() < sparsity {
                *m = rng.uniform();
                total += *m;
            }
        }
        if total == 0.0 {
            mass[0] = 1.0;
            total = 1.0;
        }
        mass.iter_mut().for_each(|v| *v /= total);
        ChromaHistogram {
            resolution,
            mass,
            dropped: 0,
            clamped: 0,
            total_points: bins,
        }
    }

    #[test]
    fn metric_axioms_on_random_histograms() {
        let mut rng = StreamRng::from_tag(7, "emd.axioms");
        for _ in 0..25 {
            let a = random_hist(&mut rng, 8, 0.4);
            let b = random_hist(&mut rng, 8, 0.4);
            let c = random_hist(&mut rng, 8, 0.4);
            let dab = emd_exact(&a, &b).unwrap().cost;
            let dba = emd_exact(&b, &a).unwrap().cost;
            let daa = emd_exact(&a, &a).unwrap().cost;
            let dac = emd_exact(&a, &c).unwrap().cost;
            let dcb = emd_exact(&c, &b).unwrap().cost;
            assert!(daa.abs() < 1e-10, "identity {daa}");
            assert!((dab - dba).abs() < 1e-10, "symmetry {dab} vs {dba}");
            assert!(dab <= dac + dcb + 1e-8, "triangle {dab} > {dac} + {dcb}");
            assert!(dab >= 0.0);
        }
    }

    #[test]
    fn histogram_distance_matches_known_chromaticity_gap() {
        // pure red vs pure blue collapses to two point masses whose distance
        // is the red-blue chromaticity gap, quantized by bin centers.
        let red = vec![1.0, 0.0, 0.0].repeat(32);
        let blue = vec![0.0, 0.0, 1.0].repeat(32);
        let ha = chroma_histogram(&[red], 32).unwrap();
        let hb = chroma_histogram(&[blue], 32).unwrap();
        let plan = emd_exact(&ha, &hb).unwrap();
        // exact point distance is 0.5595; allow one bin diagonal (0.0354)
        assert!(
            (plan.cost - 0.5595).abs() < 0.036,
            "red-blue EMD {}",
            plan.cost
        );
        assert_eq!(plan.flows.len(), 1);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let p = [(0.0, 0.0)];
        assert!(matches!(
            emd_points(&p, &[1.0], &p, &[0.5]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            emd_points(&p, &[0.0], &p, &[0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            emd_points(&p, &[f64::NAN], &p, &[1.0]),
            Err(Error::Numerics(_))
        ));
        let h8 = ChromaHistogram {
            resolution: 8,
            mass: vec![1.0 / 64.0; 64],
            dropped: 0,
            clamped: 0,
            total_points: 64,
        };
        let h16 = ChromaHistogram {
            resolution: 16,
            mass: vec![1.0 / 256.0; 256],
            dropped: 0,
            clamped: 0,
            total_points: 256,
        };
        assert!(matches!(emd_exact(&h8, &h16), Err(Error::Config(_))));
    }
}
