use super::tensor::Tensor;
use super::GradMap;

pub type NodeId = usize;

/// Differentiable ops. Shapes are validated eagerly when nodes are pushed;
/// a mismatch is a programming error and panics.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// out = x @ w, x: [b,n], w: [n,m]
    MatMul(NodeId, NodeId),
    /// out = a + b, same shape
    Add(NodeId, NodeId),
    /// out[r] = x[r] + bias, bias broadcast over rows
    AddRow(NodeId, NodeId),
    /// out = c * x
    Scale(NodeId, f64),
    /// out = x * sigmoid(x)
    Silu(NodeId),
    /// out[r] = table[ids[r]], table: [v,e]
    EmbedRows(NodeId, Vec<usize>),
    /// scalar mean of all elements
    MeanAll(NodeId),
    /// scalar mean((a-b)^2) over all elements
    MeanSqDiff(NodeId, NodeId),
    /// scalar mean over rows of cross-entropy(softmax(logits[r]), labels[r])
    SoftmaxXent(NodeId, Vec<usize>),
    /// scalar sum of w_i * term_i, terms scalar
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node {
    op: Op,
    value: Tensor,
    /// Name for trainable leaves; only these emit gradients.
    param: Option<String>,
}

/// Wengert-list tape: forward values are stored as nodes are pushed, the
/// backward pass replays nodes in reverse id order, which also fixes the
/// gradient accumulation order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_ids: std::collections::HashMap<String, NodeId>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            param: None,
        });
        self.nodes.len() - 1
    }

    /// Constant leaf: participates in forward math, never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Trainable leaf. The tensor is snapshotted onto the tape, so later
    /// parameter updates do not disturb an already-built graph. A name seen
    /// before returns the existing leaf: one parameter is one node no matter
    /// how many subgraphs consume it, and gradients from all of them
    /// accumulate there. The snapshot must match on reuse.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        if let Some(&id) = self.param_ids.get(name) {
            debug_assert!(
                self.nodes[id].value.data() == value.data(),
                "parameter {name} re-registered with a different snapshot"
            );
            return id;
        }
        let id = self.push(Op::Leaf, value);
        self.nodes[id].param = Some(name.to_string());
        self.param_ids.insert(name.to_string(), id);
        id
    }

    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let (xv, wv) = (&self.nodes[x].value, &self.nodes[w].value);
        let (b, n) = (xv.rows(), xv.cols());
        let (n2, m) = (wv.rows(), wv.cols());
        assert!(
            wv.shape().len() == 2 && n == n2,
            "matmul shape mismatch: {:?} @ {:?}",
            xv.shape(),
            wv.shape()
        );
        let mut out = vec![0.0; b * m];
        matmul_acc(xv.data(), b, n, wv.data(), m, &mut out);
        self.push(Op::MatMul(x, w), Tensor::new(vec![b, m], out).unwrap())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(
            av.shape() == bv.shape(),
            "add shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        self.push(Op::Add(a, b), Tensor::new(shape, data).unwrap())
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (xv, bv) = (&self.nodes[x].value, &self.nodes[bias].value);
        let (b, m) = (xv.rows(), xv.cols());
        assert!(
            bv.shape().len() == 1 && bv.len() == m,
            "add_row shape mismatch: {:?} + {:?}",
            xv.shape(),
            bv.shape()
        );
        let mut data = xv.data().to_vec();
        for r in 0..b {
            for (j, bj) in bv.data().iter().enumerate() {
                data[r * m + j] += bj;
            }
        }
        self.push(Op::AddRow(x, bias), Tensor::new(vec![b, m], data).unwrap())
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.nodes[x].value.data().iter().map(|v| c * v).collect();
        let shape = self.nodes[x].value.shape().to_vec();
        self.push(Op::Scale(x, c), Tensor::new(shape, data).unwrap())
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x]
            .value
            .data()
            .iter()
            .map(|&v| v * sigmoid(v))
            .collect();
        let shape = self.nodes[x].value.shape().to_vec();
        self.push(Op::Silu(x), Tensor::new(shape, data).unwrap())
    }

    pub fn embed_rows(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let tv = &self.nodes[table].value;
        assert!(tv.shape().len() == 2, "embed_rows table must be rank 2");
        let (v, e) = (tv.rows(), tv.cols());
        assert!(
            ids.iter().all(|&i| i < v),
            "embed_rows id out of range (vocab {v})"
        );
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            data.extend_from_slice(tv.row_slice(i));
        }
        self.push(
            Op::EmbedRows(table, ids.to_vec()),
            Tensor::new(vec![ids.len(), e], data).unwrap(),
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let mean = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::MeanAll(x), Tensor::scalar(mean))
    }

    pub fn mean_sq_diff(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(
            av.shape() == bv.shape(),
            "mean_sq_diff shape mismatch: {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let n = av.len() as f64;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push(Op::MeanSqDiff(a, b), Tensor::scalar(s / n))
    }

    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let lv = &self.nodes[logits].value;
        let (b, k) = (lv.rows(), lv.cols());
        assert!(labels.len() == b, "softmax_xent label count mismatch");
        assert!(labels.iter().all(|&l| l < k), "softmax_xent label out of range");
        let mut total = 0.0;
        for r in 0..b {
            let row = lv.row_slice(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[labels[r]];
        }
        self.push(
            Op::SoftmaxXent(logits, labels.to_vec()),
            Tensor::scalar(total / b as f64),
        )
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let mut s = 0.0;
        for &(id, w) in terms {
            let v = &self.nodes[id].value;
            assert!(v.len() == 1, "weighted_sum term {id} is not scalar");
            s += w * v.item();
        }
        self.push(Op::WeightedSum(terms.to_vec()), Tensor::scalar(s))
    }

    /// Reverse sweep from a scalar root. Returns exactly one gradient per
    /// trainable leaf reached from the root, keyed by parameter name.
    pub fn backward(&self, root: NodeId) -> GradMap {
        assert!(
            self.nodes[root].value.len() == 1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);

        for id in (0..=root).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(x, w) => {
                    let (xv, wv) = (&self.nodes[*x].value, &self.nodes[*w].value);
                    let (b, n, m) = (xv.rows(), xv.cols(), wv.cols());
                    {
                        let gx = slot(&mut grads, *x, b * n);
                        // dx = dy @ w^T
                        for i in 0..b {
                            for k in 0..m {
                                let d = g[i * m + k];
                                if d == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    gx[i * n + j] += d * wv.data()[j * m + k];
                                }
                            }
                        }
                    }
                    {
                        let gw = slot(&mut grads, *w, n * m);
                        // dw = x^T @ dy
                        for i in 0..b {
                            for j in 0..n {
                                let xij = xv.data()[i * n + j];
                                if xij == 0.0 {
                                    continue;
                                }
                                for k in 0..m {
                                    gw[j * m + k] += xij * g[i * m + k];
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let n = g.len();
                    axpy(slot(&mut grads, *a, n), &g, 1.0);
                    axpy(slot(&mut grads, *b, n), &g, 1.0);
                }
                Op::AddRow(x, bias) => {
                    let (b, m) = {
                        let xv = &self.nodes[*x].value;
                        (xv.rows(), xv.cols())
                    };
                    axpy(slot(&mut grads, *x, b * m), &g, 1.0);
                    let gb = slot(&mut grads, *bias, m);
                    for r in 0..b {
                        for j in 0..m {
                            gb[j] += g[r * m + j];
                        }
                    }
                }
                Op::Scale(x, c) => {
                    axpy(slot(&mut grads, *x, g.len()), &g, *c);
                }
                Op::Silu(x) => {
                    let xv = &self.nodes[*x].value;
                    let gx = slot(&mut grads, *x, g.len());
                    for (i, &v) in xv.data().iter().enumerate() {
                        let s = sigmoid(v);
                        gx[i] += g[i] * s * (1.0 + v * (1.0 - s));
                    }
                }
                Op::EmbedRows(table, ids) => {
                    let (v, e) = {
                        let tv = &self.nodes[*table].value;
                        (tv.rows(), tv.cols())
                    };
                    let gt = slot(&mut grads, *table, v * e);
                    for (r, &row) in ids.iter().enumerate() {
                        for j in 0..e {
                            gt[row * e + j] += g[r * e + j];
                        }
                    }
                }
                Op::MeanAll(x) => {
                    let n = self.nodes[*x].value.len();
                    let c = g[0] / n as f64;
                    let gx = slot(&mut grads, *x, n);
                    for gi in gx.iter_mut() {
                        *gi += c;
                    }
                }
                Op::MeanSqDiff(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let n = av.len();
                    let c = 2.0 * g[0] / n as f64;
                    {
                        let ga = slot(&mut grads, *a, n);
                        for i in 0..n {
                            ga[i] += c * (av.data()[i] - bv.data()[i]);
                        }
                    }
                    {
                        let gb = slot(&mut grads, *b, n);
                        for i in 0..n {
                            gb[i] -= c * (av.data()[i] - bv.data()[i]);
                        }
                    }
                }
                Op::SoftmaxXent(logits, labels) => {
                    let lv = &self.nodes[*logits].value;
                    let (b, k) = (lv.rows(), lv.cols());
                    let c = g[0] / b as f64;
                    let gl = slot(&mut grads, *logits, b * k);
                    for r in 0..b {
                        let row = lv.row_slice(r);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                        let s: f64 = z.iter().sum();
                        for j in 0..k {
                            let p = z[j] / s;
                            let y = if labels[r] == j { 1.0 } else { 0.0 };
                            gl[r * k + j] += c * (p - y);
                        }
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(id, w) in terms {
                        slot(&mut grads, id, 1)[0] += w * g[0];
                    }
                }
            }
        }

        let mut out = GradMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let (Some(name), Some(g)) = (&node.param, &grads[id]) {
                let shape = node.value.shape().to_vec();
                let prev = out.insert(name.clone(), Tensor::new(shape, g.clone()).unwrap());
                assert!(prev.is_none(), "parameter {name} registered twice on tape");
            }
        }
        out
    }
}

/// out[i..] += c * g[i..]
fn axpy(out: &mut [f64], g: &[f64], c: f64) {
    for (o, gi) in out.iter_mut().zip(g) {
        *o += c * gi;
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, n: usize) -> &mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; n]).as_mut_slice()
}

/// out += x @ w; x: [b,n] row-major, w: [n,m] row-major, out: [b,m].
pub(crate) fn matmul_acc(x: &[f64], b: usize, n: usize, w: &[f64], m: usize, out: &mut [f64]) {
    for i in 0..b {
        for j in 0..n {
            let xij = x[i * n + j];
            if xij == 0.0 {
                continue;
            }
            let wrow = &w[j * m..(j + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for k in 0..m {
                orow[k] += xij * wrow[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn linear_model_matches_central_difference_tightly() {
        // f(w) = mean((x @ w - 0)^2) is quadratic in w, so central
        // differences are exact up to rounding.
        let x = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let w0 = vec![0.7, 0.3];
        let loss_at = |wv: &[f64]| {
            let mut t = Tape::new();
            let xn = t.constant(x.clone());
            let wn = t.param("w", Tensor::new(vec![2, 1], wv.to_vec()).unwrap());
            let y = t.matmul(xn, wn);
            let zero = t.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
            let l = t.mean_sq_diff(y, zero);
            t.value(l).item()
        };
        let mut t = Tape::new();
        let xn = t.constant(x.clone());
        let wn = t.param("w", Tensor::new(vec![2, 1], w0.clone()).unwrap());
        let y = t.matmul(xn, wn);
        let zero = t.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        let l = t.mean_sq_diff(y, zero);
        let grads = t.backward(l);
        let gw = grads.get("w").unwrap();

        for i in 0..2 {
            let cd = finite_diff(
                |v| {
                    let mut wv = w0.clone();
                    wv[i] = v;
                    loss_at(&wv)
                },
                w0[i],
                1e-5,
            );
            assert!(
                (gw.data()[i] - cd).abs() < 1e-10,
                "param {i}: analytic {} vs cd {}",
                gw.data()[i],
                cd
            );
        }
    }

    #[test]
    fn single_weight_times_input_grad_is_input() {
        // f(w) = w * x with x = 2: d mean(f) / dw = 2.
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let w = t.param("w", Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let y = t.matmul(x, w);
        let m = t.mean_all(y);
        let grads = t.backward(m);
        assert_eq!(grads["w"].data(), &[2.0]);
    }

    #[test]
    fn backward_skips_frozen_and_unreached_leaves() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![1.0, 2.0]));
        let w = t.param("used", Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let _orphan = t.param("orphan", Tensor::from_vec(vec![5.0]));
        let frozen = t.constant(Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap());
        let h = t.matmul(x, w);
        let h2 = t.matmul(h, frozen);
        let l = t.mean_all(h2);
        let grads = t.backward(l);
        assert!(grads.contains_key("used"));
        assert!(!grads.contains_key("orphan"), "unreached leaf must be absent");
        assert_eq!(grads.len(), 1);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        // One composite graph touching all ops; checks each param entry
        // against central differences at loose-but-honest tolerance.
        let base: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.55).collect();
        let eval = |p: &[f64]| -> f64 {
            let mut t = Tape::new();
            let table = t.param("table", Tensor::new(vec![3, 4], p.to_vec()).unwrap());
            let emb = t.embed_rows(table, &[0, 2, 1]);
            let w = t.constant(Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64) * 0.05 - 0.2).collect()).unwrap());
            let bias = t.constant(Tensor::from_vec(vec![0.1, -0.2, 0.3]));
            let h = t.matmul(emb, w);
            let h = t.add_row(h, bias);
            let h = t.silu(h);
            let h2 = t.scale(h, 1.7);
            let h3 = t.add(h, h2);
            let tgt = t.constant(Tensor::new(vec![3, 3], vec![0.2; 9]).unwrap());
            let msd = t.mean_sq_diff(h3, tgt);
            let xent = t.softmax_xent(h3, &[0, 1, 2]);
            let mean = t.mean_all(h3);
            let l = t.weighted_sum(&[(msd, 0.5), (xent, 1.25), (mean, -0.3)]);
            t.value(l).item()
        };
        let mut t = Tape::new();
        let table = t.param("table", Tensor::new(vec![3, 4], base.clone()).unwrap());
        let emb = t.embed_rows(table, &[0, 2, 1]);
        let w = t.constant(Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64) * 0.05 - 0.2).collect()).unwrap());
        let bias = t.constant(Tensor::from_vec(vec![0.1, -0.2, 0.3]));
        let h = t.matmul(emb, w);
        let h = t.add_row(h, bias);
        let h = t.silu(h);
        let h2 = t.scale(h, 1.7);
        let h3 = t.add(h, h2);
        let tgt = t.constant(Tensor::new(vec![3, 3], vec![0.2; 9]).unwrap());
        let msd = t.mean_sq_diff(h3, tgt);
        let xent = t.softmax_xent(h3, &[0, 1, 2]);
        let mean = t.mean_all(h3);
        let l = t.weighted_sum(&[(msd, 0.5), (xent, 1.25), (mean, -0.3)]);
        let grads = t.backward(l);
        let g = grads.get("table").unwrap();

        let h = 1e-6;
        for i in 0..base.len() {
            let mut lo = base.clone();
            let mut hi = base.clone();
            lo[i] -= h;
            hi[i] += h;
            let cd = (eval(&hi) - eval(&lo)) / (2.0 * h);
            let a = g.data()[i];
            let denom = a.abs().max(cd.abs()).max(1e-8);
            assert!(
                ((a - cd) / denom).abs() < 1e-6,
                "entry {i}: analytic {a} vs cd {cd}"
            );
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut t = Tape::new();
            let x = t.constant(Tensor::row(vec![0.3, -0.9, 2.2]));
            let w = t.param(
                "w",
                Tensor::new(vec![3, 3], (0..9).map(|i| (i as f64).sin()).collect()).unwrap(),
            );
            let h = t.matmul(x, w);
            let s = t.silu(h);
            let l = t.mean_all(s);
            t.backward(l)
        };
        let a = build();
        let b = build();
        assert_eq!(a["w"].data(), b["w"].data(), "bitwise equality required");
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch")]
    fn matmul_shape_mismatch_panics() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![1.0, 2.0]));
        let w = t.constant(Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap());
        t.matmul(x, w);
    }

    #[test]
    fn re_registered_param_shares_one_leaf_and_sums_gradients() {
        // f = mean(x1 w) + mean(x2 w); dw must be the sum of both branch
        // gradients: outer(x1, 1/m)/1 + outer(x2, 1/m)
        let w0 = Tensor::new(vec![2, 2], vec![0.4, -0.2, 1.1, 0.7]).unwrap();
        let mut t = Tape::new();
        let x1 = t.constant(Tensor::row(vec![1.0, 2.0]));
        let x2 = t.constant(Tensor::row(vec![-3.0, 0.5]));
        let wa = t.param("w", w0.clone());
        let wb = t.param("w", w0.clone());
        assert_eq!(wa, wb);
        let h1 = t.matmul(x1, wa);
        let h2 = t.matmul(x2, wb);
        let m1 = t.mean_all(h1);
        let m2 = t.mean_all(h2);
        let f = t.weighted_sum(&[(m1, 1.0), (m2, 1.0)]);
        let g = t.backward(f);
        // d mean(x w) / dw[i][j] = x[i] / cols
        let want = [
            (1.0 - 3.0) / 2.0,
            (1.0 - 3.0) / 2.0,
            (2.0 + 0.5) / 2.0,
            (2.0 + 0.5) / 2.0,
        ];
        for (a, b) in g["w"].data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
