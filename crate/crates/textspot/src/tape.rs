//! A minimal reverse-mode differentiation tape over rank-2 tensors.
//!
//! Nodes are appended in topological order by construction and values are
//! computed eagerly in 64-bit arithmetic. [`Tape::backward`] seeds a
//! scalar loss with 1 and accumulates cotangents by a single reverse
//! traversal; [`Tape::backward_seeded`] accepts explicit cotangents at
//! arbitrary nodes, which is how externally computed loss gradients are
//! injected. A tape is single-threaded; distinct tapes are independent.

use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    ConcatCols(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: usize,
        softmax: Vec<f64>,
    },
    GatherRow {
        input: NodeId,
        row: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// Gradients per node after a backward pass. Leaves that do not reach the
/// seeded nodes hold zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }
}

/// The tape itself: an append-only DAG of rank-2 values.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn shape_str(&self, id: NodeId) -> String {
        let (r, c) = self.shape(id);
        format!("{r}x{c}")
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Result<NodeId> {
        debug_assert_eq!(value.len(), rows * cols);
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Insert an input node. Parameters and features are leaves.
    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<NodeId> {
        if values.len() != rows * cols {
            return Err(Error::Argument(format!(
                "leaf of shape {rows}x{cols} expects {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        self.push(rows, cols, values, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape_str(a),
                right: self.shape_str(b),
            });
        }
        let value = mat_mul(self.value(a), ar, ac, self.value(b), bc);
        self.push(ar, bc, value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: self.shape_str(a),
                right: self.shape_str(b),
            });
        }
        let (r, c) = self.shape(a);
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(r, c, value, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|x| x * factor).collect();
        self.push(r, c, value, Op::Scale(a, factor))
    }

    /// Concatenate along columns; both inputs must share the row count.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: self.shape_str(a),
                right: self.shape_str(b),
            });
        }
        let mut value = Vec::with_capacity(ar * (ac + bc));
        for r in 0..ar {
            value.extend_from_slice(&self.value(a)[r * ac..(r + 1) * ac]);
            value.extend_from_slice(&self.value(b)[r * bc..(r + 1) * bc]);
        }
        self.push(ar, ac + bc, value, Op::ConcatCols(a, b))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(r, c, value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|x| sigmoid(*x)).collect();
        self.push(r, c, value, Op::Sigmoid(a))
    }

    /// `-log softmax(logits)[target]` of a row-vector of logits, computed
    /// in log-sum-exp stable form; yields a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let (r, c) = self.shape(logits);
        if r != 1 {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: self.shape_str(logits),
                right: "1xN".into(),
            });
        }
        if target >= c {
            return Err(Error::Argument(format!(
                "softmax_cross_entropy target {target} out of range for {c} logits"
            )));
        }
        let row = self.value(logits);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() - (row[target] - m);
        let softmax = exps.iter().map(|e| e / z).collect();
        self.push(
            1,
            1,
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                softmax,
            },
        )
    }

    /// Select one row of a matrix as a `1 x cols` vector.
    pub fn gather_row(&mut self, input: NodeId, row: usize) -> Result<NodeId> {
        let (r, c) = self.shape(input);
        if row >= r {
            return Err(Error::Argument(format!(
                "gather_row index {row} out of range for {r} rows"
            )));
        }
        let value = self.value(input)[row * c..(row + 1) * c].to_vec();
        self.push(1, c, value, Op::GatherRow { input, row })
    }

    /// Backward pass from a scalar loss node, seeding it with 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Argument(format!(
                "backward expects a scalar loss node, got shape {}",
                self.shape_str(loss)
            )));
        }
        self.backward_seeded(&[(loss, vec![1.0])])
    }

    /// Backward pass with explicit cotangents at the given nodes.
    pub fn backward_seeded(&self, seeds: &[(NodeId, Vec<f64>)]) -> Result<Gradients> {
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.rows * n.cols])
            .collect();
        for (id, seed) in seeds {
            let n = &self.nodes[id.0];
            if seed.len() != n.rows * n.cols {
                return Err(Error::Argument(format!(
                    "seed for node {} has {} values, expected {}",
                    id.0,
                    seed.len(),
                    n.rows * n.cols
                )));
            }
            for (g, s) in grads[id.0].iter_mut().zip(seed) {
                *g += s;
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            if grads[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ar, ac) = self.shape(*a);
                    let (_, bc) = self.shape(*b);
                    let up = grads[idx].clone();
                    // dA = dC . B^T
                    let da = mat_mul_nt(&up, ar, bc, self.value(*b), ac);
                    accumulate(&mut grads[a.0], &da);
                    // dB = A^T . dC
                    let db = mat_mul_tn(self.value(*a), ar, ac, &up, bc);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Add(a, b) => {
                    let up = grads[idx].clone();
                    accumulate(&mut grads[a.0], &up);
                    accumulate(&mut grads[b.0], &up);
                }
                Op::Scale(a, factor) => {
                    let factor = *factor;
                    let up = grads[idx].clone();
                    for (g, u) in grads[a.0].iter_mut().zip(&up) {
                        *g += factor * u;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (ar, ac) = self.shape(*a);
                    let (_, bc) = self.shape(*b);
                    let up = grads[idx].clone();
                    for r in 0..ar {
                        let src = &up[r * (ac + bc)..(r + 1) * (ac + bc)];
                        for c in 0..ac {
                            grads[a.0][r * ac + c] += src[c];
                        }
                        for c in 0..bc {
                            grads[b.0][r * bc + c] += src[ac + c];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let up = grads[idx].clone();
                    let y = &node.value;
                    for ((g, u), v) in grads[a.0].iter_mut().zip(&up).zip(y) {
                        *g += u * (1.0 - v * v);
                    }
                }
                Op::Sigmoid(a) => {
                    let up = grads[idx].clone();
                    let y = &node.value;
                    for ((g, u), v) in grads[a.0].iter_mut().zip(&up).zip(y) {
                        *g += u * v * (1.0 - v);
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    target,
                    softmax,
                } => {
                    let up = grads[idx][0];
                    for (k, (g, &p)) in grads[logits.0].iter_mut().zip(softmax).enumerate() {
                        *g += up * (p - if k == *target { 1.0 } else { 0.0 });
                    }
                }
                Op::GatherRow { input, row } => {
                    let (_, c) = self.shape(*input);
                    let up = grads[idx].clone();
                    for k in 0..c {
                        grads[input.0][row * c + k] += up[k];
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Scale(..) => "scale",
        Op::ConcatCols(..) => "concat_cols",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        Op::GatherRow { .. } => "gather_row",
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `C = A (m x k) . B (k x n)`, row-major.
fn mat_mul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `C = A (m x k) . B^T` where `B` is `n x k`, row-major.
fn mat_mul_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `C = A^T . B` where `A` is `m x k` and `B` is `m x n`, row-major.
fn mat_mul_tn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Central-difference gradient of a scalar function, one coordinate at a
/// time.
pub fn central_differences<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    point: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut grads = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for k in 0..point.len() {
        x[k] = point[k] + step;
        let plus = f(&x);
        x[k] = point[k] - step;
        let minus = f(&x);
        x[k] = point[k];
        grads.push((plus - minus) / (2.0 * step));
    }
    grads
}

/// Result of comparing an analytic gradient against central differences.
/// Entries whose magnitudes both fall below `1e-8` are compared
/// absolutely; the rest contribute a relative error.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

pub const GRAD_ABS_FLOOR: f64 = 1e-8;

impl GradCheckReport {
    pub fn within(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel_error <= rel_tol && self.max_abs_error <= abs_tol
    }
}

/// Compare `analytic` against central differences of `f` at `point`.
pub fn check_gradient<F: FnMut(&[f64]) -> f64>(
    f: F,
    point: &[f64],
    step: f64,
    analytic: &[f64],
) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len());
    let numeric = central_differences(f, point, step);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: point.len(),
    };
    for (k, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let diff = (a - n).abs();
        let denom = a.abs().max(n.abs());
        if denom < GRAD_ABS_FLOOR {
            if diff > report.max_abs_error {
                report.max_abs_error = diff;
            }
        } else {
            let rel = diff / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = n;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity_is_identity() {
        let mut t = Tape::new();
        let eye = t
            .leaf(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let v = t.leaf(3, 1, vec![2.0, -3.0, 5.0]).unwrap();
        let out = t.matmul(eye, v).unwrap();
        assert_eq!(t.value(out), &[2.0, -3.0, 5.0]);
    }

    #[test]
    fn pointwise_ops_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(1, 1, vec![0.0]).unwrap();
        let th = t.tanh(x).unwrap();
        let sg = t.sigmoid(x).unwrap();
        assert_eq!(t.value(th), &[0.0]);
        assert_eq!(t.value(sg), &[0.5]);
    }

    #[test]
    fn uniform_cross_entropy_is_log_count() {
        let mut t = Tape::new();
        let logits = t.leaf(1, 4, vec![0.0; 4]).unwrap();
        let loss = t.softmax_cross_entropy(logits, 0).unwrap();
        assert!((t.value(loss)[0] - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(2, 3, vec![0.0; 6]).unwrap();
        let b = t.leaf(2, 3, vec![0.0; 6]).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut t = Tape::new();
        let v = t.leaf(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = t.leaf(4, 1, vec![1.0; 4]).unwrap();
        let s = t.matmul(v, ones).unwrap();
        let grads = t.backward(s).unwrap();
        assert_eq!(grads.get(v), &[1.0; 4]);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut t = Tape::new();
        let x = t.leaf(1, 1, vec![0.0]).unwrap();
        let y = t.sigmoid(x).unwrap();
        let grads = t.backward(y).unwrap();
        assert_eq!(grads.get(x), &[0.25]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let v = t.leaf(1, 3, vec![0.0; 3]).unwrap();
        assert!(t.backward(v).is_err());
    }

    #[test]
    fn unreachable_leaves_get_zero_gradient() {
        let mut t = Tape::new();
        let used = t.leaf(1, 1, vec![2.0]).unwrap();
        let unused = t.leaf(1, 1, vec![5.0]).unwrap();
        let y = t.sigmoid(used).unwrap();
        let grads = t.backward(y).unwrap();
        assert_eq!(grads.get(unused), &[0.0]);
    }

    #[test]
    fn gradients_are_deterministic_bitwise() {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(1, 3, vec![0.3, -0.2, 0.9]).unwrap();
            let w = t.leaf(3, 3, vec![0.1, 0.5, -0.4, 0.7, 0.2, 0.3, -0.6, 0.8, 0.05]).unwrap();
            let h = t.matmul(x, w).unwrap();
            let h = t.tanh(h).unwrap();
            let loss = t.softmax_cross_entropy(h, 1).unwrap();
            let grads = t.backward(loss).unwrap();
            (grads.get(x).to_vec(), grads.get(w).to_vec())
        };
        let (gx1, gw1) = run();
        let (gx2, gw2) = run();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&gx1), bits(&gx2));
        assert_eq!(bits(&gw1), bits(&gw2));
    }

    // Builds a small random three-layer composition touching every op and
    // checks the backward pass coordinate by coordinate.
    #[test]
    fn random_dag_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let params: Vec<f64> = (0..31).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = |p: &[f64]| -> f64 {
                let mut t = Tape::new();
                let x = t.leaf(1, 3, p[0..3].to_vec()).unwrap();
                let w1 = t.leaf(3, 4, p[3..15].to_vec()).unwrap();
                let w2 = t.leaf(7, 2, p[15..29].to_vec()).unwrap();
                let b = t.leaf(1, 2, p[29..31].to_vec()).unwrap();
                let h = t.matmul(x, w1).unwrap();
                let h = t.tanh(h).unwrap();
                let hx = t.concat_cols(h, x).unwrap();
                let o = t.matmul(hx, w2).unwrap();
                let o = t.add(o, b).unwrap();
                let o = t.sigmoid(o).unwrap();
                let o = t.scale(o, 3.0).unwrap();
                let loss = t.softmax_cross_entropy(o, 1).unwrap();
                t.value(loss)[0]
            };
            // analytic gradients via one taped run
            let mut t = Tape::new();
            let x = t.leaf(1, 3, params[0..3].to_vec()).unwrap();
            let w1 = t.leaf(3, 4, params[3..15].to_vec()).unwrap();
            let w2 = t.leaf(7, 2, params[15..29].to_vec()).unwrap();
            let b = t.leaf(1, 2, params[29..31].to_vec()).unwrap();
            let h = t.matmul(x, w1).unwrap();
            let h = t.tanh(h).unwrap();
            let hx = t.concat_cols(h, x).unwrap();
            let o = t.matmul(hx, w2).unwrap();
            let o = t.add(o, b).unwrap();
            let o = t.sigmoid(o).unwrap();
            let o = t.scale(o, 3.0).unwrap();
            let loss = t.softmax_cross_entropy(o, 1).unwrap();
            let grads = t.backward(loss).unwrap();
            let mut analytic = Vec::new();
            analytic.extend_from_slice(grads.get(x));
            analytic.extend_from_slice(grads.get(w1));
            analytic.extend_from_slice(grads.get(w2));
            analytic.extend_from_slice(grads.get(b));

            let report = check_gradient(f, &params, 1e-6, &analytic);
            assert!(
                report.within(1e-6, 1e-8),
                "rel {} abs {} at {}",
                report.max_rel_error,
                report.max_abs_error,
                report.worst_index
            );
        }
    }

    #[test]
    fn central_differences_on_a_quadratic() {
        let g = central_differences(|x| x[0] * x[0], &[3.0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-8 * 6.0);
        let g = central_differences(|_| 42.0, &[1.0, 2.0], 1e-6);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn gather_row_selects_and_routes_gradient() {
        let mut t = Tape::new();
        let m = t.leaf(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.gather_row(m, 1).unwrap();
        assert_eq!(t.value(r), &[4.0, 5.0, 6.0]);
        let loss = t.softmax_cross_entropy(r, 0).unwrap();
        let grads = t.backward(loss).unwrap();
        assert!(grads.get(m)[0..3].iter().all(|&g| g == 0.0));
        assert!(grads.get(m)[3..6].iter().any(|&g| g != 0.0));
    }
}
