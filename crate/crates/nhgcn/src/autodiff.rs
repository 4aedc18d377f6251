//! Tape-based reverse-mode differentiation for the fixed set of ops the
//! models need: matmul, sparse-dense products, activations, dropout,
//! channel combination, softmax and the cross-entropy loss.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::SparseOp;
use crate::params::{Gradients, ParamSet};
use crate::tensor::Tensor;

pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Spmm(Arc<SparseOp>, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    /// mask entries are 0 or 1/(1-p); None means evaluation-mode identity
    Dropout(NodeId, Option<Vec<f64>>),
    ConcatCols(Vec<NodeId>),
    /// elementwise max; argmax[i] is the winning input (first on ties)
    MaxPool(Vec<NodeId>, Vec<u8>),
    RowSoftmax(NodeId),
    ScalarSoftmax(NodeId),
    /// out = t * s[0][idx]
    Scale {
        t: NodeId,
        s: NodeId,
        idx: usize,
    },
    /// -sum over (row, class) targets of log(clamp(b))
    NllLoss(NodeId, Vec<(usize, usize)>),
    SumAll(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records a forward pass and replays it in reverse for gradients.
pub struct Tape {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Tape {
    pub fn new(training: bool, seed: u64) -> Tape {
        Tape {
            nodes: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), v))
    }

    pub fn spmm(&mut self, op: Arc<SparseOp>, x: NodeId) -> Result<NodeId> {
        let v = op.spmm(self.value(x))?;
        Ok(self.push(Op::Spmm(op, x), v))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let out = Tensor::from_vec(v.rows(), v.cols(), data).expect("relu preserves finiteness");
        self.push(Op::Relu(x), out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.tanh()).collect();
        let out = Tensor::from_vec(v.rows(), v.cols(), data).expect("tanh preserves finiteness");
        self.push(Op::Tanh(x), out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(Error::ShapeMismatch(format!(
                "add {}x{} + {}x{}",
                va.rows(),
                va.cols(),
                vb.rows(),
                vb.cols()
            )));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Inverted dropout: training mode scales survivors by 1/(1-p);
    /// evaluation mode is the exact identity.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "dropout rate {p} outside [0,1)"
            )));
        }
        let v = self.value(x).clone();
        if !self.training || p == 0.0 {
            return Ok(self.push(Op::Dropout(x, None), v));
        }
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..v.len())
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::from_vec(v.rows(), v.cols(), data)?;
        Ok(self.push(Op::Dropout(x, Some(mask)), out))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::ShapeMismatch("concat_cols row mismatch".into()));
            }
            cols += self.value(p).cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p).clone();
            for r in 0..rows {
                for c in 0..v.cols() {
                    out.set(r, off + c, v.get(r, c));
                }
            }
            off += v.cols();
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Elementwise maximum over same-shape inputs; ties go to the first.
    pub fn elementwise_max(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            if !self.value(p).same_shape(&first) {
                return Err(Error::ShapeMismatch("elementwise_max shape mismatch".into()));
            }
        }
        let mut out = first;
        let mut argmax = vec![0u8; out.len()];
        for (pi, &p) in parts.iter().enumerate().skip(1) {
            let v = self.value(p);
            for (i, (&a, o)) in v.data().iter().zip(out.data_mut()).enumerate() {
                if a > *o {
                    *o = a;
                    argmax[i] = pi as u8;
                }
            }
        }
        Ok(self.push(Op::MaxPool(parts.to_vec(), argmax), out))
    }

    pub fn row_softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let mut out = Tensor::zeros(v.rows(), v.cols());
        for r in 0..v.rows() {
            let row = v.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let orow = &mut out.data_mut()[r * v.cols()..(r + 1) * v.cols()];
            for (o, &a) in orow.iter_mut().zip(row) {
                *o = (a - m).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        self.push(Op::RowSoftmax(x), out)
    }

    /// Softmax over a 1xK logit row; realizes the convex-combination
    /// constraint on the combiner weights.
    pub fn scalar_softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        debug_assert_eq!(v.rows(), 1);
        let m = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.data().iter().map(|&a| (a - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out = Tensor::from_vec(1, v.cols(), exps.iter().map(|e| e / sum).collect())
            .expect("softmax is finite");
        self.push(Op::ScalarSoftmax(x), out)
    }

    /// out = t * s[0][idx], with s a simplex row from scalar_softmax.
    pub fn scale_by_entry(&mut self, t: NodeId, s: NodeId, idx: usize) -> NodeId {
        let sv = self.value(s).get(0, idx);
        let out = self.value(t).scale(sv);
        self.push(Op::Scale { t, s, idx }, out)
    }

    /// Cross-entropy over the given (row, class) targets:
    /// -sum log(max(B[row,class], floor)).
    pub fn nll_loss(&mut self, b: NodeId, targets: &[(usize, usize)]) -> Result<NodeId> {
        if targets.is_empty() {
            return Err(Error::InvalidInput("empty training set in loss".into()));
        }
        let v = self.value(b);
        let mut loss = 0.0;
        for &(r, c) in targets {
            loss -= v.get(r, c).max(LOG_FLOOR).ln();
        }
        let out = Tensor::from_vec(1, 1, vec![loss])?;
        Ok(self.push(Op::NllLoss(b, targets.to_vec()), out))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        let out = Tensor::from_vec(1, 1, vec![s]).expect("finite sum");
        self.push(Op::SumAll(x), out)
    }

    /// Reverse sweep from a scalar node; returns one gradient slot per
    /// tape node (None where no gradient flows).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::InvalidInput(
                "backward called without a recorded forward pass".into(),
            ));
        }
        let lv = self.value(loss);
        if lv.rows() != 1 || lv.cols() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Spmm(op, x) => {
                    let dx = op.spmm_t(&g)?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let v = self.value(*x);
                    let data = v
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&a, &gg)| if a > 0.0 { gg } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(v.rows(), v.cols(), data)?);
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&t, &gg)| gg * (1.0 - t * t))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(y.rows(), y.cols(), data)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Dropout(x, mask) => {
                    let dx = match mask {
                        None => g,
                        Some(m) => {
                            let data = g.data().iter().zip(m).map(|(&gg, &mm)| gg * mm).collect();
                            Tensor::from_vec(g.rows(), g.cols(), data)?
                        }
                    };
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let v = self.value(p);
                        let mut dp = Tensor::zeros(v.rows(), v.cols());
                        for r in 0..v.rows() {
                            for c in 0..v.cols() {
                                dp.set(r, c, g.get(r, off + c));
                            }
                        }
                        off += v.cols();
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::MaxPool(parts, argmax) => {
                    for (pi, &p) in parts.iter().enumerate() {
                        let v = self.value(p);
                        let data = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(j, &gg)| if argmax[j] as usize == pi { gg } else { 0.0 })
                            .collect();
                        accumulate(&mut grads, p, Tensor::from_vec(v.rows(), v.cols(), data)?);
                    }
                }
                Op::RowSoftmax(x) => {
                    let s = &node.value;
                    let mut dx = Tensor::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let srow = s.row(r);
                        let grow = g.row(r);
                        let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for c in 0..s.cols() {
                            dx.set(r, c, srow[c] * (grow[c] - dot));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ScalarSoftmax(x) => {
                    let s = &node.value;
                    let dot: f64 = s.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                    let data = s
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&sv, &gv)| sv * (gv - dot))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(1, s.cols(), data)?);
                }
                Op::Scale { t, s, idx } => {
                    let sval = self.value(*s).get(0, *idx);
                    accumulate(&mut grads, *t, g.scale(sval));
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*t).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    let mut ds = Tensor::zeros(1, self.value(*s).cols());
                    ds.set(0, *idx, dot);
                    accumulate(&mut grads, *s, ds);
                }
                Op::NllLoss(b, targets) => {
                    let v = self.value(*b);
                    let g0 = g.get(0, 0);
                    let mut db = Tensor::zeros(v.rows(), v.cols());
                    for &(r, c) in targets {
                        let p = v.get(r, c);
                        if p > LOG_FLOOR {
                            db.set(r, c, db.get(r, c) - g0 / p);
                        }
                    }
                    accumulate(&mut grads, *b, db);
                }
                Op::SumAll(x) => {
                    let v = self.value(*x);
                    let g0 = g.get(0, 0);
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(v.rows(), v.cols(), vec![g0; v.len()])?,
                    );
                }
            }
        }
        Ok(grads)
    }

    /// Collect leaf gradients into a [`Gradients`] matching `params`,
    /// given the name -> node binding recorded during the forward pass.
    pub fn collect_gradients(
        &self,
        grads: &[Option<Tensor>],
        params: &ParamSet,
        bindings: &[(String, NodeId)],
    ) -> Gradients {
        let mut out = Gradients::zeros_like(params);
        for (name, id) in bindings {
            if let Some(g) = &grads[id.0] {
                out.accumulate(name, g);
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Finite-difference gradient checker. The closure must be a
/// deterministic map from parameters to (loss, analytic gradients).
/// Returns the max relative error over the probed entries with
/// central differences at step 1e-5.
pub fn grad_check<F>(mut f: F, params: &ParamSet, probes: usize, seed: u64) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<(f64, Gradients)>,
{
    const STEP: f64 = 1e-5;
    let (_, analytic) = f(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    let slots: Vec<usize> = (0..params.len()).collect();
    for _ in 0..probes {
        let slot = slots[rng.gen_range(0..slots.len())];
        let entry_count = params.tensor(slot).len();
        if entry_count == 0 {
            continue;
        }
        let entry = rng.gen_range(0..entry_count);

        let mut plus = params.clone();
        plus.tensor_mut(slot).data_mut()[entry] += STEP;
        let (lp, _) = f(&plus)?;
        let mut minus = params.clone();
        minus.tensor_mut(slot).data_mut()[entry] -= STEP;
        let (lm, _) = f(&minus)?;

        let numeric = (lp - lm) / (2.0 * STEP);
        let exact = analytic.tensor(slot).data()[entry];
        let err = (exact - numeric).abs() / numeric.abs().max(1.0);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}
