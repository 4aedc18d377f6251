//! The five architectures: NHGCN, NHGCN-SS, GCN, MLP and the GCN+X
//! ablation, plus the training loss and checkpoint serialization.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::graph::{apply_mask, masked_renormalize, Graph, MaskSide, NormAdj, SparseOp};
use crate::metrics::MaskPair;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Nhgcn,
    NhgcnSs,
    Gcn,
    Mlp,
    GcnPlusX,
}

impl Arch {
    pub fn parse(s: &str) -> Result<Arch> {
        match s {
            "nhgcn" => Ok(Arch::Nhgcn),
            "nhgcn_ss" => Ok(Arch::NhgcnSs),
            "gcn" => Ok(Arch::Gcn),
            "mlp" => Ok(Arch::Mlp),
            "gcn_plus_x" => Ok(Arch::GcnPlusX),
            other => Err(Error::Config(format!("unknown arch '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Nhgcn => "nhgcn",
            Arch::NhgcnSs => "nhgcn_ss",
            Arch::Gcn => "gcn",
            Arch::Mlp => "mlp",
            Arch::GcnPlusX => "gcn_plus_x",
        }
    }

    pub fn uses_masks(&self) -> bool {
        matches!(self, Arch::Nhgcn | Arch::NhgcnSs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Activation> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Add,
    Concatenate,
    Maxpooling,
}

impl Combiner {
    pub fn parse(s: &str) -> Result<Combiner> {
        match s {
            "add" => Ok(Combiner::Add),
            "concatenate" => Ok(Combiner::Concatenate),
            "maxpooling" => Ok(Combiner::Maxpooling),
            other => Err(Error::Config(format!("unknown combiner '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Combiner::Add => "add",
            Combiner::Concatenate => "concatenate",
            Combiner::Maxpooling => "maxpooling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Input feature dimension f.
    pub in_dim: usize,
    /// Hidden dimension f'.
    pub hidden: usize,
    /// Class count C.
    pub num_classes: usize,
    pub activation: Activation,
    pub combiner: Combiner,
    pub self_loop: bool,
    pub dropout_agg: f64,
    pub dropout_comb: f64,
    pub hop: usize,
    /// Threshold stored in the inverted 1/T convention.
    pub inv_threshold: f64,
    pub share_weights: bool,
    pub renormalize_after_mask: bool,
}

impl ModelConfig {
    /// The raw-scale threshold T = 1 / inv_threshold.
    pub fn threshold(&self) -> f64 {
        1.0 / self.inv_threshold
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.in_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("zero feature or hidden dimension".into()));
        }
        if self.hop < 1 {
            return Err(Error::Config("hop must be >= 1".into()));
        }
        if self.inv_threshold < 1.0 {
            return Err(Error::Config(format!(
                "inv_threshold {} implies T > 1",
                self.inv_threshold
            )));
        }
        for (name, p) in [
            ("dropout_agg", self.dropout_agg),
            ("dropout_comb", self.dropout_comb),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0,1)")));
            }
        }
        Ok(())
    }
}

/// Soft assignment rows plus their argmax labels.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub soft: Tensor,
    pub labels: Vec<usize>,
}

/// A recorded forward pass: the tape, the output node and the
/// parameter-name -> leaf bindings used for gradient collection.
pub struct Forward {
    pub tape: Tape,
    pub output: NodeId,
    pub bindings: Vec<(String, NodeId)>,
}

impl Forward {
    pub fn prediction(&self) -> Prediction {
        let soft = self.tape.value(self.output).clone();
        let labels = soft.argmax_rows();
        Prediction { soft, labels }
    }
}

/// Initialize a parameter set for the configured architecture with
/// uniform Glorot weights; combiner logits start at zero (uniform 1/3).
pub fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamSet {
    let (f, h, c) = (cfg.in_dim, cfg.hidden, cfg.num_classes);
    let mut p = ParamSet::new();
    match cfg.arch {
        Arch::Gcn | Arch::Mlp => {
            p.push("w0", Tensor::glorot(f, h, rng));
            p.push("w1", Tensor::glorot(h, c, rng));
        }
        Arch::GcnPlusX => {
            p.push("w1", Tensor::glorot(f, h, rng));
            p.push("w2", Tensor::glorot(h, h, rng));
            p.push("w_x", Tensor::glorot(f, h, rng));
            p.push("w_o", Tensor::glorot(h, c, rng));
            p.push("alpha", Tensor::zeros(1, 2));
        }
        Arch::Nhgcn | Arch::NhgcnSs => {
            if cfg.share_weights {
                p.push("w1", Tensor::glorot(f, h, rng));
                p.push("w2", Tensor::glorot(h, h, rng));
            } else {
                p.push("w1_low", Tensor::glorot(f, h, rng));
                p.push("w1_high", Tensor::glorot(f, h, rng));
                p.push("w2_low", Tensor::glorot(h, h, rng));
                p.push("w2_high", Tensor::glorot(h, h, rng));
            }
            p.push("w_x", Tensor::glorot(f, h, rng));
            let o_rows = if cfg.combiner == Combiner::Concatenate {
                3 * h
            } else {
                h
            };
            p.push("w_o", Tensor::glorot(o_rows, c, rng));
            if cfg.combiner != Combiner::Maxpooling {
                p.push("alpha", Tensor::zeros(1, 3));
            }
        }
    }
    p
}

/// Masked propagation operators for the two graph channels plus the
/// unmasked normalized adjacency.
pub struct ChannelOps {
    pub l1_low: Arc<SparseOp>,
    pub l1_high: Arc<SparseOp>,
    pub l2_low: Arc<SparseOp>,
    pub l2_high: Arc<SparseOp>,
    pub full: Arc<SparseOp>,
}

/// Layer-1 masking is target-side for NHGCN and source-side for the SS
/// variant; layer 2 is source-side for both.
pub fn build_operators(
    g: &Graph,
    na: &NormAdj,
    masks: &MaskPair,
    cfg: &ModelConfig,
) -> Result<ChannelOps> {
    let l1_side = match cfg.arch {
        Arch::NhgcnSs => MaskSide::Source,
        _ => MaskSide::Target,
    };
    let build = |m, side| -> Result<Arc<SparseOp>> {
        let op = if cfg.renormalize_after_mask {
            masked_renormalize(g, m, side, cfg.self_loop)?
        } else {
            apply_mask(na, m, side)?
        };
        Ok(Arc::new(op))
    };
    Ok(ChannelOps {
        l1_low: build(&masks.low, l1_side)?,
        l1_high: build(&masks.high, l1_side)?,
        l2_low: build(&masks.low, MaskSide::Source)?,
        l2_high: build(&masks.high, MaskSide::Source)?,
        full: Arc::new(na.op().clone()),
    })
}

fn activate(tape: &mut Tape, x: NodeId, act: Activation) -> NodeId {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
    }
}

/// Run one forward pass. `ops` may be None only for the MLP.
pub fn forward(
    cfg: &ModelConfig,
    params: &ParamSet,
    x: &Tensor,
    ops: Option<&ChannelOps>,
    training: bool,
    seed: u64,
) -> Result<Forward> {
    if x.cols() != cfg.in_dim {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, config expects {}",
            x.cols(),
            cfg.in_dim
        )));
    }
    let mut tape = Tape::new(training, seed);
    let mut bindings: Vec<(String, NodeId)> = Vec::new();
    let mut bind = |tape: &mut Tape, name: &str| -> NodeId {
        let id = tape.leaf(params.get(name).clone());
        bindings.push((name.to_string(), id));
        id
    };

    let xn = tape.leaf(x.clone());
    let output = match cfg.arch {
        Arch::Mlp => {
            let w0 = bind(&mut tape, "w0");
            let w1 = bind(&mut tape, "w1");
            let xd = tape.dropout(xn, cfg.dropout_agg)?;
            let h = tape.matmul(xd, w0)?;
            let h = activate(&mut tape, h, cfg.activation);
            let hd = tape.dropout(h, cfg.dropout_agg)?;
            let z = tape.matmul(hd, w1)?;
            tape.row_softmax(z)
        }
        Arch::Gcn => {
            let ops = ops.ok_or_else(|| Error::InvalidInput("gcn needs operators".into()))?;
            let w0 = bind(&mut tape, "w0");
            let w1 = bind(&mut tape, "w1");
            let xd = tape.dropout(xn, cfg.dropout_agg)?;
            let xw = tape.matmul(xd, w0)?;
            let h = tape.spmm(ops.full.clone(), xw)?;
            let h = activate(&mut tape, h, cfg.activation);
            let hd = tape.dropout(h, cfg.dropout_agg)?;
            let hw = tape.matmul(hd, w1)?;
            let z = tape.spmm(ops.full.clone(), hw)?;
            tape.row_softmax(z)
        }
        Arch::GcnPlusX => {
            let ops = ops.ok_or_else(|| Error::InvalidInput("gcn_plus_x needs operators".into()))?;
            let w1 = bind(&mut tape, "w1");
            let w2 = bind(&mut tape, "w2");
            let w_x = bind(&mut tape, "w_x");
            let w_o = bind(&mut tape, "w_o");
            let alpha = bind(&mut tape, "alpha");
            let xd = tape.dropout(xn, cfg.dropout_agg)?;
            let xw = tape.matmul(xd, w1)?;
            let h1 = tape.spmm(ops.full.clone(), xw)?;
            let h1 = activate(&mut tape, h1, cfg.activation);
            let h1d = tape.dropout(h1, cfg.dropout_agg)?;
            let hw = tape.matmul(h1d, w2)?;
            let h2 = tape.spmm(ops.full.clone(), hw)?;
            let h2 = activate(&mut tape, h2, cfg.activation);
            let hx = tape.matmul(xn, w_x)?;
            let a = tape.scalar_softmax(alpha);
            let g0 = tape.scale_by_entry(h2, a, 0);
            let g1 = tape.scale_by_entry(hx, a, 1);
            let ho = tape.add(g0, g1)?;
            let hod = tape.dropout(ho, cfg.dropout_comb)?;
            let z = tape.matmul(hod, w_o)?;
            tape.row_softmax(z)
        }
        Arch::Nhgcn | Arch::NhgcnSs => {
            let ops = ops.ok_or_else(|| Error::InvalidInput("nhgcn needs operators".into()))?;
            let (w1l, w1h, w2l, w2h) = if cfg.share_weights {
                let w1 = bind(&mut tape, "w1");
                let w2 = bind(&mut tape, "w2");
                (w1, w1, w2, w2)
            } else {
                (
                    bind(&mut tape, "w1_low"),
                    bind(&mut tape, "w1_high"),
                    bind(&mut tape, "w2_low"),
                    bind(&mut tape, "w2_high"),
                )
            };
            let w_x = bind(&mut tape, "w_x");
            let w_o = bind(&mut tape, "w_o");

            let xd = tape.dropout(xn, cfg.dropout_agg)?;
            let channel = |tape: &mut Tape,
                               l1: &Arc<SparseOp>,
                               l2: &Arc<SparseOp>,
                               w1: NodeId,
                               w2: NodeId|
             -> Result<NodeId> {
                let xw = tape.matmul(xd, w1)?;
                let h1 = tape.spmm(l1.clone(), xw)?;
                let h1 = activate(tape, h1, cfg.activation);
                let h1d = tape.dropout(h1, cfg.dropout_agg)?;
                let hw = tape.matmul(h1d, w2)?;
                let h2 = tape.spmm(l2.clone(), hw)?;
                Ok(activate(tape, h2, cfg.activation))
            };
            let h_low = channel(&mut tape, &ops.l1_low, &ops.l2_low, w1l, w2l)?;
            let h_high = channel(&mut tape, &ops.l1_high, &ops.l2_high, w1h, w2h)?;
            let hx = tape.matmul(xn, w_x)?;

            let ho = match cfg.combiner {
                Combiner::Maxpooling => tape.elementwise_max(&[h_low, h_high, hx])?,
                Combiner::Add | Combiner::Concatenate => {
                    let alpha = bind(&mut tape, "alpha");
                    let a = tape.scalar_softmax(alpha);
                    let s_low = tape.scale_by_entry(h_low, a, 0);
                    let s_high = tape.scale_by_entry(h_high, a, 1);
                    let s_x = tape.scale_by_entry(hx, a, 2);
                    if cfg.combiner == Combiner::Add {
                        let t = tape.add(s_low, s_high)?;
                        tape.add(t, s_x)?
                    } else {
                        tape.concat_cols(&[s_low, s_high, s_x])?
                    }
                }
            };
            let hod = tape.dropout(ho, cfg.dropout_comb)?;
            let z = tape.matmul(hod, w_o)?;
            tape.row_softmax(z)
        }
    };
    Ok(Forward {
        tape,
        output,
        bindings,
    })
}

/// The softmax-constrained combiner weights of a trained parameter set,
/// or None for architectures/combiners without them.
pub fn combiner_weights(params: &ParamSet) -> Option<Vec<f64>> {
    params.index_of("alpha").map(|i| {
        let logits = params.tensor(i);
        let m = logits
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.data().iter().map(|&v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|e| e / sum).collect()
    })
}

/// Training loss as the per-node cross-entropy sum over train nodes.
pub fn cross_entropy_sum(b: &Tensor, targets: &[(usize, usize)]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InvalidInput("empty training set in loss".into()));
    }
    Ok(targets
        .iter()
        .map(|&(r, c)| -b.get(r, c).max(LOG_FLOOR).ln())
        .sum())
}

/// The same loss in trace form: -trace(Y_train^T log B), with Y_train
/// holding one-hot rows for training nodes and zero rows elsewhere.
pub fn cross_entropy_trace(b: &Tensor, y_train: &Tensor) -> Result<f64> {
    if !b.same_shape(y_train) {
        return Err(Error::ShapeMismatch(format!(
            "loss shapes {}x{} vs {}x{}",
            b.rows(),
            b.cols(),
            y_train.rows(),
            y_train.cols()
        )));
    }
    // trace(Y^T log B) = sum_ij Y[i,j] * log B[i,j]
    let mut acc = 0.0;
    for i in 0..b.len() {
        let y = y_train.data()[i];
        if y != 0.0 {
            acc += y * b.data()[i].max(LOG_FLOOR).ln();
        }
    }
    Ok(-acc)
}

const CHECKPOINT_MAGIC: &str = "nhgcn-checkpoint v1";

/// Write config and parameters as flat text; floats use shortest
/// round-trip formatting, so reload is bit-exact.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ParamSet) -> Result<()> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    out.push_str(&serde_json::to_string(cfg).expect("config serializes"));
    out.push('\n');
    for (name, t) in params.iter() {
        out.push_str(&format!("param\t{name}\t{}\t{}\n", t.rows(), t.cols()));
        let mut first = true;
        for v in t.data() {
            if !first {
                out.push(' ');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamSet)> {
    let pstr = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&pstr, e))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.first() != Some(&CHECKPOINT_MAGIC) {
        return Err(Error::parse(&pstr, 1, "not a checkpoint file"));
    }
    let cfg_line = lines
        .get(1)
        .ok_or_else(|| Error::parse(&pstr, 2, "missing config line"))?;
    let cfg: ModelConfig = serde_json::from_str(cfg_line)
        .map_err(|e| Error::parse(&pstr, 2, format!("bad config: {e}")))?;
    let mut params = ParamSet::new();
    let mut i = 2;
    while i < lines.len() {
        let hln = i + 1;
        let parts: Vec<&str> = lines[i].split('\t').collect();
        if parts.len() != 4 || parts[0] != "param" {
            return Err(Error::parse(&pstr, hln, "expected param header"));
        }
        let name = parts[1].to_string();
        let rows: usize = parts[2]
            .parse()
            .map_err(|_| Error::parse(&pstr, hln, "bad row count"))?;
        let cols: usize = parts[3]
            .parse()
            .map_err(|_| Error::parse(&pstr, hln, "bad col count"))?;
        let vln = i + 2;
        let values = *lines
            .get(i + 1)
            .ok_or_else(|| Error::parse(&pstr, vln, "missing parameter values"))?;
        i += 2;
        let data: Vec<f64> = if values.is_empty() {
            Vec::new()
        } else {
            values
                .split(' ')
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::parse(&pstr, vln, format!("bad float '{s}'")))
                })
                .collect::<Result<_>>()?
        };
        let t = Tensor::from_vec(rows, cols, data)
            .map_err(|e| Error::parse(&pstr, vln, e.to_string()))?;
        params.push(name, t);
    }
    Ok((cfg, params))
}

/// Append a cross-entropy loss node over the train targets.
pub fn attach_loss(fwd: &mut Forward, targets: &[(usize, usize)]) -> Result<NodeId> {
    fwd.tape.nll_loss(fwd.output, targets)
}

/// Run the finite-difference gradient checker on a full model instance
/// built from `cfg` over a small fixed graph (one isolated node
/// included). Dropout is disabled; returns the max relative error.
pub fn model_grad_check(cfg: &ModelConfig, seed: u64, probes: usize) -> Result<f64> {
    use crate::graph::{build_graph, khop_index, normalize_adjacency};
    use crate::metrics::{make_masks, nh_values, LabelVec};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut cfg = cfg.clone();
    cfg.dropout_agg = 0.0;
    cfg.dropout_comb = 0.0;
    let g = build_graph(
        &[
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 4),
            (4, 0),
            (1, 5),
            (5, 6),
            (6, 7),
            (7, 8),
            (8, 9),
            (9, 10),
        ],
        12,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::glorot(g.n(), cfg.in_dim, &mut rng);
    let labels: Vec<usize> = (0..g.n()).map(|i| (i * 7 + 3) % cfg.num_classes).collect();
    let lv = LabelVec::new(labels, cfg.num_classes)?;
    let idx = khop_index(&g, cfg.hop)?;
    let nh = nh_values(&idx, &lv)?;
    let masks = make_masks(&nh, cfg.threshold());
    let na = normalize_adjacency(&g, cfg.self_loop);
    let ops = if cfg.arch == Arch::Mlp {
        None
    } else {
        Some(build_operators(&g, &na, &masks, &cfg)?)
    };
    let params = init_params(&cfg, &mut rng);
    let targets: Vec<(usize, usize)> = (0..g.n()).map(|i| (i, lv.get(i))).collect();

    crate::autodiff::grad_check(
        |p| {
            let mut fwd = forward(&cfg, p, &x, ops.as_ref(), false, 0)?;
            let loss_id = attach_loss(&mut fwd, &targets)?;
            let loss = fwd.tape.value(loss_id).get(0, 0);
            let node_grads = fwd.tape.backward(loss_id)?;
            let grads = fwd.tape.collect_gradients(&node_grads, p, &fwd.bindings);
            Ok((loss, grads))
        },
        &params,
        probes,
        seed ^ 0xA5A5,
    )
}

impl ModelConfig {
    /// A small fully specified config for tests and gradcheck.
    pub fn tiny(arch: Arch) -> ModelConfig {
        ModelConfig {
            arch,
            in_dim: 5,
            hidden: 4,
            num_classes: 3,
            activation: Activation::Relu,
            combiner: Combiner::Add,
            self_loop: true,
            dropout_agg: 0.0,
            dropout_comb: 0.0,
            hop: 1,
            inv_threshold: 2.0,
            share_weights: matches!(arch, Arch::NhgcnSs),
            renormalize_after_mask: false,
        }
    }
}
