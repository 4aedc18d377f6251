//! Neighborhood homophily, node homophily, masks and metric/accuracy
//! binning.

use crate::error::{Error, Result};
use crate::graph::{DiagMask, Graph, KHopIndex};

/// Per-node class indices with the class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVec {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVec {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<LabelVec> {
        if num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some((i, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {c} at node {i} out of range for C={num_classes}"
            )));
        }
        Ok(LabelVec {
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Per-node neighborhood homophily values.
#[derive(Debug, Clone, PartialEq)]
pub struct NhVector {
    values: Vec<f64>,
    k: usize,
    normalized: bool,
}

impl NhVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    /// Wrap values that are already normalized to [0, 1], e.g. a
    /// per-node subset extracted for binning.
    pub fn from_normalized(values: Vec<f64>, k: usize) -> NhVector {
        NhVector {
            values,
            k,
            normalized: true,
        }
    }

    /// The all-ones initial state used at the start of training.
    pub fn initial(n: usize, k: usize) -> NhVector {
        NhVector {
            values: vec![1.0; n],
            k,
            normalized: false,
        }
    }
}

/// NH_i^k: dominant-class fraction among the k-hop neighbors, the target
/// node's own label ignored. Isolated nodes get 1. Ties on the dominant
/// class break to the lowest class index (the ratio is unaffected).
pub fn nh_values(idx: &KHopIndex, labels: &LabelVec) -> Result<NhVector> {
    if labels.len() != idx.n() {
        return Err(Error::ShapeMismatch(format!(
            "labels cover {} nodes, graph has {}",
            labels.len(),
            idx.n()
        )));
    }
    let c = labels.num_classes();
    let mut counts = vec![0usize; c];
    let values = (0..idx.n())
        .map(|i| {
            let hood = idx.neighborhood(i);
            if hood.is_empty() {
                return 1.0;
            }
            counts.iter_mut().for_each(|x| *x = 0);
            for &j in hood {
                counts[labels.get(j as usize)] += 1;
            }
            let max = *counts.iter().max().unwrap();
            max as f64 / hood.len() as f64
        })
        .collect();
    Ok(NhVector {
        values,
        k: idx.k(),
        normalized: false,
    })
}

/// NH update over predicted labels; same arithmetic as [`nh_values`].
pub fn nh_update(idx: &KHopIndex, predicted: &LabelVec) -> Result<NhVector> {
    nh_values(idx, predicted)
}

/// Node homophily: fraction of direct neighbors sharing the target's
/// label. Isolated nodes get 0. Returns (per-node, graph-level mean).
pub fn node_homophily(g: &Graph, labels: &LabelVec) -> Result<(Vec<f64>, f64)> {
    if labels.len() != g.n() {
        return Err(Error::ShapeMismatch(format!(
            "labels cover {} nodes, graph has {}",
            labels.len(),
            g.n()
        )));
    }
    let per_node: Vec<f64> = (0..g.n())
        .map(|i| {
            let d = g.degree(i);
            if d == 0 {
                return 0.0;
            }
            let same = g
                .neighbors(i)
                .iter()
                .filter(|&&j| labels.get(j as usize) == labels.get(i))
                .count();
            same as f64 / d as f64
        })
        .collect();
    let graph_level = if per_node.is_empty() {
        0.0
    } else {
        per_node.iter().sum::<f64>() / per_node.len() as f64
    };
    Ok((per_node, graph_level))
}

/// Min-max normalization of raw NH over its theoretical range [1/C, 1].
pub fn normalize_metric(v: &NhVector, num_classes: usize) -> Result<NhVector> {
    if num_classes < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if v.normalized {
        return Ok(v.clone());
    }
    let lo = 1.0 / num_classes as f64;
    let values = v.values.iter().map(|x| (x - lo) / (1.0 - lo)).collect();
    Ok(NhVector {
        values,
        k: v.k,
        normalized: true,
    })
}

/// Complementary low/high NH masks at threshold T (raw scale).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub low: DiagMask,
    pub high: DiagMask,
    pub threshold: f64,
}

/// low[i] = 1 iff v[i] <= T (inclusive); high is the complement.
pub fn make_masks(v: &NhVector, threshold: f64) -> MaskPair {
    let low = DiagMask::new(v.values.iter().map(|&x| x <= threshold).collect());
    let high = low.complement();
    MaskPair {
        low,
        high,
        threshold,
    }
}

/// Fraction of nodes whose low-mask bit agrees between the two pairs.
pub fn masking_accuracy(predicted: &MaskPair, real: &MaskPair) -> Result<f64> {
    if predicted.low.len() != real.low.len() {
        return Err(Error::ShapeMismatch(format!(
            "mask sizes {} vs {}",
            predicted.low.len(),
            real.low.len()
        )));
    }
    let n = predicted.low.len();
    if n == 0 {
        return Ok(1.0);
    }
    let agree = (0..n)
        .filter(|&i| predicted.low.get(i) == real.low.get(i))
        .count();
    Ok(agree as f64 / n as f64)
}

pub const BIN_COUNT: usize = 10;

/// Per-bin node counts and accuracies over ten [0,1] bins of width 0.1,
/// last bin closed. Empty bins are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct BinTable {
    bins: [Option<(usize, f64)>; BIN_COUNT],
}

impl BinTable {
    pub fn bin(&self, i: usize) -> Option<(usize, f64)> {
        self.bins[i]
    }

    pub fn bins(&self) -> &[Option<(usize, f64)>; BIN_COUNT] {
        &self.bins
    }

    /// Count-weighted mean accuracy over nonempty bins.
    pub fn overall_accuracy(&self) -> Option<f64> {
        let mut total = 0usize;
        let mut acc = 0.0;
        for b in self.bins.iter().flatten() {
            total += b.0;
            acc += b.0 as f64 * b.1;
        }
        if total == 0 {
            None
        } else {
            Some(acc / total as f64)
        }
    }
}

pub fn bin_index(x: f64) -> usize {
    if x >= 1.0 {
        BIN_COUNT - 1
    } else if x <= 0.0 {
        0
    } else {
        (x * BIN_COUNT as f64).floor() as usize
    }
}

/// Group nodes by normalized metric value and average the correctness
/// flags within each bin.
pub fn bin_accuracy(metric: &NhVector, correct: &[bool]) -> Result<BinTable> {
    if !metric.normalized() {
        return Err(Error::InvalidInput(
            "bin_accuracy requires a normalized metric".into(),
        ));
    }
    if metric.len() != correct.len() {
        return Err(Error::ShapeMismatch(format!(
            "metric covers {} nodes, flags cover {}",
            metric.len(),
            correct.len()
        )));
    }
    let mut count = [0usize; BIN_COUNT];
    let mut hits = [0usize; BIN_COUNT];
    for (&x, &ok) in metric.values().iter().zip(correct) {
        let b = bin_index(x);
        count[b] += 1;
        if ok {
            hits[b] += 1;
        }
    }
    let mut bins = [None; BIN_COUNT];
    for i in 0..BIN_COUNT {
        if count[i] > 0 {
            bins[i] = Some((count[i], hits[i] as f64 / count[i] as f64));
        }
    }
    Ok(BinTable { bins })
}
