//! Per-dataset tuned hyperparameter defaults and the fallback
//! configuration (2 layers, 64 hidden units, 0.5 dropout, ReLU).

use crate::model::{Activation, Arch, Combiner};

#[derive(Debug, Clone, Copy)]
pub struct Defaults {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout_agg: f64,
    pub dropout_comb: f64,
    pub activation: Activation,
    pub hop: usize,
    pub self_loop: bool,
    pub combiner: Combiner,
    pub inv_threshold: f64,
}

pub const FALLBACK: Defaults = Defaults {
    hidden: 64,
    lr: 0.01,
    weight_decay: 5e-4,
    dropout_agg: 0.5,
    dropout_comb: 0.5,
    activation: Activation::Relu,
    hop: 1,
    self_loop: true,
    combiner: Combiner::Add,
    inv_threshold: 2.0,
};

/// Tuned settings for the named benchmark datasets, keyed by lowercase
/// dataset name.
pub fn tuned(arch: Arch, dataset: &str) -> Option<Defaults> {
    use Activation::{Relu, Tanh};
    use Combiner::{Add, Concatenate, Maxpooling};
    let d = |hidden,
             lr,
             weight_decay,
             dropout_agg,
             dropout_comb,
             activation,
             hop,
             self_loop,
             combiner,
             inv_threshold| Defaults {
        hidden,
        lr,
        weight_decay,
        dropout_agg,
        dropout_comb,
        activation,
        hop,
        self_loop,
        combiner,
        inv_threshold,
    };
    match arch {
        Arch::Nhgcn => match dataset {
            "cora" => Some(d(512, 0.1, 1e-3, 0.9, 0.3, Relu, 1, true, Maxpooling, 2.25)),
            "citeseer" => Some(d(512, 0.001, 0.0, 0.7, 0.5, Relu, 1, true, Maxpooling, 3.25)),
            "pubmed" => Some(d(512, 0.1, 1e-4, 0.5, 0.0, Relu, 1, true, Add, 3.5)),
            "photo" => Some(d(512, 0.05, 5e-5, 0.9, 0.7, Relu, 3, false, Maxpooling, 3.75)),
            "computers" => Some(d(512, 0.05, 5e-5, 0.4, 0.4, Relu, 1, false, Add, 4.0)),
            "chameleon" => Some(d(512, 0.002, 0.0, 0.0, 0.7, Tanh, 2, false, Add, 4.1)),
            "actor" => Some(d(512, 0.1, 1e-3, 0.7, 0.5, Relu, 2, true, Add, 3.5)),
            "squirrel" => Some(d(512, 0.002, 0.0, 0.4, 0.6, Tanh, 1, false, Maxpooling, 4.0)),
            "texas" => Some(d(512, 0.08, 1e-4, 0.7, 0.5, Relu, 1, false, Add, 5.0)),
            "cornell" => Some(d(64, 0.01, 5e-4, 0.6, 0.5, Relu, 3, false, Maxpooling, 3.8)),
            _ => None,
        },
        Arch::NhgcnSs => match dataset {
            "cora" => Some(d(256, 0.05, 0.0, 0.9, 0.4, Relu, 3, true, Maxpooling, 4.0)),
            "citeseer" => Some(d(512, 0.001, 0.0, 0.6, 0.3, Relu, 3, true, Maxpooling, 3.5)),
            "pubmed" => Some(d(512, 0.1, 1e-4, 0.5, 0.6, Relu, 2, true, Concatenate, 3.0)),
            "photo" => Some(d(128, 0.08, 5e-5, 0.8, 0.0, Relu, 1, false, Add, 3.0)),
            "computers" => Some(d(64, 0.1, 5e-5, 0.6, 0.3, Relu, 3, false, Add, 6.0)),
            "chameleon" => Some(d(512, 0.002, 0.0, 0.0, 0.6, Tanh, 1, false, Maxpooling, 4.25)),
            "actor" => Some(d(512, 0.1, 1e-3, 0.8, 0.9, Relu, 1, true, Concatenate, 4.75)),
            "squirrel" => Some(d(256, 0.001, 5e-5, 0.0, 0.5, Tanh, 1, false, Add, 4.75)),
            "texas" => Some(d(512, 0.1, 1e-3, 0.5, 0.0, Relu, 3, true, Concatenate, 4.8)),
            "cornell" => Some(d(64, 0.01, 5e-4, 0.4, 0.5, Relu, 1, false, Maxpooling, 3.7)),
            _ => None,
        },
        _ => None,
    }
}
