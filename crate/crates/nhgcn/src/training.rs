//! The alternating metric-estimation / model-optimization training loop
//! with early stopping, plus splits and multi-seed orchestration.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{khop_index, normalize_adjacency, Graph};
use crate::metrics::{
    make_masks, masking_accuracy, nh_update, nh_values, LabelVec, MaskPair, NhVector,
};
use crate::model::{
    attach_loss, build_operators, combiner_weights, forward, init_params, Arch, ChannelOps,
    ModelConfig,
};
use crate::optim::AdamState;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NhLabelSource {
    /// Eq. of the update uses model predictions for every node.
    PredictedAll,
    /// Ground-truth labels substituted on train nodes (label reuse).
    TrainTruthPlusPredicted,
}

impl NhLabelSource {
    pub fn parse(s: &str) -> Result<NhLabelSource> {
        match s {
            "predicted_all" => Ok(NhLabelSource::PredictedAll),
            "train_truth_plus_predicted" => Ok(NhLabelSource::TrainTruthPlusPredicted),
            other => Err(Error::Config(format!("unknown nh_label_source '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NhLabelSource::PredictedAll => "predicted_all",
            NhLabelSource::TrainTruthPlusPredicted => "train_truth_plus_predicted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub split_ratios: (f64, f64, f64),
    pub nh_label_source: NhLabelSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            weight_decay: 5e-4,
            max_epochs: 500,
            patience: 100,
            seed: 0,
            split_ratios: (0.6, 0.2, 0.2),
            nh_label_source: NhLabelSource::PredictedAll,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split_ratios;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {a}/{b}/{c} must be positive and sum to 1"
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config("patience exceeds max_epochs".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Disjoint train/val/test index partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded uniform shuffle partition of [0, n).
pub fn make_split(n: usize, seed: u64, ratios: (f64, f64, f64)) -> Result<Split> {
    if n < 5 {
        return Err(Error::InvalidInput(format!(
            "split needs at least 5 nodes, got {n}"
        )));
    }
    let (a, b, c) = ratios;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {a}/{b}/{c} must be positive and sum to 1"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * a).round() as usize;
    let n_val = ((n as f64) * b).round() as usize;
    let n_train = n_train.min(n - 2);
    let n_val = n_val.min(n - n_train - 1);
    Ok(Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub acc_train: f64,
    pub acc_val: f64,
    pub acc_test: f64,
    pub nh_updated: bool,
    pub mask_acc: Option<f64>,
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Test accuracy at the best-validation checkpoint with its
    /// contemporaneous masks.
    pub test_accuracy: f64,
    /// Test accuracy of the same checkpoint under the final masks.
    pub test_accuracy_final_masks: f64,
    pub final_nh: NhVector,
    /// Mask state after each NH update event, keyed by epoch.
    pub mask_history: Vec<(usize, MaskPair)>,
    pub best_params: ParamSet,
    pub best_masks: MaskPair,
    pub param_count: usize,
    pub mean_epoch_ms: f64,
    pub total_seconds: f64,
}

fn accuracy(pred: &[usize], labels: &LabelVec, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx.iter().filter(|&&i| pred[i] == labels.get(i)).count();
    hits as f64 / idx.len() as f64
}

fn eval_prediction(
    cfg: &ModelConfig,
    params: &ParamSet,
    x: &Tensor,
    ops: Option<&ChannelOps>,
) -> Result<Vec<usize>> {
    Ok(forward(cfg, params, x, ops, false, 0)?.prediction().labels)
}

/// Train one model instance following the alternating procedure:
/// NH starts at 1 for every node, masks are refreshed from predicted
/// labels at every strict validation improvement, and early stopping
/// counts consecutive non-improving epochs.
pub fn train_run(
    g: &Graph,
    x: &Tensor,
    labels: &LabelVec,
    split: &Split,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<RunResult> {
    mcfg.validate()?;
    tcfg.validate()?;
    let n = g.n();
    if x.rows() != n || labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "graph has {n} nodes, features {} rows, labels {}",
            x.rows(),
            labels.len()
        )));
    }
    let threshold = mcfg.threshold();
    let na = normalize_adjacency(g, mcfg.self_loop);
    let needs_masks = mcfg.arch.uses_masks();
    let khop = if needs_masks {
        Some(khop_index(g, mcfg.hop)?)
    } else {
        None
    };
    // ground-truth masks, used only for the logged masking-accuracy column
    let truth_masks = match &khop {
        Some(idx) => Some(make_masks(&nh_values(idx, labels)?, threshold)),
        None => None,
    };

    let mut nh = NhVector::initial(n, mcfg.hop);
    let mut masks = make_masks(&nh, threshold);
    let mut ops = if mcfg.arch == Arch::Mlp {
        None
    } else {
        Some(build_operators(g, &na, &masks, mcfg)?)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut params = init_params(mcfg, &mut rng);
    let mut adam = AdamState::new(&params, tcfg.lr, tcfg.weight_decay);
    let train_targets: Vec<(usize, usize)> = split
        .train
        .iter()
        .map(|&i| (i, labels.get(i)))
        .collect();

    let mut best_val = 0.0f64;
    let mut best: Option<(ParamSet, MaskPair, usize, f64)> = None;
    let mut stale_epochs = 0usize;
    let mut epochs: Vec<EpochLog> = Vec::new();
    let mut mask_history: Vec<(usize, MaskPair)> = Vec::new();
    let started = Instant::now();

    for epoch in 1..=tcfg.max_epochs {
        let dropout_seed = tcfg
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(epoch as u64);
        let mut fwd = forward(mcfg, &params, x, ops.as_ref(), true, dropout_seed)?;
        let loss_id = attach_loss(&mut fwd, &train_targets)?;
        let loss = fwd.tape.value(loss_id).get(0, 0);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("loss = {loss}"),
            });
        }
        let node_grads = fwd.tape.backward(loss_id)?;
        let grads = fwd
            .tape
            .collect_gradients(&node_grads, &params, &fwd.bindings);
        adam.step(&mut params, &grads)?;

        let pred = eval_prediction(mcfg, &params, x, ops.as_ref())?;
        let acc_train = accuracy(&pred, labels, &split.train);
        let acc_val = accuracy(&pred, labels, &split.val);
        let acc_test = accuracy(&pred, labels, &split.test);

        let mut nh_updated = false;
        if acc_val > best_val {
            best_val = acc_val;
            best = Some((params.clone(), masks.clone(), epoch, acc_test));
            stale_epochs = 0;
            if let Some(idx) = &khop {
                let source_labels = match tcfg.nh_label_source {
                    NhLabelSource::PredictedAll => pred.clone(),
                    NhLabelSource::TrainTruthPlusPredicted => {
                        let mut mixed = pred.clone();
                        for &i in &split.train {
                            mixed[i] = labels.get(i);
                        }
                        mixed
                    }
                };
                let plab = LabelVec::new(source_labels, labels.num_classes())?;
                nh = nh_update(idx, &plab)?;
                masks = make_masks(&nh, threshold);
                ops = Some(build_operators(g, &na, &masks, mcfg)?);
                mask_history.push((epoch, masks.clone()));
            }
            nh_updated = true;
        } else {
            stale_epochs += 1;
        }

        epochs.push(EpochLog {
            epoch,
            loss,
            acc_train,
            acc_val,
            acc_test,
            nh_updated,
            mask_acc: truth_masks
                .as_ref()
                .map(|tm| masking_accuracy(&masks, tm))
                .transpose()?,
            alphas: combiner_weights(&params),
        });

        if stale_epochs >= tcfg.patience {
            break;
        }
    }
    let total_seconds = started.elapsed().as_secs_f64();

    let (best_params, best_masks, best_epoch, _) = best.ok_or_else(|| Error::Diverged {
        epoch: tcfg.max_epochs,
        detail: "validation accuracy never exceeded zero".into(),
    })?;

    // test accuracy at the best-val checkpoint with its contemporaneous masks
    let best_ops = if mcfg.arch == Arch::Mlp {
        None
    } else {
        Some(build_operators(g, &na, &best_masks, mcfg)?)
    };
    let pred_best = eval_prediction(mcfg, &best_params, x, best_ops.as_ref())?;
    let test_accuracy = accuracy(&pred_best, labels, &split.test);
    // and under the final masks, for comparison
    let pred_final = eval_prediction(mcfg, &best_params, x, ops.as_ref())?;
    let test_accuracy_final_masks = accuracy(&pred_final, labels, &split.test);

    let epoch_count = epochs.len().max(1);
    Ok(RunResult {
        best_epoch,
        best_val_accuracy: best_val,
        test_accuracy,
        test_accuracy_final_masks,
        final_nh: nh,
        mask_history,
        param_count: best_params.param_count(),
        mean_epoch_ms: total_seconds * 1000.0 / epoch_count as f64,
        total_seconds,
        epochs,
        best_params,
        best_masks,
    })
}

#[derive(Debug)]
pub struct MultiSeedResult {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<(u64, f64)>,
    /// Diverged runs, reported rather than silently dropped.
    pub excluded: Vec<(u64, String)>,
    pub runs: Vec<(u64, RunResult)>,
}

/// Run one configuration under several seeds; each seed fixes both the
/// split and the initialization. Reports sample standard deviation.
pub fn multi_seed(
    g: &Graph,
    x: &Tensor,
    labels: &LabelVec,
    mcfg: &ModelConfig,
    tcfg_base: &TrainConfig,
    seeds: &[u64],
) -> Result<MultiSeedResult> {
    if seeds.len() < 2 {
        return Err(Error::InvalidInput("multi_seed needs at least 2 seeds".into()));
    }
    let outcomes: Vec<(u64, Result<RunResult>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let mut tcfg = tcfg_base.clone();
                    tcfg.seed = seed;
                    let split = make_split(g.n(), seed, tcfg.split_ratios)?;
                    train_run(g, x, labels, &split, mcfg, &tcfg)
                })
            })
            .collect();
        seeds
            .iter()
            .zip(handles)
            .map(|(&s, h)| (s, h.join().expect("training thread panicked")))
            .collect()
    });

    let mut per_seed = Vec::new();
    let mut excluded = Vec::new();
    let mut runs = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => {
                per_seed.push((seed, r.test_accuracy));
                runs.push((seed, r));
            }
            Err(e) => excluded.push((seed, e.to_string())),
        }
    }
    if per_seed.is_empty() {
        return Err(Error::InvalidInput(
            "all seeds diverged; nothing to aggregate".into(),
        ));
    }
    let m = per_seed.len() as f64;
    let mean = per_seed.iter().map(|(_, a)| a).sum::<f64>() / m;
    let std = if per_seed.len() > 1 {
        (per_seed
            .iter()
            .map(|(_, a)| (a - mean).powi(2))
            .sum::<f64>()
            / (m - 1.0))
            .sqrt()
    } else {
        0.0
    };
    Ok(MultiSeedResult {
        mean,
        std,
        per_seed,
        excluded,
        runs,
    })
}
