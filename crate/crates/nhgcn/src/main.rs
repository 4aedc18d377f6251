//! Command-line entry point: metric computation, training, multi-seed
//! evaluation, synthetic data generation, gradient checking, and
//! per-bin accuracy reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nhgcn::data::{
    export_alpha_trace, export_bin_table, export_epoch_log, export_metric_dump, export_summary,
    generate, load_dataset, save_dataset, Dataset, SynthKind, SynthSpec,
};
use nhgcn::defaults::{tuned, Defaults, FALLBACK};
use nhgcn::graph::{khop_index, normalize_adjacency};
use nhgcn::metrics::{bin_accuracy, make_masks, nh_values, node_homophily, normalize_metric, MaskPair};
use nhgcn::model::{
    build_operators, forward, load_checkpoint, model_grad_check, save_checkpoint, Activation,
    Arch, Combiner, ModelConfig,
};
use nhgcn::training::{
    make_split, multi_seed, train_run, NhLabelSource, RunResult, Split, TrainConfig,
};
use nhgcn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "nhgcn",
    about = "Neighborhood-homophily metrics and NH-guided GCN training"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute NH and node-homophily statistics for a dataset.
    Metrics {
        /// Dataset directory (edges.tsv, features.tsv, labels.tsv, meta.tsv).
        #[arg(long)]
        dataset: PathBuf,
        /// Neighborhood radii to evaluate (repeatable).
        #[arg(long, default_values_t = [1usize, 2])]
        hop: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a single model instance.
    Train(TrainArgs),
    /// Train one configuration under several seeds and aggregate.
    Multiseed(TrainArgs),
    /// Generate a seeded synthetic dataset.
    Synth {
        /// "bipartite" or "planted_partition".
        #[arg(long)]
        kind: String,
        /// Bipartite: left side size.
        #[arg(long, default_value_t = 50)]
        left: usize,
        /// Bipartite: right side size.
        #[arg(long, default_value_t = 50)]
        right: usize,
        /// Bipartite: cross-side edge probability.
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        /// Planted partition: nodes per class.
        #[arg(long, default_value_t = 50)]
        block_size: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory the dataset files are written into.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient check of full model instances.
    Gradcheck {
        /// Check every architecture/combiner/activation combination.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value = "nhgcn")]
        arch: String,
        #[arg(long, default_value = "add")]
        combiner: String,
        #[arg(long, default_value = "relu")]
        activation: String,
        #[arg(long)]
        renormalize_after_mask: bool,
        #[arg(long, default_value_t = 30)]
        probes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Per-bin test accuracy of a saved checkpoint.
    Bins {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Seed that fixes the train/val/test split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Shared options for `train` and `multiseed`. Precedence: built-in
/// defaults (per-dataset tuned table when available), then the config
/// file, then explicit flags.
#[derive(Args, Clone)]
struct TrainArgs {
    /// key=value config file; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// nhgcn | nhgcn_ss | gcn | mlp | gcn_plus_x
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    /// relu | tanh
    #[arg(long)]
    activation: Option<String>,
    /// add | concatenate | maxpooling
    #[arg(long)]
    combiner: Option<String>,
    #[arg(long)]
    self_loop: Option<bool>,
    #[arg(long)]
    dropout_agg: Option<f64>,
    #[arg(long)]
    dropout_comb: Option<f64>,
    #[arg(long)]
    hop: Option<usize>,
    /// Threshold in the inverted convention: T = 1 / inv_threshold.
    #[arg(long)]
    inv_threshold: Option<f64>,
    #[arg(long)]
    share_weights: Option<bool>,
    #[arg(long)]
    renormalize_after_mask: Option<bool>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Single-run seed (train).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seed list (multiseed).
    #[arg(long)]
    seeds: Option<String>,
    /// predicted_all | train_truth_plus_predicted
    #[arg(long)]
    nh_label_source: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print timing (mean ms per epoch, total seconds).
    #[arg(long)]
    time: bool,
}

/// Accumulated settings before they are resolved against a dataset.
#[derive(Default, Clone)]
struct Settings {
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    arch: Option<String>,
    hidden: Option<usize>,
    activation: Option<String>,
    combiner: Option<String>,
    self_loop: Option<bool>,
    dropout_agg: Option<f64>,
    dropout_comb: Option<f64>,
    hop: Option<usize>,
    inv_threshold: Option<f64>,
    share_weights: Option<bool>,
    renormalize_after_mask: Option<bool>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    nh_label_source: Option<String>,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: bad value {v:?}")))
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| parse_num("seeds", t.trim()))
        .collect()
}

impl Settings {
    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "arch" => self.arch = Some(value.to_string()),
            "hidden" => self.hidden = Some(parse_num(key, value)?),
            "activation" => self.activation = Some(value.to_string()),
            "combiner" => self.combiner = Some(value.to_string()),
            "self_loop" => self.self_loop = Some(parse_bool(key, value)?),
            "dropout_agg" => self.dropout_agg = Some(parse_num(key, value)?),
            "dropout_comb" => self.dropout_comb = Some(parse_num(key, value)?),
            "hop" => self.hop = Some(parse_num(key, value)?),
            "inv_threshold" => self.inv_threshold = Some(parse_num(key, value)?),
            "share_weights" => self.share_weights = Some(parse_bool(key, value)?),
            "renormalize_after_mask" => {
                self.renormalize_after_mask = Some(parse_bool(key, value)?)
            }
            "lr" => self.lr = Some(parse_num(key, value)?),
            "weight_decay" => self.weight_decay = Some(parse_num(key, value)?),
            "max_epochs" => self.max_epochs = Some(parse_num(key, value)?),
            "patience" => self.patience = Some(parse_num(key, value)?),
            "seed" => self.seed = Some(parse_num(key, value)?),
            "seeds" => self.seeds = Some(parse_seed_list(value)?),
            "nh_label_source" => self.nh_label_source = Some(value.to_string()),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(path.display().to_string(), i + 1, "expected key=value")
            })?;
            self.apply_kv(key.trim(), value.trim())
                .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        }
        Ok(())
    }

    fn apply_flags(&mut self, a: &TrainArgs) -> Result<()> {
        macro_rules! take {
            ($f:ident) => {
                if a.$f.is_some() {
                    self.$f = a.$f.clone();
                }
            };
        }
        take!(dataset);
        take!(out);
        take!(arch);
        take!(hidden);
        take!(activation);
        take!(combiner);
        take!(self_loop);
        take!(dropout_agg);
        take!(dropout_comb);
        take!(hop);
        take!(inv_threshold);
        take!(share_weights);
        take!(renormalize_after_mask);
        take!(lr);
        take!(weight_decay);
        take!(max_epochs);
        take!(patience);
        take!(seed);
        take!(nh_label_source);
        if let Some(s) = &a.seeds {
            self.seeds = Some(parse_seed_list(s)?);
        }
        Ok(())
    }

    /// Fill unspecified fields from the tuned table (when the dataset
    /// name is known) or the fallback defaults, and build the configs.
    fn resolve(&self, ds: &Dataset) -> Result<(ModelConfig, TrainConfig)> {
        let arch = Arch::parse(self.arch.as_deref().unwrap_or("nhgcn"))?;
        let d: Defaults = tuned(arch, &ds.name.to_lowercase()).unwrap_or(FALLBACK);
        let mcfg = ModelConfig {
            arch,
            in_dim: ds.feature_dim(),
            hidden: self.hidden.unwrap_or(d.hidden),
            num_classes: ds.num_classes(),
            activation: match &self.activation {
                Some(s) => Activation::parse(s)?,
                None => d.activation,
            },
            combiner: match &self.combiner {
                Some(s) => Combiner::parse(s)?,
                None => d.combiner,
            },
            self_loop: self.self_loop.unwrap_or(d.self_loop),
            dropout_agg: self.dropout_agg.unwrap_or(d.dropout_agg),
            dropout_comb: self.dropout_comb.unwrap_or(d.dropout_comb),
            hop: self.hop.unwrap_or(d.hop),
            inv_threshold: self.inv_threshold.unwrap_or(d.inv_threshold),
            share_weights: self.share_weights.unwrap_or(arch == Arch::NhgcnSs),
            renormalize_after_mask: self.renormalize_after_mask.unwrap_or(false),
        };
        mcfg.validate()?;
        let mut tcfg = TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            seed: self.seed.unwrap_or(0),
            ..TrainConfig::default()
        };
        if let Some(m) = self.max_epochs {
            tcfg.max_epochs = m;
        }
        if let Some(p) = self.patience {
            tcfg.patience = p;
        }
        if let Some(s) = &self.nh_label_source {
            tcfg.nh_label_source = NhLabelSource::parse(s)?;
        }
        tcfg.validate()?;
        Ok((mcfg, tcfg))
    }

    /// Echo of the fully resolved configuration, written alongside run
    /// outputs so every result directory is self-describing.
    fn echo(&self, ds: &Dataset, mcfg: &ModelConfig, tcfg: &TrainConfig) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        kv("dataset", ds.name.clone());
        kv("arch", mcfg.arch.name().to_string());
        kv("hidden", mcfg.hidden.to_string());
        kv("activation", mcfg.activation.name().to_string());
        kv("combiner", mcfg.combiner.name().to_string());
        kv("self_loop", mcfg.self_loop.to_string());
        kv("dropout_agg", mcfg.dropout_agg.to_string());
        kv("dropout_comb", mcfg.dropout_comb.to_string());
        kv("hop", mcfg.hop.to_string());
        kv("inv_threshold", mcfg.inv_threshold.to_string());
        kv("share_weights", mcfg.share_weights.to_string());
        kv(
            "renormalize_after_mask",
            mcfg.renormalize_after_mask.to_string(),
        );
        kv("lr", tcfg.lr.to_string());
        kv("weight_decay", tcfg.weight_decay.to_string());
        kv("max_epochs", tcfg.max_epochs.to_string());
        kv("patience", tcfg.patience.to_string());
        kv("seed", tcfg.seed.to_string());
        kv("nh_label_source", tcfg.nh_label_source.name().to_string());
        if let Some(seeds) = &self.seeds {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            kv("seeds", list.join(","));
        }
        s
    }
}

/// Output root: explicit flag/config value, else $NHGCN_OUT_ROOT, else
/// ./runs, with a run-specific leaf directory appended.
fn out_dir(explicit: Option<&PathBuf>, leaf: &str) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => {
            let root = std::env::var_os("NHGCN_OUT_ROOT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"));
            root.join(leaf)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_metrics(dataset: &Path, hops: &[usize], out: Option<&PathBuf>) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let dir = out_dir(out, &format!("metrics-{}", ds.name));
    let (hom, hom_mean) = node_homophily(&ds.graph, &ds.labels)?;
    println!(
        "{}: n={} edges={} f={} C={}",
        ds.name,
        ds.n(),
        ds.graph.edge_list().len(),
        ds.feature_dim(),
        ds.num_classes()
    );
    println!("node homophily (mean): {hom_mean:.4}");
    for &k in hops {
        let idx = khop_index(&ds.graph, k)?;
        let raw = nh_values(&idx, &ds.labels)?;
        let norm = normalize_metric(&raw, ds.num_classes())?;
        println!(
            "NH^{k}: raw mean {:.4}  normalized mean {:.4}",
            raw.mean(),
            norm.mean()
        );
        export_metric_dump(
            &dir.join(format!("metrics_k{k}.csv")),
            raw.values(),
            norm.values(),
            &hom,
        )?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn run_outputs(
    dir: &Path,
    ds: &Dataset,
    mcfg: &ModelConfig,
    split: &Split,
    result: &RunResult,
) -> Result<()> {
    export_epoch_log(&dir.join("epochs.csv"), &result.epochs)?;
    if result.epochs.iter().any(|e| e.alphas.is_some()) {
        export_alpha_trace(&dir.join("alpha_trace.csv"), &result.epochs)?;
    }
    save_checkpoint(&dir.join("checkpoint.txt"), mcfg, &result.best_params)?;

    // Per-bin diagnostic: test-node correctness at the best checkpoint,
    // binned by the normalized ground-truth NH value.
    let pred = predict_with_masks(ds, mcfg, &result.best_params, &result.best_masks)?;
    let idx = khop_index(&ds.graph, mcfg.hop)?;
    let norm = normalize_metric(&nh_values(&idx, &ds.labels)?, ds.num_classes())?;
    let correct: Vec<bool> = (0..ds.n()).map(|i| pred[i] == ds.labels.get(i)).collect();
    let mut test_metric = Vec::new();
    let mut test_correct = Vec::new();
    for &i in &split.test {
        test_metric.push(norm.get(i));
        test_correct.push(correct[i]);
    }
    let sub = nhgcn::metrics::NhVector::from_normalized(test_metric, mcfg.hop);
    export_bin_table(&dir.join("bins.csv"), &bin_accuracy(&sub, &test_correct)?)?;
    Ok(())
}

fn predict_with_masks(
    ds: &Dataset,
    mcfg: &ModelConfig,
    params: &nhgcn::params::ParamSet,
    masks: &MaskPair,
) -> Result<Vec<usize>> {
    let na = normalize_adjacency(&ds.graph, mcfg.self_loop);
    let ops = if mcfg.arch == Arch::Mlp {
        None
    } else {
        Some(build_operators(&ds.graph, &na, masks, mcfg)?)
    };
    let mut eval_cfg = mcfg.clone();
    eval_cfg.dropout_agg = 0.0;
    eval_cfg.dropout_comb = 0.0;
    Ok(forward(&eval_cfg, params, &ds.features, ops.as_ref(), false, 0)?
        .prediction()
        .labels)
}

fn summary_json(ds: &Dataset, mcfg: &ModelConfig, result: &RunResult, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "dataset": ds.name,
        "arch": mcfg.arch.name(),
        "seed": seed,
        "best_epoch": result.best_epoch,
        "best_val_accuracy": result.best_val_accuracy,
        "test_accuracy": result.test_accuracy,
        "test_accuracy_final_masks": result.test_accuracy_final_masks,
        "param_count": result.param_count,
        "epochs_run": result.epochs.len(),
        "nh_updates": result.mask_history.len(),
        "mean_epoch_ms": result.mean_epoch_ms,
        "total_seconds": result.total_seconds,
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut s = Settings::default();
    if let Some(path) = &args.config {
        s.load_file(path)?;
    }
    s.apply_flags(args)?;
    let dataset = s
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("no dataset given (flag or config file)".into()))?;
    let ds = load_dataset(&dataset)?;
    let (mcfg, tcfg) = s.resolve(&ds)?;
    let dir = out_dir(
        s.out.as_ref(),
        &format!("train-{}-{}-seed{}", ds.name, mcfg.arch.name(), tcfg.seed),
    );
    let split = make_split(ds.n(), tcfg.seed, tcfg.split_ratios)?;
    let result = train_run(&ds.graph, &ds.features, &ds.labels, &split, &mcfg, &tcfg)?;
    write_text(&dir.join("config.txt"), &s.echo(&ds, &mcfg, &tcfg))?;
    run_outputs(&dir, &ds, &mcfg, &split, &result)?;
    export_summary(&dir.join("summary.json"), &summary_json(&ds, &mcfg, &result, tcfg.seed))?;
    println!(
        "{} on {}: best val {:.4} (epoch {}), test {:.4} ({} params)",
        mcfg.arch.name(),
        ds.name,
        result.best_val_accuracy,
        result.best_epoch,
        result.test_accuracy,
        result.param_count
    );
    if args.time {
        println!(
            "timing: {:.2} ms/epoch over {} epochs, {:.2} s total",
            result.mean_epoch_ms,
            result.epochs.len(),
            result.total_seconds
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_multiseed(args: &TrainArgs) -> Result<()> {
    let mut s = Settings::default();
    if let Some(path) = &args.config {
        s.load_file(path)?;
    }
    s.apply_flags(args)?;
    let dataset = s
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("no dataset given (flag or config file)".into()))?;
    let seeds = s
        .seeds
        .clone()
        .ok_or_else(|| Error::Config("multiseed needs --seeds (e.g. --seeds 0,1,2)".into()))?;
    let ds = load_dataset(&dataset)?;
    let (mcfg, tcfg) = s.resolve(&ds)?;
    let dir = out_dir(
        s.out.as_ref(),
        &format!("multiseed-{}-{}", ds.name, mcfg.arch.name()),
    );
    let agg = multi_seed(&ds.graph, &ds.features, &ds.labels, &mcfg, &tcfg, &seeds)?;
    write_text(&dir.join("config.txt"), &s.echo(&ds, &mcfg, &tcfg))?;
    let mut total_seconds = 0.0;
    for (seed, run) in &agg.runs {
        let sub = dir.join(format!("seed{seed}"));
        let split = make_split(ds.n(), *seed, tcfg.split_ratios)?;
        run_outputs(&sub, &ds, &mcfg, &split, run)?;
        export_summary(&sub.join("summary.json"), &summary_json(&ds, &mcfg, run, *seed))?;
        total_seconds += run.total_seconds;
    }
    for (seed, detail) in &agg.excluded {
        eprintln!("warning: seed {seed} diverged and was excluded: {detail}");
    }
    let per_seed: Vec<serde_json::Value> = agg
        .per_seed
        .iter()
        .map(|(seed, acc)| serde_json::json!({"seed": seed, "test_accuracy": acc}))
        .collect();
    export_summary(
        &dir.join("summary.json"),
        &serde_json::json!({
            "dataset": ds.name,
            "arch": mcfg.arch.name(),
            "mean_test_accuracy": agg.mean,
            "std_test_accuracy": agg.std,
            "seeds": per_seed,
            "excluded": agg.excluded.iter().map(|(s, d)| serde_json::json!({"seed": s, "detail": d})).collect::<Vec<_>>(),
        }),
    )?;
    println!(
        "{} on {} over {} seeds: test {:.4} +/- {:.4}",
        mcfg.arch.name(),
        ds.name,
        agg.per_seed.len(),
        agg.mean,
        agg.std
    );
    if args.time {
        println!("timing: {total_seconds:.2} s total across seeds");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    kind: &str,
    left: usize,
    right: usize,
    p: f64,
    block_size: usize,
    classes: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    sigma: f64,
    separation: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let kind = match kind {
        "bipartite" => SynthKind::Bipartite { left, right, p },
        "planted_partition" | "planted" => SynthKind::PlantedPartition {
            block_size,
            num_classes: classes,
            p_in,
            p_out,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown synth kind {other:?} (expected bipartite or planted_partition)"
            )))
        }
    };
    let ds = generate(&SynthSpec {
        kind,
        feature_dim,
        feature_sigma: sigma,
        class_separation: separation,
        seed,
    })?;
    save_dataset(&ds, out)?;
    println!(
        "{}: n={} edges={} f={} C={} -> {}",
        ds.name,
        ds.n(),
        ds.graph.edge_list().len(),
        ds.feature_dim(),
        ds.num_classes(),
        out.display()
    );
    Ok(())
}

fn cmd_gradcheck(
    all: bool,
    arch: &str,
    combiner: &str,
    activation: &str,
    renorm: bool,
    probes: usize,
    seed: u64,
) -> Result<()> {
    const TOL: f64 = 1e-4;
    let mut configs = Vec::new();
    if all {
        for arch in [Arch::Nhgcn, Arch::NhgcnSs, Arch::Gcn, Arch::Mlp, Arch::GcnPlusX] {
            for combiner in [Combiner::Add, Combiner::Concatenate, Combiner::Maxpooling] {
                for activation in [Activation::Relu, Activation::Tanh] {
                    for renorm in [false, true] {
                        let mut cfg = ModelConfig::tiny(arch);
                        cfg.combiner = combiner;
                        cfg.activation = activation;
                        cfg.renormalize_after_mask = renorm;
                        configs.push(cfg);
                    }
                }
            }
        }
    } else {
        let mut cfg = ModelConfig::tiny(Arch::parse(arch)?);
        cfg.combiner = Combiner::parse(combiner)?;
        cfg.activation = Activation::parse(activation)?;
        cfg.renormalize_after_mask = renorm;
        configs.push(cfg);
    }
    let mut worst: f64 = 0.0;
    for cfg in &configs {
        let err = model_grad_check(cfg, seed, probes)?;
        worst = worst.max(err);
        println!(
            "{:<10} {:<12} {:<5} renorm={}  max rel err {err:.3e}  {}",
            cfg.arch.name(),
            cfg.combiner.name(),
            cfg.activation.name(),
            u8::from(cfg.renormalize_after_mask),
            if err < TOL { "ok" } else { "FAIL" }
        );
    }
    if worst >= TOL {
        return Err(Error::NonFinite(format!(
            "gradient check failed: worst relative error {worst:.3e} >= {TOL:.0e}"
        )));
    }
    Ok(())
}

fn cmd_bins(dataset: &Path, checkpoint: &Path, seed: u64, out: Option<&PathBuf>) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let (mut cfg, params) = load_checkpoint(checkpoint)?;
    if cfg.in_dim != ds.feature_dim() || cfg.num_classes != ds.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects f={} C={}, dataset has f={} C={}",
            cfg.in_dim,
            cfg.num_classes,
            ds.feature_dim(),
            ds.num_classes()
        )));
    }
    cfg.dropout_agg = 0.0;
    cfg.dropout_comb = 0.0;
    let split = make_split(ds.n(), seed, (0.6, 0.2, 0.2))?;
    let na = normalize_adjacency(&ds.graph, cfg.self_loop);
    let idx = khop_index(&ds.graph, cfg.hop)?;

    // Inference-time masks come from the model's own predictions: a
    // first pass under the all-high initial masks yields labels, NH is
    // estimated from those, and the second pass uses the result.
    let initial = make_masks(&nhgcn::metrics::NhVector::initial(ds.n(), cfg.hop), cfg.threshold());
    let eval = |masks: &MaskPair| -> Result<Vec<usize>> {
        let ops = if cfg.arch == Arch::Mlp {
            None
        } else {
            Some(build_operators(&ds.graph, &na, masks, &cfg)?)
        };
        Ok(forward(&cfg, &params, &ds.features, ops.as_ref(), false, 0)?
            .prediction()
            .labels)
    };
    let first = eval(&initial)?;
    let pred_labels = nhgcn::metrics::LabelVec::new(first, cfg.num_classes)?;
    let masks = make_masks(&nh_values(&idx, &pred_labels)?, cfg.threshold());
    let pred = eval(&masks)?;

    let norm = normalize_metric(&nh_values(&idx, &ds.labels)?, ds.num_classes())?;
    let mut test_metric = Vec::new();
    let mut test_correct = Vec::new();
    for &i in &split.test {
        test_metric.push(norm.get(i));
        test_correct.push(pred[i] == ds.labels.get(i));
    }
    let sub = nhgcn::metrics::NhVector::from_normalized(test_metric, cfg.hop);
    let table = bin_accuracy(&sub, &test_correct)?;
    println!("bin_lo..bin_hi  count  accuracy");
    for (i, bin) in table.bins().iter().enumerate() {
        if let Some((count, acc)) = bin {
            println!(
                "{:.1}..{:.1}        {count:<6} {acc:.4}",
                i as f64 / 10.0,
                (i + 1) as f64 / 10.0
            );
        }
    }
    if let Some(acc) = table.overall_accuracy() {
        println!("overall test accuracy: {acc:.4}");
    }
    let dir = out_dir(out, &format!("bins-{}", ds.name));
    export_bin_table(&dir.join("bins.csv"), &table)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Metrics { dataset, hop, out } => cmd_metrics(dataset, hop, out.as_ref()),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Multiseed(args) => cmd_multiseed(args),
        Cmd::Synth {
            kind,
            left,
            right,
            p,
            block_size,
            classes,
            p_in,
            p_out,
            feature_dim,
            sigma,
            separation,
            seed,
            out,
        } => cmd_synth(
            kind, *left, *right, *p, *block_size, *classes, *p_in, *p_out, *feature_dim, *sigma,
            *separation, *seed, out,
        ),
        Cmd::Gradcheck {
            all,
            arch,
            combiner,
            activation,
            renormalize_after_mask,
            probes,
            seed,
        } => cmd_gradcheck(
            *all,
            arch,
            combiner,
            activation,
            *renormalize_after_mask,
            *probes,
            *seed,
        ),
        Cmd::Bins {
            dataset,
            checkpoint,
            seed,
            out,
        } => cmd_bins(dataset, checkpoint, *seed, out.as_ref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
