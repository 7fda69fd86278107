use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cryecapa::audio::{features_from_wav, read_feature_cache, write_feature_cache};
use cryecapa::model::{load_checkpoint, load_checkpoint_expecting};
use cryecapa::train::{
    count_flops, evaluate, measured_flops, split_dataset, train, DatasetEntry, Sample, TrainOutputs, PUBLISHED_BASELINE,
    PUBLISHED_IMPROVED,
};
use cryecapa::{Arch, EmotionLabel, Model, Tensor};

use crate::config::RunConfig;
use crate::layout::{cache_targets, discover_cache, discover_wavs};
use crate::{Ablation, Cli, Command, EvalArgs, FeaturesArgs, InferArgs, Split, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Features(a) => features(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a, overrides_model(cli)),
        Command::Infer(a) => infer(&cfg, a),
        Command::Analyze => analyze(&cfg),
    }
}

/// Defaults, then the config file, then command-line flags.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(f) = g.frames {
        cfg.model.target_frames = f;
    }
    if let Some(e) = g.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = g.lr {
        cfg.lr = lr;
    }
    if let Some(b) = g.batch {
        cfg.batch_size = b;
    }
    for a in &g.ablate {
        match a {
            Ablation::Mca => cfg.model.use_mca = false,
            Ablation::Rse => cfg.model.use_rse = false,
            Ablation::Diffattn => cfg.model.use_diff_attn = false,
        }
    }
    cfg.model.validate()?;
    if cfg.batch_size == 0 {
        bail!("batch size must be at least 1");
    }
    Ok(cfg)
}

/// True when the user said anything about the model, so a checkpoint must
/// agree with the resolved config.
fn overrides_model(cli: &Cli) -> bool {
    let g = &cli.global;
    g.config.is_some() || !g.ablate.is_empty() || g.frames.is_some()
}

fn features(cfg: &RunConfig, args: &FeaturesArgs) -> Result<()> {
    let root = args.root.clone().unwrap_or_else(|| cfg.dataset_root.clone());
    let cache = args.cache.clone().unwrap_or_else(|| cfg.cache_dir.clone());
    let entries = discover_wavs(&root, args.manifest.as_deref())?;
    if entries.is_empty() {
        bail!("no WAV files found under {}", root.display());
    }
    let frontend = cfg.frontend();
    let targets = cache_targets(&entries, &cache);
    let mut written = 0;
    let mut failed = 0;
    for (entry, target) in entries.iter().zip(&targets) {
        let result = features_from_wav(&entry.path, &frontend).map_err(anyhow::Error::from).and_then(|fm| {
            if let Some(dir) = target.parent() {
                fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            }
            write_feature_cache(target, &fm.values)?;
            Ok(())
        });
        match result {
            Ok(()) => written += 1,
            Err(e) => {
                failed += 1;
                eprintln!("warning: skipping {}: {e:#}", entry.path.display());
            }
        }
    }
    println!(
        "features: {written} of {} files cached in {}, {failed} skipped",
        entries.len(),
        cache.display()
    );
    if written == 0 {
        bail!("no files could be processed");
    }
    Ok(())
}

fn load_samples<'a>(entries: impl Iterator<Item = &'a DatasetEntry>) -> Result<Vec<Sample>> {
    entries
        .map(|e| {
            let features = read_feature_cache(&e.path).with_context(|| format!("reading {}", e.path.display()))?;
            Ok(Sample { features, label: e.label.id() })
        })
        .collect()
}

fn check_shapes(samples: &[Sample], coeffs: usize, frames: Option<usize>) -> Result<()> {
    let want_t = frames.or_else(|| samples.first().map(|s| s.features.shape()[1]));
    for s in samples {
        let shape = s.features.shape();
        if shape.len() != 2 || shape[0] != coeffs || Some(shape[1]) != want_t {
            bail!(
                "cached features have shape {shape:?}, expected [{coeffs}, {}]; re-run `features` with a matching config",
                want_t.map_or("T".to_string(), |t| t.to_string())
            );
        }
    }
    Ok(())
}

fn best_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    checkpoint.with_file_name(format!("{stem}.best.ckpt"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

fn train_cmd(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let cache = args.cache.clone().unwrap_or_else(|| cfg.cache_dir.clone());
    let index = split_dataset(discover_cache(&cache)?, cfg.seed)?;
    let train_set = load_samples(index.train())?;
    let test_set = load_samples(index.test())?;
    let frames = Some(cfg.model.target_frames);
    check_shapes(&train_set, cfg.model.input_coeffs, frames)?;
    check_shapes(&test_set, cfg.model.input_coeffs, frames)?;

    let mut model = Model::build(cfg.arch, &cfg.model, cfg.seed)?;
    ensure_parent(&args.checkpoint)?;
    ensure_parent(&args.log)?;
    let outputs = TrainOutputs {
        log: Some(args.log.clone()),
        best_checkpoint: Some(best_path(&args.checkpoint)),
        final_checkpoint: Some(args.checkpoint.clone()),
        header: vec![
            ("train_clips".into(), train_set.len().to_string()),
            ("test_clips".into(), test_set.len().to_string()),
        ],
    };
    println!(
        "training {} model ({} params) on {} clips, testing on {}",
        cfg.arch,
        model.num_params(),
        train_set.len(),
        test_set.len()
    );
    let report = train(&mut model, &train_set, &test_set, &cfg.train_config(), &outputs)?;
    let last = report.epochs.last().map_or(f64::NAN, |r| r.test_acc);
    println!(
        "final test accuracy: {last:.4} (best {:.4} at epoch {}); checkpoint written to {}",
        report.best_test_acc,
        report.best_epoch,
        args.checkpoint.display()
    );
    Ok(())
}

fn load_model(path: &Path, expected: Option<&RunConfig>) -> Result<Model> {
    let model = match expected {
        Some(cfg) => {
            let m = load_checkpoint_expecting(path, &cfg.model)?;
            if m.arch != cfg.arch {
                bail!("checkpoint holds a {} model but the config asks for {}", m.arch, cfg.arch);
            }
            m
        }
        None => load_checkpoint(path)?,
    };
    Ok(model)
}

fn label_names(classes: usize) -> Vec<String> {
    (0..classes).map(|k| EmotionLabel::from_id(k).map_or_else(|| format!("class{k}"), |l| l.name().to_string())).collect()
}

fn eval_cmd(cfg: &RunConfig, args: &EvalArgs, strict: bool) -> Result<()> {
    let model = load_model(&args.checkpoint, strict.then_some(cfg))?;
    let cache = args.cache.clone().unwrap_or_else(|| cfg.cache_dir.clone());
    let index = split_dataset(discover_cache(&cache)?, cfg.seed)?;
    let samples = match args.split {
        Split::Train => load_samples(index.train())?,
        Split::Test => load_samples(index.test())?,
        Split::All => load_samples(index.entries.iter())?,
    };
    check_shapes(&samples, model.config.input_coeffs, None)?;
    let cm = evaluate(&model, &samples, cfg.batch_size)?;
    let names = label_names(model.config.num_classes);
    let labels: Vec<&str> = names.iter().map(String::as_str).collect();
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let counts = args.out.join("confusion_counts.csv");
    let percent = args.out.join("confusion_percent.csv");
    fs::write(&counts, cm.counts_csv(&labels))?;
    fs::write(&percent, cm.percent_csv(&labels))?;
    println!(
        "accuracy: {:.4} ({} of {} clips, {} split); matrices written to {}",
        cm.accuracy(),
        cm.trace(),
        cm.total(),
        match args.split {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => "all",
        },
        args.out.display()
    );
    Ok(())
}

/// One line of `label=probability` pairs followed by `predicted=<label>`.
pub fn format_probabilities(probs: &[f64]) -> String {
    let names = label_names(probs.len());
    let mut best = 0;
    for (k, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = k;
        }
    }
    let mut line = String::new();
    for (name, p) in names.iter().zip(probs) {
        let _ = write!(line, "{name}={p:.9} ");
    }
    let _ = write!(line, "predicted={}", names[best]);
    line
}

fn infer(cfg: &RunConfig, args: &InferArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let mut frontend = cfg.frontend();
    frontend.mfcc.n_coeffs = model.config.input_coeffs;
    let fm = features_from_wav(&args.wav, &frontend).with_context(|| format!("processing {}", args.wav.display()))?;
    let (c, t) = (fm.num_coeffs(), fm.num_frames());
    let x = Tensor::new(vec![1, c, t], fm.values.data().to_vec())?;
    let probs = model.probabilities(&x)?;
    println!("{}", format_probabilities(probs.data()));
    Ok(())
}

fn analyze(cfg: &RunConfig) -> Result<()> {
    let frames = cfg.model.target_frames;
    let improved = Model::build(Arch::Improved, &cfg.model, cfg.seed)?;
    let baseline = Model::build(Arch::Baseline, &cfg.model, cfg.seed)?;
    let ri = count_flops(&improved, frames);
    let rb = count_flops(&baseline, frames);
    let mi = measured_flops(&improved, frames)?;
    let mb = measured_flops(&baseline, frames)?;
    let ti = improved.conv_trunk_flops(2 * frames) as f64 / improved.conv_trunk_flops(frames) as f64;
    let tb = baseline.conv_trunk_flops(2 * frames) as f64 / baseline.conv_trunk_flops(frames) as f64;

    let mut rows: Vec<(String, String, String)> = vec![
        ("params".into(), ri.total_params.to_string(), rb.total_params.to_string()),
        ("params_millions".into(), format!("{:.4}", ri.params_millions()), format!("{:.4}", rb.params_millions())),
        ("published_params_millions".into(), PUBLISHED_IMPROVED.params_m.to_string(), PUBLISHED_BASELINE.params_m.to_string()),
        (
            "params_vs_published".into(),
            format!("{:.3}", ri.params_millions() / PUBLISHED_IMPROVED.params_m),
            format!("{:.3}", rb.params_millions() / PUBLISHED_BASELINE.params_m),
        ),
        ("frames".into(), frames.to_string(), frames.to_string()),
        ("flops".into(), ri.flops.to_string(), rb.flops.to_string()),
        ("measured_flops".into(), mi.to_string(), mb.to_string()),
        ("analytic_equals_measured".into(), (ri.flops == mi).to_string(), (rb.flops == mb).to_string()),
        ("gflops".into(), format!("{:.4}", ri.gflops()), format!("{:.4}", rb.gflops())),
        ("published_gflops".into(), PUBLISHED_IMPROVED.gflops.to_string(), PUBLISHED_BASELINE.gflops.to_string()),
        (
            "gflops_vs_published".into(),
            format!("{:.3}", ri.gflops() / PUBLISHED_IMPROVED.gflops),
            format!("{:.3}", rb.gflops() / PUBLISHED_BASELINE.gflops),
        ),
        ("trunk_flops".into(), ri.conv_trunk_flops.to_string(), rb.conv_trunk_flops.to_string()),
        ("trunk_flops_ratio_2t_over_t".into(), format!("{ti:.4}"), format!("{tb:.4}")),
        ("namespaces".into(), join_or_none(improved.namespaces()), join_or_none(baseline.namespaces())),
    ];
    let mut modules: Vec<String> = ri.per_module.iter().chain(&rb.per_module).map(|(n, _)| n.clone()).collect();
    modules.sort();
    modules.dedup();
    let lookup = |r: &cryecapa::ComplexityReport, name: &str| {
        r.per_module.iter().find(|(n, _)| n == name).map_or("-".to_string(), |(_, c)| c.to_string())
    };
    for m in modules {
        rows.push((format!("params.{m}"), lookup(&ri, &m), lookup(&rb, &m)));
    }

    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
    let wi = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(8);
    println!("{:<w$}  {:>wi$}  {:>12}", "metric", "improved", "baseline");
    for (name, a, b) in &rows {
        println!("{name:<w$}  {a:>wi$}  {b:>12}");
    }
    Ok(())
}

fn join_or_none(ns: Vec<&str>) -> String {
    if ns.is_empty() {
        "none".into()
    } else {
        ns.join(",")
    }
}
