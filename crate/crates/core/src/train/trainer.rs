use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Model};
use crate::params::Session;
use crate::rng;
use crate::tensor::Tensor;

use super::{evaluate, Adam, AdamConfig};

/// One feature map `[coeffs, T]` and its class id.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Tensor,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 700, batch_size: 64, lr: 2e-5, seed: 0 }
    }
}

/// Where training writes its artifacts. `None` skips that artifact.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub log: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
    /// Extra `# key = value` lines for the log header.
    pub header: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_test_acc: f64,
}

/// Forward, backward and one Adam update on `batch`. Returns the batch loss.
pub fn train_step(model: &mut Model, adam: &mut Adam, batch: &[&Sample]) -> Result<f64> {
    let refs: Vec<&Tensor> = batch.iter().map(|s| &s.features).collect();
    let x = Tensor::stack(&refs)?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let (loss, grads, stats) = {
        let mut s = Session::train(&model.store);
        let input = s.input(x);
        let logits = model.forward(&mut s, input)?;
        let loss = s.g.cross_entropy(logits, &labels)?;
        s.g.backward(loss)?;
        let value = s.g.value(loss).data()[0];
        (value, s.param_grads(), s.take_stat_updates())
    };
    if !loss.is_finite() {
        return Ok(loss);
    }
    adam.step_store(&mut model.store, &grads)?;
    model.store.apply_updates(stats);
    Ok(loss)
}

fn log_header(model: &Model, cfg: &TrainConfig, outputs: &TrainOutputs, eval_set: &str) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "# arch = {}", model.arch);
    for line in model.config.to_kv_text().lines() {
        let _ = writeln!(h, "# {line}");
    }
    let _ = writeln!(h, "# epochs = {}", cfg.epochs);
    let _ = writeln!(h, "# batch = {}", cfg.batch_size);
    let _ = writeln!(h, "# lr = {:e}", cfg.lr);
    let _ = writeln!(h, "# seed = {}", cfg.seed);
    let _ = writeln!(h, "# params = {}", model.num_params());
    let _ = writeln!(h, "# namespaces = {}", model.namespaces().join(","));
    let _ = writeln!(h, "# eval_set = {eval_set}");
    for (k, v) in &outputs.header {
        let _ = writeln!(h, "# {k} = {v}");
    }
    h.push_str("epoch,train_loss,test_acc,wall_seconds\n");
    h
}

/// Train with per-epoch seeded shuffling. Test accuracy is measured after
/// every epoch (on the training set when `test` is empty); the checkpoint is
/// written whenever accuracy improves and once more at the end.
pub fn train(
    model: &mut Model,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(s) = train_set.iter().chain(test_set).find(|s| s.label >= model.config.num_classes) {
        return Err(Error::LabelOutOfRange { label: s.label, classes: model.config.num_classes });
    }
    let (eval_set, eval_name) = if test_set.is_empty() { (train_set, "train") } else { (test_set, "test") };
    let mut log = log_header(model, cfg, outputs, eval_name);
    let write_log = |text: &str| -> Result<()> {
        if let Some(p) = &outputs.log {
            fs::write(p, text)?;
        }
        Ok(())
    };
    write_log(&log)?;

    let mut adam = Adam::for_store(AdamConfig::new(cfg.lr), &model.store);
    let mut shuffler = rng::derived(cfg.seed, 1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport { best_test_acc: f64::NEG_INFINITY, ..Default::default() };
    let start = Instant::now();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffler);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = train_step(model, &mut adam, &batch)?;
            step += 1;
            if !loss.is_finite() {
                return Err(Error::NaNLoss { epoch, step, loss });
            }
            report.step_losses.push(loss);
            total += loss * batch.len() as f64;
        }
        let acc = evaluate(model, eval_set, cfg.batch_size)?.accuracy();
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            test_acc: acc,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let _ = writeln!(
            log,
            "{},{:?},{:?},{:.3}",
            record.epoch, record.train_loss, record.test_acc, record.wall_seconds
        );
        write_log(&log)?;
        if acc > report.best_test_acc {
            report.best_test_acc = acc;
            report.best_epoch = epoch;
            if let Some(p) = &outputs.best_checkpoint {
                save_checkpoint(model, p)?;
            }
        }
        report.epochs.push(record);
    }
    if let Some(p) = &outputs.final_checkpoint {
        save_checkpoint(model, p)?;
    }
    Ok(report)
}
