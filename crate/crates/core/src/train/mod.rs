//! The optimization loop, evaluation and checkpoints.

mod checkpoint;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    gramian, latent_objective, reconstruction_loss, LatentBatch, LossBreakdown, LossWeights,
    Variant,
};
use crate::metrics::{
    assign_global, combinatorial_diversity, db_index, group_accuracy, prototype_group_distribution,
    AccuracyGap, MetricsReport,
};
use crate::model::{argmax, LatentCode, Model};
use crate::nn::{AdamConfig, AdamState};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Seeds batch order and reparameterization noise.
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Evaluate on the held-out set every this many epochs (0 disables).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::PanVae,
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_dir: None,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        self.weights.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-step breakdowns; volumes are those after the last step.
    pub loss: LossBreakdown,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub db: Option<f64>,
    pub per_class_volume: Vec<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<LossBreakdown>,
}

impl RunRecord {
    /// The record with wall-clock times zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        r
    }

    /// Per-step log: `step,pred,recon,kl,diversity,total,volume_class_0..`.
    pub fn steps_csv(&self) -> String {
        let k = self.steps.first().map_or(0, |s| s.per_class_volume.len());
        let mut out = String::from("step,pred,recon,kl,diversity,total");
        for c in 0..k {
            out.push_str(&format!(",volume_class_{c}"));
        }
        out.push('\n');
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                i + 1,
                s.pred,
                s.recon,
                s.kl,
                s.diversity,
                s.total
            ));
            for v in &s.per_class_volume {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Per-epoch log: `epoch,pred,recon,kl,diversity,total,train_accuracy,test_accuracy,db,wall_seconds,volume_class_0..`.
    pub fn epochs_csv(&self) -> String {
        let k = self.epochs.first().map_or(0, |e| e.per_class_volume.len());
        let mut out = String::from(
            "epoch,pred,recon,kl,diversity,total,train_accuracy,test_accuracy,db,wall_seconds",
        );
        for c in 0..k {
            out.push_str(&format!(",volume_class_{c}"));
        }
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        for e in &self.epochs {
            let l = &e.loss;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                l.pred,
                l.recon,
                l.kl,
                l.diversity,
                l.total,
                e.train_accuracy,
                opt(e.test_accuracy),
                opt(e.db),
                e.wall_seconds
            ));
            for v in &e.per_class_volume {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

struct Optimizer {
    cfg: AdamConfig,
    t: u64,
    network: Vec<AdamState>,
    phi: AdamState,
    head: AdamState,
}

impl Optimizer {
    fn new(model: &mut Model, learning_rate: f64) -> Self {
        let network = model
            .network_params_mut()
            .iter()
            .map(|p| AdamState::new(p.value.len()))
            .collect();
        Optimizer {
            cfg: AdamConfig::with_learning_rate(learning_rate),
            t: 0,
            network,
            phi: AdamState::new(model.bank.phi.len()),
            head: AdamState::new(model.head.weights.len()),
        }
    }
}

/// Per-class volumes `|G_k|^{1/2}`; 0 for a class whose Gram matrix cannot be factored.
pub fn class_volumes(model: &Model, jitter: f64) -> Vec<f64> {
    (0..model.bank.num_classes)
        .map(|k| gramian(&model.bank, k, jitter).map_or(0.0, |g| g.volume()))
        .collect()
}

struct StepOutcome {
    breakdown: LossBreakdown,
    correct: usize,
}

fn train_step(
    model: &mut Model,
    opt: &mut Optimizer,
    cfg: &TrainConfig,
    images: &[f32],
    labels: &[usize],
    noise: &[f64],
    step: usize,
) -> Result<StepOutcome> {
    let b = labels.len();
    let eps = model.config.epsilon;
    let (mu32, logvar32, enc_cache) = model.encoder.forward(images, b);
    let mu: Vec<f64> = mu32.iter().map(|&v| v as f64).collect();
    let sigma: Vec<f64> = logvar32.iter().map(|&v| (0.5 * v as f64).exp()).collect();
    let batch = LatentBatch {
        mu: &mu,
        sigma: &sigma,
        noise,
        labels,
    };
    let z: Vec<f32> = batch.latent_codes().iter().map(|&v| v as f32).collect();
    let (recon_images, dec_cache) = model.decoder.forward(&z, b);
    let recon = reconstruction_loss(images, &recon_images, b);
    let out = latent_objective(
        cfg.variant,
        &cfg.weights,
        eps,
        &model.bank,
        &model.head,
        &batch,
        recon,
    )
    .map_err(|e| match e {
        Error::NonFiniteLoss { component } => Error::Divergence { step, component },
        other => other,
    })?;

    let scale = (2.0 * cfg.weights.vae_recon / b as f64) as f32;
    let drecon: Vec<f32> = recon_images
        .iter()
        .zip(images)
        .map(|(r, x)| scale * (r - x))
        .collect();
    let dz_dec: Vec<f64> = model
        .decoder
        .backward(&dec_cache, &drecon)
        .iter()
        .map(|&v| v as f64)
        .collect();
    let (dmu, dsigma) = out.grads.posterior(Some(&dz_dec), noise);
    let dmu32: Vec<f32> = dmu.iter().map(|&v| v as f32).collect();
    let dlogvar32: Vec<f32> = dsigma
        .iter()
        .zip(&sigma)
        .map(|(g, s)| (0.5 * g * s) as f32)
        .collect();
    model.encoder.backward(&enc_cache, &dmu32, &dlogvar32);

    opt.t += 1;
    let t = opt.t;
    for (param, state) in model.network_params_mut().into_iter().zip(&mut opt.network) {
        state.step_f32(&opt.cfg, t, &mut param.value, &param.grad);
        param.zero_grad();
    }
    opt.phi
        .step_f64(&opt.cfg, t, &mut model.bank.phi, &out.grads.phi);
    opt.head
        .step_f64(&opt.cfg, t, &mut model.head.weights, &out.grads.head);
    if model.bank.phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step,
            component: cfg.variant.diversity_name(),
        });
    }
    Ok(StepOutcome {
        breakdown: out.breakdown,
        correct: out.correct,
    })
}

fn mean_breakdown(steps: &[LossBreakdown]) -> LossBreakdown {
    let n = steps.len() as f64;
    let mut m = LossBreakdown::default();
    for s in steps {
        m.pred += s.pred / n;
        m.recon += s.recon / n;
        m.kl += s.kl / n;
        m.diversity += s.diversity / n;
        m.total += s.total / n;
    }
    m.per_class_volume = steps
        .last()
        .map(|s| s.per_class_volume.clone())
        .unwrap_or_default();
    m
}

/// Trains `model` in place on `data`, evaluating on `eval` every
/// `cfg.eval_every` epochs. With a `checkpoint_dir`, the final checkpoint and
/// run logs are written there.
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    data: &Dataset,
    eval: Option<&Dataset>,
) -> Result<RunRecord> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if data.shape != model.config.input_shape {
        return Err(Error::Config(format!(
            "data shape {:?} does not match model input shape {:?}",
            data.shape, model.config.input_shape
        )));
    }
    if data.num_classes > model.config.num_classes {
        return Err(Error::Config(format!(
            "data has {} classes, model has {}",
            data.num_classes, model.config.num_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(model, cfg.learning_rate);
    let d = model.config.latent_dim;
    let len = data.image_len();
    let mut record = RunRecord {
        variant: cfg.variant,
        epochs: Vec::with_capacity(cfg.epochs),
        steps: Vec::new(),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let first_step = record.steps.len();
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut images = Vec::with_capacity(chunk.len() * len);
            for &i in chunk {
                images.extend_from_slice(data.image(i));
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let noise: Vec<f64> = (0..chunk.len() * d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let out = train_step(model, &mut opt, cfg, &images, &labels, &noise, step)?;
            correct += out.correct;
            record.steps.push(out.breakdown);
        }
        let mut loss = mean_breakdown(&record.steps[first_step..]);
        loss.per_class_volume = class_volumes(model, cfg.weights.jitter);
        let (test_accuracy, db) = match eval {
            Some(ev)
                if cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) =>
            {
                let (acc, report) = evaluate(model, ev)?;
                (Some(acc), report.db)
            }
            _ => (None, None),
        };
        let rec = EpochRecord {
            epoch,
            per_class_volume: loss.per_class_volume.clone(),
            loss,
            train_accuracy: correct as f64 / data.len() as f64,
            test_accuracy,
            db,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch={} total={:.4} pred={:.4} train_acc={:.4} test_acc={} db={} secs={:.1}",
            epoch,
            rec.loss.total,
            rec.loss.pred,
            rec.train_accuracy,
            rec.test_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
            rec.db.map_or("-".into(), |v| format!("{v:.4}")),
            rec.wall_seconds
        );
        record.epochs.push(rec);
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        write_run_outputs(dir, model, cfg, &record)?;
    }
    Ok(record)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `model.ckpt`, `epochs.csv` and `steps.csv` into `dir`.
pub fn write_run_outputs(
    dir: &Path,
    model: &Model,
    cfg: &TrainConfig,
    record: &RunRecord,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(
        &dir.join("model.ckpt"),
        &Checkpoint::new(model.clone(), cfg.variant),
    )?;
    write_file(&dir.join("epochs.csv"), &record.epochs_csv())?;
    write_file(&dir.join("steps.csv"), &record.steps_csv())
}

/// Class predictions (argmax, `z = mu`) for every image.
pub fn predict_labels(model: &Model, data: &Dataset) -> Result<Vec<usize>> {
    Ok(model
        .predict(&data.images)?
        .iter()
        .map(|p| argmax(p))
        .collect())
}

/// Deterministic evaluation with `z = mu`: accuracy plus a metrics report.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, MetricsReport)> {
    if data.shape != model.config.input_shape {
        return Err(Error::Config(format!(
            "data shape {:?} does not match model input shape {:?}",
            data.shape, model.config.input_shape
        )));
    }
    let eps = model.config.epsilon;
    let embeddings = model.embed(&data.images)?;
    let predictions: Vec<usize> = embeddings
        .iter()
        .map(|z| argmax(&model.classify(&model.similarity(&LatentCode { z: z.clone() }))))
        .collect();
    let hits = predictions
        .iter()
        .zip(&data.labels)
        .filter(|(p, l)| p == l)
        .count();
    let accuracy = hits as f64 / data.len() as f64;
    let assignment = assign_global(&embeddings, &model.bank, eps);
    let (db, db_excluded) = match db_index(&embeddings, &model.bank, &assignment) {
        Ok(s) => (Some(s.value), s.excluded),
        Err(e) => {
            log::warn!("Davies-Bouldin index undefined: {e}");
            (None, Vec::new())
        }
    };
    let mut report = MetricsReport {
        accuracy,
        num_items: data.len(),
        db,
        db_excluded,
        per_class_volume: class_volumes(model, LossWeights::default().jitter),
        active_prototypes: model.bank.active_count(),
        total_prototypes: model.bank.active.len(),
        entropy: None,
        group_distribution: None,
        group_accuracy: None,
        accuracy_gap: None,
    };
    if let Some(groups) = &data.group_labels {
        let dist = prototype_group_distribution(&embeddings, Some(groups), &model.bank, eps)?;
        report.entropy = Some(combinatorial_diversity(&dist));
        report.group_distribution = Some(dist.probabilities);
        let num_groups = groups.iter().max().map_or(0, |g| g + 1);
        let accs: Vec<Option<f64>> = (0..num_groups)
            .map(|g| group_accuracy(&predictions, &data.labels, groups, g).ok())
            .collect();
        let present: Vec<(usize, f64)> = accs
            .iter()
            .enumerate()
            .filter_map(|(g, a)| a.map(|a| (g, a)))
            .collect();
        if present.len() >= 2 {
            let best = present
                .iter()
                .copied()
                .fold(present[0], |b, x| if x.1 > b.1 { x } else { b });
            let worst = present
                .iter()
                .copied()
                .fold(present[0], |w, x| if x.1 < w.1 { x } else { w });
            report.accuracy_gap = Some(AccuracyGap {
                group_a: best.0,
                group_b: worst.0,
                gap: best.1 - worst.1,
            });
        }
        report.group_accuracy = Some(accs);
    }
    Ok((accuracy, report))
}
