use std::borrow::Cow;

use rand::seq::SliceRandom;

use super::loss::layer_cos_loss_grad;
use super::map::{anomaly_map, AnomalyMap};
use crate::datagen::{ImageSample, TrainView};
use crate::models::{Adam, FeatureExtractor, FeaturePyramid, Params, StudentArch, StudentNet};
use crate::seeds::rng_for;
use crate::{Error, Result};

/// Optimizer and loop settings shared by every trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            lr: 0.005,
            batch_size: 8,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Per-step batch losses plus per-epoch means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub step_losses: Vec<f64>,
    pub epoch_means: Vec<f64>,
}

impl LossHistory {
    pub(crate) fn push_epoch(&mut self, losses: &[f64]) {
        self.step_losses.extend_from_slice(losses);
        let mean = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        self.epoch_means.push(mean);
    }
}

/// Shuffled copy of `members` for one epoch of one training stream.
///
/// The plain trainer uses stream 0. A domain student with index `k` uses stream
/// `k`, so a single-domain run replays exactly the batches of the plain trainer.
pub fn batch_order(members: &[usize], seed: u64, epoch: usize, stream: usize) -> Vec<usize> {
    let mut order = members.to_vec();
    let mut rng = rng_for(seed, &["batches", &epoch.to_string(), &stream.to_string()]);
    order.shuffle(&mut rng);
    order
}

/// One sample's contribution to a step: a student input and weighted targets.
pub(crate) struct Objective<'a> {
    pub input: Cow<'a, FeaturePyramid>,
    pub targets: Vec<(&'a FeaturePyramid, f64)>,
}

/// Forward/backward over a batch and one Adam update.
///
/// Returns the mean over the batch of `sum_j w_j * loss(target_j, student(input))`,
/// evaluated before the update. A non-finite loss aborts without touching `params`.
pub(crate) fn minibatch_step(
    arch: &StudentArch,
    params: &mut Params,
    adam: &mut Adam,
    batch: &[Objective<'_>],
) -> Result<f64> {
    let mut grad = params.zeros_like();
    let mut total = 0.0;
    for obj in batch {
        let (out, trace) = arch.forward_traced(params, &obj.input)?;
        let mut grad_out = out.zeros_like();
        for &(target, weight) in &obj.targets {
            let (report, g) = layer_cos_loss_grad(target, &out)?;
            total += weight * report.total;
            grad_out.add_scaled(&g, weight);
        }
        arch.backward(params, &trace, &grad_out, &mut grad);
    }
    let n = batch.len().max(1) as f64;
    let mean = total / n;
    if !mean.is_finite() || !grad.is_finite() {
        return Err(Error::Training {
            context: "step".into(),
            message: format!("non-finite loss {mean}"),
            last_finite: Some(Box::new(params.clone())),
        });
    }
    for g in grad.values_mut() {
        *g /= n;
    }
    adam.step(params, &grad);
    Ok(mean)
}

/// Teacher pyramids of every sample, in order.
pub fn extract_features<'a>(
    teacher: &dyn FeatureExtractor,
    images: impl IntoIterator<Item = &'a ndarray::Array3<f64>>,
) -> Result<Vec<FeaturePyramid>> {
    images.into_iter().map(|img| teacher.extract(img)).collect()
}

/// Plain reverse distillation on precomputed teacher features.
pub fn train_rd_features(
    features: &[FeaturePyramid],
    arch: &StudentArch,
    params: &mut Params,
    settings: &TrainSettings,
) -> Result<LossHistory> {
    train_rd_features_with(features, arch, params, settings, &mut |_, _, _| Ok(()))
}

/// Called after each epoch with the epoch index, its step losses and the current parameters.
pub type EpochHook<'a> = dyn FnMut(usize, &[f64], &Params) -> Result<()> + 'a;

/// [`train_rd_features`] with a hook that sees each epoch's index, step losses
/// and the parameters after that epoch.
pub fn train_rd_features_with(
    features: &[FeaturePyramid],
    arch: &StudentArch,
    params: &mut Params,
    settings: &TrainSettings,
    on_epoch: &mut EpochHook<'_>,
) -> Result<LossHistory> {
    settings.validate()?;
    arch.check_params(params)?;
    if features.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let members: Vec<usize> = (0..features.len()).collect();
    let mut adam = Adam::new(params.len(), settings.lr);
    let mut history = LossHistory::default();
    for epoch in 0..settings.epochs {
        let order = batch_order(&members, settings.seed, epoch, 0);
        let mut losses = Vec::with_capacity(order.len().div_ceil(settings.batch_size));
        for (step, chunk) in order.chunks(settings.batch_size).enumerate() {
            let batch: Vec<Objective> = chunk
                .iter()
                .map(|&i| Objective {
                    input: Cow::Borrowed(&features[i]),
                    targets: vec![(&features[i], 1.0)],
                })
                .collect();
            let loss = minibatch_step(arch, params, &mut adam, &batch)
                .map_err(|e| e.with_training_context(&format!("rd/epoch {epoch}/batch {step}")))?;
            losses.push(loss);
        }
        history.push_epoch(&losses);
        on_epoch(epoch, &losses, params)?;
    }
    Ok(history)
}

/// Trains `student` to reconstruct the teacher's pyramids of the unlabeled training view.
pub fn train_rd(
    view: &TrainView<'_>,
    teacher: &dyn FeatureExtractor,
    student: &mut StudentNet,
    settings: &TrainSettings,
) -> Result<LossHistory> {
    let features = extract_features(teacher, view.iter().map(|s| s.pixels()))?;
    let mut params = student.clone_params();
    let history = train_rd_features(&features, student.arch(), &mut params, settings)?;
    student.load_params(params)?;
    Ok(history)
}

/// Anomaly map of every image under the given student parameters.
pub fn score_images<'a>(
    images: impl IntoIterator<Item = &'a ndarray::Array3<f64>>,
    teacher: &dyn FeatureExtractor,
    arch: &StudentArch,
    params: &Params,
    smooth_sigma: f64,
) -> Result<Vec<AnomalyMap>> {
    images
        .into_iter()
        .map(|img| {
            let ft = teacher.extract(img)?;
            let fs = arch.forward(params, &ft)?;
            let (_, h, w) = img.dim();
            anomaly_map(&ft, &fs, (h, w), smooth_sigma)
        })
        .collect()
}

/// Anomaly maps of a labeled sample set, in order.
pub fn score_dataset(
    samples: &[ImageSample],
    teacher: &dyn FeatureExtractor,
    student: &StudentNet,
    smooth_sigma: f64,
) -> Result<Vec<AnomalyMap>> {
    score_images(
        samples.iter().map(|s| s.pixels()),
        teacher,
        student.arch(),
        student.params(),
        smooth_sigma,
    )
}
