use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::domains::{compute_confidence, construct_domains, DomainPartition};
use super::schedule::CddSchedules;
use super::select::{affinity_select, perturb_teacher_features, PseudoSelection, Strategy};
use crate::datagen::FuadSplit;
use crate::distill::{batch_order, extract_features, minibatch_step, Objective, TrainSettings};
use crate::models::{Adam, FeatureExtractor, FeaturePyramid, Params, StudentArch};
use crate::seeds::{derive_seed, rng_for};
use crate::{Error, Result};

/// Batch-order stream of the cross-domain phase. Domain students use their index.
pub const CROSS_STREAM: usize = usize::MAX - 1;
/// Batch-order stream of the high-confidence phase.
pub const HC_STREAM: usize = usize::MAX;

/// Passes over the data per epoch for each training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InnerPasses {
    pub domain: usize,
    pub cross: usize,
    pub hc: usize,
}

impl Default for InnerPasses {
    fn default() -> Self {
        Self {
            domain: 1,
            cross: 1,
            hc: 1,
        }
    }
}

/// Everything the cross-domain trainer needs besides the schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct CddOptions {
    pub strategy: Strategy,
    /// Learning rate, batch size and seed. Its `epochs` field is ignored; the
    /// schedules own the epoch count.
    pub train: TrainSettings,
    pub passes: InnerPasses,
}

impl Default for CddOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Consensual,
            train: TrainSettings::default(),
            passes: InnerPasses::default(),
        }
    }
}

/// Per-epoch record of the cross-domain trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTelemetry {
    pub epoch: usize,
    pub k: usize,
    pub r: f64,
    pub lambda: f64,
    pub mean_confidence: f64,
    pub n_high_conf: usize,
    pub domain_sizes: Vec<usize>,
    /// Uses the hidden labels; never fed back into training.
    pub domain_anomaly_ratios: Vec<f64>,
    pub high_conf_anomaly_ratio: f64,
    pub split_anomaly_ratio: f64,
    pub domain_losses: Vec<f64>,
    pub cross_loss: f64,
    pub hc_loss: f64,
    pub cross_steps: usize,
    pub hc_steps: usize,
    /// How often each domain's student was chosen as a pseudo-normal source.
    pub selection_counts: Vec<usize>,
    pub domain_step_losses: Vec<Vec<f64>>,
    pub cross_step_losses: Vec<f64>,
    pub hc_step_losses: Vec<f64>,
}

/// Final global parameters and the epoch log.
#[derive(Debug, Clone)]
pub struct CddOutcome {
    pub params: Params,
    pub telemetry: Vec<EpochTelemetry>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Student outputs for every cached teacher pyramid.
pub fn forward_all(
    arch: &StudentArch,
    params: &Params,
    features: &[FeaturePyramid],
) -> Result<Vec<FeaturePyramid>> {
    features.iter().map(|f| arch.forward(params, f)).collect()
}

/// Trains a copy of `init` on `members` against the teacher, regularized toward
/// the frozen previous-global outputs with weight `lambda`. Fresh Adam moments.
///
/// Batches follow `batch_order(members, seed, epoch * passes + pass, stream)`.
/// Returns the new parameters and per-step losses.
#[allow(clippy::too_many_arguments)]
pub fn train_domain_student(
    arch: &StudentArch,
    init: &Params,
    members: &[usize],
    teacher_features: &[FeaturePyramid],
    prev_global_outputs: &[FeaturePyramid],
    lambda: f64,
    settings: &TrainSettings,
    passes: usize,
    epoch: usize,
    stream: usize,
) -> Result<(Params, Vec<f64>)> {
    if members.is_empty() {
        return Err(Error::Input("domain has no members".into()));
    }
    let mut params = init.clone();
    let mut adam = Adam::new(params.len(), settings.lr);
    let mut losses = Vec::new();
    for pass in 0..passes {
        let order = batch_order(members, settings.seed, epoch * passes + pass, stream);
        for chunk in order.chunks(settings.batch_size) {
            let batch: Vec<Objective> = chunk
                .iter()
                .map(|&i| {
                    let mut targets = vec![(&teacher_features[i], 1.0)];
                    if lambda != 0.0 {
                        targets.push((&prev_global_outputs[i], lambda));
                    }
                    Objective {
                        input: Cow::Borrowed(&teacher_features[i]),
                        targets,
                    }
                })
                .collect();
            let step = losses.len();
            let loss = minibatch_step(arch, &mut params, &mut adam, &batch)
                .map_err(|e| e.with_training_context(&format!("domain/step {step}")))?;
            losses.push(loss);
        }
    }
    Ok((params, losses))
}

/// Losses and selection statistics of one cross-domain phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrossReport {
    pub step_losses: Vec<f64>,
    pub selection_counts: Vec<usize>,
}

/// Pseudo-normal selections for every `(domain, member)` pair, in domain order.
pub fn select_pseudo_targets(
    partition: &DomainPartition,
    domain_outputs: &[Vec<FeaturePyramid>],
    prev_global_outputs: &[FeaturePyramid],
    strategy: Strategy,
) -> Result<Vec<(usize, PseudoSelection)>> {
    let mut out = Vec::new();
    for k in 0..partition.k() {
        for i in partition.domain(k) {
            let candidates: Vec<&FeaturePyramid> = domain_outputs.iter().map(|d| &d[i]).collect();
            out.push((
                i,
                affinity_select(&candidates, &prev_global_outputs[i], strategy, k)?,
            ));
        }
    }
    Ok(out)
}

/// Trains the global student to map perturbed teacher features of each domain's
/// samples onto pseudo-normal features from out-of-domain students.
///
/// `domain_outputs[h][i]` is student `h`'s pyramid for sample `i`. Noise is
/// resampled at every step. Targets are fixed arrays, so no gradient reaches
/// the domain students.
#[allow(clippy::too_many_arguments)]
pub fn train_global_cross(
    arch: &StudentArch,
    params: &mut Params,
    adam: &mut Adam,
    partition: &DomainPartition,
    domain_outputs: &[Vec<FeaturePyramid>],
    teacher_features: &[FeaturePyramid],
    prev_global_outputs: &[FeaturePyramid],
    strategy: Strategy,
    sigma_noise: f64,
    settings: &TrainSettings,
    passes: usize,
    epoch: usize,
) -> Result<CrossReport> {
    if domain_outputs.len() != partition.k() {
        return Err(Error::Input(format!(
            "{} domain students for {} domains",
            domain_outputs.len(),
            partition.k()
        )));
    }
    let items = select_pseudo_targets(partition, domain_outputs, prev_global_outputs, strategy)?;
    let mut report = CrossReport {
        selection_counts: vec![0; partition.k()],
        ..CrossReport::default()
    };
    for (_, sel) in &items {
        for &(h, _) in &sel.selected {
            report.selection_counts[h] += 1;
        }
    }
    let positions: Vec<usize> = (0..items.len()).collect();
    let mut noise = rng_for(settings.seed, &["noise", &epoch.to_string()]);
    for pass in 0..passes {
        let order = batch_order(
            &positions,
            settings.seed,
            epoch * passes + pass,
            CROSS_STREAM,
        );
        for chunk in order.chunks(settings.batch_size) {
            let batch: Vec<Objective> = chunk
                .iter()
                .filter(|&&j| !items[j].1.selected.is_empty())
                .map(|&j| {
                    let (i, sel) = &items[j];
                    Objective {
                        input: Cow::Owned(perturb_teacher_features(
                            &teacher_features[*i],
                            sigma_noise,
                            &mut noise,
                        )),
                        targets: sel
                            .selected
                            .iter()
                            .map(|&(h, w)| (&domain_outputs[h][*i], w))
                            .collect(),
                    }
                })
                .collect();
            if batch.is_empty() {
                continue;
            }
            let step = report.step_losses.len();
            let loss = minibatch_step(arch, params, adam, &batch)
                .map_err(|e| e.with_training_context(&format!("cross/step {step}")))?;
            report.step_losses.push(loss);
        }
    }
    Ok(report)
}

/// Direct teacher supervision of the global student on the high-confidence set.
/// An empty set leaves the parameters untouched and takes no steps.
#[allow(clippy::too_many_arguments)]
pub fn train_global_hc(
    arch: &StudentArch,
    params: &mut Params,
    adam: &mut Adam,
    high_conf: &[usize],
    teacher_features: &[FeaturePyramid],
    settings: &TrainSettings,
    passes: usize,
    epoch: usize,
) -> Result<Vec<f64>> {
    let mut members = high_conf.to_vec();
    members.sort_unstable();
    let mut losses = Vec::new();
    if members.is_empty() {
        return Ok(losses);
    }
    for pass in 0..passes {
        let order = batch_order(&members, settings.seed, epoch * passes + pass, HC_STREAM);
        for chunk in order.chunks(settings.batch_size) {
            let batch: Vec<Objective> = chunk
                .iter()
                .map(|&i| Objective {
                    input: Cow::Borrowed(&teacher_features[i]),
                    targets: vec![(&teacher_features[i], 1.0)],
                })
                .collect();
            let step = losses.len();
            let loss = minibatch_step(arch, params, adam, &batch)
                .map_err(|e| e.with_training_context(&format!("hc/step {step}")))?;
            losses.push(loss);
        }
    }
    Ok(losses)
}

fn anomaly_ratio(members: &[usize], labels: &[bool]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    members.iter().filter(|&&i| labels[i]).count() as f64 / members.len() as f64
}

/// Full cross-domain distillation starting from `init` as the global student.
///
/// Per epoch: confidence against the previous global student, domain
/// construction, one regularized student per domain, cross-domain pseudo-normal
/// distillation into the global student, then high-confidence teacher
/// supervision. The global student and its optimizer state persist across
/// epochs. Training reads only the label-free view; hidden labels feed the
/// telemetry ratios alone. `on_epoch` sees each epoch's record and the global
/// parameters after that epoch.
pub fn run_cdd(
    split: &FuadSplit,
    teacher: &dyn FeatureExtractor,
    arch: &StudentArch,
    init: &Params,
    schedules: &CddSchedules,
    options: &CddOptions,
    on_epoch: &mut dyn FnMut(&EpochTelemetry, &Params) -> Result<()>,
) -> Result<CddOutcome> {
    schedules.validate()?;
    options.train.validate()?;
    arch.check_params(init)?;
    if options.strategy != Strategy::All && schedules.k_schedule.iter().any(|&(_, k)| k == 1) {
        return Err(Error::config(
            "cdd.strategy",
            format!(
                "strategy `{}` needs K >= 2 in every phase",
                options.strategy.as_str()
            ),
        ));
    }
    let view = split.train_view();
    if view.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let ids = view.ids();
    let features = extract_features(teacher, view.iter().map(|s| s.pixels()))?;
    let labels: Vec<bool> = split
        .train_eval_only()
        .iter()
        .map(|s| s.label().is_anomalous())
        .collect();
    let all: Vec<usize> = (0..features.len()).collect();
    let settings = &options.train;
    let passes = options.passes;
    let domain_seed = derive_seed(settings.seed, &["domains"]);

    let mut global = init.clone();
    let mut adam = Adam::new(global.len(), settings.lr);
    let mut telemetry = Vec::with_capacity(schedules.epochs);
    for epoch in 0..schedules.epochs {
        let ctx = |phase: &str| format!("cdd/epoch {epoch}/{phase}");
        let prev = global.clone();
        let prev_out = forward_all(arch, &prev, &features)?;
        let conf = compute_confidence(epoch, &ids, &features, &prev_out)?;
        let (r, k, lambda) = (
            schedules.r(epoch),
            schedules.k(epoch),
            schedules.lambda(epoch),
        );
        let partition = construct_domains(&conf, r, k, domain_seed)?;

        let mut domain_outputs = Vec::with_capacity(k);
        let mut domain_step_losses = Vec::with_capacity(k);
        for d in 0..k {
            let members = partition.domain(d);
            let (params, losses) = if members.is_empty() {
                (prev.clone(), Vec::new())
            } else {
                train_domain_student(
                    arch,
                    &prev,
                    &members,
                    &features,
                    &prev_out,
                    lambda,
                    settings,
                    passes.domain,
                    epoch,
                    d,
                )
                .map_err(|e| e.with_training_context(&ctx(&format!("domain {d}"))))?
            };
            if k >= 2 {
                domain_outputs.push(forward_all(arch, &params, &features)?);
            }
            domain_step_losses.push(losses);
        }

        let cross = if k >= 2 {
            train_global_cross(
                arch,
                &mut global,
                &mut adam,
                &partition,
                &domain_outputs,
                &features,
                &prev_out,
                options.strategy,
                schedules.sigma_noise,
                settings,
                passes.cross,
                epoch,
            )
            .map_err(|e| e.with_training_context(&ctx("cross")))?
        } else {
            CrossReport {
                step_losses: Vec::new(),
                selection_counts: vec![0; k],
            }
        };
        drop(domain_outputs);

        let hc_losses = train_global_hc(
            arch,
            &mut global,
            &mut adam,
            partition.high_conf(),
            &features,
            settings,
            passes.hc,
            epoch,
        )
        .map_err(|e| e.with_training_context(&ctx("hc")))?;

        let record = EpochTelemetry {
            epoch,
            k,
            r,
            lambda,
            mean_confidence: mean(conf.scores()),
            n_high_conf: partition.high_conf().len(),
            domain_sizes: partition.domain_sizes(),
            domain_anomaly_ratios: (0..k)
                .map(|d| anomaly_ratio(&partition.domain(d), &labels))
                .collect(),
            high_conf_anomaly_ratio: anomaly_ratio(partition.high_conf(), &labels),
            split_anomaly_ratio: anomaly_ratio(&all, &labels),
            domain_losses: domain_step_losses.iter().map(|l| mean(l)).collect(),
            cross_loss: mean(&cross.step_losses),
            hc_loss: mean(&hc_losses),
            cross_steps: cross.step_losses.len(),
            hc_steps: hc_losses.len(),
            selection_counts: cross.selection_counts,
            domain_step_losses,
            cross_step_losses: cross.step_losses,
            hc_step_losses: hc_losses,
        };
        on_epoch(&record, &global)?;
        telemetry.push(record);
    }
    Ok(CddOutcome {
        params: global,
        telemetry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdd::{equal_phases, ConfidenceTable, LambdaMode};
    use crate::datagen::{build_fuad_split, generate_corpus, GenCounts, GenSpec, Setting};
    use crate::distill::{layer_cos_loss, train_rd_features};
    use crate::models::{ModelConfig, TeacherNet};

    fn small_config() -> ModelConfig {
        ModelConfig {
            channels: [4, 6, 8],
            bottleneck: 4,
            ..ModelConfig::default()
        }
    }

    fn split(n_normal: usize, r_noise: f64, seed: u64) -> FuadSplit {
        let corpus = generate_corpus(&GenSpec {
            counts: GenCounts {
                n_train_normal: n_normal,
                n_test_normal: 4,
                n_anomalous_pool: 12,
            },
            seed,
            ..GenSpec::default()
        })
        .unwrap();
        build_fuad_split(
            &corpus.train_normals,
            &corpus.test_normals,
            &corpus.anomalies,
            r_noise,
            Setting::Overlap,
            seed,
        )
        .unwrap()
    }

    struct Fixture {
        arch: StudentArch,
        init: Params,
        features: Vec<FeaturePyramid>,
    }

    fn fixture(n: usize) -> Fixture {
        let cfg = small_config();
        let teacher = TeacherNet::build(&cfg, 1).unwrap();
        let s = split(n, 0.0, 3);
        let features =
            extract_features(&teacher, s.train_view().iter().map(|x| x.pixels())).unwrap();
        let arch = StudentArch::new(&cfg).unwrap();
        let init = arch.init_params(2);
        Fixture {
            arch,
            init,
            features,
        }
    }

    fn settings(batch_size: usize) -> TrainSettings {
        TrainSettings {
            batch_size,
            seed: 5,
            ..TrainSettings::default()
        }
    }

    fn partition(n: usize, k: usize) -> DomainPartition {
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        construct_domains(&ConfidenceTable::new(0, ids, scores).unwrap(), 0.0, k, 11).unwrap()
    }

    #[test]
    fn lambda_zero_domain_student_replays_plain_training() {
        let fx = fixture(16);
        let members: Vec<usize> = (0..16).collect();
        let s = settings(4);
        let (p, losses) = train_domain_student(
            &fx.arch,
            &fx.init,
            &members,
            &fx.features,
            &fx.features,
            0.0,
            &s,
            1,
            0,
            0,
        )
        .unwrap();
        let mut rd = fx.init.clone();
        let hist = train_rd_features(
            &fx.features,
            &fx.arch,
            &mut rd,
            &TrainSettings { epochs: 1, ..s },
        )
        .unwrap();
        assert_eq!(losses.len(), hist.step_losses.len());
        for (a, b) in losses.iter().zip(&hist.step_losses) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
        assert_eq!(p.digest(), rd.digest());
    }

    #[test]
    fn lambda_one_with_teacher_as_prev_doubles_the_loss() {
        let fx = fixture(8);
        let members: Vec<usize> = (0..8).collect();
        let s = settings(8);
        let run = |lambda: f64| {
            train_domain_student(
                &fx.arch,
                &fx.init,
                &members,
                &fx.features,
                &fx.features,
                lambda,
                &s,
                1,
                0,
                0,
            )
            .unwrap()
            .1
        };
        let (single, double) = (run(0.0), run(1.0));
        assert_eq!(single.len(), 1);
        assert!((double[0] - 2.0 * single[0]).abs() <= 1e-12 * single[0].abs().max(1.0));
    }

    #[test]
    fn empty_domain_is_an_input_error() {
        let fx = fixture(4);
        let r = train_domain_student(
            &fx.arch,
            &fx.init,
            &[],
            &fx.features,
            &fx.features,
            0.0,
            &settings(2),
            1,
            0,
            0,
        );
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn cross_phase_with_teacher_targets_and_no_noise_is_plain_training() {
        let fx = fixture(12);
        let part = partition(12, 2);
        let s = settings(4);
        let domain_outputs = vec![fx.features.clone(), fx.features.clone()];
        let mut params = fx.init.clone();
        let mut adam = Adam::new(params.len(), s.lr);
        let report = train_global_cross(
            &fx.arch,
            &mut params,
            &mut adam,
            &part,
            &domain_outputs,
            &fx.features,
            &fx.features,
            Strategy::All,
            0.0,
            &s,
            1,
            0,
        )
        .unwrap();

        // Oracle: the same batches as teacher-reconstruction steps.
        let items: Vec<usize> = (0..part.k()).flat_map(|k| part.domain(k)).collect();
        let positions: Vec<usize> = (0..items.len()).collect();
        let mut oracle = fx.init.clone();
        let mut oracle_adam = Adam::new(oracle.len(), s.lr);
        let mut expect = Vec::new();
        for chunk in batch_order(&positions, s.seed, 0, CROSS_STREAM).chunks(s.batch_size) {
            let mean_loss = chunk
                .iter()
                .map(|&j| {
                    let f = &fx.features[items[j]];
                    layer_cos_loss(f, &fx.arch.forward(&oracle, f).unwrap())
                        .unwrap()
                        .total
                })
                .sum::<f64>()
                / chunk.len() as f64;
            expect.push(mean_loss);
            let batch: Vec<Objective> = chunk
                .iter()
                .map(|&j| Objective {
                    input: Cow::Borrowed(&fx.features[items[j]]),
                    targets: vec![(&fx.features[items[j]], 1.0)],
                })
                .collect();
            minibatch_step(&fx.arch, &mut oracle, &mut oracle_adam, &batch).unwrap();
        }
        assert_eq!(report.step_losses.len(), expect.len());
        for (a, b) in report.step_losses.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
        assert_eq!(
            report.selection_counts,
            vec![part.domain(1).len(), part.domain(0).len()]
        );
        assert_eq!(params.digest(), oracle.digest());
    }

    #[test]
    fn cross_phase_starts_at_zero_when_global_is_the_pseudo_source() {
        let fx = fixture(8);
        let part = partition(8, 2);
        let s = settings(8);
        let global_out = forward_all(&fx.arch, &fx.init, &fx.features).unwrap();
        let domain_outputs = vec![global_out.clone(), global_out.clone()];
        let mut params = fx.init.clone();
        let mut adam = Adam::new(params.len(), s.lr);
        let report = train_global_cross(
            &fx.arch,
            &mut params,
            &mut adam,
            &part,
            &domain_outputs,
            &fx.features,
            &global_out,
            Strategy::Consensual,
            0.0,
            &s,
            1,
            0,
        )
        .unwrap();
        assert!(
            report.step_losses[0].abs() < 1e-12,
            "{}",
            report.step_losses[0]
        );
    }

    #[test]
    fn cross_phase_never_touches_its_targets() {
        let fx = fixture(9);
        let part = partition(9, 3);
        let s = settings(4);
        let domain_params: Vec<Params> = (0..3).map(|h| fx.arch.init_params(10 + h)).collect();
        let domain_outputs: Vec<Vec<FeaturePyramid>> = domain_params
            .iter()
            .map(|p| forward_all(&fx.arch, p, &fx.features).unwrap())
            .collect();
        let prev = fx.arch.init_params(20);
        let prev_out = forward_all(&fx.arch, &prev, &fx.features).unwrap();
        let snapshot = (
            domain_params.clone(),
            domain_outputs.clone(),
            prev.digest(),
            prev_out.clone(),
        );
        let mut params = prev.clone();
        let mut adam = Adam::new(params.len(), s.lr);
        for strategy in Strategy::ALL {
            train_global_cross(
                &fx.arch,
                &mut params,
                &mut adam,
                &part,
                &domain_outputs,
                &fx.features,
                &prev_out,
                strategy,
                0.2,
                &s,
                2,
                0,
            )
            .unwrap();
        }
        assert_ne!(params.digest(), prev.digest());
        for (a, b) in domain_params.iter().zip(&snapshot.0) {
            assert_eq!(a.digest(), b.digest());
        }
        assert_eq!(domain_outputs, snapshot.1);
        assert_eq!(prev.digest(), snapshot.2);
        assert_eq!(prev_out, snapshot.3);
    }

    #[test]
    fn mismatched_student_count_is_rejected() {
        let fx = fixture(6);
        let part = partition(6, 3);
        let mut params = fx.init.clone();
        let mut adam = Adam::new(params.len(), 0.01);
        let r = train_global_cross(
            &fx.arch,
            &mut params,
            &mut adam,
            &part,
            std::slice::from_ref(&fx.features),
            &fx.features,
            &fx.features,
            Strategy::All,
            0.0,
            &settings(2),
            1,
            0,
        );
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn empty_high_confidence_set_is_a_no_op() {
        let fx = fixture(4);
        let mut params = fx.init.clone();
        let mut adam = Adam::new(params.len(), 0.01);
        let losses = train_global_hc(
            &fx.arch,
            &mut params,
            &mut adam,
            &[],
            &fx.features,
            &settings(2),
            3,
            0,
        )
        .unwrap();
        assert!(losses.is_empty());
        assert_eq!(params.digest(), fx.init.digest());
    }

    #[test]
    fn one_high_confidence_sample_is_fitted() {
        let cfg = ModelConfig::default();
        let teacher = TeacherNet::build(&cfg, 1).unwrap();
        let s = split(3, 0.0, 3);
        let features =
            extract_features(&teacher, s.train_view().iter().map(|x| x.pixels())).unwrap();
        let arch = StudentArch::new(&cfg).unwrap();
        let init = arch.init_params(2);
        let mut params = init.clone();
        let mut adam = Adam::new(params.len(), 0.005);
        let losses = train_global_hc(
            &arch,
            &mut params,
            &mut adam,
            &[1],
            &features,
            &settings(8),
            300,
            0,
        )
        .unwrap();
        assert_eq!(losses.len(), 300);
        let last = layer_cos_loss(&features[1], &arch.forward(&params, &features[1]).unwrap())
            .unwrap()
            .total;
        assert!(last < 0.05, "final loss {last}");
        assert!(last < losses[0]);
    }

    fn collapse_schedules(epochs: usize) -> CddSchedules {
        CddSchedules {
            epochs,
            r_normal: 0.0,
            sigma_noise: 0.0,
            k_schedule: equal_phases(&[1]),
            lambda_mode: LambdaMode::Zero,
            ..CddSchedules::default()
        }
    }

    #[test]
    fn single_domain_run_replays_plain_training() {
        let s = split(24, 0.1, 6);
        let cfg = small_config();
        let teacher = TeacherNet::build(&cfg, 1).unwrap();
        let arch = StudentArch::new(&cfg).unwrap();
        let init = arch.init_params(2);
        let options = CddOptions {
            strategy: Strategy::All,
            train: settings(4),
            passes: InnerPasses::default(),
        };
        let out = run_cdd(
            &s,
            &teacher,
            &arch,
            &init,
            &collapse_schedules(1),
            &options,
            &mut |_, _| Ok(()),
        )
        .unwrap();
        let features =
            extract_features(&teacher, s.train_view().iter().map(|x| x.pixels())).unwrap();
        let mut rd = init.clone();
        let hist = train_rd_features(
            &features,
            &arch,
            &mut rd,
            &TrainSettings {
                epochs: 1,
                ..settings(4)
            },
        )
        .unwrap();
        let cdd = &out.telemetry[0].domain_step_losses[0];
        assert_eq!(cdd.len(), hist.step_losses.len());
        for (a, b) in cdd.iter().zip(&hist.step_losses) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
        // Nothing reaches the global student without a cross or confident phase.
        assert_eq!(out.params.digest(), init.digest());
    }

    #[test]
    fn schedules_drive_the_epochs() {
        let s = split(20, 0.1, 7);
        let cfg = small_config();
        let teacher = TeacherNet::build(&cfg, 1).unwrap();
        let before = teacher.param_digest();
        let arch = StudentArch::new(&cfg).unwrap();
        let init = arch.init_params(2);
        let schedules = CddSchedules {
            epochs: 4,
            ..CddSchedules::default()
        };
        let options = CddOptions {
            train: settings(8),
            ..CddOptions::default()
        };
        let mut seen = Vec::new();
        let out = run_cdd(
            &s,
            &teacher,
            &arch,
            &init,
            &schedules,
            &options,
            &mut |t, p| {
                seen.push((t.epoch, p.digest()));
                Ok(())
            },
        )
        .unwrap();
        let ks: Vec<usize> = out.telemetry.iter().map(|t| t.k).collect();
        assert_eq!(ks, vec![2, 3, 3, 2]);
        let first = &out.telemetry[0];
        assert_eq!(
            (first.r, first.lambda, first.n_high_conf, first.hc_steps),
            (0.0, 0.0, 0, 0)
        );
        for t in &out.telemetry {
            // Every domain holds the confident set plus its own low-confidence shard.
            let total: usize = t.domain_sizes.iter().sum();
            assert_eq!(total, t.k * t.n_high_conf + 22 - t.n_high_conf);
            assert_eq!(t.selection_counts.iter().sum::<usize>(), total);
            assert!((t.split_anomaly_ratio - s.realized_ratio()).abs() < 1e-12);
            assert!(t.cross_steps > 0);
        }
        assert!(out.telemetry[3].n_high_conf > 0);
        assert_eq!(seen.len(), 4);
        assert_eq!(seen[3].1, out.params.digest());
        assert_eq!(teacher.param_digest(), before);
    }

    #[test]
    fn runs_are_deterministic() {
        let s = split(12, 0.1, 8);
        let cfg = small_config();
        let teacher = TeacherNet::build(&cfg, 1).unwrap();
        let arch = StudentArch::new(&cfg).unwrap();
        let init = arch.init_params(2);
        let schedules = CddSchedules {
            epochs: 3,
            ..CddSchedules::default()
        };
        let options = CddOptions {
            train: settings(4),
            ..CddOptions::default()
        };
        let run = || {
            run_cdd(
                &s,
                &teacher,
                &arch,
                &init,
                &schedules,
                &options,
                &mut |_, _| Ok(()),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.params.digest(), b.params.digest());
        assert_eq!(a.telemetry, b.telemetry);
    }

    #[test]
    fn selective_strategies_need_two_domains() {
        let s = split(6, 0.0, 9);
        let cfg = small_config();
        let teacher = TeacherNet::build(&cfg, 1).unwrap();
        let arch = StudentArch::new(&cfg).unwrap();
        let init = arch.init_params(2);
        for strategy in [Strategy::Consensual, Strategy::Next] {
            let options = CddOptions {
                strategy,
                ..CddOptions::default()
            };
            let r = run_cdd(
                &s,
                &teacher,
                &arch,
                &init,
                &collapse_schedules(1),
                &options,
                &mut |_, _| Ok(()),
            );
            assert!(matches!(r, Err(Error::Config { .. })));
        }
    }
}
