//! Cross-domain distillation: schedules, domain construction, pseudo-normal
//! selection, and the epoch loop that trains a global student from data that
//! may contain unlabeled anomalies.

mod domains;
mod schedule;
mod select;
mod train;

pub use domains::{
    compute_confidence, construct_domains, pyramid_confidence, ConfidenceTable, DomainPartition,
};
pub use schedule::{
    equal_phases, k_for_epoch, lambda_schedule, r_schedule, CddSchedules, LambdaMode,
};
pub use select::{affinity, affinity_select, perturb_teacher_features, PseudoSelection, Strategy};
pub use train::{
    forward_all, run_cdd, select_pseudo_targets, train_domain_student, train_global_cross,
    train_global_hc, CddOptions, CddOutcome, CrossReport, EpochTelemetry, InnerPasses,
    CROSS_STREAM, HC_STREAM,
};
