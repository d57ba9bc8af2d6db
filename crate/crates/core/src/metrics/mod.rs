//! Image and pixel ROC-AUC, per-region overlap, and split evaluation.

mod auc;
mod pro;

use std::collections::BTreeMap;
use std::fmt::Write as _;

pub use auc::{pixel_auc, roc_auc, roc_auc_trapezoid, roc_curve, trapezoid};
pub use pro::{
    label_regions, normalized_partial_area, pro, pro_curve, pro_thresholds, DEFAULT_FPR_LIMIT,
    DEFAULT_N_THRESHOLDS,
};

use crate::datagen::{FuadSplit, Setting};
use crate::distill::{score_images, AnomalyMap};
use crate::models::{FeatureExtractor, Params, StudentArch};
use crate::{Error, Result};

/// Settings of the evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub smooth_sigma: f64,
    pub fpr_limit: f64,
    pub n_thresholds: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            smooth_sigma: crate::distill::DEFAULT_SMOOTH_SIGMA,
            fpr_limit: DEFAULT_FPR_LIMIT,
            n_thresholds: DEFAULT_N_THRESHOLDS,
        }
    }
}

/// Metrics of one evaluated split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub setting: Setting,
    pub i_auc: f64,
    pub p_auc: f64,
    pub pro: f64,
    pub pro_fpr_limit: f64,
    pub n_test_normal: usize,
    pub n_test_anomalous: usize,
    /// AUC of training-set scores against the hidden injection labels, when both classes exist.
    pub train_auc: Option<f64>,
}

impl MetricsReport {
    /// Fixed-order `key=value` lines. Floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "setting={}", self.setting.as_str());
        let _ = writeln!(s, "i_auc={}", self.i_auc);
        let _ = writeln!(s, "p_auc={}", self.p_auc);
        let _ = writeln!(s, "pro={}", self.pro);
        let _ = writeln!(s, "pro_fpr_limit={}", self.pro_fpr_limit);
        let _ = writeln!(s, "n_test_normal={}", self.n_test_normal);
        let _ = writeln!(s, "n_test_anomalous={}", self.n_test_anomalous);
        let train = self
            .train_auc
            .map_or_else(|| "none".to_string(), |v| v.to_string());
        let _ = writeln!(s, "train_auc={train}");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let fields: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Metric(format!("metrics text lacks `{k}`")))
        };
        let float = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Metric(format!("`{k}` is not a number")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Metric(format!("`{k}` is not a count")))
        };
        let setting = Setting::parse(get("setting")?)
            .ok_or_else(|| Error::Metric("unknown setting in metrics text".into()))?;
        let train_auc = match get("train_auc")? {
            "none" => None,
            v => Some(
                v.parse()
                    .map_err(|_| Error::Metric("`train_auc` is not a number".into()))?,
            ),
        };
        Ok(Self {
            setting,
            i_auc: float("i_auc")?,
            p_auc: float("p_auc")?,
            pro: float("pro")?,
            pro_fpr_limit: float("pro_fpr_limit")?,
            n_test_normal: count("n_test_normal")?,
            n_test_anomalous: count("n_test_anomalous")?,
            train_auc,
        })
    }
}

/// Scores and maps produced by [`evaluate`], kept for tables and plots.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub test_maps: Vec<AnomalyMap>,
    pub train_scores: Vec<f64>,
}

impl Evaluation {
    pub fn test_scores(&self) -> Vec<f64> {
        self.test_maps.iter().map(|m| m.image_score()).collect()
    }
}

/// Metrics from precomputed test maps and train scores.
pub fn metrics_from_maps(
    split: &FuadSplit,
    test_maps: &[AnomalyMap],
    train_scores: &[f64],
    settings: &EvalSettings,
) -> Result<MetricsReport> {
    let test = split.test();
    if test_maps.len() != test.len() || train_scores.len() != split.train_eval_only().len() {
        return Err(Error::Metric("score count does not match the split".into()));
    }
    let scores: Vec<f64> = test_maps.iter().map(|m| m.image_score()).collect();
    let labels: Vec<bool> = test.iter().map(|s| s.label().is_anomalous()).collect();
    let i_auc = roc_auc(&scores, &labels)?;
    let maps: Vec<_> = test_maps.iter().map(|m| m.values()).collect();
    let masks: Vec<_> = test.iter().map(|s| s.mask()).collect();
    let p_auc = pixel_auc(&maps, &masks)?;
    let pro_value = pro(&maps, &masks, settings.fpr_limit, settings.n_thresholds)?;
    let train_labels: Vec<bool> = split
        .train_eval_only()
        .iter()
        .map(|s| s.label().is_anomalous())
        .collect();
    let train_auc = if train_labels.iter().any(|&l| l) && train_labels.iter().any(|&l| !l) {
        Some(roc_auc(train_scores, &train_labels)?)
    } else {
        None
    };
    let n_anom = labels.iter().filter(|&&l| l).count();
    Ok(MetricsReport {
        setting: split.setting(),
        i_auc,
        p_auc,
        pro: pro_value,
        pro_fpr_limit: settings.fpr_limit,
        n_test_normal: labels.len() - n_anom,
        n_test_anomalous: n_anom,
        train_auc,
    })
}

/// Scores the test and training images of `split` and computes every metric.
pub fn evaluate(
    split: &FuadSplit,
    teacher: &dyn FeatureExtractor,
    arch: &StudentArch,
    params: &Params,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    let test_maps = score_images(
        split.test().iter().map(|s| s.pixels()),
        teacher,
        arch,
        params,
        settings.smooth_sigma,
    )?;
    let train_scores: Vec<f64> = score_images(
        split.train_eval_only().iter().map(|s| s.pixels()),
        teacher,
        arch,
        params,
        settings.smooth_sigma,
    )?
    .iter()
    .map(|m| m.image_score())
    .collect();
    let report = metrics_from_maps(split, &test_maps, &train_scores, settings)?;
    Ok(Evaluation {
        report,
        test_maps,
        train_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_text_round_trip() {
        let r = MetricsReport {
            setting: Setting::Overlap,
            i_auc: 0.8125,
            p_auc: 0.1 + 0.2,
            pro: 1.0,
            pro_fpr_limit: 0.3,
            n_test_normal: 50,
            n_test_anomalous: 60,
            train_auc: Some(0.7),
        };
        let text = r.to_text();
        assert!(text.starts_with("setting=overlap\ni_auc=0.8125\n"));
        assert_eq!(MetricsReport::from_text(&text).unwrap(), r);
        let none = MetricsReport {
            train_auc: None,
            ..r
        };
        assert_eq!(MetricsReport::from_text(&none.to_text()).unwrap(), none);
        assert!(MetricsReport::from_text("i_auc=1").is_err());
    }
}
