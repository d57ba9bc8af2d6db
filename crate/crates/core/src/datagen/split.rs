use rand::seq::SliceRandom;

use super::{ImageSample, Label, TrainView};
use crate::seeds::rng_for;
use crate::{Error, Result};

/// Whether injected anomalies are also evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    /// Injected anomalies are removed from the test set.
    NoOverlap,
    /// Injected anomalies stay in the test set.
    Overlap,
}

impl Setting {
    pub const BOTH: [Setting; 2] = [Setting::NoOverlap, Setting::Overlap];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::NoOverlap => "no_overlap",
            Setting::Overlap => "overlap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "no_overlap" => Some(Setting::NoOverlap),
            "overlap" => Some(Setting::Overlap),
            _ => None,
        }
    }
}

/// Noisy training split: normal training images plus injected anomalies.
#[derive(Debug, Clone, PartialEq)]
pub struct FuadSplit {
    train: Vec<ImageSample>,
    test: Vec<ImageSample>,
    injected_ids: Vec<String>,
    r_noise: f64,
    setting: Setting,
    seed: u64,
}

impl FuadSplit {
    /// Label-free view of the training set.
    pub fn train_view(&self) -> TrainView<'_> {
        TrainView::new(&self.train)
    }

    /// Training samples with ground truth. For evaluation and telemetry only.
    pub fn train_eval_only(&self) -> &[ImageSample] {
        &self.train
    }

    pub fn test(&self) -> &[ImageSample] {
        &self.test
    }

    pub fn injected_ids(&self) -> &[String] {
        &self.injected_ids
    }

    pub fn r_noise(&self) -> f64 {
        self.r_noise
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fraction of anomalous training samples (eval-only ground truth).
    pub fn realized_ratio(&self) -> f64 {
        if self.train.is_empty() {
            return 0.0;
        }
        let a = self
            .train
            .iter()
            .filter(|s| s.label() == Label::Anomalous)
            .count();
        a as f64 / self.train.len() as f64
    }
}

/// Number of anomalies to inject so that `a / (n + a)` is closest to `r_noise`;
/// at least one whenever `r_noise > 0`.
pub fn injection_count(n_normal: usize, r_noise: f64) -> usize {
    if r_noise <= 0.0 {
        return 0;
    }
    let exact = r_noise * n_normal as f64 / (1.0 - r_noise);
    (exact.round() as usize).max(1)
}

pub fn build_fuad_split(
    normals_train: &[ImageSample],
    normals_test: &[ImageSample],
    anomaly_pool: &[ImageSample],
    r_noise: f64,
    setting: Setting,
    seed: u64,
) -> Result<FuadSplit> {
    if !(0.0..0.5).contains(&r_noise) {
        return Err(Error::config("split.r_noise", "must lie in [0, 0.5)"));
    }
    let count = injection_count(normals_train.len(), r_noise);
    if count > anomaly_pool.len() {
        return Err(Error::Capacity {
            required: count,
            available: anomaly_pool.len(),
        });
    }
    let mut order: Vec<usize> = (0..anomaly_pool.len()).collect();
    order.shuffle(&mut rng_for(seed, &["inject"]));
    let mut chosen: Vec<usize> = order[..count].to_vec();
    chosen.sort_unstable();
    let mut is_injected = vec![false; anomaly_pool.len()];
    for &i in &chosen {
        is_injected[i] = true;
    }

    let mut train: Vec<ImageSample> = normals_train.to_vec();
    train.extend(chosen.iter().map(|&i| anomaly_pool[i].clone()));
    let injected_ids: Vec<String> = chosen
        .iter()
        .map(|&i| anomaly_pool[i].id().to_string())
        .collect();

    let mut test: Vec<ImageSample> = normals_test.to_vec();
    test.extend(
        anomaly_pool
            .iter()
            .enumerate()
            .filter(|(i, _)| setting == Setting::Overlap || !is_injected[*i])
            .map(|(_, s)| s.clone()),
    );
    check_unique(&train, "train")?;
    check_unique(&test, "test")?;

    Ok(FuadSplit {
        train,
        test,
        injected_ids,
        r_noise,
        setting,
        seed,
    })
}

fn check_unique(samples: &[ImageSample], what: &str) -> Result<()> {
    let mut ids: Vec<&str> = samples.iter().map(|s| s.id()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Input(format!("duplicate {what} id `{}`", w[0])));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use ndarray::{Array2, Array3};
    use proptest::prelude::*;

    use super::*;
    use crate::datagen::Origin;

    fn normals(prefix: &str, n: usize) -> Vec<ImageSample> {
        (0..n)
            .map(|i| {
                ImageSample::normal(
                    format!("{prefix}-{i}"),
                    Array3::zeros((3, 4, 4)),
                    Origin::Generated,
                )
                .unwrap()
            })
            .collect()
    }

    fn anomalies(n: usize) -> Vec<ImageSample> {
        (0..n)
            .map(|i| {
                let mut mask = Array2::zeros((4, 4));
                mask[[0, 0]] = 1;
                ImageSample::new(
                    format!("anom-{i}"),
                    Array3::zeros((3, 4, 4)),
                    Label::Anomalous,
                    mask,
                    Origin::Generated,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn injection_counts() {
        assert_eq!(injection_count(90, 0.1), 10);
        assert_eq!(injection_count(200, 0.05), 11);
        assert_eq!(injection_count(200, 0.0), 0);
        assert_eq!(injection_count(5, 0.01), 1);
    }

    #[test]
    fn ninety_normals_at_ten_percent() {
        let split = build_fuad_split(
            &normals("tr", 90),
            &normals("te", 10),
            &anomalies(30),
            0.1,
            Setting::Overlap,
            3,
        )
        .unwrap();
        assert_eq!(split.train_eval_only().len(), 100);
        assert_eq!(split.injected_ids().len(), 10);
        assert_eq!(split.test().len(), 40);
    }

    #[test]
    fn zero_noise_leaves_test_intact() {
        for setting in Setting::BOTH {
            let split = build_fuad_split(
                &normals("tr", 20),
                &normals("te", 5),
                &anomalies(8),
                0.0,
                setting,
                1,
            )
            .unwrap();
            assert_eq!(split.train_eval_only().len(), 20);
            assert_eq!(split.test().len(), 13);
        }
    }

    #[test]
    fn realized_ratio_near_target() {
        let split = build_fuad_split(
            &normals("tr", 200),
            &normals("te", 5),
            &anomalies(40),
            0.05,
            Setting::NoOverlap,
            1,
        )
        .unwrap();
        assert_eq!(split.injected_ids().len(), 11);
        let ratio = split.realized_ratio();
        assert!((ratio - 11.0 / 211.0).abs() < 1e-12);
        assert!((ratio - 0.05).abs() <= 1.0 / 211.0);
    }

    #[test]
    fn pool_too_small() {
        match build_fuad_split(
            &normals("tr", 90),
            &[],
            &anomalies(4),
            0.1,
            Setting::Overlap,
            0,
        ) {
            Err(Error::Capacity {
                required,
                available,
            }) => {
                assert_eq!((required, available), (10, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn train_identical_across_settings() {
        let a = build_fuad_split(
            &normals("tr", 50),
            &normals("te", 5),
            &anomalies(20),
            0.2,
            Setting::Overlap,
            9,
        )
        .unwrap();
        let b = build_fuad_split(
            &normals("tr", 50),
            &normals("te", 5),
            &anomalies(20),
            0.2,
            Setting::NoOverlap,
            9,
        )
        .unwrap();
        assert_eq!(a.train_eval_only(), b.train_eval_only());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn split_invariants(
            n_train in 1usize..120,
            n_test in 0usize..20,
            r in 0.0f64..0.45,
            overlap in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let setting = if overlap { Setting::Overlap } else { Setting::NoOverlap };
            let need = injection_count(n_train, r);
            let pool = anomalies(need + 7);
            let split = build_fuad_split(&normals("tr", n_train), &normals("te", n_test), &pool, r, setting, seed).unwrap();
            let train = split.train_eval_only();
            let a = train.iter().filter(|s| s.label() == Label::Anomalous).count();
            prop_assert_eq!(a, need);
            // Within one sample of the target ratio.
            prop_assert!((a as f64 / train.len() as f64 - r).abs() <= 1.0 / train.len() as f64 + 1e-12);
            let test_ids: HashSet<&str> = split.test().iter().map(|s| s.id()).collect();
            prop_assert_eq!(test_ids.len(), split.test().len());
            let train_ids: HashSet<&str> = train.iter().map(|s| s.id()).collect();
            prop_assert_eq!(train_ids.len(), train.len());
            for id in split.injected_ids() {
                prop_assert!(train_ids.contains(id.as_str()));
                prop_assert_eq!(test_ids.contains(id.as_str()), overlap);
            }
        }
    }
}
