use std::cmp::Ordering;

use rand::seq::SliceRandom;

use crate::distill::location_cos_map;
use crate::models::{FeaturePyramid, LEVELS};
use crate::seeds::rng_for;
use crate::{Error, Result};

/// Per-sample agreement between teacher and the previous global student.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    epoch: usize,
    ids: Vec<String>,
    scores: Vec<f64>,
}

impl ConfidenceTable {
    /// Scores are in training-set order; ids must be unique and scores finite.
    pub fn new(epoch: usize, ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::Input(format!(
                "{} ids but {} confidences",
                ids.len(),
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("confidence scores must be finite".into()));
        }
        let mut sorted: Vec<&String> = ids.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input("confidence ids must be unique".into()));
        }
        Ok(Self { epoch, ids, scores })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.ids
            .iter()
            .position(|x| x == id)
            .map(|i| self.scores[i])
    }
}

/// `sum_l mean_{h,w} cos(teacher_l(h,w), student_l(h,w))`, in `[-L, L]`.
pub fn pyramid_confidence(teacher: &FeaturePyramid, student: &FeaturePyramid) -> Result<f64> {
    teacher.check_same_shape(student)?;
    Ok((0..LEVELS)
        .map(|l| {
            location_cos_map(teacher.level(l), student.level(l))
                .mean()
                .unwrap_or(0.0)
        })
        .sum())
}

/// Confidence of every training sample from cached teacher and global-student pyramids.
pub fn compute_confidence(
    epoch: usize,
    ids: &[&str],
    teacher_features: &[FeaturePyramid],
    global_outputs: &[FeaturePyramid],
) -> Result<ConfidenceTable> {
    if teacher_features.len() != ids.len() || global_outputs.len() != ids.len() {
        return Err(Error::Input("confidence inputs differ in length".into()));
    }
    let scores = teacher_features
        .iter()
        .zip(global_outputs)
        .map(|(t, g)| pyramid_confidence(t, g))
        .collect::<Result<Vec<_>>>()?;
    ConfidenceTable::new(epoch, ids.iter().map(|s| s.to_string()).collect(), scores)
}

/// High-confidence samples shared by every domain, plus `K` disjoint low-confidence shards.
///
/// Members are positions in the training set. Domain `k` is `high_conf ∪ low_subsets[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPartition {
    high_conf: Vec<usize>,
    low_subsets: Vec<Vec<usize>>,
    n: usize,
}

impl DomainPartition {
    pub fn k(&self) -> usize {
        self.low_subsets.len()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// High-confidence positions, most confident first.
    pub fn high_conf(&self) -> &[usize] {
        &self.high_conf
    }

    pub fn low_subsets(&self) -> &[Vec<usize>] {
        &self.low_subsets
    }

    /// Members of domain `k` in ascending position order.
    pub fn domain(&self, k: usize) -> Vec<usize> {
        let mut d: Vec<usize> = self
            .high_conf
            .iter()
            .chain(&self.low_subsets[k])
            .copied()
            .collect();
        d.sort_unstable();
        d
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        self.low_subsets
            .iter()
            .map(|s| s.len() + self.high_conf.len())
            .collect()
    }

    /// Domain index whose low-confidence shard holds `position`, if any.
    pub fn low_domain_of(&self, position: usize) -> Option<usize> {
        self.low_subsets.iter().position(|s| s.contains(&position))
    }

    /// Checks disjointness, coverage, and near-equal shard sizes.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = vec![false; self.n];
        for &i in self
            .high_conf
            .iter()
            .chain(self.low_subsets.iter().flatten())
        {
            if i >= self.n || seen[i] {
                return Err(Error::State(format!(
                    "position {i} is out of range or assigned twice"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::State(
                "partition does not cover the training set".into(),
            ));
        }
        let sizes: Vec<usize> = self.low_subsets.iter().map(Vec::len).collect();
        let (min, max) = (sizes.iter().min(), sizes.iter().max());
        if let (Some(min), Some(max)) = (min, max) {
            if max - min > 1 {
                return Err(Error::State(format!(
                    "low-confidence shard sizes {sizes:?} differ by more than 1"
                )));
            }
        }
        Ok(())
    }
}

/// Top `floor(r N)` samples by confidence (ties by id) form the shared set; the
/// rest are shuffled with `seed` and dealt into `k` contiguous near-equal shards.
pub fn construct_domains(
    conf: &ConfidenceTable,
    r: f64,
    k: usize,
    seed: u64,
) -> Result<DomainPartition> {
    if k == 0 {
        return Err(Error::config("cdd.k_schedule", "K must be at least 1"));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Input(format!(
            "high-confidence fraction {r} outside [0, 1]"
        )));
    }
    let n = conf.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        conf.scores[b]
            .partial_cmp(&conf.scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| conf.ids[a].cmp(&conf.ids[b]))
    });
    let n_high = (r * n as f64).floor() as usize;
    let high_conf = order[..n_high].to_vec();
    // Shuffle a canonical (position-sorted) copy so the result does not depend on
    // how ties among low-confidence samples happened to sort.
    let mut rest = order[n_high..].to_vec();
    rest.sort_unstable();
    rest.shuffle(&mut rng_for(seed, &["domains", &conf.epoch.to_string()]));
    let (base, extra) = (rest.len() / k, rest.len() % k);
    let mut low_subsets = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let len = base + usize::from(j < extra);
        low_subsets.push(rest[start..start + len].to_vec());
        start += len;
    }
    Ok(DomainPartition {
        high_conf,
        low_subsets,
        n,
    })
}
