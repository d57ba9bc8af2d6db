use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::distill::flat_cos;
use crate::models::{FeaturePyramid, LEVELS};
use crate::{Error, Result};

/// How pseudo-normal targets are chosen among out-of-domain students.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// The candidate most similar to the previous global student.
    Consensual,
    /// The cyclic successor of the sample's own domain.
    Next,
    /// Every candidate, equally weighted.
    All,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Consensual, Strategy::Next, Strategy::All];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Consensual => "consensual",
            Strategy::Next => "next",
            Strategy::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Targets chosen for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSelection {
    pub strategy: Strategy,
    pub own_domain: usize,
    /// Candidate domain indices, ascending, excluding `own_domain`.
    pub candidates: Vec<usize>,
    /// Affinity of each candidate, aligned with `candidates`.
    pub affinities: Vec<f64>,
    /// `(domain index, loss weight)` of the chosen targets.
    pub selected: Vec<(usize, f64)>,
}

/// `sum_l cos(flatten(a_l), flatten(b_l))`.
pub fn affinity(a: &FeaturePyramid, b: &FeaturePyramid) -> Result<f64> {
    a.check_same_shape(b)?;
    (0..LEVELS).map(|l| flat_cos(a.level(l), b.level(l))).sum()
}

/// Chooses pseudo-normal targets for a sample of domain `own_domain`.
///
/// `domain_outputs[h]` is student `h`'s pyramid for the sample; the entry of the
/// own domain is ignored. Consensual ties go to the lowest index.
pub fn affinity_select(
    domain_outputs: &[&FeaturePyramid],
    prev_global: &FeaturePyramid,
    strategy: Strategy,
    own_domain: usize,
) -> Result<PseudoSelection> {
    let k = domain_outputs.len();
    if own_domain >= k {
        return Err(Error::Input(format!(
            "domain {own_domain} out of range for K={k}"
        )));
    }
    if k == 1 && strategy != Strategy::All {
        return Err(Error::config(
            "cdd.strategy",
            format!(
                "strategy `{}` needs at least two domains",
                strategy.as_str()
            ),
        ));
    }
    let candidates: Vec<usize> = (0..k).filter(|&h| h != own_domain).collect();
    let affinities = candidates
        .iter()
        .map(|&h| affinity(domain_outputs[h], prev_global))
        .collect::<Result<Vec<_>>>()?;
    let selected = match strategy {
        Strategy::Consensual => {
            let mut best = 0;
            for (j, &a) in affinities.iter().enumerate() {
                if a > affinities[best] {
                    best = j;
                }
            }
            vec![(candidates[best], 1.0)]
        }
        Strategy::Next => vec![((own_domain + 1) % k, 1.0)],
        Strategy::All => {
            let w = 1.0 / candidates.len().max(1) as f64;
            candidates.iter().map(|&h| (h, w)).collect()
        }
    };
    Ok(PseudoSelection {
        strategy,
        own_domain,
        candidates,
        affinities,
        selected,
    })
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every entry. `sigma == 0` returns an exact copy.
pub fn perturb_teacher_features<R: Rng + ?Sized>(
    pyramid: &FeaturePyramid,
    sigma: f64,
    rng: &mut R,
) -> FeaturePyramid {
    let mut out = pyramid.clone();
    if sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("finite nonnegative sigma");
    for level in out.levels_mut() {
        level.mapv_inplace(|v| v + normal.sample(rng));
    }
    out
}
