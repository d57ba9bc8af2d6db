use std::cmp::Ordering;

use ndarray::Array2;

use crate::{Error, Result};

/// Score groups in ascending order, each with its positive and negative counts.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, u64, u64)>> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in order {
        let (s, pos) = (scores[i], labels[i]);
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if pos {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, pos as u64, (!pos) as u64)),
        }
    }
    let (p, n) = groups
        .iter()
        .fold((0, 0), |acc, g| (acc.0 + g.1, acc.1 + g.2));
    if p == 0 || n == 0 {
        return Err(Error::Metric(format!(
            "AUC undefined with {p} positive and {n} negative items"
        )));
    }
    Ok(groups)
}

/// Area under the ROC curve as the Mann-Whitney statistic:
/// `P(score_pos > score_neg) + 0.5 * P(equal)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    // Twice the win count stays an integer, so the quotient is exact up to one rounding.
    let (mut twice_wins, mut neg_below, mut p, mut n) = (0u128, 0u128, 0u128, 0u128);
    for &(_, pos, neg) in &groups {
        let (pos, neg) = (pos as u128, neg as u128);
        twice_wins += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        p += pos;
        n += neg;
    }
    Ok(twice_wins as f64 / (2 * p * n) as f64)
}

/// ROC points `(fpr, tpr)` from the strictest threshold down, starting at `(0, 0)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let groups = tie_groups(scores, labels)?;
    let (p, n) = groups
        .iter()
        .fold((0u64, 0u64), |acc, g| (acc.0 + g.1, acc.1 + g.2));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(_, pos, neg) in groups.iter().rev() {
        tp += pos;
        fp += neg;
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(points)
}

/// Trapezoidal area under the ROC curve, accumulated in integer counts.
pub fn roc_auc_trapezoid(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    let (mut twice_area, mut tp, mut p, mut n) = (0u128, 0u128, 0u128, 0u128);
    for &(_, pos, neg) in groups.iter().rev() {
        let (pos, neg) = (pos as u128, neg as u128);
        twice_area += neg * (2 * tp + pos);
        tp += pos;
        p += pos;
        n += neg;
    }
    Ok(twice_area as f64 / (2 * p * n) as f64)
}

/// Trapezoidal integral of a piecewise-linear curve given by its points.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// ROC-AUC over the pooled pixels of all maps, positives where the mask is nonzero.
pub fn pixel_auc(maps: &[&Array2<f64>], masks: &[&Array2<u8>]) -> Result<f64> {
    if maps.len() != masks.len() {
        return Err(Error::Metric(format!(
            "{} maps but {} masks",
            maps.len(),
            masks.len()
        )));
    }
    let total: usize = maps.iter().map(|m| m.len()).sum();
    let mut scores = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (map, mask) in maps.iter().zip(masks) {
        if map.dim() != mask.dim() {
            return Err(Error::Metric(format!(
                "map shape {:?} differs from mask shape {:?}",
                map.dim(),
                mask.dim()
            )));
        }
        scores.extend(map.iter().copied());
        labels.extend(mask.iter().map(|&v| v != 0));
    }
    roc_auc(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn brute_force(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if si > sj {
                        wins += 1.0;
                    } else if si == sj {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn worked_examples() {
        let l = [false, false, true, true];
        assert_eq!(roc_auc(&[1.0, 2.0, 3.0, 4.0], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[4.0, 3.0, 2.0, 1.0], &l).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &l).unwrap(), 0.75);
        assert_eq!(roc_auc(&[1.0; 4], &l).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_metric_error() {
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &[true, true]),
            Err(Error::Metric(_))
        ));
        assert!(matches!(
            roc_auc(&[1.0], &[true, false]),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn curve_trapezoid_matches_float_integration() {
        let s = [0.1, 0.4, 0.35, 0.8, 0.4, 0.2];
        let l = [false, false, true, true, true, false];
        let curve = roc_curve(&s, &l).unwrap();
        assert_eq!(curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.last(), Some(&(1.0, 1.0)));
        assert!((trapezoid(&curve) - roc_auc(&s, &l).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn pixel_examples() {
        let mask = Array2::from_shape_vec((2, 2), vec![0u8, 1, 0, 0]).unwrap();
        let map = mask.mapv(|v| v as f64);
        assert_eq!(pixel_auc(&[&map], &[&mask]).unwrap(), 1.0);
        let flat = Array2::from_elem((2, 2), 0.3);
        assert_eq!(pixel_auc(&[&flat], &[&mask]).unwrap(), 0.5);
        let m1 = Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.5, 0.5]).unwrap();
        let k1 = Array2::from_shape_vec((2, 2), vec![1u8, 0, 0, 1]).unwrap();
        let m2 = Array2::from_shape_vec((2, 2), vec![0.2, 0.7, 0.5, 0.0]).unwrap();
        let k2 = Array2::from_shape_vec((2, 2), vec![0u8, 1, 0, 0]).unwrap();
        let scores: Vec<f64> = m1.iter().chain(m2.iter()).copied().collect();
        let labels: Vec<bool> = k1.iter().chain(k2.iter()).map(|&v| v == 1).collect();
        assert_eq!(
            pixel_auc(&[&m1, &m2], &[&k1, &k2]).unwrap(),
            brute_force(&scores, &labels)
        );
    }

    proptest! {
        #[test]
        fn counting_and_trapezoid_agree_with_brute_force(
            items in proptest::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = items.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<bool> = items.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let bf = brute_force(&scores, &labels);
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), bf);
            prop_assert_eq!(roc_auc_trapezoid(&scores, &labels).unwrap(), bf);
        }

        #[test]
        fn strictly_increasing_transform_is_invariant(
            items in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..100)
        ) {
            let scores: Vec<f64> = items.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = items.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&warped, &labels).unwrap());
        }
    }
}
