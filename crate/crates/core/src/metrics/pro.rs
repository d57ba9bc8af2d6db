use std::cmp::Ordering;

use ndarray::Array2;

use crate::{Error, Result};

pub const DEFAULT_FPR_LIMIT: f64 = 0.3;
pub const DEFAULT_N_THRESHOLDS: usize = 200;

/// Labels the 8-connected components of the nonzero pixels of `mask`.
///
/// Returns a label image (0 = background, regions numbered from 1 in raster order
/// of their first pixel) and the number of regions.
pub fn label_regions(mask: &Array2<u8>) -> (Array2<u32>, usize) {
    let (h, w) = mask.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut count = 0u32;
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] == 0 || labels[[y, x]] != 0 {
                continue;
            }
            count += 1;
            labels[[y, x]] = count;
            stack.push((y, x));
            while let Some((cy, cx)) = stack.pop() {
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (ny, nx) = (cy as isize + dy, cx as isize + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask[[ny, nx]] != 0 && labels[[ny, nx]] == 0 {
                            labels[[ny, nx]] = count;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
        }
    }
    (labels, count as usize)
}

/// Thresholds in descending order: every distinct value when there are at most
/// `n_thresholds` of them, otherwise the order statistics at `n_thresholds`
/// evenly spaced ranks (so the grid follows the value distribution).
pub fn pro_thresholds(values: &[f64], n_thresholds: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut unique = sorted.clone();
    unique.dedup();
    let mut out = if unique.len() <= n_thresholds || n_thresholds < 2 {
        unique
    } else {
        let n = sorted.len();
        let mut q: Vec<f64> = (0..n_thresholds)
            .map(|i| sorted[i * (n - 1) / (n_thresholds - 1)])
            .collect();
        q.dedup();
        q
    };
    out.reverse();
    out
}

/// Per-region-overlap curve: `(fpr, mean region overlap)` for thresholds from
/// strictest to loosest, starting at `(0, 0)`. A pixel counts as predicted when
/// its value is at least the threshold.
pub fn pro_curve(
    maps: &[&Array2<f64>],
    masks: &[&Array2<u8>],
    n_thresholds: usize,
) -> Result<Vec<(f64, f64)>> {
    if maps.len() != masks.len() {
        return Err(Error::Metric(format!(
            "{} maps but {} masks",
            maps.len(),
            masks.len()
        )));
    }
    // Per pixel: value and region index (usize::MAX for normal pixels).
    let mut pixels: Vec<(f64, usize)> = Vec::new();
    let mut region_sizes: Vec<usize> = Vec::new();
    let mut n_normal = 0usize;
    for (map, mask) in maps.iter().zip(masks) {
        if map.dim() != mask.dim() {
            return Err(Error::Metric(format!(
                "map shape {:?} differs from mask shape {:?}",
                map.dim(),
                mask.dim()
            )));
        }
        let (labels, count) = label_regions(mask);
        let base = region_sizes.len();
        region_sizes.resize(base + count, 0);
        for (&v, &lab) in map.iter().zip(labels.iter()) {
            if v.is_nan() {
                return Err(Error::Metric("map contains NaN".into()));
            }
            if lab == 0 {
                n_normal += 1;
                pixels.push((v, usize::MAX));
            } else {
                let r = base + lab as usize - 1;
                region_sizes[r] += 1;
                pixels.push((v, r));
            }
        }
    }
    if region_sizes.is_empty() {
        return Err(Error::Metric("no anomalous regions to evaluate".into()));
    }
    if n_normal == 0 {
        return Err(Error::Metric(
            "no normal pixels; false-positive rate undefined".into(),
        ));
    }
    let values: Vec<f64> = pixels.iter().map(|p| p.0).collect();
    let thresholds = pro_thresholds(&values, n_thresholds);
    pixels.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    let n_regions = region_sizes.len() as f64;
    let mut curve = vec![(0.0, 0.0)];
    let (mut next, mut fp, mut overlap_sum) = (0usize, 0usize, 0.0);
    for t in thresholds {
        while next < pixels.len() && pixels[next].0 >= t {
            match pixels[next].1 {
                usize::MAX => fp += 1,
                r => overlap_sum += 1.0 / region_sizes[r] as f64,
            }
            next += 1;
        }
        curve.push((fp as f64 / n_normal as f64, overlap_sum / n_regions));
    }
    Ok(curve)
}

/// Area under a curve with nondecreasing x from 0 to `limit`, interpolating the
/// segment that crosses the limit, divided by `limit`.
pub fn normalized_partial_area(curve: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= limit {
            break;
        }
        if x1 > limit {
            let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y) / 2.0;
            break;
        }
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    area / limit
}

/// Per-region overlap integrated over false-positive rates `[0, fpr_limit]`,
/// normalized to `[0, 1]`.
pub fn pro(
    maps: &[&Array2<f64>],
    masks: &[&Array2<u8>],
    fpr_limit: f64,
    n_thresholds: usize,
) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::Metric(format!(
            "fpr limit {fpr_limit} outside (0, 1]"
        )));
    }
    let curve = pro_curve(maps, masks, n_thresholds)?;
    Ok(normalized_partial_area(&curve, fpr_limit).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> Array2<u8> {
        let h = rows.len();
        let w = rows[0].len();
        Array2::from_shape_fn((h, w), |(y, x)| (rows[y].as_bytes()[x] == b'#') as u8)
    }

    #[test]
    fn diagonal_pixels_join_one_region() {
        let (labels, n) = label_regions(&grid(&["#...", ".#..", "...#", "...#"]));
        assert_eq!(n, 2);
        assert_eq!(labels[[0, 0]], labels[[1, 1]]);
        assert_ne!(labels[[0, 0]], labels[[2, 3]]);
    }

    #[test]
    fn map_equal_to_mask_is_one() {
        let mask = grid(&["....", ".##.", ".##.", "...."]);
        let map = mask.mapv(|v| v as f64);
        assert_eq!(pro(&[&map], &[&mask], 0.3, 200).unwrap(), 1.0);
    }

    #[test]
    fn inverted_map_is_zero() {
        let mask = grid(&["....", ".##.", ".##.", "...."]);
        let map = mask.mapv(|v| 1.0 - v as f64);
        assert_eq!(pro(&[&map], &[&mask], 0.3, 200).unwrap(), 0.0);
    }

    #[test]
    fn one_found_one_missed_region_gives_half() {
        // Region A scores 1, region B scores 0, normals 0.5. Every threshold
        // above 0.5 finds A alone at FPR 0; at 0.5 FPR jumps to 1.
        let mask = grid(&[
            "##......", "##......", "........", "........", "........", "........", "......##",
            "......##",
        ]);
        let map = Array2::from_shape_fn((8, 8), |(y, x)| {
            if y < 2 && x < 2 {
                1.0
            } else if y >= 6 && x >= 6 {
                0.0
            } else {
                0.5
            }
        });
        let v = pro(&[&map], &[&mask], 0.3, 200).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn errors() {
        let empty = Array2::<u8>::zeros((4, 4));
        let map = Array2::<f64>::zeros((4, 4));
        assert!(matches!(
            pro(&[&map], &[&empty], 0.3, 200),
            Err(Error::Metric(_))
        ));
        let full = Array2::<u8>::ones((4, 4));
        assert!(matches!(
            pro(&[&map], &[&full], 0.3, 200),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn quantile_thresholds_follow_order_statistics() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64).sqrt()).collect();
        let t = pro_thresholds(&values, 5);
        let expect: Vec<f64> = [999, 749, 499, 249, 0]
            .iter()
            .map(|&i| (i as f64).sqrt())
            .collect();
        assert_eq!(t, expect);
        assert_eq!(pro_thresholds(&[1.0, 1.0, 2.0], 200), vec![2.0, 1.0]);
    }

    #[test]
    fn partial_area_interpolates_at_limit() {
        let curve = [(0.0, 0.0), (0.0, 0.5), (0.6, 1.0)];
        // At x=0.3 the line is at 0.75: area 0.3 * (0.5 + 0.75) / 2, over 0.3.
        assert!((normalized_partial_area(&curve, 0.3) - 0.625).abs() < 1e-15);
    }
}
