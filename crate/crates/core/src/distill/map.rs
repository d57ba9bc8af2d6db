use ndarray::Array2;

use super::loss::location_cos_map;
use crate::models::FeaturePyramid;
use crate::{Error, Result};

/// Smoothing bandwidth of the inference map, in pixels.
pub const DEFAULT_SMOOTH_SIGMA: f64 = 4.0;

/// Per-pixel anomaly heat map and its image-level score (the map maximum).
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    values: Array2<f64>,
    image_score: f64,
}

impl AnomalyMap {
    /// Wraps a map, taking the maximum as the score. Values must be finite and nonnegative.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("anomaly map is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input(
                "anomaly map values must be finite and nonnegative".into(),
            ));
        }
        let image_score = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            values,
            image_score,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn image_score(&self) -> f64 {
        self.image_score
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn bilinear_resize(map: &Array2<f64>, out: (usize, usize)) -> Array2<f64> {
    let (h, w) = map.dim();
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(h, out.0);
    let xs = axis(w, out.1);
    Array2::from_shape_fn(out, |(y, x)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = map[[y0, x0]] * (1.0 - fx) + map[[y0, x1]] * fx;
        let bottom = map[[y1, x0]] * (1.0 - fx) + map[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Index into `0..n` under symmetric reflection that repeats the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized Gaussian weights on `-r..=r` with `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with reflect padding. `sigma == 0` returns a copy.
pub fn gaussian_smooth(map: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return map.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (h, w) = map.dim();
    let rows = Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wgt)| wgt * map[[y, reflect(x as isize + k as isize - r, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wgt)| wgt * rows[[reflect(y as isize + k as isize - r, h), x]])
            .sum::<f64>()
            .max(0.0)
    })
}

/// Sum over levels of the upsampled per-location `1 - cos` maps, before smoothing.
pub fn fused_distance_map(
    teacher: &FeaturePyramid,
    student: &FeaturePyramid,
    out_size: (usize, usize),
) -> Result<Array2<f64>> {
    teacher.check_same_shape(student)?;
    let mut total = Array2::zeros(out_size);
    for (t, s) in teacher.levels().iter().zip(student.levels()) {
        // Rounding can push cos a hair above 1; clamp keeps the field nonnegative.
        let dist = location_cos_map(t, s).mapv(|c| (1.0 - c).max(0.0));
        total += &bilinear_resize(&dist, out_size);
    }
    Ok(total)
}

/// Fused distance map smoothed with a Gaussian of `smooth_sigma`; score = maximum.
pub fn anomaly_map(
    teacher: &FeaturePyramid,
    student: &FeaturePyramid,
    out_size: (usize, usize),
    smooth_sigma: f64,
) -> Result<AnomalyMap> {
    let fused = fused_distance_map(teacher, student, out_size)?;
    AnomalyMap::from_values(gaussian_smooth(&fused, smooth_sigma))
}
