use ndarray::{Array2, Array3};

use crate::models::{FeaturePyramid, LEVELS};
use crate::{Error, Result};

/// Norm below which a feature vector counts as zero; its cosine is defined as 0.
pub const COS_EPS: f64 = 1e-8;

/// Cosine similarity, 0 when either vector has norm below [`COS_EPS`].
pub fn cos_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < COS_EPS || nb < COS_EPS {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Per-layer mean cosine distances and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub per_layer: [f64; LEVELS],
    pub total: f64,
    pub step: usize,
}

impl LossReport {
    pub fn from_layers(per_layer: [f64; LEVELS], step: usize) -> Self {
        Self {
            per_layer,
            total: per_layer.iter().sum(),
            step,
        }
    }
}

/// Cosine along the channel axis at every spatial location of two `[C, H, W]` maps.
pub fn location_cos_map(a: &Array3<f64>, b: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = a.dim();
    debug_assert_eq!(a.dim(), b.dim());
    let hw = h * w;
    let (xa, xb) = (
        a.as_slice().expect("standard layout"),
        b.as_slice().expect("standard layout"),
    );
    let mut dot = vec![0.0; hw];
    let mut na = vec![0.0; hw];
    let mut nb = vec![0.0; hw];
    for ch in 0..c {
        let (ra, rb) = (&xa[ch * hw..(ch + 1) * hw], &xb[ch * hw..(ch + 1) * hw]);
        for i in 0..hw {
            dot[i] += ra[i] * rb[i];
            na[i] += ra[i] * ra[i];
            nb[i] += rb[i] * rb[i];
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| {
        let i = y * w + x;
        let (sa, sb) = (na[i].sqrt(), nb[i].sqrt());
        if sa < COS_EPS || sb < COS_EPS {
            0.0
        } else {
            (dot[i] / (sa * sb)).clamp(-1.0, 1.0)
        }
    })
}

/// Cosine between the flattened maps of one level.
pub fn flat_cos(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    cos_sim(
        a.as_slice().expect("standard layout"),
        b.as_slice().expect("standard layout"),
    )
}

/// `sum_l mean_{h,w} (1 - cos(target_l(h,w), pred_l(h,w)))`.
pub fn layer_cos_loss(target: &FeaturePyramid, pred: &FeaturePyramid) -> Result<LossReport> {
    target.check_same_shape(pred)?;
    let per_layer = std::array::from_fn(|l| {
        let cos = location_cos_map(target.level(l), pred.level(l));
        cos.iter().map(|c| 1.0 - c).sum::<f64>() / cos.len() as f64
    });
    Ok(LossReport::from_layers(per_layer, 0))
}

/// Loss plus its gradient with respect to `pred`. The target receives no gradient.
#[allow(clippy::needless_range_loop)]
pub fn layer_cos_loss_grad(
    target: &FeaturePyramid,
    pred: &FeaturePyramid,
) -> Result<(LossReport, FeaturePyramid)> {
    target.check_same_shape(pred)?;
    let mut per_layer = [0.0; LEVELS];
    let mut grads = Vec::with_capacity(LEVELS);
    for l in 0..LEVELS {
        let (t, p) = (target.level(l), pred.level(l));
        let (c, h, w) = t.dim();
        let hw = h * w;
        let (xt, xp) = (
            t.as_slice().expect("standard layout"),
            p.as_slice().expect("standard layout"),
        );
        let mut dot = vec![0.0; hw];
        let mut nt = vec![0.0; hw];
        let mut np = vec![0.0; hw];
        for ch in 0..c {
            for i in 0..hw {
                let (a, b) = (xt[ch * hw + i], xp[ch * hw + i]);
                dot[i] += a * b;
                nt[i] += a * a;
                np[i] += b * b;
            }
        }
        // d(1 - cos)/dp = -(t / (|t||p|) - cos * p / |p|^2), averaged over locations.
        let mut coef_t = vec![0.0; hw];
        let mut coef_p = vec![0.0; hw];
        let mut loss = 0.0;
        for i in 0..hw {
            let (st, sp) = (nt[i].sqrt(), np[i].sqrt());
            if st < COS_EPS || sp < COS_EPS {
                loss += 1.0;
                continue;
            }
            let cos = dot[i] / (st * sp);
            loss += 1.0 - cos;
            coef_t[i] = -1.0 / (st * sp * hw as f64);
            coef_p[i] = cos / (np[i] * hw as f64);
        }
        per_layer[l] = loss / hw as f64;
        let mut g = Array3::zeros((c, h, w));
        let gs = g.as_slice_mut().expect("standard layout");
        for ch in 0..c {
            for i in 0..hw {
                let k = ch * hw + i;
                gs[k] = coef_t[i] * xt[k] + coef_p[i] * xp[k];
            }
        }
        grads.push(g);
    }
    Ok((
        LossReport::from_layers(per_layer, 0),
        FeaturePyramid::from_levels_unchecked(grads),
    ))
}

#[cfg(test)]
mod tests {
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::seeds::rng_for;

    fn pyramid_from(
        f: impl Fn(usize, usize, usize, usize) -> f64,
        shapes: &[(usize, usize, usize)],
    ) -> FeaturePyramid {
        // Unchecked: tiny grids here need not shrink from level to level.
        FeaturePyramid::from_levels_unchecked(
            shapes
                .iter()
                .enumerate()
                .map(|(l, &(c, h, w))| Array3::from_shape_fn((c, h, w), |(a, b, d)| f(l, a, b, d)))
                .collect(),
        )
    }

    const SHAPES: [(usize, usize, usize); 3] = [(2, 2, 2), (2, 1, 1), (2, 1, 1)];

    fn random_pyramid(seed: u64, shapes: &[(usize, usize, usize)]) -> FeaturePyramid {
        let mut rng = rng_for(seed, &["loss"]);
        let levels = shapes
            .iter()
            .map(|&(c, h, w)| Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0)))
            .collect();
        FeaturePyramid::from_levels_unchecked(levels)
    }

    #[test]
    fn cosine_examples() {
        assert!((cos_sim(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cos_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cos_sim(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert_eq!(cos_sim(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(cos_sim(&[1.0], &[1.0, 2.0]), Err(Error::Input(_))));
    }

    #[test]
    fn identical_pyramids_have_zero_loss() {
        let p = random_pyramid(1, &SHAPES);
        assert!(layer_cos_loss(&p, &p).unwrap().total.abs() < 1e-12);
    }

    #[test]
    fn orthogonal_everywhere_gives_three() {
        let t = pyramid_from(|_, c, _, _| if c == 0 { 1.0 } else { 0.0 }, &SHAPES);
        let s = pyramid_from(|_, c, _, _| if c == 1 { 2.0 } else { 0.0 }, &SHAPES);
        assert!((layer_cos_loss(&t, &s).unwrap().total - 3.0).abs() < 1e-15);
    }

    #[test]
    fn half_orthogonal_layer_gives_one_half() {
        // Level 0 is 2x2: two locations orthogonal (1 - 0), two parallel (1 - 1);
        // mean over 4 locations = 0.5. Other levels identical.
        let t = pyramid_from(|_, c, _, _| if c == 0 { 1.0 } else { 0.0 }, &SHAPES);
        let s = pyramid_from(
            |l, c, y, _| {
                let flip = l == 0 && y == 0;
                match (flip, c) {
                    (true, 1) | (false, 0) => 1.0,
                    _ => 0.0,
                }
            },
            &SHAPES,
        );
        let r = layer_cos_loss(&t, &s).unwrap();
        assert!((r.total - 0.5).abs() < 1e-15);
        assert!((r.per_layer[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let a = random_pyramid(1, &SHAPES);
        let b = random_pyramid(1, &[(3, 2, 2), (2, 1, 1), (2, 1, 1)]);
        assert!(matches!(layer_cos_loss(&a, &b), Err(Error::Input(_))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let shapes = [(3, 3, 3), (4, 2, 2), (5, 1, 1)];
        for seed in 0..5 {
            let t = random_pyramid(seed, &shapes);
            let s = random_pyramid(seed + 100, &shapes);
            let (_, g) = layer_cos_loss_grad(&t, &s).unwrap();
            let h = 1e-6;
            for l in 0..3 {
                for idx in 0..s.level(l).len() {
                    let mut plus = s.clone();
                    let mut minus = s.clone();
                    plus.levels_mut()[l].as_slice_mut().unwrap()[idx] += h;
                    minus.levels_mut()[l].as_slice_mut().unwrap()[idx] -= h;
                    let fd = (layer_cos_loss(&t, &plus).unwrap().total
                        - layer_cos_loss(&t, &minus).unwrap().total)
                        / (2.0 * h);
                    let an = g.level(l).as_slice().unwrap()[idx];
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                    assert!(rel <= 1e-4, "seed {seed} level {l} idx {idx}: {an} vs {fd}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn loss_terms_bounded_and_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let shapes = [(3, 2, 2), (2, 2, 1), (4, 1, 1)];
            let t = random_pyramid(seed, &shapes);
            let s = random_pyramid(seed ^ 0xdead, &shapes);
            let r = layer_cos_loss(&t, &s).unwrap();
            for term in r.per_layer {
                prop_assert!((0.0..=2.0).contains(&term));
            }
            let mut scaled = s.clone();
            for lvl in scaled.levels_mut() {
                lvl.mapv_inplace(|v| v * scale);
            }
            let r2 = layer_cos_loss(&t, &scaled).unwrap();
            prop_assert!((r.total - r2.total).abs() < 1e-6);
        }
    }
}
