use std::collections::HashSet;
use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ImageSample, Label, Origin};
use crate::seeds::rng_for;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternFamily {
    Stripes,
    Checker,
    Blobs,
}

impl PatternFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternFamily::Stripes => "stripes",
            PatternFamily::Checker => "checker",
            PatternFamily::Blobs => "blobs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stripes" => Some(PatternFamily::Stripes),
            "checker" => Some(PatternFamily::Checker),
            "blobs" => Some(PatternFamily::Blobs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefectShape {
    Rectangle,
    Ellipse,
    Blob,
}

impl DefectShape {
    pub const ALL: [DefectShape; 3] = [
        DefectShape::Rectangle,
        DefectShape::Ellipse,
        DefectShape::Blob,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DefectShape::Rectangle => "rect",
            DefectShape::Ellipse => "ellipse",
            DefectShape::Blob => "blob",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rect" | "rectangle" => Some(DefectShape::Rectangle),
            "ellipse" => Some(DefectShape::Ellipse),
            "blob" => Some(DefectShape::Blob),
            _ => None,
        }
    }
}

/// How a defect alters the pixels under its mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DefectAppearance {
    /// Blend toward a fixed color.
    Tint([f64; 3]),
    /// Replace the local texture with the pattern rotated by 90 degrees.
    Rotated,
    /// Blend toward per-pixel gray noise.
    Noise,
}

impl DefectAppearance {
    fn tag(&self) -> &'static str {
        match self {
            DefectAppearance::Tint(_) => "tint",
            DefectAppearance::Rotated => "rot",
            DefectAppearance::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefectSpec {
    /// Defect extent in pixels; mask areas land in `[min_size^2, max_size^2]`.
    pub min_size: usize,
    pub max_size: usize,
    /// Blend weight toward the defect appearance, in `(0, 1]`.
    pub contrast: f64,
    pub shapes: Vec<DefectShape>,
    /// Number of distinct defect types in the pool (shape x appearance combinations).
    pub n_types: usize,
}

impl Default for DefectSpec {
    fn default() -> Self {
        Self {
            min_size: 4,
            max_size: 8,
            contrast: 0.5,
            shapes: DefectShape::ALL.to_vec(),
            n_types: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenCounts {
    pub n_train_normal: usize,
    pub n_test_normal: usize,
    pub n_anomalous_pool: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub image_size: usize,
    pub channels: usize,
    pub pattern: PatternFamily,
    /// Amplitude of per-sample variation around the family's shared structure.
    pub jitter: f64,
    pub defect: DefectSpec,
    pub counts: GenCounts,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            pattern: PatternFamily::Stripes,
            jitter: 0.05,
            defect: DefectSpec::default(),
            counts: GenCounts {
                n_train_normal: 200,
                n_test_normal: 50,
                n_anomalous_pool: 60,
            },
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::config("data.image_size", "must be at least 16"));
        }
        if self.channels != 3 {
            return Err(Error::config(
                "data.channels",
                "only 3-channel images are generated",
            ));
        }
        if !(0.0..=0.5).contains(&self.jitter) {
            return Err(Error::config("data.jitter", "must lie in [0, 0.5]"));
        }
        let d = &self.defect;
        if d.min_size == 0 || d.min_size > d.max_size {
            return Err(Error::config(
                "data.defect_min",
                "must be positive and <= data.defect_max",
            ));
        }
        let area = (self.image_size * self.image_size) as f64;
        if ((d.min_size * d.min_size) as f64) < 0.01 * area {
            return Err(Error::config(
                "data.defect_min",
                "defect area below 1% of the image",
            ));
        }
        if ((d.max_size * d.max_size) as f64) > 0.25 * area {
            return Err(Error::config(
                "data.defect_max",
                "defect area above 25% of the image",
            ));
        }
        if !(d.contrast > 0.0 && d.contrast <= 1.0) {
            return Err(Error::config("data.contrast", "must lie in (0, 1]"));
        }
        if d.shapes.is_empty() {
            return Err(Error::config(
                "data.defect_shapes",
                "at least one shape is required",
            ));
        }
        if d.n_types == 0 {
            return Err(Error::config(
                "data.defect_types",
                "at least one defect type is required",
            ));
        }
        Ok(())
    }
}

/// Output of [`generate_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train_normals: Vec<ImageSample>,
    pub test_normals: Vec<ImageSample>,
    pub anomalies: Vec<ImageSample>,
}

/// Shared structure of one pattern family instance.
#[derive(Debug, Clone)]
struct Family {
    pattern: PatternFamily,
    size: usize,
    colors: [[f64; 3]; 2],
    period: f64,
    angle: f64,
    jitter: f64,
}

#[derive(Debug, Clone, Copy)]
struct SampleJitter {
    phase_x: f64,
    phase_y: f64,
    angle: f64,
    gain: f64,
}

#[derive(Debug, Clone)]
struct DefectType {
    shape: DefectShape,
    appearance: DefectAppearance,
}

impl DefectType {
    fn name(&self, index: usize) -> String {
        format!("t{index}{}{}", self.shape.as_str(), self.appearance.tag())
    }
}

/// Generates train normals, test normals and an anomaly pool. Pure in `spec`.
pub fn generate_corpus(spec: &GenSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, &["family"]);
    let family = Family::sample(spec, &mut rng);
    let types = defect_types(spec, &mut rng);

    let train_normals = (0..spec.counts.n_train_normal)
        .map(|i| {
            let mut rng = rng_for(spec.seed, &["train-normal", &i.to_string()]);
            let pixels = family.render(&mut rng);
            ImageSample::normal(format!("train-normal-{i:04}"), pixels, Origin::Generated)
        })
        .collect::<Result<Vec<_>>>()?;
    let test_normals = (0..spec.counts.n_test_normal)
        .map(|i| {
            let mut rng = rng_for(spec.seed, &["test-normal", &i.to_string()]);
            let pixels = family.render(&mut rng);
            ImageSample::normal(format!("test-normal-{i:04}"), pixels, Origin::Generated)
        })
        .collect::<Result<Vec<_>>>()?;
    let anomalies = (0..spec.counts.n_anomalous_pool)
        .map(|i| {
            let mut rng = rng_for(spec.seed, &["anomaly", &i.to_string()]);
            let type_index = rng.random_range(0..types.len());
            let kind = &types[type_index];
            let (pixels, mask) = family.render_defective(&mut rng, kind, &spec.defect);
            ImageSample::new(
                format!("anomaly-{}-{i:04}", kind.name(type_index)),
                pixels,
                Label::Anomalous,
                mask,
                Origin::Generated,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        train_normals,
        test_normals,
        anomalies,
    })
}

fn defect_types(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Vec<DefectType> {
    (0..spec.defect.n_types)
        .map(|t| {
            let shape = spec.defect.shapes[t % spec.defect.shapes.len()];
            let appearance = match t % 3 {
                0 => DefectAppearance::Tint(random_color(rng)),
                1 => DefectAppearance::Noise,
                _ => DefectAppearance::Rotated,
            };
            DefectType { shape, appearance }
        })
        .collect()
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Saturated: one channel high, one low, one anywhere.
    let hi = rng.random_range(0..3);
    let lo = (hi + rng.random_range(1..3)) % 3;
    let mut c = [0.0; 3];
    for (k, v) in c.iter_mut().enumerate() {
        *v = if k == hi {
            rng.random_range(0.85..1.0)
        } else if k == lo {
            rng.random_range(0.0..0.15)
        } else {
            rng.random_range(0.0..1.0)
        };
    }
    c
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

impl Family {
    fn sample(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Self {
        let c0 = [
            rng.random_range(0.15..0.45),
            rng.random_range(0.15..0.45),
            rng.random_range(0.15..0.45),
        ];
        let c1 = [
            rng.random_range(0.55..0.85),
            rng.random_range(0.55..0.85),
            rng.random_range(0.55..0.85),
        ];
        let size = spec.image_size as f64;
        Self {
            pattern: spec.pattern,
            size: spec.image_size,
            colors: [c0, c1],
            period: size / rng.random_range(4.0..6.0),
            angle: rng.random_range(0.0..PI),
            jitter: spec.jitter,
        }
    }

    fn sample_jitter(&self, rng: &mut ChaCha8Rng) -> SampleJitter {
        let j = self.jitter;
        SampleJitter {
            phase_x: rng.random_range(0.0..1.0),
            phase_y: rng.random_range(0.0..1.0),
            angle: if j > 0.0 {
                rng.random_range(-j..j)
            } else {
                0.0
            },
            gain: 1.0
                + if j > 0.0 {
                    rng.random_range(-j..j)
                } else {
                    0.0
                },
        }
    }

    /// Pattern intensity in `[0, 1]` at pixel `(x, y)`; `rotate` turns the pattern by 90 degrees.
    fn value(&self, x: f64, y: f64, jit: &SampleJitter, rotate: bool) -> f64 {
        let angle = self.angle + jit.angle + if rotate { PI / 2.0 } else { 0.0 };
        let (s, c) = angle.sin_cos();
        let u = (x * c + y * s) / self.period + jit.phase_x;
        let v = (-x * s + y * c) / self.period + jit.phase_y;
        match self.pattern {
            PatternFamily::Stripes => 0.5 + 0.5 * (2.0 * PI * u).sin(),
            PatternFamily::Checker => {
                let prod = (2.0 * PI * u).sin() * (2.0 * PI * v).sin();
                0.5 + 0.5 * (4.0 * prod).tanh()
            }
            PatternFamily::Blobs => {
                // Lattice of round dots, radius a quarter period.
                let du = u - u.round();
                let dv = v - v.round();
                let r2 = (du * du + dv * dv) * 16.0;
                (-r2 * 2.0).exp()
            }
        }
    }

    fn render_with(&self, rng: &mut ChaCha8Rng, jit: &SampleJitter) -> Array3<f64> {
        let n = self.size;
        let mut img = Array3::zeros((3, n, n));
        for y in 0..n {
            for x in 0..n {
                let v = self.value(x as f64, y as f64, jit, false);
                for ch in 0..3 {
                    let base = self.colors[0][ch] + (self.colors[1][ch] - self.colors[0][ch]) * v;
                    let noise = if self.jitter > 0.0 {
                        rng.random_range(-self.jitter..self.jitter) * 0.5
                    } else {
                        0.0
                    };
                    img[[ch, y, x]] = quantize(0.5 + (base - 0.5) * jit.gain + noise);
                }
            }
        }
        img
    }

    fn render(&self, rng: &mut ChaCha8Rng) -> Array3<f64> {
        let jit = self.sample_jitter(rng);
        self.render_with(rng, &jit)
    }

    fn render_defective(
        &self,
        rng: &mut ChaCha8Rng,
        kind: &DefectType,
        spec: &DefectSpec,
    ) -> (Array3<f64>, Array2<u8>) {
        let jit = self.sample_jitter(rng);
        let mut img = self.render_with(rng, &jit);
        let mask = defect_mask(rng, kind.shape, self.size, spec.min_size, spec.max_size);
        let a = spec.contrast;
        for y in 0..self.size {
            for x in 0..self.size {
                if mask[[y, x]] == 0 {
                    continue;
                }
                let gray = rng.random_range(0.0..1.0);
                for ch in 0..3 {
                    let target = match kind.appearance {
                        DefectAppearance::Tint(color) => color[ch],
                        DefectAppearance::Noise => gray,
                        DefectAppearance::Rotated => {
                            let v = self.value(x as f64, y as f64, &jit, true);
                            self.colors[0][ch] + (self.colors[1][ch] - self.colors[0][ch]) * v
                        }
                    };
                    let p = img[[ch, y, x]];
                    img[[ch, y, x]] = quantize((1.0 - a) * p + a * target);
                }
            }
        }
        (img, mask)
    }
}

/// Samples a defect mask whose area lies in `[min^2, max^2]`, fully inside the image.
fn defect_mask(
    rng: &mut ChaCha8Rng,
    shape: DefectShape,
    size: usize,
    min: usize,
    max: usize,
) -> Array2<u8> {
    let (lo, hi) = (min * min, max * max);
    loop {
        let w = rng.random_range(min..=max);
        let h = rng.random_range(min..=max);
        let mask = match shape {
            DefectShape::Rectangle => {
                let x0 = rng.random_range(0..=size - w);
                let y0 = rng.random_range(0..=size - h);
                let mut m = Array2::zeros((size, size));
                m.slice_mut(ndarray::s![y0..y0 + h, x0..x0 + w]).fill(1u8);
                m
            }
            DefectShape::Ellipse => {
                // Semi-axes chosen so the continuous area equals w * h.
                let ax = w as f64 / PI.sqrt();
                let ay = h as f64 / PI.sqrt();
                let margin_x = ax.ceil() as usize + 1;
                let margin_y = ay.ceil() as usize + 1;
                if 2 * margin_x >= size || 2 * margin_y >= size {
                    continue;
                }
                let cx = rng.random_range(margin_x as f64..(size - margin_x) as f64);
                let cy = rng.random_range(margin_y as f64..(size - margin_y) as f64);
                Array2::from_shape_fn((size, size), |(y, x)| {
                    let dx = (x as f64 + 0.5 - cx) / ax;
                    let dy = (y as f64 + 0.5 - cy) / ay;
                    u8::from(dx * dx + dy * dy <= 1.0)
                })
            }
            DefectShape::Blob => grow_blob(rng, size, w * h, max),
        };
        let area = mask.iter().filter(|&&m| m == 1).count();
        if (lo..=hi).contains(&area) {
            return mask;
        }
    }
}

/// Random 4-connected region of exactly `area` pixels grown from a seed pixel
/// and confined to a `2 * max` box.
fn grow_blob(rng: &mut ChaCha8Rng, size: usize, area: usize, max: usize) -> Array2<u8> {
    let span = (2 * max).min(size);
    let bx = rng.random_range(0..=size - span);
    let by = rng.random_range(0..=size - span);
    let start = (by + span / 2, bx + span / 2);
    let mut mask = Array2::zeros((size, size));
    let mut members = vec![start];
    let mut seen: HashSet<(usize, usize)> = HashSet::from([start]);
    mask[start] = 1;
    let mut frontier: Vec<(usize, usize)> = Vec::new();
    let push_neighbors = |p: (usize, usize),
                          frontier: &mut Vec<(usize, usize)>,
                          seen: &mut HashSet<(usize, usize)>| {
        let (y, x) = p;
        let cands = [
            (y.wrapping_sub(1), x),
            (y + 1, x),
            (y, x.wrapping_sub(1)),
            (y, x + 1),
        ];
        for (cy, cx) in cands {
            if cy >= by && cy < by + span && cx >= bx && cx < bx + span && seen.insert((cy, cx)) {
                frontier.push((cy, cx));
            }
        }
    };
    push_neighbors(start, &mut frontier, &mut seen);
    while members.len() < area && !frontier.is_empty() {
        let pick = rng.random_range(0..frontier.len());
        let p = frontier.swap_remove(pick);
        mask[p] = 1;
        members.push(p);
        push_neighbors(p, &mut frontier, &mut seen);
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> GenSpec {
        GenSpec {
            counts: GenCounts {
                n_train_normal: 200,
                n_test_normal: 50,
                n_anomalous_pool: 60,
            },
            seed,
            ..GenSpec::default()
        }
    }

    #[test]
    fn counts_and_shapes() {
        let c = generate_corpus(&small_spec(7)).unwrap();
        assert_eq!(c.train_normals.len(), 200);
        assert_eq!(c.test_normals.len(), 50);
        assert_eq!(c.anomalies.len(), 60);
        for s in c
            .train_normals
            .iter()
            .chain(&c.test_normals)
            .chain(&c.anomalies)
        {
            assert_eq!(s.pixels().dim(), (3, 32, 32));
            assert_eq!(s.mask().dim(), (32, 32));
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_corpus(&small_spec(7)).unwrap();
        let b = generate_corpus(&small_spec(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small_spec(8)).unwrap();
        assert_ne!(a.train_normals[0].pixels(), c.train_normals[0].pixels());
    }

    #[test]
    fn mask_area_bounds_over_seeds() {
        for seed in 0..100 {
            let spec = GenSpec {
                counts: GenCounts {
                    n_train_normal: 0,
                    n_test_normal: 0,
                    n_anomalous_pool: 6,
                },
                seed,
                ..GenSpec::default()
            };
            for s in generate_corpus(&spec).unwrap().anomalies {
                let area = s.mask().iter().filter(|&&m| m == 1).count();
                assert!((16..=64).contains(&area), "seed {seed}: area {area}");
            }
        }
    }

    #[test]
    fn blob_is_connected() {
        let mut rng = rng_for(3, &["blob"]);
        for _ in 0..50 {
            let m = grow_blob(&mut rng, 32, 40, 8);
            assert_eq!(m.iter().filter(|&&v| v == 1).count(), 40);
        }
    }

    #[test]
    fn defect_only_touches_mask() {
        let spec = small_spec(11);
        let family = Family::sample(&spec, &mut rng_for(spec.seed, &["family"]));
        let types = defect_types(&spec, &mut rng_for(1, &["types"]));
        for (t, kind) in types.iter().enumerate() {
            let mut r1 = rng_for(5, &["x", &t.to_string()]);
            let mut r2 = r1.clone();
            let (img, mask) = family.render_defective(&mut r1, kind, &spec.defect);
            // Same stream up to the defect: jitter then base render.
            let jit = family.sample_jitter(&mut r2);
            let clean = family.render_with(&mut r2, &jit);
            for y in 0..32 {
                for x in 0..32 {
                    if mask[[y, x]] == 0 {
                        for ch in 0..3 {
                            assert_eq!(img[[ch, y, x]], clean[[ch, y, x]]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let spec = GenSpec {
            image_size: 8,
            ..GenSpec::default()
        };
        match spec.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "data.image_size"),
            other => panic!("unexpected {other:?}"),
        }
        let mut spec = GenSpec::default();
        spec.defect.max_size = 20;
        match spec.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "data.defect_max"),
            other => panic!("unexpected {other:?}"),
        }
        let mut spec = GenSpec::default();
        spec.defect.min_size = 2;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn pool_mixes_several_types() {
        let c = generate_corpus(&small_spec(3)).unwrap();
        let kinds: HashSet<&str> = c
            .anomalies
            .iter()
            .map(|s| s.id().split('-').nth(1).unwrap())
            .collect();
        assert!(kinds.len() >= 3, "{kinds:?}");
    }
}
