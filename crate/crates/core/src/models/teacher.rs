use ndarray::{Array1, Array2, Array3};
use rand_distr::{Distribution, Normal, StandardNormal};

use super::layers::{conv_forward, ConvSpec};
use super::{FeaturePyramid, ModelConfig, LEVELS};
use crate::seeds::{hex_digest, rng_for};
use crate::{Error, Result};

/// Anything that maps an image to a three-level feature pyramid.
///
/// [`TeacherNet`] is the built-in implementation; real-data runs can plug in
/// an external backbone with the same contract.
pub trait FeatureExtractor: Send + Sync {
    fn level_shapes(&self) -> [(usize, usize, usize); LEVELS];

    fn extract(&self, image: &Array3<f64>) -> Result<FeaturePyramid>;

    fn extract_batch(&self, images: &[&Array3<f64>]) -> Result<Vec<FeaturePyramid>> {
        images.iter().map(|img| self.extract(img)).collect()
    }
}

#[derive(Debug, Clone)]
struct Stage {
    spec: ConvSpec,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

/// Number of noise images used to calibrate the teacher's output scale.
const CALIBRATION_IMAGES: usize = 8;

/// Pixels enter the teacher as `(v - INPUT_MEAN) / INPUT_STD`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

/// Frozen, randomly initialized three-stage convolutional encoder.
///
/// Parameters are drawn once from the seed and never exposed mutably. After
/// drawing, each stage's weights are rescaled so that its outputs on seeded
/// standard-normal inputs have unit root-mean-square (a data-independent
/// layer-wise calibration). With standardized pixels this keeps features of
/// natural-looking images near unit scale for every configuration.
#[derive(Debug, Clone)]
pub struct TeacherNet {
    config: ModelConfig,
    stages: Vec<Stage>,
    init_seed: u64,
}

impl TeacherNet {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &["teacher"]);
        let mut stages = Vec::with_capacity(LEVELS);
        let mut in_ch = config.in_channels;
        let mut prev_stride = 1;
        for l in 0..LEVELS {
            let spec = ConvSpec {
                in_ch,
                out_ch: config.channels[l],
                kernel: 3,
                stride: config.strides[l] / prev_stride,
                pad: 1,
            };
            let fan_in = spec.col_rows() as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            let weight =
                Array2::from_shape_fn((spec.out_ch, spec.col_rows()), |_| normal.sample(&mut rng));
            stages.push(Stage {
                spec,
                weight,
                bias: Array1::zeros(spec.out_ch),
            });
            in_ch = config.channels[l];
            prev_stride = config.strides[l];
        }
        let mut teacher = Self {
            config: config.clone(),
            stages,
            init_seed: seed,
        };
        teacher.calibrate(seed);
        Ok(teacher)
    }

    fn calibrate(&mut self, seed: u64) {
        let mut rng = rng_for(seed, &["teacher-calibration"]);
        let (c, s) = (self.config.in_channels, self.config.input_size);
        let mut xs: Vec<Array3<f64>> = (0..CALIBRATION_IMAGES)
            .map(|_| Array3::from_shape_fn((c, s, s), |_| StandardNormal.sample(&mut rng)))
            .collect();
        let act = self.config.nonlinearity;
        for stage in &mut self.stages {
            let outs: Vec<Array3<f64>> = xs
                .iter()
                .map(|x| {
                    act.forward(
                        &conv_forward(x, stage.weight.view(), stage.bias.view(), &stage.spec).0,
                    )
                })
                .collect();
            let n: usize = outs.iter().map(|o| o.len()).sum();
            let rms = (outs
                .iter()
                .flat_map(|o| o.iter())
                .map(|v| v * v)
                .sum::<f64>()
                / n as f64)
                .sqrt();
            if rms > 0.0 && rms.is_finite() {
                // Exact for the rectifiers (positively homogeneous, zero bias).
                stage.weight.mapv_inplace(|w| w / rms);
            }
            xs = xs
                .iter()
                .map(|x| {
                    act.forward(
                        &conv_forward(x, stage.weight.view(), stage.bias.view(), &stage.spec).0,
                    )
                })
                .collect();
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn num_params(&self) -> usize {
        self.stages
            .iter()
            .map(|s| s.weight.len() + s.bias.len())
            .sum()
    }

    /// Hex digest over every parameter bit pattern.
    pub fn param_digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.num_params() * 8);
        for s in &self.stages {
            for v in s.weight.iter().chain(s.bias.iter()) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        hex_digest(&bytes)
    }

    pub fn forward(&self, image: &Array3<f64>) -> Result<FeaturePyramid> {
        let expect = (
            self.config.in_channels,
            self.config.input_size,
            self.config.input_size,
        );
        if image.dim() != expect {
            return Err(Error::Input(format!(
                "teacher expects image {expect:?}, got {:?}",
                image.dim()
            )));
        }
        let mut x = image.mapv(|v| (v - INPUT_MEAN) / INPUT_STD);
        let mut levels = Vec::with_capacity(LEVELS);
        for stage in &self.stages {
            let (pre, _) = conv_forward(&x, stage.weight.view(), stage.bias.view(), &stage.spec);
            x = self.config.nonlinearity.forward(&pre);
            levels.push(x.clone());
        }
        Ok(FeaturePyramid::from_levels_unchecked(levels))
    }
}

impl FeatureExtractor for TeacherNet {
    fn level_shapes(&self) -> [(usize, usize, usize); LEVELS] {
        self.config.level_shapes()
    }

    fn extract(&self, image: &Array3<f64>) -> Result<FeaturePyramid> {
        self.forward(image)
    }
}

#[cfg(test)]
mod tests {
    use ndarray::Array3;

    use super::*;
    use crate::datagen::{generate_corpus, GenCounts, GenSpec};
    use crate::distill::cos_sim;

    #[test]
    fn level_shapes_and_determinism() {
        let cfg = ModelConfig::default();
        let t = TeacherNet::build(&cfg, 3).unwrap();
        let p = t.forward(&Array3::from_elem((3, 32, 32), 0.3)).unwrap();
        assert_eq!(p.shapes(), vec![(16, 16, 16), (32, 8, 8), (64, 4, 4)]);
        let t2 = TeacherNet::build(&cfg, 3).unwrap();
        assert_eq!(t.param_digest(), t2.param_digest());
        assert_ne!(
            t.param_digest(),
            TeacherNet::build(&cfg, 4).unwrap().param_digest()
        );
    }

    #[test]
    fn zero_image_is_finite() {
        let t = TeacherNet::build(&ModelConfig::default(), 0).unwrap();
        assert!(t.forward(&Array3::zeros((3, 32, 32))).unwrap().is_finite());
    }

    #[test]
    fn wrong_shape_is_input_error() {
        let t = TeacherNet::build(&ModelConfig::default(), 0).unwrap();
        assert!(matches!(
            t.forward(&Array3::zeros((3, 16, 16))),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn batch_preserves_order() {
        let t = TeacherNet::build(&ModelConfig::default(), 1).unwrap();
        let imgs: Vec<Array3<f64>> = (0..3)
            .map(|i| Array3::from_elem((3, 32, 32), 0.2 * i as f64))
            .collect();
        let refs: Vec<&Array3<f64>> = imgs.iter().collect();
        let batch = t.extract_batch(&refs).unwrap();
        for (img, p) in imgs.iter().zip(&batch) {
            assert_eq!(&t.forward(img).unwrap(), p);
        }
    }

    /// Mean over locations of `query` of the best cosine against any location of
    /// `reference`, summed over levels. Samples differ by a random pattern phase,
    /// so locations are matched before comparing.
    fn matched_location_cos(query: &FeaturePyramid, reference: &FeaturePyramid) -> f64 {
        let vectors = |lvl: &Array3<f64>| -> Vec<Vec<f64>> {
            let (c, h, w) = lvl.dim();
            (0..h * w)
                .map(|i| (0..c).map(|k| lvl[[k, i / w, i % w]]).collect())
                .collect()
        };
        let mut total = 0.0;
        for (lq, lr) in query.levels().iter().zip(reference.levels()) {
            let (vq, vr) = (vectors(lq), vectors(lr));
            let best: f64 = vq
                .iter()
                .map(|q| {
                    vr.iter()
                        .map(|r| cos_sim(q, r).unwrap())
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum();
            total += best / vq.len() as f64;
        }
        total
    }

    #[test]
    fn normal_pairs_are_more_similar_than_normal_anomalous_pairs() {
        let spec = GenSpec {
            counts: GenCounts {
                n_train_normal: 100,
                n_test_normal: 0,
                n_anomalous_pool: 100,
            },
            seed: 21,
            ..GenSpec::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let t = TeacherNet::build(&ModelConfig::default(), 2).unwrap();
        let (mut nn, mut na) = (0.0, 0.0);
        for i in 0..100 {
            let a = t.forward(corpus.train_normals[i].pixels()).unwrap();
            let b = t
                .forward(corpus.train_normals[(i + 1) % 100].pixels())
                .unwrap();
            let c = t.forward(corpus.anomalies[i].pixels()).unwrap();
            nn += matched_location_cos(&b, &a);
            na += matched_location_cos(&c, &a);
        }
        assert!(nn > na, "normal/normal {nn} vs anomalous/normal {na}");
    }

    #[test]
    fn translation_by_one_stride_shifts_level_one() {
        // A stripe texture shifted by two pixels (the level-1 stride) gives level-1
        // features shifted by one cell, away from the zero-padded border.
        let img = Array3::from_shape_fn((3, 32, 32), |(c, y, x)| {
            0.5 + 0.3 * ((x as f64 * 0.7 + y as f64 * 0.3 + c as f64).sin())
        });
        let shifted = Array3::from_shape_fn((3, 32, 32), |(c, y, x)| {
            0.5 + 0.3 * (((x as f64 + 2.0) * 0.7 + y as f64 * 0.3 + c as f64).sin())
        });
        let t = TeacherNet::build(&ModelConfig::default(), 5).unwrap();
        let a = t.forward(&img).unwrap();
        let b = t.forward(&shifted).unwrap();
        let (la, lb) = (a.level(0), b.level(0));
        let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
        for c in 0..16 {
            for y in 1..15 {
                for x in 1..14 {
                    let u = la[[c, y, x + 1]];
                    let v = lb[[c, y, x]];
                    num += u * v;
                    da += u * u;
                    db += v * v;
                }
            }
        }
        let corr = num / (da.sqrt() * db.sqrt());
        assert!(corr > 0.999, "correlation {corr}");
    }
}
