//! Analytic student gradients against central finite differences.

use cddlab::distill::{layer_cos_loss, layer_cos_loss_grad};
use cddlab::models::{
    FeaturePyramid, Fusion, ModelConfig, Nonlinearity, Params, StudentArch, TeacherNet,
};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro_config(act: Nonlinearity, fusion: Fusion) -> ModelConfig {
    ModelConfig {
        in_channels: 1,
        input_size: 8,
        channels: [2, 3, 4],
        strides: [2, 4, 8],
        nonlinearity: act,
        fusion,
        bottleneck: 2,
        bottleneck_kernel: 1,
        decoder_kernels: [3, 1, 1],
    }
}

fn loss(
    arch: &StudentArch,
    params: &Params,
    input: &FeaturePyramid,
    target: &FeaturePyramid,
) -> f64 {
    layer_cos_loss(target, &arch.forward(params, input).unwrap())
        .unwrap()
        .total
}

/// Largest relative error over all parameters for one seed.
fn max_relative_error(act: Nonlinearity, fusion: Fusion, seed: u64) -> (f64, usize) {
    let cfg = micro_config(act, fusion);
    let arch = StudentArch::new(&cfg).unwrap();
    let teacher = TeacherNet::build(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Array3::from_shape_fn((1, 8, 8), |_| rng.random_range(0.0..1.0));
    let input = teacher.forward(&image).unwrap();
    // Target differs from the input so the loss is far from its minimum.
    let other = Array3::from_shape_fn((1, 8, 8), |_| rng.random_range(0.0..1.0));
    let target = teacher.forward(&other).unwrap();
    let params = arch.init_params(seed);

    let (out, trace) = arch.forward_traced(&params, &input).unwrap();
    let (_, grad_out) = layer_cos_loss_grad(&target, &out).unwrap();
    let mut grad = params.zeros_like();
    arch.backward(&params, &trace, &grad_out, &mut grad);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.values_mut()[i] += h;
        let mut minus = params.clone();
        minus.values_mut()[i] -= h;
        let fd = (loss(&arch, &plus, &input, &target) - loss(&arch, &minus, &input, &target))
            / (2.0 * h);
        let an = grad.values()[i];
        // Gradients below 1e-7 are compared absolutely.
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    (worst, params.len())
}

#[test]
fn student_gradients_match_finite_differences() {
    for fusion in [Fusion::SpaceToDepth, Fusion::AvgPool] {
        for act in [
            Nonlinearity::LeakyRelu,
            Nonlinearity::Relu,
            Nonlinearity::Tanh,
        ] {
            for seed in 0..20 {
                let (err, n) = max_relative_error(act, fusion, seed);
                assert!(n <= 500, "micro-config has {n} parameters");
                assert!(
                    err <= 1e-4,
                    "{} {} seed {seed}: relative error {err}",
                    fusion.as_str(),
                    act.as_str()
                );
            }
        }
    }
}
