use ndarray::{Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::layers::{
    avg_pool, conv_backward, conv_forward, depth_to_space, space_to_depth, ConvSpec,
};
use super::{FeaturePyramid, Fusion, ModelConfig, LEVELS};
use crate::seeds::{derive_seed, hex_digest, rng_for};
use crate::{Error, Result};

/// Flat parameter vector of a student, tagged with the layout it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    values: Vec<f64>,
    layout: u64,
}

impl Params {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout_id(&self) -> u64 {
        self.layout
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn digest(&self) -> String {
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        hex_digest(&bytes)
    }

    /// Zero vector with the same layout, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Params {
        Params {
            values: vec![0.0; self.values.len()],
            layout: self.layout,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

impl Slot {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// The four convolutions of the student, in parameter order.
const BOTTLENECK: usize = 0;
const DEC3: usize = 1;
const DEC2: usize = 2;
const DEC1: usize = 3;

/// Student architecture: bottleneck embedding plus decoder. Holds no parameters.
#[derive(Debug, Clone)]
pub struct StudentArch {
    config: ModelConfig,
    convs: [ConvSpec; 4],
    slots: Vec<Slot>,
    num_params: usize,
    layout: u64,
}

/// Intermediate values of one forward pass, consumed by [`StudentArch::backward`].
#[derive(Debug, Clone)]
pub struct StudentTrace {
    fused_cols: ndarray::Array2<f64>,
    code_pre: Array3<f64>,
    dec3_cols: ndarray::Array2<f64>,
    out3: Array3<f64>,
    dec2_cols: ndarray::Array2<f64>,
    out2: Array3<f64>,
    dec1_cols: ndarray::Array2<f64>,
    code_hw: (usize, usize),
    level2_hw: (usize, usize),
}

impl StudentArch {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.channels;
        let s = config.strides;
        let (f3, f2) = (s[2] / s[1], s[1] / s[0]);
        let fused_ch = match config.fusion {
            Fusion::AvgPool => c1 + c2 + c3,
            Fusion::SpaceToDepth => (0..LEVELS)
                .map(|l| config.channels[l] * (s[2] / s[l]).pow(2))
                .sum(),
        };
        let convs = [
            ConvSpec::same(fused_ch, config.bottleneck, config.bottleneck_kernel),
            ConvSpec::same(config.bottleneck, c3, config.decoder_kernels[2]),
            ConvSpec::same(c3, c2 * f3 * f3, config.decoder_kernels[1]),
            ConvSpec::same(c2, c1 * f2 * f2, config.decoder_kernels[0]),
        ];
        let names = ["bottleneck", "decoder3", "decoder2", "decoder1"];
        let mut slots = Vec::new();
        let mut offset = 0;
        for (spec, name) in convs.iter().zip(names) {
            for (suffix, shape) in [
                (
                    "weight",
                    vec![spec.out_ch, spec.in_ch, spec.kernel, spec.kernel],
                ),
                ("bias", vec![spec.out_ch]),
            ] {
                let slot = Slot {
                    name: format!("{name}.{suffix}"),
                    shape,
                    offset,
                };
                offset += slot.len();
                slots.push(slot);
            }
        }
        let layout = derive_seed(0, &[&config.canonical()]);
        Ok(Self {
            config: config.clone(),
            convs,
            slots,
            num_params: offset,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// `(name, shape)` of every parameter array, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.slots
            .iter()
            .map(|s| (s.name.clone(), s.shape.clone()))
            .collect()
    }

    /// Uniform fan-in initialization, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> Params {
        let mut rng = rng_for(seed, &["student"]);
        let mut values = vec![0.0; self.num_params];
        for (i, spec) in self.convs.iter().enumerate() {
            let w = &self.slots[2 * i];
            let bound = (1.0 / spec.col_rows() as f64).sqrt();
            for v in &mut values[w.offset..w.offset + w.len()] {
                *v = rng.random_range(-bound..bound);
            }
            let b = &self.slots[2 * i + 1];
            for v in &mut values[b.offset..b.offset + b.len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Params {
            values,
            layout: self.layout,
        }
    }

    /// Rebuilds parameters from raw values, checking the count.
    pub fn params_from_values(&self, values: Vec<f64>) -> Result<Params> {
        if values.len() != self.num_params {
            return Err(Error::State(format!(
                "expected {} parameter values, got {}",
                self.num_params,
                values.len()
            )));
        }
        Ok(Params {
            values,
            layout: self.layout,
        })
    }

    pub fn check_params(&self, params: &Params) -> Result<()> {
        if params.layout != self.layout || params.values.len() != self.num_params {
            return Err(Error::State(format!(
                "parameter set ({} values) does not belong to this student ({} values)",
                params.values.len(),
                self.num_params
            )));
        }
        Ok(())
    }

    fn weight<'a>(&self, params: &'a Params, conv: usize) -> ArrayView2<'a, f64> {
        let slot = &self.slots[2 * conv];
        let spec = &self.convs[conv];
        ArrayView2::from_shape(
            (spec.out_ch, spec.col_rows()),
            &params.values[slot.offset..slot.offset + slot.len()],
        )
        .expect("weight slot shape")
    }

    fn bias<'a>(&self, params: &'a Params, conv: usize) -> ArrayView1<'a, f64> {
        let slot = &self.slots[2 * conv + 1];
        ArrayView1::from(&params.values[slot.offset..slot.offset + slot.len()])
    }

    fn check_input(&self, input: &FeaturePyramid) -> Result<()> {
        let expect: Vec<_> = self.config.level_shapes().to_vec();
        if input.shapes() != expect {
            return Err(Error::Input(format!(
                "student expects pyramid {expect:?}, got {:?}",
                input.shapes()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &Params, input: &FeaturePyramid) -> Result<FeaturePyramid> {
        self.forward_traced(params, input).map(|(out, _)| out)
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_traced(
        &self,
        params: &Params,
        input: &FeaturePyramid,
    ) -> Result<(FeaturePyramid, StudentTrace)> {
        self.check_params(params)?;
        self.check_input(input)?;
        let act = self.config.nonlinearity;
        let s = self.config.strides;

        let pooled: Vec<Array3<f64>> = (0..LEVELS)
            .map(|l| {
                let f = s[LEVELS - 1] / s[l];
                match self.config.fusion {
                    Fusion::AvgPool => avg_pool(input.level(l), f),
                    Fusion::SpaceToDepth => space_to_depth(input.level(l), f),
                }
            })
            .collect();
        let views: Vec<_> = pooled.iter().map(|p| p.view()).collect();
        let fused = ndarray::concatenate(Axis(0), &views).expect("same spatial size");
        let code_hw = (fused.dim().1, fused.dim().2);

        let (code_pre, fused_cols) = conv_forward(
            &fused,
            self.weight(params, BOTTLENECK),
            self.bias(params, BOTTLENECK),
            &self.convs[BOTTLENECK],
        );
        let code = act.forward(&code_pre);

        let (out3, dec3_cols) = conv_forward(
            &code,
            self.weight(params, DEC3),
            self.bias(params, DEC3),
            &self.convs[DEC3],
        );
        let (pre2, dec2_cols) = conv_forward(
            &act.forward(&out3),
            self.weight(params, DEC2),
            self.bias(params, DEC2),
            &self.convs[DEC2],
        );
        let out2 = depth_to_space(&pre2, s[2] / s[1]);
        let level2_hw = (out2.dim().1, out2.dim().2);
        let (pre1, dec1_cols) = conv_forward(
            &act.forward(&out2),
            self.weight(params, DEC1),
            self.bias(params, DEC1),
            &self.convs[DEC1],
        );
        let out1 = depth_to_space(&pre1, s[1] / s[0]);

        let trace = StudentTrace {
            fused_cols,
            code_pre,
            dec3_cols,
            out3: out3.clone(),
            dec2_cols,
            out2: out2.clone(),
            dec1_cols,
            code_hw,
            level2_hw,
        };
        Ok((
            FeaturePyramid::from_levels_unchecked(vec![out1, out2, out3]),
            trace,
        ))
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(
        &self,
        params: &Params,
        trace: &StudentTrace,
        grad_out: &FeaturePyramid,
        grad: &mut Params,
    ) {
        let act = self.config.nonlinearity;
        let s = self.config.strides;

        let g1 = conv_backward(
            &trace.dec1_cols,
            &space_to_depth(grad_out.level(0), s[1] / s[0]),
            self.weight(params, DEC1),
            &self.convs[DEC1],
            trace.level2_hw,
            true,
        );
        self.accumulate(grad, DEC1, &g1);
        let mut d_out2 = act.backward(&trace.out2, &g1.input.expect("input grad"));
        d_out2 += grad_out.level(1);

        let g2 = conv_backward(
            &trace.dec2_cols,
            &space_to_depth(&d_out2, s[2] / s[1]),
            self.weight(params, DEC2),
            &self.convs[DEC2],
            trace.code_hw,
            true,
        );
        self.accumulate(grad, DEC2, &g2);
        let mut d_out3 = act.backward(&trace.out3, &g2.input.expect("input grad"));
        d_out3 += grad_out.level(2);

        let g3 = conv_backward(
            &trace.dec3_cols,
            &d_out3,
            self.weight(params, DEC3),
            &self.convs[DEC3],
            trace.code_hw,
            true,
        );
        self.accumulate(grad, DEC3, &g3);
        let d_code_pre = act.backward(&trace.code_pre, &g3.input.expect("input grad"));

        let g0 = conv_backward(
            &trace.fused_cols,
            &d_code_pre,
            self.weight(params, BOTTLENECK),
            &self.convs[BOTTLENECK],
            trace.code_hw,
            false,
        );
        self.accumulate(grad, BOTTLENECK, &g0);
    }

    fn accumulate(&self, grad: &mut Params, conv: usize, g: &super::layers::ConvGrads) {
        let w = &self.slots[2 * conv];
        for (dst, src) in grad.values[w.offset..w.offset + w.len()]
            .iter_mut()
            .zip(g.weight.iter())
        {
            *dst += src;
        }
        let b = &self.slots[2 * conv + 1];
        for (dst, src) in grad.values[b.offset..b.offset + b.len()]
            .iter_mut()
            .zip(g.bias.iter())
        {
            *dst += src;
        }
    }
}

/// A student architecture together with one owned parameter set.
#[derive(Debug, Clone)]
pub struct StudentNet {
    arch: StudentArch,
    params: Params,
    init_seed: u64,
}

impl StudentNet {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let arch = StudentArch::new(config)?;
        let params = arch.init_params(seed);
        Ok(Self {
            arch,
            params,
            init_seed: seed,
        })
    }

    pub fn arch(&self) -> &StudentArch {
        &self.arch
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    pub fn forward(&self, input: &FeaturePyramid) -> Result<FeaturePyramid> {
        self.arch.forward(&self.params, input)
    }

    /// Deep copy of the current parameters.
    pub fn clone_params(&self) -> Params {
        self.params.clone()
    }

    pub fn load_params(&mut self, params: Params) -> Result<()> {
        self.arch.check_params(&params)?;
        self.params = params;
        Ok(())
    }
}
