//! Single-sample building blocks with explicit backward passes.
//!
//! Feature maps are `[C, H, W]`. Convolutions go through im2col and a GEMM.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

use super::Nonlinearity;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn same(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            pad: kernel / 2,
        }
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// `[C*k*k, OH*OW]` patch matrix, zero outside the padded border.
pub(crate) fn im2col(x: &Array3<f64>, spec: &ConvSpec) -> Array2<f64> {
    let (c, h, w) = x.dim();
    debug_assert_eq!(c, spec.in_ch);
    let (oh, ow) = (spec.out_size(h), spec.out_size(w));
    let k = spec.kernel;
    let mut cols = Array2::zeros((spec.col_rows(), oh * ow));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cs[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &xs[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im(cols: &Array2<f64>, spec: &ConvSpec, h: usize, w: usize) -> Array3<f64> {
    let (oh, ow) = (spec.out_size(h), spec.out_size(w));
    let k = spec.kernel;
    let mut x = Array3::zeros((spec.in_ch, h, w));
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = cols.as_slice().expect("standard layout");
    for ci in 0..spec.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cs[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            xs[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Returns the output map and the patch matrix needed for the backward pass.
pub(crate) fn conv_forward(
    x: &Array3<f64>,
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    spec: &ConvSpec,
) -> (Array3<f64>, Array2<f64>) {
    let (_, h, w) = x.dim();
    let (oh, ow) = (spec.out_size(h), spec.out_size(w));
    let cols = im2col(x, spec);
    let mut out = weight.dot(&cols);
    for (mut row, b) in out.axis_iter_mut(Axis(0)).zip(bias.iter()) {
        row += *b;
    }
    let out = out
        .into_shape_with_order((spec.out_ch, oh, ow))
        .expect("conv output shape");
    (out, cols)
}

pub(crate) struct ConvGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub input: Option<Array3<f64>>,
}

pub(crate) fn conv_backward(
    cols: &Array2<f64>,
    grad_out: &Array3<f64>,
    weight: ArrayView2<f64>,
    spec: &ConvSpec,
    in_hw: (usize, usize),
    need_input: bool,
) -> ConvGrads {
    let (oc, oh, ow) = grad_out.dim();
    let g = grad_out
        .view()
        .into_shape_with_order((oc, oh * ow))
        .expect("standard layout");
    let dw = g.dot(&cols.t());
    let db = g.sum_axis(Axis(1));
    let input = need_input.then(|| {
        let dcols = weight.t().dot(&g);
        col2im(&dcols, spec, in_hw.0, in_hw.1)
    });
    ConvGrads {
        weight: dw,
        bias: db,
        input,
    }
}

pub(crate) fn avg_pool(x: &Array3<f64>, factor: usize) -> Array3<f64> {
    if factor == 1 {
        return x.clone();
    }
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / factor, w / factor);
    let scale = 1.0 / (factor * factor) as f64;
    Array3::from_shape_fn((c, oh, ow), |(ci, oy, ox)| {
        let mut s = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                s += x[[ci, oy * factor + dy, ox * factor + dx]];
            }
        }
        s * scale
    })
}

/// Rearranges `[C * f * f, H, W]` into `[C, H * f, W * f]`; channel `c * f * f + dy * f + dx`
/// fills sub-pixel `(dy, dx)` of channel `c`.
pub(crate) fn depth_to_space(x: &Array3<f64>, factor: usize) -> Array3<f64> {
    if factor == 1 {
        return x.clone();
    }
    let (cf, h, w) = x.dim();
    let ff = factor * factor;
    Array3::from_shape_fn((cf / ff, h * factor, w * factor), |(c, y, xx)| {
        x[[
            c * ff + (y % factor) * factor + xx % factor,
            y / factor,
            xx / factor,
        ]]
    })
}

/// Inverse permutation of [`depth_to_space`]; also its adjoint.
pub(crate) fn space_to_depth(x: &Array3<f64>, factor: usize) -> Array3<f64> {
    if factor == 1 {
        return x.clone();
    }
    let (c, h, w) = x.dim();
    let ff = factor * factor;
    Array3::from_shape_fn((c * ff, h / factor, w / factor), |(k, y, xx)| {
        let (ci, sub) = (k / ff, k % ff);
        x[[ci, y * factor + sub / factor, xx * factor + sub % factor]]
    })
}

impl Nonlinearity {
    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Relu => v.max(0.0),
            Nonlinearity::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
            Nonlinearity::Tanh => v.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation value.
    pub(crate) fn derivative(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::LeakyRelu => {
                if v > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Nonlinearity::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }

    pub(crate) fn forward(self, x: &Array3<f64>) -> Array3<f64> {
        x.mapv(|v| self.apply(v))
    }

    /// `grad * f'(pre)` elementwise.
    pub(crate) fn backward(self, pre: &Array3<f64>, grad: &Array3<f64>) -> Array3<f64> {
        let mut out = grad.clone();
        out.zip_mut_with(pre, |g, &p| *g *= self.derivative(p));
        out
    }
}

pub(crate) const LEAKY_SLOPE: f64 = 0.1;
