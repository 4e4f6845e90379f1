//! Stride-1 zero-padded 2-D convolution via chunked im2col + GEMM.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Shape, Tensor};

/// Upper bound on the number of im2col elements materialised at once.
const COL_BUDGET: usize = 1 << 22;

/// Kernel, bias and padding of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T: Scalar = f32> {
    /// `(out_channels, in_channels, kh, kw)`
    pub weight: Tensor<T>,
    /// `(1, out_channels, 1, 1)`
    pub bias: Option<Tensor<T>>,
    pub padding: usize,
}

impl<T: Scalar> ConvParams<T> {
    /// Same-size padding for odd kernels: 1 for 3x3, 0 for 1x1.
    pub fn same(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Self {
        let padding = weight.shape().h / 2;
        Self {
            weight,
            bias,
            padding,
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(input, &self.weight, self.bias.as_ref(), self.padding)
    }
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: Shape, weight: Shape, pad: usize) -> Result<Self> {
        if input.c != weight.c {
            return Err(Error::Channels {
                op: "conv2d",
                expected: weight.c,
                actual: input.c,
            });
        }
        if input.h + 2 * pad < weight.h || input.w + 2 * pad < weight.w {
            return Err(Error::Shape {
                op: "conv2d",
                expected: weight,
                actual: input,
            });
        }
        Ok(Self {
            n: input.n,
            in_c: input.c,
            h: input.h,
            w: input.w,
            out_c: weight.n,
            kh: weight.h,
            kw: weight.w,
            pad,
            oh: input.h + 2 * pad - weight.h + 1,
            ow: input.w + 2 * pad - weight.w + 1,
        })
    }

    fn k(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.out_c, self.oh, self.ow)
    }

    /// Pointwise kernels read the input plane directly.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }

    fn rows_per_chunk(&self) -> usize {
        (COL_BUDGET / (self.k() * self.ow).max(1)).clamp(1, self.oh)
    }
}

/// Fill `cols` (K x rows*ow) for output rows `r0..r0+rows` of one image.
fn im2col<T: Scalar>(g: &Geometry, image: &[T], r0: usize, rows: usize, cols: &mut [T]) {
    let p = rows * g.ow;
    let plane = g.h * g.w;
    for c in 0..g.in_c {
        let src = &image[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for r in 0..rows {
                    let out = &mut dst[r * g.ow..(r + 1) * g.ow];
                    let iy = (r0 + r + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let line = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            line[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add `cols` back into the image gradient (adjoint of [`im2col`]).
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], r0: usize, rows: usize, image: &mut [T]) {
    let p = rows * g.ow;
    let plane = g.h * g.w;
    for c in 0..g.in_c {
        let dst = &mut image[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for r in 0..rows {
                    let iy = (r0 + r + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[r * g.ow..(r + 1) * g.ow].iter().enumerate() {
                        let ix = (ox + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            line[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 convolution with symmetric zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), padding)?;
    if let Some(b) = bias {
        if b.len() != g.out_c {
            return Err(Error::Shape {
                op: "conv2d bias",
                expected: Shape::channels(g.out_c),
                actual: b.shape(),
            });
        }
    }
    let mut out = Tensor::zeros(g.out_shape());
    let k = g.k();
    let wmat = MatRef::row_major(weight.data(), g.out_c, k);
    let out_plane = g.oh * g.ow;
    let item_len = g.out_c * out_plane;
    let mut cols = Vec::new();
    for n in 0..g.n {
        let image = input.item(n);
        let dst = &mut out.data_mut()[n * item_len..(n + 1) * item_len];
        if g.is_pointwise() {
            gemm(
                wmat,
                MatRef::row_major(image, k, out_plane),
                dst,
                out_plane,
                false,
            );
        } else {
            let chunk = g.rows_per_chunk();
            let mut r0 = 0;
            while r0 < g.oh {
                let rows = chunk.min(g.oh - r0);
                let p = rows * g.ow;
                cols.resize(k * p, T::zero());
                im2col(&g, image, r0, rows, &mut cols);
                gemm(
                    wmat,
                    MatRef::row_major(&cols, k, p),
                    &mut dst[r0 * g.ow..],
                    out_plane,
                    false,
                );
                r0 += rows;
            }
        }
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                for v in &mut dst[o * out_plane..(o + 1) * out_plane] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    padding: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), padding)?;
    if grad_out.shape() != g.out_shape() {
        return Err(Error::Shape {
            op: "conv2d_backward",
            expected: g.out_shape(),
            actual: grad_out.shape(),
        });
    }
    let k = g.k();
    let out_plane = g.oh * g.ow;
    let item_len = g.out_c * out_plane;
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_in = if need_input {
        Some(Tensor::zeros(input.shape()))
    } else {
        None
    };

    let mut bias_acc = vec![0.0f64; g.out_c];
    for n in 0..g.n {
        let go = &grad_out.data()[n * item_len..(n + 1) * item_len];
        for (o, acc) in bias_acc.iter_mut().enumerate() {
            *acc += go[o * out_plane..(o + 1) * out_plane]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
    }
    let grad_b = Tensor::from_vec(
        Shape::channels(g.out_c),
        bias_acc.into_iter().map(T::from_f64).collect(),
    )?;

    let wmat = MatRef::row_major(weight.data(), g.out_c, k);
    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    for n in 0..g.n {
        let image = input.item(n);
        let go = &grad_out.data()[n * item_len..(n + 1) * item_len];
        if g.is_pointwise() {
            let gmat = MatRef::row_major(go, g.out_c, out_plane);
            gemm(
                gmat,
                MatRef::row_major(image, k, out_plane).t(),
                grad_w.data_mut(),
                k,
                true,
            );
            if let Some(gi) = grad_in.as_mut() {
                let plane_len = k * out_plane;
                let dst = &mut gi.data_mut()[n * plane_len..(n + 1) * plane_len];
                gemm(wmat.t(), gmat, dst, out_plane, true);
            }
            continue;
        }
        let chunk = g.rows_per_chunk();
        let mut r0 = 0;
        while r0 < g.oh {
            let rows = chunk.min(g.oh - r0);
            let p = rows * g.ow;
            let gmat = MatRef {
                data: &go[r0 * g.ow..],
                rows: g.out_c,
                cols: p,
                row_stride: out_plane,
                col_stride: 1,
            };
            cols.resize(k * p, T::zero());
            im2col(&g, image, r0, rows, &mut cols);
            gemm(
                gmat,
                MatRef::row_major(&cols, k, p).t(),
                grad_w.data_mut(),
                k,
                true,
            );
            if let Some(gi) = grad_in.as_mut() {
                dcols.resize(k * p, T::zero());
                gemm(wmat.t(), gmat, &mut dcols, p, false);
                let in_len = g.in_c * g.h * g.w;
                col2im(
                    &g,
                    &dcols,
                    r0,
                    rows,
                    &mut gi.data_mut()[n * in_len..(n + 1) * in_len],
                );
            }
            r0 += rows;
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}
