//! Forward kernels for each layer kind plus the backward helpers the
//! network uses. Tensors carry a leading batch dimension throughout.

use crate::error::{Error, Result};
use crate::nn::{Activation, Padding};
use crate::tensor::{gemm, Scalar, Tensor};

use super::loss::softmax_rows;

pub fn apply_activation<T: Scalar>(x: &mut Tensor<T>, act: Activation) -> Result<()> {
    match act {
        Activation::Identity => {}
        Activation::Relu => x.data_mut().iter_mut().for_each(|v| {
            if !(*v > T::ZERO) {
                *v = T::ZERO;
            }
        }),
        Activation::Softmax => {
            let sm = softmax_rows(x)?;
            *x = sm;
        }
    }
    Ok(())
}

/// `z[b×n] = x[b×m] · kernel[m×n] + bias`, before activation.
pub(crate) fn affine<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, m) = match x.dims() {
        &[b, m] => (b, m),
        other => {
            return Err(Error::Dimension {
                op: "dense",
                left: other.to_vec(),
                right: kernel.dims().to_vec(),
            })
        }
    };
    let (km, n) = match kernel.dims() {
        &[km, n] => (km, n),
        other => {
            return Err(Error::Dimension {
                op: "dense",
                left: x.dims().to_vec(),
                right: other.to_vec(),
            })
        }
    };
    if km != m || bias.dims() != [n] {
        return Err(Error::Dimension {
            op: "dense",
            left: x.dims().to_vec(),
            right: kernel.dims().to_vec(),
        });
    }
    let mut out = gemm(x.data(), kernel.data(), b, m, n);
    add_bias_rows(&mut out, bias.data());
    Tensor::new(vec![b, n], out)
}

fn add_bias_rows<T: Scalar>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_mut(bias.len()) {
        for (o, &bv) in row.iter_mut().zip(bias) {
            *o += bv;
        }
    }
}

pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    act: Activation,
) -> Result<Tensor<T>> {
    let mut z = affine(x, kernel, bias)?;
    apply_activation(&mut z, act)?;
    Ok(z)
}

/// Resolved geometry of a stride-1 convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub f: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(x_dims: &[usize], k_dims: &[usize], padding: Padding) -> Result<Self> {
        let (batch, h, w, c) = match x_dims {
            &[b, h, w, c] => (b, h, w, c),
            other => {
                return Err(Error::Dimension {
                    op: "conv2d",
                    left: other.to_vec(),
                    right: k_dims.to_vec(),
                })
            }
        };
        let (kh, kw, kc, f) = match k_dims {
            &[kh, kw, kc, f] => (kh, kw, kc, f),
            other => {
                return Err(Error::Dimension {
                    op: "conv2d",
                    left: x_dims.to_vec(),
                    right: other.to_vec(),
                })
            }
        };
        if kc != c {
            return Err(Error::Dimension {
                op: "conv2d channels",
                left: x_dims.to_vec(),
                right: k_dims.to_vec(),
            });
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => (h, w, (kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::Shape(format!(
                        "valid convolution of {h}x{w} input with {kh}x{kw} filter"
                    )));
                }
                (h - kh + 1, w - kw + 1, 0, 0)
            }
        };
        Ok(Self {
            batch,
            h,
            w,
            c,
            kh,
            kw,
            f,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    /// Input coordinate for output `(oy, ox)` and filter tap `(ky, kx)`,
    /// or `None` inside the zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy + ky).checked_sub(self.pad_top)?;
        let ix = (ox + kx).checked_sub(self.pad_left)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

/// Patch matrix `[batch·oh·ow, kh·kw·c]`, row-major over (ky, kx, c) to match
/// the `[kh, kw, c, f]` kernel layout.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch_len();
    let mut cols = vec![T::ZERO; g.rows() * patch];
    let mut row = 0;
    for b in 0..g.batch {
        let img = &x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                            let s = (iy * g.w + ix) * g.c;
                            let d = (ky * g.kw + kx) * g.c;
                            dst[d..d + g.c].copy_from_slice(&img[s..s + g.c]);
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-add of patch gradients back onto the input grid.
pub(crate) fn col2im<T: Scalar>(dcols: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch_len();
    let mut dx = vec![T::ZERO; g.batch * g.h * g.w * g.c];
    let mut row = 0;
    for b in 0..g.batch {
        let base = b * g.h * g.w * g.c;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &dcols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.source(oy, ox, ky, kx) {
                            let d = base + (iy * g.w + ix) * g.c;
                            let s = (ky * g.kw + kx) * g.c;
                            for ch in 0..g.c {
                                dx[d + ch] += src[s + ch];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

/// Convolution before activation; also returns the patch matrix for reuse
/// in the backward pass.
pub(crate) fn conv2d_pre<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<(Tensor<T>, Vec<T>, ConvGeom)> {
    let g = ConvGeom::new(x.dims(), kernel.dims(), padding)?;
    if bias.dims() != [g.f] {
        return Err(Error::Dimension {
            op: "conv2d bias",
            left: bias.dims().to_vec(),
            right: vec![g.f],
        });
    }
    let cols = im2col(x.data(), &g);
    let mut out = gemm(&cols, kernel.data(), g.rows(), g.patch_len(), g.f);
    add_bias_rows(&mut out, bias.data());
    let out = Tensor::new(vec![g.batch, g.oh, g.ow, g.f], out)?;
    Ok((out, cols, g))
}

/// Stride-1 cross-correlation (no kernel flip) plus bias and activation.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
    act: Activation,
) -> Result<Tensor<T>> {
    let (mut out, _, _) = conv2d_pre(x, kernel, bias, padding)?;
    apply_activation(&mut out, act)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MaxPoolOutput<T: Scalar> {
    pub output: Tensor<T>,
    /// Flat input index chosen for each output element.
    pub argmax: Vec<usize>,
}

/// 2×2 stride-2 max pooling. Ties pick the first position of the window in
/// row-major order.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> Result<MaxPoolOutput<T>> {
    let (b, h, w, c) = match x.dims() {
        &[b, h, w, c] => (b, h, w, c),
        other => return Err(Error::Shape(format!("max pooling needs 4-D input, got {other:?}"))),
    };
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!(
            "max pooling needs height and width >= 2, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut argmax = Vec::with_capacity(b * oh * ow * c);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((bi * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = data[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((bi * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::new(vec![b, oh, ow, c], out)?,
        argmax,
    })
}

/// Converts a tensor of token ids into indices, validating the range.
pub(crate) fn token_ids<T: Scalar>(tokens: &Tensor<T>, vocab: usize) -> Result<Vec<usize>> {
    tokens
        .data()
        .iter()
        .map(|&v| {
            let f = v.widen();
            if f < 0.0 || f.fract() != 0.0 {
                return Err(Error::Input(format!("token id {f} is not a non-negative integer")));
            }
            let id = f as usize;
            if id >= vocab {
                return Err(Error::Vocabulary { id, vocab });
            }
            Ok(id)
        })
        .collect()
}

/// Row lookup: `[batch×len]` token ids into `[batch×len×dim]` vectors.
pub fn embedding_forward<T: Scalar>(tokens: &Tensor<T>, table: &Tensor<T>) -> Result<Tensor<T>> {
    let (vocab, dim) = match table.dims() {
        &[v, d] => (v, d),
        other => return Err(Error::Shape(format!("embedding table must be 2-D, got {other:?}"))),
    };
    let (b, len) = match tokens.dims() {
        &[b, l] => (b, l),
        other => return Err(Error::Shape(format!("token batch must be 2-D, got {other:?}"))),
    };
    let ids = token_ids(tokens, vocab)?;
    let mut out = Vec::with_capacity(ids.len() * dim);
    for id in ids {
        out.extend_from_slice(table.slab(id));
    }
    Tensor::new(vec![b, len, dim], out)
}
