//! Dense row-major tensors plus the convolution and affine kernels (with exact
//! reverse-mode counterparts) that every layer is built from.
//!
//! All reductions run in a fixed order, so results are bit-reproducible across
//! runs. The convolution is evaluated through im2col patch matrices and a
//! shared accumulating matmul; the matmul skips zero entries of its left
//! operand, which makes binary spike inputs cheap without changing any result.

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f32`, row-major.
///
/// The shape is fixed at construction; operations return new tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = check_shape(shape).expect("tensor shape dims must be positive");
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Tensor {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::dimension(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same storage under a new shape with an identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Tensor> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::dimension(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Element at a 4-d index; test and inspection helper.
    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> f32 {
        let (nb, nc, nh, nw) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        assert!(b < nb && c < nc && h < nh && w < nw);
        self.data[((b * nc + c) * nh + h) * nw + w]
    }

    pub fn at2(&self, r: usize, c: usize) -> f32 {
        let (nr, nc) = (self.shape[0], self.shape[1]);
        assert!(r < nr && c < nc);
        self.data[r * nc + c]
    }

    /// Elementwise accumulate; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dimension(format!(
                "cannot accumulate {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Shape as a fixed-size array, or a dimension error naming `what`.
    pub(crate) fn expect_rank<const R: usize>(&self, what: &str) -> Result<&[usize; R]> {
        self.shape.as_slice().try_into().map_err(|_| {
            Error::dimension(format!(
                "{what} must have rank {R}, got shape {:?}",
                self.shape
            ))
        })
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::dimension(format!(
            "shape dims must be positive, got {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

/// Output extent of a convolution axis: floor((in + 2p - k)/s) + 1.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry("stride must be positive".into()));
    }
    let span = input + 2 * padding;
    if kernel == 0 || span < kernel {
        return Err(Error::Geometry(format!(
            "kernel {kernel} does not fit input {input} with padding {padding}"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

// ---------------------------------------------------------------------------
// Internal kernels
// ---------------------------------------------------------------------------

/// out[m x n] += a[m x k] * b[k x n], accumulating over k in ascending order.
///
/// Zero entries of `a` are skipped; for finite operands this adds exactly
/// +-0.0 and never changes a result, while binary spike operands make most of
/// the work vanish.
fn matmul_acc(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn transpose(dst: &mut [f32], src: &[f32], rows: usize, cols: usize) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Gather conv patches of one image into `cols`, laid out
/// [d*kh*kw rows x out_h*out_w cols]; out-of-range input reads as zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    cols: &mut [f32],
    src: &[f32],
    depth: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) {
    let n = out_h * out_w;
    let mut row = 0;
    for d in 0..depth {
        let plane = &src[d * h * w..(d + 1) * h * w];
        for j in 0..kh {
            for k in 0..kw {
                let dst_row = &mut cols[row * n..(row + 1) * n];
                for x in 0..out_h {
                    let sy = x * stride + j;
                    let dst = &mut dst_row[x * out_w..(x + 1) * out_w];
                    if sy < padding || sy >= h + padding {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[(sy - padding) * w..(sy - padding + 1) * w];
                    for (y, d_val) in dst.iter_mut().enumerate() {
                        let sx = y * stride + k;
                        *d_val = if sx < padding || sx >= w + padding {
                            0.0
                        } else {
                            src_row[sx - padding]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add patch gradients back onto one image.
#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    grad_src: &mut [f32],
    cols: &[f32],
    depth: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) {
    let n = out_h * out_w;
    let mut row = 0;
    for d in 0..depth {
        let plane = &mut grad_src[d * h * w..(d + 1) * h * w];
        for j in 0..kh {
            for k in 0..kw {
                let src_row = &cols[row * n..(row + 1) * n];
                for x in 0..out_h {
                    let sy = x * stride + j;
                    if sy < padding || sy >= h + padding {
                        continue;
                    }
                    let dst = &mut plane[(sy - padding) * w..(sy - padding + 1) * w];
                    let src = &src_row[x * out_w..(x + 1) * out_w];
                    for (y, &g) in src.iter().enumerate() {
                        let sx = y * stride + k;
                        if g != 0.0 && sx >= padding && sx < w + padding {
                            dst[sx - padding] += g;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct ConvDims {
    batch: usize,
    depth: usize,
    in_h: usize,
    in_w: usize,
    maps: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.depth * self.kh * self.kw
    }

    fn sites(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn conv_dims(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    let [batch, depth, in_h, in_w] = *input.expect_rank::<4>("conv input")?;
    let [maps, kd, kh, kw] = *kernel.expect_rank::<4>("conv kernel")?;
    bias.expect_rank::<1>("conv bias")?;
    if kd != depth {
        return Err(Error::dimension(format!(
            "input depth {depth} != kernel depth {kd}"
        )));
    }
    if bias.shape[0] != maps {
        return Err(Error::dimension(format!(
            "bias length {} != {maps} output maps",
            bias.shape[0]
        )));
    }
    let out_h = conv_out_extent(in_h, kh, stride, padding)?;
    let out_w = conv_out_extent(in_w, kw, stride, padding)?;
    Ok(ConvDims {
        batch,
        depth,
        in_h,
        in_w,
        maps,
        kh,
        kw,
        out_h,
        out_w,
    })
}

/// 2-d cross-correlation with bias:
/// out[b,c,x,y] = sum_{d,j,k} input[b,d,x*s+j-p, y*s+k-p] * kernel[c,d,j,k] + bias[c].
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let dims = conv_dims(input, kernel, bias, stride, padding)?;
    let (pk, n, c) = (dims.patch(), dims.sites(), dims.maps);

    // kernel^T once: [patch x maps], rows contiguous per patch entry
    let mut kernel_t = vec![0.0; pk * c];
    transpose(&mut kernel_t, kernel.data(), c, pk);

    let mut out = Tensor::zeros(&[dims.batch, c, dims.out_h, dims.out_w]);
    let mut cols = vec![0.0; pk * n];
    let mut patches = vec![0.0; n * pk];
    let mut out_t = vec![0.0; n * c];
    let image = dims.depth * dims.in_h * dims.in_w;
    for b in 0..dims.batch {
        im2col(
            &mut cols,
            &input.data()[b * image..(b + 1) * image],
            dims.depth,
            dims.in_h,
            dims.in_w,
            dims.kh,
            dims.kw,
            stride,
            padding,
            dims.out_h,
            dims.out_w,
        );
        transpose(&mut patches, &cols, pk, n);
        for site in out_t.chunks_exact_mut(c) {
            site.copy_from_slice(bias.data());
        }
        // out^T[n x c] = patches[n x patch] * kernel^T; patch rows are sparse
        // for binary spike inputs.
        matmul_acc(&mut out_t, &patches, &kernel_t, n, pk, c);
        transpose(
            &mut out.data_mut()[b * c * n..(b + 1) * c * n],
            &out_t,
            n,
            c,
        );
    }
    Ok(out)
}

/// Exact adjoints of [`conv2d`] for the cotangent `grad_out`:
/// returns (grad_input, grad_kernel, grad_bias).
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let bias_probe = Tensor::zeros(&[kernel.shape()[0]]);
    let dims = conv_dims(input, kernel, &bias_probe, stride, padding)?;
    let expected = [dims.batch, dims.maps, dims.out_h, dims.out_w];
    if grad_out.shape() != expected {
        return Err(Error::dimension(format!(
            "grad_out shape {:?} != conv output shape {:?}",
            grad_out.shape(),
            expected
        )));
    }
    let (pk, n, c) = (dims.patch(), dims.sites(), dims.maps);

    let mut kernel_t = vec![0.0; pk * c];
    transpose(&mut kernel_t, kernel.data(), c, pk);

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_kernel_t = vec![0.0; pk * c];
    let mut grad_bias = Tensor::zeros(&[c]);

    let mut cols = vec![0.0; pk * n];
    let mut grad_cols = vec![0.0; pk * n];
    let mut grad_out_t = vec![0.0; n * c];
    let image = dims.depth * dims.in_h * dims.in_w;
    for b in 0..dims.batch {
        let g_b = &grad_out.data()[b * c * n..(b + 1) * c * n];

        // grad wrt input: patch cotangents kernel^T[pk x c] * g[c x n],
        // scattered back through the adjoint of im2col
        grad_cols.fill(0.0);
        matmul_acc(&mut grad_cols, &kernel_t, g_b, pk, c, n);
        col2im_acc(
            &mut grad_input.data_mut()[b * image..(b + 1) * image],
            &grad_cols,
            dims.depth,
            dims.in_h,
            dims.in_w,
            dims.kh,
            dims.kw,
            stride,
            padding,
            dims.out_h,
            dims.out_w,
        );

        // grad wrt kernel, accumulated over the batch in index order:
        // gK^T[pk x c] += cols[pk x n] * g^T[n x c]; cols is sparse for spikes
        im2col(
            &mut cols,
            &input.data()[b * image..(b + 1) * image],
            dims.depth,
            dims.in_h,
            dims.in_w,
            dims.kh,
            dims.kw,
            stride,
            padding,
            dims.out_h,
            dims.out_w,
        );
        transpose(&mut grad_out_t, g_b, c, n);
        matmul_acc(&mut grad_kernel_t, &cols, &grad_out_t, pk, n, c);

        for ch in 0..c {
            let mut acc = 0.0;
            for &g in &g_b[ch * n..(ch + 1) * n] {
                acc += g;
            }
            grad_bias.data_mut()[ch] += acc;
        }
    }

    let mut grad_kernel = Tensor::zeros(kernel.shape());
    transpose(grad_kernel.data_mut(), &grad_kernel_t, pk, c);
    Ok((grad_input, grad_kernel, grad_bias))
}

// ---------------------------------------------------------------------------
// Affine map
// ---------------------------------------------------------------------------

fn affine_dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let [batch, units_prev] = *input.expect_rank::<2>("affine input")?;
    let [units, w_prev] = *weight.expect_rank::<2>("affine weight")?;
    bias.expect_rank::<1>("affine bias")?;
    if w_prev != units_prev {
        return Err(Error::dimension(format!(
            "input width {units_prev} != weight fan-in {w_prev}"
        )));
    }
    if bias.shape[0] != units {
        return Err(Error::dimension(format!(
            "bias length {} != {units} units",
            bias.shape[0]
        )));
    }
    Ok((batch, units_prev, units))
}

/// out[b,u] = sum_v weight[u,v] * input[b,v] + bias[u].
pub fn matmul_affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, units_prev, units) = affine_dims(input, weight, bias)?;
    let mut weight_t = vec![0.0; units_prev * units];
    transpose(&mut weight_t, weight.data(), units, units_prev);

    let mut out = Tensor::zeros(&[batch, units]);
    for row in out.data_mut().chunks_exact_mut(units) {
        row.copy_from_slice(bias.data());
    }
    matmul_acc(
        out.data_mut(),
        input.data(),
        &weight_t,
        batch,
        units_prev,
        units,
    );
    Ok(out)
}

/// Exact adjoints of [`matmul_affine`]: (grad_input, grad_weight, grad_bias);
/// grad_bias is the column sum of `grad_out` over the batch.
pub fn matmul_affine_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let bias_probe = Tensor::zeros(&[weight.shape()[0]]);
    let (batch, units_prev, units) = affine_dims(input, weight, &bias_probe)?;
    if grad_out.shape() != [batch, units] {
        return Err(Error::dimension(format!(
            "grad_out shape {:?} != [{batch}, {units}]",
            grad_out.shape()
        )));
    }

    let mut grad_input = Tensor::zeros(&[batch, units_prev]);
    matmul_acc(
        grad_input.data_mut(),
        grad_out.data(),
        weight.data(),
        batch,
        units,
        units_prev,
    );

    // gW^T[prev x units] = input^T[prev x batch] * grad_out[batch x units];
    // the binary spike input ends up on the sparse side.
    let mut input_t = vec![0.0; units_prev * batch];
    transpose(&mut input_t, input.data(), batch, units_prev);
    let mut grad_weight_t = vec![0.0; units_prev * units];
    matmul_acc(
        &mut grad_weight_t,
        &input_t,
        grad_out.data(),
        units_prev,
        batch,
        units,
    );
    let mut grad_weight = Tensor::zeros(&[units, units_prev]);
    transpose(grad_weight.data_mut(), &grad_weight_t, units_prev, units);

    let mut grad_bias = Tensor::zeros(&[units]);
    for row in grad_out.data().chunks_exact(units) {
        for (gb, &g) in grad_bias.data_mut().iter_mut().zip(row) {
            *gb += g;
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}
