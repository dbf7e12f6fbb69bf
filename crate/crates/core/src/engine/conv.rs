//! Strided 3D convolution and its transpose, lowered to im2col + GEMM.
//!
//! Layouts: activations `[N, C, D, H, W]`, conv weights
//! `[Cout, Cin, kd, kh, kw]`, transposed-conv weights `[Cin, Cout, kd, kh, kw]`.
//! Reductions run in a fixed order, so results are bit-reproducible.

use super::{EngineError, Tape, Tensor, Var};

/// Kernel extent, stride and zero padding per spatial axis (D, H, W).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn cubic(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: [kernel; 3],
            stride: [stride; 3],
            padding: [padding; 3],
        }
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// `floor((n + 2p - k) / s) + 1` per axis.
    pub fn conv_output(&self, input: [usize; 3]) -> Result<[usize; 3], EngineError> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.stride[a] == 0 {
                return Err(EngineError::InvalidArgument(format!(
                    "stride along axis {a} must be >= 1"
                )));
            }
            let padded = input[a] + 2 * self.padding[a];
            if self.kernel[a] == 0 || self.kernel[a] > padded {
                return Err(EngineError::Shape(format!(
                    "kernel extent {} does not fit padded input extent {padded} on axis {a}",
                    self.kernel[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// `(n - 1) * s - 2p + k` per axis.
    pub fn transpose_output(&self, input: [usize; 3]) -> Result<[usize; 3], EngineError> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.stride[a] == 0 {
                return Err(EngineError::InvalidArgument(format!(
                    "stride along axis {a} must be >= 1"
                )));
            }
            let extent = (input[a] as i64 - 1) * self.stride[a] as i64 - 2 * self.padding[a] as i64
                + self.kernel[a] as i64;
            if extent <= 0 {
                return Err(EngineError::Shape(format!(
                    "transposed convolution yields non-positive extent {extent} on axis {a}"
                )));
            }
            out[a] = extent as usize;
        }
        Ok(out)
    }
}

/// Unfolds `channels × dims` into a `[channels·k³, out_dims product]` matrix.
fn im2col(
    src: &[f32],
    channels: usize,
    dims: [usize; 3],
    geo: &ConvGeometry,
    out_dims: [usize; 3],
    col: &mut [f32],
) {
    let [d, h, w] = dims;
    let [od, oh, ow] = out_dims;
    let [kd, kh, kw] = geo.kernel;
    let [sd, sh, sw] = geo.stride;
    let [pd, ph, pw] = geo.padding;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let plane = &src[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for z in 0..od {
                        let iz = (z * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let iy = (y * sh + b) as isize - ph as isize;
                            let valid_zy =
                                iz >= 0 && (iz as usize) < d && iy >= 0 && (iy as usize) < h;
                            if !valid_zy {
                                dst[idx..idx + ow].fill(0.0);
                                idx += ow;
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            for x in 0..ow {
                                let ix = (x * sw + e) as isize - pw as isize;
                                dst[idx] = if ix >= 0 && (ix as usize) < w {
                                    plane[base + ix as usize]
                                } else {
                                    0.0
                                };
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `dst`.
fn col2im(
    col: &[f32],
    channels: usize,
    dims: [usize; 3],
    geo: &ConvGeometry,
    out_dims: [usize; 3],
    dst: &mut [f32],
) {
    let [d, h, w] = dims;
    let [od, oh, ow] = out_dims;
    let [kd, kh, kw] = geo.kernel;
    let [sd, sh, sw] = geo.stride;
    let [pd, ph, pw] = geo.padding;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut dst[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for z in 0..od {
                        let iz = (z * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let iy = (y * sh + b) as isize - ph as isize;
                            if !(iz >= 0 && (iz as usize) < d && iy >= 0 && (iy as usize) < h) {
                                idx += ow;
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            for x in 0..ow {
                                let ix = (x * sw + e) as isize - pw as isize;
                                if ix >= 0 && (ix as usize) < w {
                                    plane[base + ix as usize] += src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
struct Layout {
    rs: isize,
    cs: isize,
}

impl Layout {
    fn row_major(cols: usize) -> Self {
        Self {
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    fn transposed(cols: usize) -> Self {
        Self {
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c = a·b + beta·c` with `a: m×k`, `b: k×n`, `c: m×n` row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    la: Layout,
    b: &[f32],
    lb: Layout,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe matrices that lie within the given slices
    // (checked by construction at every call site below).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn spatial(shape: &[usize], what: &str) -> Result<[usize; 3], EngineError> {
    if shape.len() != 5 {
        return Err(EngineError::Shape(format!(
            "{what} must be rank 5 [N, C, D, H, W], got {shape:?}"
        )));
    }
    Ok([shape[2], shape[3], shape[4]])
}

fn check_bias(bias: Option<&Tensor>, channels: usize) -> Result<(), EngineError> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(EngineError::Shape(format!(
                "bias shape {:?} does not match {channels} output channels",
                b.shape()
            )));
        }
    }
    Ok(())
}

fn add_bias(out: &mut [f32], bias: &[f32], per_channel: usize) {
    for (chunk, &b) in out.chunks_mut(per_channel).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(grad_out: &[f32], channels: usize, per_channel: usize) -> Vec<f32> {
    let mut g = vec![0.0f64; channels];
    for (i, chunk) in grad_out.chunks(per_channel).enumerate() {
        g[i % channels] += chunk.iter().map(|&v| v as f64).sum::<f64>();
    }
    g.into_iter().map(|v| v as f32).collect()
}

/// Plain-value forward of a 3D convolution.
pub fn conv3d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    geo: &ConvGeometry,
) -> Result<Tensor, EngineError> {
    let in_dims = spatial(input.shape(), "conv3d input")?;
    let ws = weight.shape();
    if ws.len() != 5 {
        return Err(EngineError::Shape(format!(
            "conv3d weight must be rank 5 [Cout, Cin, kd, kh, kw], got {ws:?}"
        )));
    }
    let (n, cin) = (input.shape()[0], input.shape()[1]);
    let cout = ws[0];
    if ws[1] != cin {
        return Err(EngineError::Shape(format!(
            "conv3d input has {cin} channels but weight expects {}",
            ws[1]
        )));
    }
    if ws[2..] != geo.kernel {
        return Err(EngineError::Shape(format!(
            "weight kernel {:?} disagrees with geometry {:?}",
            &ws[2..],
            geo.kernel
        )));
    }
    check_bias(bias, cout)?;
    let out_dims = geo.conv_output(in_dims)?;
    let kdim = cin * geo.kernel_volume();
    let p: usize = out_dims.iter().product();
    let in_vol: usize = in_dims.iter().product();
    let mut out = vec![0.0f32; n * cout * p];
    let mut col = vec![0.0f32; kdim * p];
    for s in 0..n {
        im2col(
            &input.data()[s * cin * in_vol..(s + 1) * cin * in_vol],
            cin,
            in_dims,
            geo,
            out_dims,
            &mut col,
        );
        gemm(
            cout,
            kdim,
            p,
            weight.data(),
            Layout::row_major(kdim),
            &col,
            Layout::row_major(p),
            0.0,
            &mut out[s * cout * p..(s + 1) * cout * p],
        );
    }
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), p);
    }
    Tensor::new(vec![n, cout, out_dims[0], out_dims[1], out_dims[2]], out)
}

/// Plain-value forward of a 3D transposed convolution.
pub fn conv_transpose3d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    geo: &ConvGeometry,
) -> Result<Tensor, EngineError> {
    let in_dims = spatial(input.shape(), "conv_transpose3d input")?;
    let ws = weight.shape();
    if ws.len() != 5 {
        return Err(EngineError::Shape(format!(
            "conv_transpose3d weight must be rank 5 [Cin, Cout, kd, kh, kw], got {ws:?}"
        )));
    }
    let (n, cin) = (input.shape()[0], input.shape()[1]);
    if ws[0] != cin {
        return Err(EngineError::Shape(format!(
            "conv_transpose3d input has {cin} channels but weight expects {}",
            ws[0]
        )));
    }
    if ws[2..] != geo.kernel {
        return Err(EngineError::Shape(format!(
            "weight kernel {:?} disagrees with geometry {:?}",
            &ws[2..],
            geo.kernel
        )));
    }
    let cout = ws[1];
    check_bias(bias, cout)?;
    let out_dims = geo.transpose_output(in_dims)?;
    // The forward conv of the output grid must land back on the input grid.
    if geo.conv_output(out_dims)? != in_dims {
        return Err(EngineError::Shape(format!(
            "geometry {geo:?} is not invertible for input extents {in_dims:?}"
        )));
    }
    let rows = cout * geo.kernel_volume();
    let p_in: usize = in_dims.iter().product();
    let p_out: usize = out_dims.iter().product();
    let mut out = vec![0.0f32; n * cout * p_out];
    let mut col = vec![0.0f32; rows * p_in];
    for s in 0..n {
        gemm(
            rows,
            cin,
            p_in,
            weight.data(),
            Layout::transposed(rows),
            &input.data()[s * cin * p_in..(s + 1) * cin * p_in],
            Layout::row_major(p_in),
            0.0,
            &mut col,
        );
        col2im(
            &col,
            cout,
            out_dims,
            geo,
            in_dims,
            &mut out[s * cout * p_out..(s + 1) * cout * p_out],
        );
    }
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), p_out);
    }
    Tensor::new(vec![n, cout, out_dims[0], out_dims[1], out_dims[2]], out)
}

/// Recorded 3D convolution, differentiable in input, weight and bias.
pub fn conv3d(
    tape: &mut Tape,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    geo: ConvGeometry,
) -> Result<Var, EngineError> {
    let out = conv3d_forward(
        tape.value(input),
        tape.value(weight),
        bias.map(|b| tape.value(b)),
        &geo,
    )?;
    let mut parents = vec![input, weight];
    parents.extend(bias);
    let backward = Box::new(move |ctx: &super::BackwardCtx<'_>| {
        let x = ctx.inputs[0];
        let w = ctx.inputs[1];
        let (n, cin) = (x.shape()[0], x.shape()[1]);
        let cout = w.shape()[0];
        let in_dims = [x.shape()[2], x.shape()[3], x.shape()[4]];
        let out_dims = [ctx.out.shape()[2], ctx.out.shape()[3], ctx.out.shape()[4]];
        let kdim = cin * geo.kernel_volume();
        let p: usize = out_dims.iter().product();
        let in_vol: usize = in_dims.iter().product();
        let mut col = vec![0.0f32; kdim * p];
        let mut gx = ctx.needs[0].then(|| vec![0.0f32; x.numel()]);
        let mut gw = ctx.needs[1].then(|| vec![0.0f32; w.numel()]);
        for s in 0..n {
            let dy = &ctx.grad_out[s * cout * p..(s + 1) * cout * p];
            if let Some(gw) = gw.as_mut() {
                im2col(
                    &x.data()[s * cin * in_vol..(s + 1) * cin * in_vol],
                    cin,
                    in_dims,
                    &geo,
                    out_dims,
                    &mut col,
                );
                gemm(
                    cout,
                    p,
                    kdim,
                    dy,
                    Layout::row_major(p),
                    &col,
                    Layout::transposed(p),
                    1.0,
                    gw,
                );
            }
            if let Some(gx) = gx.as_mut() {
                gemm(
                    kdim,
                    cout,
                    p,
                    w.data(),
                    Layout::transposed(kdim),
                    dy,
                    Layout::row_major(p),
                    0.0,
                    &mut col,
                );
                col2im(
                    &col,
                    cin,
                    in_dims,
                    &geo,
                    out_dims,
                    &mut gx[s * cin * in_vol..(s + 1) * cin * in_vol],
                );
            }
        }
        let mut grads = vec![gx, gw];
        if ctx.inputs.len() == 3 {
            grads.push(ctx.needs[2].then(|| bias_grad(ctx.grad_out, cout, p)));
        }
        grads
    });
    Ok(tape.record(out, &parents, backward))
}

/// Recorded 3D transposed convolution (the adjoint of [`conv3d`] for the same
/// geometry), differentiable in input, weight and bias.
pub fn conv_transpose3d(
    tape: &mut Tape,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    geo: ConvGeometry,
) -> Result<Var, EngineError> {
    let out = conv_transpose3d_forward(
        tape.value(input),
        tape.value(weight),
        bias.map(|b| tape.value(b)),
        &geo,
    )?;
    let mut parents = vec![input, weight];
    parents.extend(bias);
    let backward = Box::new(move |ctx: &super::BackwardCtx<'_>| {
        let x = ctx.inputs[0];
        let w = ctx.inputs[1];
        let (n, cin) = (x.shape()[0], x.shape()[1]);
        let cout = w.shape()[1];
        let in_dims = [x.shape()[2], x.shape()[3], x.shape()[4]];
        let out_dims = [ctx.out.shape()[2], ctx.out.shape()[3], ctx.out.shape()[4]];
        let rows = cout * geo.kernel_volume();
        let p_in: usize = in_dims.iter().product();
        let p_out: usize = out_dims.iter().product();
        let mut col = vec![0.0f32; rows * p_in];
        let mut gx = ctx.needs[0].then(|| vec![0.0f32; x.numel()]);
        let mut gw = ctx.needs[1].then(|| vec![0.0f32; w.numel()]);
        for s in 0..n {
            im2col(
                &ctx.grad_out[s * cout * p_out..(s + 1) * cout * p_out],
                cout,
                out_dims,
                &geo,
                in_dims,
                &mut col,
            );
            if let Some(gx) = gx.as_mut() {
                gemm(
                    cin,
                    rows,
                    p_in,
                    w.data(),
                    Layout::row_major(rows),
                    &col,
                    Layout::row_major(p_in),
                    0.0,
                    &mut gx[s * cin * p_in..(s + 1) * cin * p_in],
                );
            }
            if let Some(gw) = gw.as_mut() {
                gemm(
                    cin,
                    p_in,
                    rows,
                    &x.data()[s * cin * p_in..(s + 1) * cin * p_in],
                    Layout::row_major(p_in),
                    &col,
                    Layout::transposed(p_in),
                    1.0,
                    gw,
                );
            }
        }
        let mut grads = vec![gx, gw];
        if ctx.inputs.len() == 3 {
            grads.push(ctx.needs[2].then(|| bias_grad(ctx.grad_out, cout, p_out)));
        }
        grads
    });
    Ok(tape.record(out, &parents, backward))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn pointwise_kernel_scales_input() {
        let x = Tensor::full(&[1, 1, 3, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 1, 1, 1], 2.0);
        let y = conv3d_forward(&x, &w, None, &ConvGeometry::cubic(1, 1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn full_kernel_sums_window() {
        let x = t(&[1, 1, 2, 2, 2], (1..=8).map(|v| v as f32).collect());
        let w = Tensor::full(&[1, 1, 2, 2, 2], 1.0);
        let y = conv3d_forward(&x, &w, None, &ConvGeometry::cubic(2, 1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.data(), &[36.0]);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let x = Tensor::zeros(&[1, 2, 4, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3, 3]);
        let err = conv3d_forward(&x, &w, None, &ConvGeometry::cubic(3, 1, 1)).unwrap_err();
        assert!(matches!(err, EngineError::Shape(_)));
    }

    #[test]
    fn oversized_kernel_rejected() {
        let x = Tensor::zeros(&[1, 1, 2, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 5, 5, 5]);
        assert!(conv3d_forward(&x, &w, None, &ConvGeometry::cubic(5, 1, 0)).is_err());
    }

    #[test]
    fn transposed_single_voxel_fills_block() {
        let x = Tensor::full(&[1, 1, 1, 1, 1], 0.7);
        let w = Tensor::full(&[1, 1, 2, 2, 2], 1.0);
        let y = conv_transpose3d_forward(&x, &w, None, &ConvGeometry::cubic(2, 2, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn transposed_overlap_bump() {
        let x = Tensor::full(&[1, 1, 1, 1, 2], 1.0);
        let w = Tensor::full(&[1, 1, 1, 1, 3], 1.0);
        let geo = ConvGeometry {
            kernel: [1, 1, 3],
            stride: [1, 1, 2],
            padding: [0, 0, 0],
        };
        let y = conv_transpose3d_forward(&x, &w, None, &geo).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 5]);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn negative_transpose_extent_rejected() {
        let x = Tensor::zeros(&[1, 1, 1, 1, 1]);
        let w = Tensor::zeros(&[1, 1, 1, 1, 1]);
        let err = conv_transpose3d_forward(&x, &w, None, &ConvGeometry::cubic(1, 1, 1));
        assert!(err.is_err());
    }

    #[test]
    fn bias_is_per_channel() {
        let x = Tensor::zeros(&[2, 1, 2, 2, 2]);
        let w = Tensor::zeros(&[2, 1, 1, 1, 1]);
        let b = t(&[2], vec![1.0, -1.0]);
        let y = conv3d_forward(&x, &w, Some(&b), &ConvGeometry::cubic(1, 1, 0)).unwrap();
        for s in 0..2 {
            let sample = &y.data()[s * 16..(s + 1) * 16];
            assert!(sample[..8].iter().all(|&v| v == 1.0));
            assert!(sample[8..].iter().all(|&v| v == -1.0));
        }
    }
}
