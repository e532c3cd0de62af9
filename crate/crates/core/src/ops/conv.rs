//! Grouped 2-D cross-correlation lowered to GEMM through a batched im2col.
//!
//! For each group the whole batch is unrolled into one column matrix of shape
//! `[C_in/groups * kH * kW, N * H' * W']`, so a single GEMM per group covers
//! every sample.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Float, Tensor, Transpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dParams {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(self, groups: usize) -> Self {
        Conv2dParams { groups, ..self }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<F: Float> {
    pub input: Tensor<F>,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl Geometry {
    fn new<F: Float>(input: &Tensor<F>, weight: &Tensor<F>, p: Conv2dParams) -> Result<Self> {
        let (n, c_in, h, w) = input.dims4("conv2d")?;
        let (c_out, c_per_group, kh, kw) = weight.dims4("conv2d")?;
        if p.stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be at least 1"));
        }
        if p.groups == 0 || c_in % p.groups != 0 || c_out % p.groups != 0 {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "groups={} must divide input channels of {:?} and output channels of {:?}",
                    p.groups,
                    input.shape(),
                    weight.shape()
                ),
            ));
        }
        if c_per_group * p.groups != c_in {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "input {:?} incompatible with weight {:?} (groups={})",
                    input.shape(),
                    weight.shape(),
                    p.groups
                ),
            ));
        }
        if kh > h + 2 * p.padding || kw > w + 2 * p.padding || kh == 0 || kw == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "kernel of weight {:?} does not fit input {:?} with padding {}",
                    weight.shape(),
                    input.shape(),
                    p.padding
                ),
            ));
        }
        Ok(Geometry {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            ho: (h + 2 * p.padding - kh) / p.stride + 1,
            wo: (w + 2 * p.padding - kw) / p.stride + 1,
            stride: p.stride,
            padding: p.padding,
            groups: p.groups,
        })
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn k_g(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn plane_out(&self) -> usize {
        self.ho * self.wo
    }

    fn cols_width(&self) -> usize {
        self.n * self.plane_out()
    }

    fn out_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.ho, self.wo]
    }

    /// Input coordinate for output index `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unrolls the channels of group `g` into `cols` (`[k_g, n * ho * wo]`).
fn im2col<F: Float>(x: &[F], geo: &Geometry, g: usize, cols: &mut [F]) {
    let width = geo.cols_width();
    let plane_in = geo.h * geo.w;
    let plane_out = geo.plane_out();
    let mut row = 0;
    for ci in 0..geo.cin_g() {
        let c = g * geo.cin_g() + ci;
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let dst_row = &mut cols[row * width..(row + 1) * width];
                for n in 0..geo.n {
                    let src = &x[(n * geo.c_in + c) * plane_in..][..plane_in];
                    let dst = &mut dst_row[n * plane_out..(n + 1) * plane_out];
                    for oy in 0..geo.ho {
                        let line = &mut dst[oy * geo.wo..(oy + 1) * geo.wo];
                        match geo.src(oy, ky, geo.h) {
                            None => line.fill(F::zero()),
                            Some(iy) => {
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match geo.src(ox, kx, geo.w) {
                                        Some(ix) => src[iy * geo.w + ix],
                                        None => F::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds group `g`'s column gradients back into the input gradient.
fn col2im<F: Float>(cols: &[F], geo: &Geometry, g: usize, dx: &mut [F]) {
    let width = geo.cols_width();
    let plane_in = geo.h * geo.w;
    let plane_out = geo.plane_out();
    let mut row = 0;
    for ci in 0..geo.cin_g() {
        let c = g * geo.cin_g() + ci;
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let src_row = &cols[row * width..(row + 1) * width];
                for n in 0..geo.n {
                    let dst = &mut dx[(n * geo.c_in + c) * plane_in..][..plane_in];
                    let src = &src_row[n * plane_out..(n + 1) * plane_out];
                    for oy in 0..geo.ho {
                        let Some(iy) = geo.src(oy, ky, geo.h) else {
                            continue;
                        };
                        for ox in 0..geo.wo {
                            if let Some(ix) = geo.src(ox, kx, geo.w) {
                                dst[iy * geo.w + ix] += src[oy * geo.wo + ox];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_bias<F: Float>(bias: Option<&Tensor<F>>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        b.expect_shape("conv2d bias", &[c_out])?;
    }
    Ok(())
}

pub fn conv2d<F: Float>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    params: Conv2dParams,
) -> Result<Tensor<F>> {
    let geo = Geometry::new(input, weight, params)?;
    check_bias(bias, geo.c_out)?;
    let (k_g, cout_g, width, plane) = (geo.k_g(), geo.cout_g(), geo.cols_width(), geo.plane_out());
    let mut out = Tensor::zeros(&geo.out_shape());
    let mut cols = vec![F::zero(); k_g * width];
    let mut prod = vec![F::zero(); cout_g * width];
    let x = input.data();
    let w = weight.data();
    for g in 0..geo.groups {
        im2col(x, &geo, g, &mut cols);
        let w_g = &w[g * cout_g * k_g..(g + 1) * cout_g * k_g];
        gemm(
            cout_g,
            k_g,
            width,
            w_g,
            Transpose::No,
            &cols,
            Transpose::No,
            &mut prod,
            false,
        );
        let o = out.data_mut();
        for co in 0..cout_g {
            let c = g * cout_g + co;
            let b = bias.map_or(F::zero(), |b| b.data()[c]);
            for n in 0..geo.n {
                let src = &prod[co * width + n * plane..][..plane];
                let dst = &mut o[(n * geo.c_out + c) * plane..][..plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
///
/// The bias gradient is always returned; callers without a bias drop it.
pub fn conv2d_backward<F: Float>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
    params: Conv2dParams,
) -> Result<Conv2dGrads<F>> {
    let geo = Geometry::new(input, weight, params)?;
    grad_out.expect_shape("conv2d_backward", &geo.out_shape())?;
    let (k_g, cout_g, width, plane) = (geo.k_g(), geo.cout_g(), geo.cols_width(), geo.plane_out());
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[geo.c_out]);
    let mut cols = vec![F::zero(); k_g * width];
    let mut dcols = vec![F::zero(); k_g * width];
    let mut gmat = vec![F::zero(); cout_g * width];
    let go = grad_out.data();
    for g in 0..geo.groups {
        for co in 0..cout_g {
            let c = g * cout_g + co;
            let mut acc = F::zero();
            for n in 0..geo.n {
                let src = &go[(n * geo.c_out + c) * plane..][..plane];
                gmat[co * width + n * plane..][..plane].copy_from_slice(src);
                acc += src.iter().copied().sum::<F>();
            }
            db.data_mut()[c] = acc;
        }
        im2col(input.data(), &geo, g, &mut cols);
        let dw_g = &mut dw.data_mut()[g * cout_g * k_g..(g + 1) * cout_g * k_g];
        gemm(
            cout_g,
            width,
            k_g,
            &gmat,
            Transpose::No,
            &cols,
            Transpose::Yes,
            dw_g,
            false,
        );
        let w_g = &weight.data()[g * cout_g * k_g..(g + 1) * cout_g * k_g];
        gemm(
            k_g,
            cout_g,
            width,
            w_g,
            Transpose::Yes,
            &gmat,
            Transpose::No,
            &mut dcols,
            false,
        );
        col2im(&dcols, &geo, g, dx.data_mut());
    }
    Ok(Conv2dGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
