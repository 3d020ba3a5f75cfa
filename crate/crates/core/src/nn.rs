//! Forward-pass primitives: patch extraction (im2col), convolution as a
//! matrix product, max pooling and ReLU.
//!
//! Patch rows are laid out channel-major, then row-major inside the kernel
//! window, which is also the flattening order of a `[C, H, W]` tensor. A
//! kernel that covers the whole input therefore yields exactly the
//! flattened input.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Tensor};

/// Geometry of a 2-D convolution over a `[C, H, W]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 3],
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let [channels, height, width] = input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::dim(format!("empty input shape {input:?}")));
        }
        if kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::dim(format!("empty kernel {kernel:?}")));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::dim(format!("stride {stride:?} must be at least 1")));
        }
        let (ph, pw) = (height + 2 * padding.0, width + 2 * padding.1);
        if ph < kernel.0 || pw < kernel.1 {
            return Err(Error::dim(format!(
                "kernel {}x{} does not fit padded input {ph}x{pw} (input {height}x{width}, padding {padding:?})",
                kernel.0, kernel.1
            )));
        }
        Ok(ConvGeometry {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_height: (ph - kernel.0) / stride.0 + 1,
            out_width: (pw - kernel.1) / stride.1 + 1,
        })
    }

    /// Receptive-field size `C·kh·kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    /// Number of spatial positions `out_h·out_w`.
    pub fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Writes the patch matrix of one flattened image into a new buffer.
    pub(crate) fn im2col(&self, image: &[f64]) -> Vec<f64> {
        debug_assert_eq!(image.len(), self.input_len());
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let cols = self.patch_len();
        let mut out = vec![0.0; self.positions() * cols];
        for oy in 0..self.out_height {
            for ox in 0..self.out_width {
                let row = &mut out[(oy * self.out_width + ox) * cols..][..cols];
                let mut k = 0;
                for c in 0..self.channels {
                    let plane = &image[c * self.height * self.width..];
                    for ky in 0..kh {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        for kx in 0..kw {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if iy >= 0
                                && (iy as usize) < self.height
                                && ix >= 0
                                && (ix as usize) < self.width
                            {
                                row[k] = plane[iy as usize * self.width + ix as usize];
                            }
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Receptive fields of every spatial position, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    geometry: ConvGeometry,
    data: Vec<f64>,
}

impl PatchMatrix {
    pub(crate) fn from_parts(geometry: ConvGeometry, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), geometry.positions() * geometry.patch_len());
        PatchMatrix { geometry, data }
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.geometry.positions()
    }

    pub fn cols(&self) -> usize {
        self.geometry.patch_len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, p: usize) -> &[f64] {
        let c = self.cols();
        &self.data[p * c..(p + 1) * c]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.rows(), self.cols()], self.data.clone())
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<[usize; 3]> {
    match t.shape() {
        &[a, b, c] => Ok([a, b, c]),
        s => Err(Error::dim(format!("{what} expects [C, H, W], got {s:?}"))),
    }
}

/// Extracts the zero-padded receptive field at every output position.
pub fn extract_patches(
    input: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<PatchMatrix> {
    let geometry = ConvGeometry::new(dims3(input, "extract_patches")?, kernel, stride, padding)?;
    Ok(PatchMatrix::from_parts(
        geometry,
        geometry.im2col(input.data()),
    ))
}

/// Shared-weight convolution: `out[f, p] = weights[f] · patches[p]`.
pub fn conv_forward(patches: &PatchMatrix, weights: &Tensor) -> Result<Tensor> {
    let (filters, width) = weights.dims2()?;
    if width != patches.cols() {
        return Err(Error::dim(format!(
            "weights have {width} columns, patches have {}",
            patches.cols()
        )));
    }
    let g = patches.geometry();
    let out = conv_rows(
        weights.data(),
        filters,
        patches.data(),
        patches.rows(),
        width,
    );
    Ok(Tensor::from_parts(
        vec![filters, g.out_height, g.out_width],
        out,
    ))
}

/// `W (F×K) · Pᵀ (K×P)` laid out as `[F, P]`.
pub(crate) fn conv_rows(
    weights: &[f64],
    filters: usize,
    patches: &[f64],
    positions: usize,
    width: usize,
) -> Vec<f64> {
    gemm(
        MatRef::new(weights, filters, width),
        MatRef::new(patches, positions, width).t(),
    )
}

/// Output extent of a truncating (ceil-mode, unpadded) pooling window.
/// Every window starts inside the input, which matters once the stride
/// exceeds the window.
pub(crate) fn pool_extent(input: usize, window: usize, stride: usize) -> usize {
    ((input - window).div_ceil(stride) + 1).min((input - 1) / stride + 1)
}

/// Max pooling without padding; windows overhanging the right or bottom
/// edge are truncated to the covered region.
pub fn max_pool(input: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    let [f, h, w] = dims3(input, "max_pool")?;
    check_pool(h, w, window, stride)?;
    let (oh, ow) = (
        pool_extent(h, window.0, stride.0),
        pool_extent(w, window.1, stride.1),
    );
    let out = max_pool_raw(input.data(), f, h, w, window, stride);
    Ok(Tensor::from_parts(vec![f, oh, ow], out))
}

pub(crate) fn check_pool(
    h: usize,
    w: usize,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<()> {
    if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::dim(format!(
            "pool window {window:?} and stride {stride:?} must be positive"
        )));
    }
    if window.0 > h || window.1 > w {
        return Err(Error::dim(format!(
            "pool window {}x{} larger than input {h}x{w}",
            window.0, window.1
        )));
    }
    Ok(())
}

pub(crate) fn max_pool_raw(
    data: &[f64],
    f: usize,
    h: usize,
    w: usize,
    window: (usize, usize),
    stride: (usize, usize),
) -> Vec<f64> {
    let (oh, ow) = (
        pool_extent(h, window.0, stride.0),
        pool_extent(w, window.1, stride.1),
    );
    let mut out = Vec::with_capacity(f * oh * ow);
    for plane in data.chunks_exact(h * w) {
        for oy in 0..oh {
            let y0 = oy * stride.0;
            let y1 = (y0 + window.0).min(h);
            for ox in 0..ow {
                let x0 = ox * stride.1;
                let x1 = (x0 + window.1).min(w);
                let mut m = f64::NEG_INFINITY;
                for y in y0..y1 {
                    for &v in &plane[y * w + x0..y * w + x1] {
                        m = m.max(v);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}
