//! Convolution and max-pooling kernels on batch matrices.
//!
//! A batch of feature maps is a `(C*H*W) x N` matrix: one column per sample,
//! each column the row-major flattening of `channels x height x width`.
//! Convolution weights are `F x (C*kh*kw)` so the forward pass is one gemm
//! over the im2col expansion of the whole batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

/// Channel/height/width extent of one sample's features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// A flat feature vector.
    pub fn flat(units: usize) -> Self {
        Self::new(units, 1, 1)
    }

    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
    /// Zero-fill so that `out = ceil(in / stride)`.
    Same,
}

/// Resolved sizes of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn same_pad(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

impl ConvGeometry {
    pub fn new(
        input: Shape,
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        if filters == 0 || kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::invalid("convolution sizes must be positive"));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if kh > input.height || kw > input.width {
                    return Err(Error::shape(
                        "conv_forward",
                        (input.height, input.width),
                        (kh, kw),
                    ));
                }
                (
                    (input.height - kh) / stride + 1,
                    (input.width - kw) / stride + 1,
                    0,
                    0,
                )
            }
            Padding::Same => {
                let (oh, pt) = same_pad(input.height, kh, stride);
                let (ow, pl) = same_pad(input.width, kw, stride);
                (oh, ow, pt, pl)
            }
        };
        Ok(Self {
            input,
            filters,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.input.channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output(&self) -> Shape {
        Shape::new(self.filters, self.out_h, self.out_w)
    }

    /// Input row index read by patch row `pr` at output position `(oy, ox)`,
    /// or `None` inside the zero padding.
    #[inline]
    fn source(&self, pr: usize, oy: usize, ox: usize) -> Option<usize> {
        let khw = self.kernel_h * self.kernel_w;
        let c = pr / khw;
        let ky = (pr % khw) / self.kernel_w;
        let kx = pr % self.kernel_w;
        let y = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        if y >= self.input.height || x >= self.input.width {
            return None;
        }
        Some((c * self.input.height + y) * self.input.width + x)
    }
}

/// Expands a batch into a `(C*kh*kw) x (N*P)` patch matrix, columns ordered
/// sample-major then output position.
pub fn im2col<T: Real>(g: &ConvGeometry, input: &Matrix<T>) -> Matrix<T> {
    let n = input.cols();
    let p = g.positions();
    let mut cols = Matrix::zeros(g.patch_len(), n * p);
    for pr in 0..g.patch_len() {
        let out = cols.row_mut(pr);
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                if let Some(src) = g.source(pr, oy, ox) {
                    let pos = oy * g.out_w + ox;
                    let row = input.row(src);
                    for s in 0..n {
                        out[s * p + pos] = row[s];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im<T: Real>(g: &ConvGeometry, cols: &Matrix<T>, samples: usize) -> Matrix<T> {
    let p = g.positions();
    let mut out = Matrix::zeros(g.input.size(), samples);
    for pr in 0..g.patch_len() {
        let src = cols.row(pr);
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                if let Some(dst) = g.source(pr, oy, ox) {
                    let pos = oy * g.out_w + ox;
                    let row = out.row_mut(dst);
                    for s in 0..samples {
                        row[s] += src[s * p + pos];
                    }
                }
            }
        }
    }
    out
}

/// `(F*P) x N` batch layout to `F x (N*P)` gemm layout.
pub(crate) fn to_filter_rows<T: Real>(m: &Matrix<T>, filters: usize, p: usize) -> Matrix<T> {
    let n = m.cols();
    let mut out = Matrix::zeros(filters, n * p);
    for f in 0..filters {
        let dst = out.row_mut(f);
        for pos in 0..p {
            let src = m.row(f * p + pos);
            for s in 0..n {
                dst[s * p + pos] = src[s];
            }
        }
    }
    out
}

/// Inverse of [`to_filter_rows`].
pub(crate) fn from_filter_rows<T: Real>(m: &Matrix<T>, p: usize, samples: usize) -> Matrix<T> {
    let filters = m.rows();
    let mut out = Matrix::zeros(filters * p, samples);
    for f in 0..filters {
        let src = m.row(f);
        for pos in 0..p {
            let dst = out.row_mut(f * p + pos);
            for s in 0..samples {
                dst[s] = src[s * p + pos];
            }
        }
    }
    out
}

/// Cross-correlation of every sample with every filter, plus per-filter bias.
pub fn conv_forward<T: Real>(
    g: &ConvGeometry,
    weights: &Matrix<T>,
    bias: &Matrix<T>,
    input: &Matrix<T>,
) -> Result<Matrix<T>> {
    if input.rows() != g.input.size() {
        return Err(Error::shape(
            "conv_forward",
            input.shape(),
            (g.input.size(), input.cols()),
        ));
    }
    if weights.shape() != (g.filters, g.patch_len()) || bias.shape() != (g.filters, 1) {
        return Err(Error::shape(
            "conv_forward",
            weights.shape(),
            (g.filters, g.patch_len()),
        ));
    }
    let cols = im2col(g, input);
    let mut out = weights.matmul(&cols)?;
    out.add_column_assign(bias)?;
    Ok(from_filter_rows(&out, g.positions(), input.cols()))
}

/// Gradients of a convolution given the pre-activation delta `(F*P) x N`.
///
/// Returns `(sum over batch of dW, sum over batch and positions of db)`;
/// the caller owns the `1/N` scaling.
pub(crate) fn conv_param_grads<T: Real>(
    g: &ConvGeometry,
    input: &Matrix<T>,
    delta: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let d = to_filter_rows(delta, g.filters, g.positions());
    let cols = im2col(g, input);
    let dw = d.matmul_nt(&cols)?;
    let db = Matrix::from_vec(
        g.filters,
        1,
        (0..g.filters)
            .map(|f| d.row(f).iter().copied().sum())
            .collect(),
    )?;
    Ok((dw, db))
}

/// Routes a pre-activation delta back to the input through `feedbackᵀ`-shaped
/// weights: `feedback` is `(C*kh*kw) x F` (the transpose of the forward
/// kernel for exact gradients, a fixed random matrix otherwise).
pub(crate) fn conv_input_delta<T: Real>(
    g: &ConvGeometry,
    feedback: &Matrix<T>,
    delta: &Matrix<T>,
) -> Result<Matrix<T>> {
    let n = delta.cols();
    let d = to_filter_rows(delta, g.filters, g.positions());
    let cols = feedback.matmul(&d)?;
    Ok(col2im(g, &cols, n))
}

/// Same as [`conv_input_delta`] for the exact transpose, without copying it.
pub(crate) fn conv_input_delta_transposed<T: Real>(
    g: &ConvGeometry,
    weights: &Matrix<T>,
    delta: &Matrix<T>,
) -> Result<Matrix<T>> {
    let n = delta.cols();
    let d = to_filter_rows(delta, g.filters, g.positions());
    let cols = weights.matmul_tn(&d)?;
    Ok(col2im(g, &cols, n))
}

/// Resolved sizes of one max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub input: Shape,
    pub window_h: usize,
    pub window_w: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    pub fn new(input: Shape, window: (usize, usize), stride: usize) -> Result<Self> {
        let (wh, ww) = window;
        if wh == 0 || ww == 0 || stride == 0 {
            return Err(Error::invalid("pooling sizes must be positive"));
        }
        if wh > input.height || ww > input.width {
            return Err(Error::shape(
                "maxpool_forward",
                (input.height, input.width),
                (wh, ww),
            ));
        }
        Ok(Self {
            input,
            window_h: wh,
            window_w: ww,
            stride,
            out_h: (input.height - wh) / stride + 1,
            out_w: (input.width - ww) / stride + 1,
        })
    }

    pub fn output(&self) -> Shape {
        Shape::new(self.input.channels, self.out_h, self.out_w)
    }
}

/// Winning input row for every pooled entry; same layout as the pooled matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolMask {
    pub rows: usize,
    pub cols: usize,
    pub argmax: Vec<usize>,
}

/// Max over each window. Ties resolve to the first maximum in row-major
/// scan order of the window.
pub fn maxpool_forward<T: Real>(
    g: &PoolGeometry,
    input: &Matrix<T>,
) -> Result<(Matrix<T>, PoolMask)> {
    if input.rows() != g.input.size() {
        return Err(Error::shape(
            "maxpool_forward",
            input.shape(),
            (g.input.size(), input.cols()),
        ));
    }
    let n = input.cols();
    let out_shape = g.output();
    let mut out = Matrix::zeros(out_shape.size(), n);
    let mut argmax = vec![0usize; out_shape.size() * n];
    let (h, w) = (g.input.height, g.input.width);
    for c in 0..g.input.channels {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let orow = (c * g.out_h + oy) * g.out_w + ox;
                for s in 0..n {
                    let mut best_row = usize::MAX;
                    let mut best = T::ZERO;
                    for ky in 0..g.window_h {
                        for kx in 0..g.window_w {
                            let y = oy * g.stride + ky;
                            let x = ox * g.stride + kx;
                            let r = (c * h + y) * w + x;
                            let v = input.get(r, s);
                            if best_row == usize::MAX || v > best {
                                best = v;
                                best_row = r;
                            }
                        }
                    }
                    out.set(orow, s, best);
                    argmax[orow * n + s] = best_row;
                }
            }
        }
    }
    Ok((
        out,
        PoolMask {
            rows: out_shape.size(),
            cols: n,
            argmax,
        },
    ))
}

/// Routes a delta on the pooled output to the winning input positions.
pub fn maxpool_backward<T: Real>(
    g: &PoolGeometry,
    mask: &PoolMask,
    delta: &Matrix<T>,
) -> Result<Matrix<T>> {
    if delta.shape() != (mask.rows, mask.cols) {
        return Err(Error::shape(
            "maxpool_backward",
            delta.shape(),
            (mask.rows, mask.cols),
        ));
    }
    let n = mask.cols;
    let mut out = Matrix::zeros(g.input.size(), n);
    for r in 0..mask.rows {
        for s in 0..n {
            let src = mask.argmax[r * n + s];
            let v = out.get(src, s) + delta.get(r, s);
            out.set(src, s, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map1(rows: &[&[f64]]) -> Matrix {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::from_vec(data.len(), 1, data).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let g = ConvGeometry::new(Shape::new(1, 3, 3), 1, (1, 1), 1, Padding::Valid).unwrap();
        let x = map1(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]);
        let y = conv_forward(&g, &Matrix::filled(1, 1, 1.0), &Matrix::zeros(1, 1), &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let g = ConvGeometry::new(Shape::new(2, 4, 4), 3, (3, 3), 1, Padding::Same).unwrap();
        let x = Matrix::filled(32, 2, 0.7);
        let bias = Matrix::column(&[0.5, -1.0, 2.0]);
        let y = conv_forward(&g, &Matrix::zeros(3, 18), &bias, &x).unwrap();
        assert_eq!(y.shape(), (48, 2));
        for f in 0..3 {
            for p in 0..16 {
                assert_eq!(y.get(f * 16 + p, 0), bias.get(f, 0));
                assert_eq!(y.get(f * 16 + p, 1), bias.get(f, 0));
            }
        }
    }

    #[test]
    fn ones_kernel_sums_patches() {
        let g = ConvGeometry::new(Shape::new(1, 3, 3), 1, (2, 2), 1, Padding::Valid).unwrap();
        let x = map1(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]);
        let y = conv_forward(&g, &Matrix::filled(1, 4, 1.0), &Matrix::zeros(1, 1), &x).unwrap();
        assert_eq!(y, map1(&[&[12.0, 16.0], &[24.0, 28.0]]));
    }

    #[test]
    fn same_padding_keeps_size() {
        let g = ConvGeometry::new(Shape::new(3, 32, 32), 96, (5, 5), 1, Padding::Same).unwrap();
        assert_eq!(g.output(), Shape::new(96, 32, 32));
        assert_eq!((g.pad_top, g.pad_left), (2, 2));
    }

    #[test]
    fn incompatible_dims_rejected() {
        assert!(ConvGeometry::new(Shape::new(1, 2, 2), 1, (3, 3), 1, Padding::Valid).is_err());
        let g = ConvGeometry::new(Shape::new(1, 3, 3), 1, (2, 2), 1, Padding::Valid).unwrap();
        let x = Matrix::<f64>::zeros(8, 1);
        assert!(conv_forward(&g, &Matrix::zeros(1, 4), &Matrix::zeros(1, 1), &x).is_err());
        assert!(PoolGeometry::new(Shape::new(1, 2, 2), (3, 3), 1).is_err());
    }

    #[test]
    fn constant_input_pools_to_first_index() {
        let g = PoolGeometry::new(Shape::new(1, 4, 4), (2, 2), 2).unwrap();
        let x = Matrix::filled(16, 1, 3.0);
        let (y, mask) = maxpool_forward(&g, &x).unwrap();
        assert_eq!(y, Matrix::filled(4, 1, 3.0));
        // top-left cell of each window
        assert_eq!(mask.argmax, vec![0, 2, 8, 10]);
    }

    #[test]
    fn pool_picks_max_of_two_by_two() {
        let g = PoolGeometry::new(Shape::new(1, 2, 2), (2, 2), 2).unwrap();
        let (y, mask) = maxpool_forward(&g, &map1(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(y.get(0, 0), 4.0);
        // (1, 1) in a 2x2 map
        assert_eq!(mask.argmax, vec![3]);
    }

    #[test]
    fn increasing_raster_wins_last_in_window() {
        let g = PoolGeometry::new(Shape::new(1, 5, 5), (3, 3), 2).unwrap();
        let x = Matrix::from_vec(25, 1, (0..25).map(|v| v as f64).collect()).unwrap();
        let (_, mask) = maxpool_forward(&g, &x).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let last = (oy * 2 + 2) * 5 + ox * 2 + 2;
                assert_eq!(mask.argmax[oy * 2 + ox], last);
            }
        }
    }

    #[test]
    fn pool_backward_routes_to_winner() {
        let g = PoolGeometry::new(Shape::new(1, 2, 2), (2, 2), 2).unwrap();
        let (_, mask) = maxpool_forward(&g, &map1(&[&[1.0, 5.0], &[3.0, 4.0]])).unwrap();
        let back = maxpool_backward(&g, &mask, &Matrix::filled(1, 1, 2.5)).unwrap();
        assert_eq!(back, map1(&[&[0.0, 2.5], &[0.0, 0.0]]));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for integer-valued data, exactly
        let g = ConvGeometry::new(Shape::new(2, 5, 4), 1, (3, 2), 2, Padding::Same).unwrap();
        let x = Matrix::from_vec(40, 3, (0..120).map(|v| (v % 7) as f64 - 3.0).collect()).unwrap();
        let cols = im2col(&g, &x);
        let y = Matrix::from_vec(
            cols.rows(),
            cols.cols(),
            (0..cols.len()).map(|v| (v % 5) as f64 - 2.0).collect(),
        )
        .unwrap();
        let lhs: f64 = cols.hadamard(&y).unwrap().sum();
        let rhs: f64 = x.hadamard(&col2im(&g, &y, 3)).unwrap().sum();
        assert_eq!(lhs, rhs);
    }
}
