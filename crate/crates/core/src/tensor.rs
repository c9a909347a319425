//! Dense row-major `f64` tensors and the numeric kernels the network engine is built on.
//!
//! Images are channels-first (`[C, H, W]`). There is no broadcasting: binary
//! operations take either two tensors of identical shape or a tensor and a scalar.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense array with an explicit shape. `data` is row-major, last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr", into = "TensorRepr")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<TensorRepr> for Tensor {
    type Error = Error;

    fn try_from(repr: TensorRepr) -> Result<Self> {
        Tensor::new(repr.shape, repr.data)
    }
}

impl From<Tensor> for TensorRepr {
    fn from(t: Tensor) -> Self {
        TensorRepr {
            shape: t.shape,
            data: t.data,
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidTensor("shape must have at least one axis".into()));
    }
    if let Some(axis) = shape.iter().position(|&d| d == 0) {
        return Err(Error::InvalidTensor(format!(
            "axis {axis} of shape {shape:?} has size 0"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel = check_shape(&shape)?;
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "value at flat index {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for kernel outputs whose shape is known to be consistent.
    /// Does not check finiteness: intermediate values of a valid computation may overflow.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let numel = check_shape(shape)?;
        Tensor::new(shape.to_vec(), vec![value; numel])
    }

    /// Rank-1 tensor from a vector.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    /// Rank-2 tensor from nested rows.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTensor("ragged matrix rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel = check_shape(shape)?;
        if numel != self.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElementwiseOp::Add, self, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElementwiseOp::Sub, self, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElementwiseOp::Mul, self, Operand::Tensor(other))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    /// Index of the largest element; first occurrence wins on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// Multiplication by a scalar operand.
    Scale,
}

/// Right-hand side of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Operand<'_>) -> Result<Tensor> {
    let apply = |x: f64, y: f64| match op {
        ElementwiseOp::Add => x + y,
        ElementwiseOp::Sub => x - y,
        ElementwiseOp::Mul | ElementwiseOp::Scale => x * y,
    };
    match b {
        Operand::Tensor(b) => a.zip_map(b, apply),
        Operand::Scalar(s) => Ok(a.map(|x| apply(x, s))),
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension(format!(
            "matmul of {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b.data[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `weights [out, in]` times `x [in]`, plus `bias [out]`.
pub(crate) fn affine(weights: &Tensor, bias: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = weights.shape[1];
    weights
        .data
        .chunks_exact(cols)
        .zip(&bias.data)
        .map(|(row, &b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect()
}

/// `weights^T [in, out]` times `adjoint [out]`.
pub(crate) fn affine_transpose(weights: &Tensor, adjoint: &[f64]) -> Vec<f64> {
    let cols = weights.shape[1];
    let mut out = vec![0.0; cols];
    for (row, &a) in weights.data.chunks_exact(cols).zip(adjoint) {
        if a == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(row) {
            *o += w * a;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    /// Output keeps the input's spatial size; stride 1 only. Padding is split
    /// floor/ceil between the leading and trailing side.
    Same,
}

/// Resolved geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn resolve(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [channels, height, width] = *input_shape else {
            return Err(Error::Dimension(format!(
                "conv2d input must be [C,H,W], got {input_shape:?}"
            )));
        };
        let [kernels, kc, kh, kw] = *kernel_shape else {
            return Err(Error::Dimension(format!(
                "conv2d kernels must be [K,C,kh,kw], got {kernel_shape:?}"
            )));
        };
        if kc != channels {
            return Err(Error::Dimension(format!(
                "conv2d kernels {kernel_shape:?} do not match input channels of {input_shape:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be positive".into()));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                if stride != 1 {
                    return Err(Error::Dimension(
                        "same padding is only defined for stride 1".into(),
                    ));
                }
                (kh - 1, kw - 1)
            }
        };
        if kh > height + pad_h || kw > width + pad_w {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kernel_shape:?} larger than padded input {input_shape:?}"
            )));
        }
        Ok(ConvGeometry {
            channels,
            height,
            width,
            kernels,
            kh,
            kw,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_h: (height + pad_h - kh) / stride + 1,
            out_w: (width + pad_w - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Input flat index read by output pixel `(oy, ox)` at kernel tap `(c, ky, kx)`,
    /// or `None` if the tap lands in the zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, c: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        (y < self.height && x < self.width).then(|| (c * self.height + y) * self.width + x)
    }

    /// Unfolds the input into a `[patch_len, out_h*out_w]` column matrix.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let positions = self.out_h * self.out_w;
        let mut cols = vec![0.0; self.patch_len() * positions];
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some(src) = self.source(oy, ox, c, ky, kx) {
                                cols[row * positions + oy * self.out_w + ox] = input[src];
                            }
                        }
                    }
                }
            }
        }
        cols
    }
}

/// 2-D cross-correlation (no kernel flip) with per-kernel bias.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let geo = ConvGeometry::resolve(&input.shape, &kernels.shape, stride, padding)?;
    if bias.shape != [geo.kernels] {
        return Err(Error::Dimension(format!(
            "conv2d bias {:?} does not match {} kernels",
            bias.shape, geo.kernels
        )));
    }
    Ok(conv2d_resolved(&geo, input.data(), kernels, bias))
}

pub(crate) fn conv2d_resolved(
    geo: &ConvGeometry,
    input: &[f64],
    kernels: &Tensor,
    bias: &Tensor,
) -> Tensor {
    let cols = Tensor::from_parts(
        vec![geo.patch_len(), geo.out_h * geo.out_w],
        geo.im2col(input),
    );
    let flat_kernels = Tensor::from_parts(vec![geo.kernels, geo.patch_len()], kernels.data.clone());
    let mut out = matmul(&flat_kernels, &cols).expect("conv geometry is consistent");
    let positions = geo.out_h * geo.out_w;
    for (chunk, &b) in out.data.chunks_exact_mut(positions).zip(&bias.data) {
        for v in chunk {
            *v += b;
        }
    }
    out.shape = vec![geo.kernels, geo.out_h, geo.out_w];
    out
}

/// Adjoint of the convolution with respect to its input.
pub(crate) fn conv2d_backward_input(geo: &ConvGeometry, kernels: &Tensor, adjoint: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; geo.channels * geo.height * geo.width];
    let positions = geo.out_h * geo.out_w;
    for k in 0..geo.kernels {
        let kernel = &kernels.data[k * geo.patch_len()..(k + 1) * geo.patch_len()];
        for oy in 0..geo.out_h {
            for ox in 0..geo.out_w {
                let a = adjoint[k * positions + oy * geo.out_w + ox];
                if a == 0.0 {
                    continue;
                }
                for c in 0..geo.channels {
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            if let Some(src) = geo.source(oy, ox, c, ky, kx) {
                                grad[src] += a * kernel[(c * geo.kh + ky) * geo.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    grad
}

/// Adjoint of the convolution with respect to kernels and bias.
pub(crate) fn conv2d_backward_params(
    geo: &ConvGeometry,
    input: &[f64],
    adjoint: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let positions = geo.out_h * geo.out_w;
    let cols = geo.im2col(input);
    let patch = geo.patch_len();
    let mut dk = vec![0.0; geo.kernels * patch];
    let mut db = vec![0.0; geo.kernels];
    for k in 0..geo.kernels {
        let adj = &adjoint[k * positions..(k + 1) * positions];
        db[k] = adj.iter().sum();
        for r in 0..patch {
            dk[k * patch + r] = cols[r * positions..(r + 1) * positions]
                .iter()
                .zip(adj)
                .map(|(x, a)| x * a)
                .sum();
        }
    }
    (dk, db)
}

/// Non-overlapping `k`x`k` max pooling over a `[C,H,W]` tensor.
///
/// Returns the pooled tensor and, for each output element, the flat input index
/// of the selected maximum (first in row-major window order on ties).
pub fn maxpool2d(input: &Tensor, k: usize) -> Result<(Tensor, Vec<usize>)> {
    let out_shape = maxpool_shape(&input.shape, k)?;
    let [channels, height, width] = *input.shape() else {
        unreachable!("maxpool_shape checks rank");
    };
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut argmax = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (c * height + oy * k) * width + ox * k;
                for dy in 0..k {
                    for dx in 0..k {
                        let idx = (c * height + oy * k + dy) * width + ox * k + dx;
                        if input.data[idx] > input.data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input.data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(out_shape, out), argmax))
}

pub(crate) fn maxpool_shape(shape: &[usize], k: usize) -> Result<Vec<usize>> {
    let [c, h, w] = *shape else {
        return Err(Error::Dimension(format!(
            "maxpool2d input must be [C,H,W], got {shape:?}"
        )));
    };
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::Dimension(format!(
            "maxpool2d window {k} does not divide spatial dims of {shape:?}"
        )));
    }
    Ok(vec![c, h / k, w / k])
}
