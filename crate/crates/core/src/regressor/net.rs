//! Fixed convolutional regressor and its hand-written backpropagation.
//!
//! Graph (channels x height x width):
//!
//! ```text
//! input 2x64x64
//!   conv 3x3, 16 filters, stride 2, pad 1, bias, ReLU  -> 16x32x32
//!   conv 3x3, 32 filters, stride 2, pad 1, bias, ReLU  -> 32x16x16
//!   conv 3x3, 64 filters, stride 2, pad 1, bias, ReLU  -> 64x8x8
//!   global average pool                                -> 64
//!   fully connected 64 -> 2, linear                    -> (dx, dy) meters
//! ```
//!
//! Loss for one sample is `0.5 * |prediction - target|^2`; batches average it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::OffsetEstimate;
use crate::scalar::Real;

pub const INPUT_CHANNELS: usize = 2;
pub const INPUT_SIZE: usize = 64;
pub const INPUT_LEN: usize = INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE;
pub const OUTPUT_DIM: usize = 2;
const KERNEL: usize = 3;

/// `(in_channels, out_channels, input spatial size)` of each conv layer.
pub const CONV_LAYERS: [(usize, usize, usize); 3] = [(2, 16, 64), (16, 32, 32), (32, 64, 16)];
pub const FEATURES: usize = 64;

/// Tensor names and shapes in file order.
pub const LAYOUT: [(&str, &[usize]); 8] = [
    ("conv1.weight", &[16, 2, 3, 3]),
    ("conv1.bias", &[16]),
    ("conv2.weight", &[32, 16, 3, 3]),
    ("conv2.bias", &[32]),
    ("conv3.weight", &[64, 32, 3, 3]),
    ("conv3.bias", &[64]),
    ("fc.weight", &[2, 64]),
    ("fc.bias", &[2]),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }
}

/// Network parameters, ordered as in [`LAYOUT`].
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Weights<T> {
    pub fn zeros() -> Self {
        Self {
            tensors: LAYOUT.iter().map(|(n, s)| Tensor::zeros(n, s)).collect(),
        }
    }

    /// He-normal kernels (stddev `sqrt(2 / fan_in)`), zero biases.
    pub fn he_init(rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros();
        for t in w.tensors.iter_mut().filter(|t| t.shape.len() > 1) {
            let fan_in: usize = t.shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite stddev");
            for v in t.data.iter_mut() {
                *v = T::of(normal.sample(rng));
            }
        }
        w
    }

    /// Checks names, shapes and finiteness against the fixed architecture.
    pub fn validate(&self) -> Result<(), NetError> {
        if self.tensors.len() != LAYOUT.len() {
            return Err(NetError::Shape(format!(
                "expected {} tensors, found {}",
                LAYOUT.len(),
                self.tensors.len()
            )));
        }
        for (t, (name, shape)) in self.tensors.iter().zip(LAYOUT) {
            if t.name != name || t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(NetError::Shape(format!(
                    "tensor {} has shape {:?}, expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite(t.name.clone()));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        Weights {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    fn data(&self, i: usize) -> &[T] {
        &self.tensors[i].data
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, alpha: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors.iter_mut() {
            for x in t.data.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// Preprocessed network input, channel-major `2 x 64 x 64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Input<T> {
    pub data: Vec<T>,
}

impl<T: Real> Input<T> {
    pub fn new(data: Vec<T>) -> Result<Self, NetError> {
        if data.len() != INPUT_LEN {
            return Err(NetError::Shape(format!(
                "input has {} values, expected {INPUT_LEN}",
                data.len()
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros() -> Self {
        Self {
            data: vec![T::zero(); INPUT_LEN],
        }
    }

    pub fn cast<U: Real>(&self) -> Input<U> {
        Input {
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Zero-padded stride-2 3x3 convolution plus bias, then ReLU in place.
/// Gathers the stride-2, pad-1 3x3 patches as rows `[in_c * 9][out_size^2]`.
fn im2col<T: Real>(input: &[T], in_c: usize, size: usize) -> Vec<T> {
    let out_size = size / 2;
    let plane = out_size * out_size;
    let mut col = vec![T::zero(); in_c * KERNEL * KERNEL * plane];
    for (r, row) in col.chunks_exact_mut(plane).enumerate() {
        let (i, ky, kx) = (r / (KERNEL * KERNEL), (r / KERNEL) % KERNEL, r % KERNEL);
        let in_plane = &input[i * size * size..(i + 1) * size * size];
        for oy in 0..out_size {
            let Some(iy) = (2 * oy + ky).checked_sub(1).filter(|&y| y < size) else {
                continue;
            };
            let in_row = &in_plane[iy * size..(iy + 1) * size];
            let out_row = &mut row[oy * out_size..(oy + 1) * out_size];
            for ox in usize::from(kx == 0)..out_size {
                out_row[ox] = in_row[2 * ox + kx - 1];
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im<T: Real>(col: &[T], in_c: usize, size: usize) -> Vec<T> {
    let out_size = size / 2;
    let plane = out_size * out_size;
    let mut out = vec![T::zero(); in_c * size * size];
    for (r, row) in col.chunks_exact(plane).enumerate() {
        let (i, ky, kx) = (r / (KERNEL * KERNEL), (r / KERNEL) % KERNEL, r % KERNEL);
        let out_plane = &mut out[i * size * size..(i + 1) * size * size];
        for oy in 0..out_size {
            let Some(iy) = (2 * oy + ky).checked_sub(1).filter(|&y| y < size) else {
                continue;
            };
            let dst = &mut out_plane[iy * size..(iy + 1) * size];
            let src = &row[oy * out_size..(oy + 1) * out_size];
            for ox in usize::from(kx == 0)..out_size {
                dst[2 * ox + kx - 1] += src[ox];
            }
        }
    }
    out
}

fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Dot product with a fixed eight-lane summation order.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut s = lanes.iter().copied().sum::<T>();
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn conv_relu<T: Real>(
    input: &[T],
    in_c: usize,
    size: usize,
    kernel: &[T],
    bias: &[T],
    out_c: usize,
) -> Vec<T> {
    let plane = (size / 2) * (size / 2);
    let k = in_c * KERNEL * KERNEL;
    let col = im2col(input, in_c, size);
    let mut out = vec![T::zero(); out_c * plane];
    for (o, out_plane) in out.chunks_exact_mut(plane).enumerate() {
        out_plane.fill(bias[o]);
        for (&w, row) in kernel[o * k..(o + 1) * k].iter().zip(col.chunks_exact(plane)) {
            axpy(out_plane, w, row);
        }
        for v in out_plane.iter_mut() {
            *v = v.max(T::zero());
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    input: &[T],
    in_c: usize,
    size: usize,
    kernel: &[T],
    d_out: &[T],
    d_kernel: &mut [T],
    d_bias: &mut [T],
    d_input: Option<&mut [T]>,
) {
    let plane = (size / 2) * (size / 2);
    let k = in_c * KERNEL * KERNEL;
    let col = im2col(input, in_c, size);
    let mut d_col = d_input.is_some().then(|| vec![T::zero(); col.len()]);
    for (o, dz) in d_out.chunks_exact(plane).enumerate() {
        d_bias[o] += dz.iter().copied().sum();
        for (j, row) in col.chunks_exact(plane).enumerate() {
            d_kernel[o * k + j] += dot(dz, row);
        }
        if let Some(dc) = d_col.as_deref_mut() {
            for (&w, d_row) in kernel[o * k..(o + 1) * k].iter().zip(dc.chunks_exact_mut(plane)) {
                axpy(d_row, w, dz);
            }
        }
    }
    if let (Some(d_in), Some(dc)) = (d_input, d_col) {
        for (d, v) in d_in.iter_mut().zip(col2im(&dc, in_c, size)) {
            *d += v;
        }
    }
}

struct Trace<T> {
    acts: [Vec<T>; 3],
    pooled: Vec<T>,
    output: [T; OUTPUT_DIM],
}

fn check_shapes<T: Real>(w: &Weights<T>, x: &Input<T>) -> Result<(), NetError> {
    w.validate()?;
    if x.data.len() != INPUT_LEN {
        return Err(NetError::Shape(format!(
            "input has {} values, expected {INPUT_LEN}",
            x.data.len()
        )));
    }
    Ok(())
}

fn run<T: Real>(w: &Weights<T>, x: &Input<T>) -> Trace<T> {
    let mut acts: [Vec<T>; 3] = Default::default();
    let mut prev: &[T] = &x.data;
    for (l, &(in_c, out_c, size)) in CONV_LAYERS.iter().enumerate() {
        acts[l] = conv_relu(prev, in_c, size, w.data(2 * l), w.data(2 * l + 1), out_c);
        prev = &acts[l];
    }
    let positions = acts[2].len() / FEATURES;
    let inv = T::one() / T::of(positions as f64);
    let pooled: Vec<T> = acts[2]
        .chunks_exact(positions)
        .map(|c| c.iter().copied().sum::<T>() * inv)
        .collect();
    let (fc_w, fc_b) = (w.data(6), w.data(7));
    let mut output = [T::zero(); OUTPUT_DIM];
    for (k, out) in output.iter_mut().enumerate() {
        *out = fc_b[k]
            + fc_w[k * FEATURES..(k + 1) * FEATURES]
                .iter()
                .zip(&pooled)
                .map(|(&a, &b)| a * b)
                .sum::<T>();
    }
    Trace {
        acts,
        pooled,
        output,
    }
}

pub fn forward<T: Real>(w: &Weights<T>, x: &Input<T>) -> Result<OffsetEstimate<T>, NetError> {
    check_shapes(w, x)?;
    let [dx, dy] = run(w, x).output;
    Ok(OffsetEstimate::new(dx, dy))
}

/// Loss and parameter gradients for a single sample.
pub fn backward<T: Real>(
    w: &Weights<T>,
    x: &Input<T>,
    target: OffsetEstimate<T>,
) -> Result<(T, Weights<T>), NetError> {
    check_shapes(w, x)?;
    Ok(backward_unchecked(w, x, target))
}

fn backward_unchecked<T: Real>(
    w: &Weights<T>,
    x: &Input<T>,
    target: OffsetEstimate<T>,
) -> (T, Weights<T>) {
    let trace = run(w, x);
    let residual = [trace.output[0] - target.dx, trace.output[1] - target.dy];
    let loss = T::of(0.5) * (residual[0] * residual[0] + residual[1] * residual[1]);

    let mut g = Weights::zeros();
    let fc_w = w.data(6);
    let mut d_pooled = vec![T::zero(); FEATURES];
    for (k, &r) in residual.iter().enumerate() {
        g.tensors[7].data[k] = r;
        for j in 0..FEATURES {
            g.tensors[6].data[k * FEATURES + j] = r * trace.pooled[j];
            d_pooled[j] += fc_w[k * FEATURES + j] * r;
        }
    }

    let positions = trace.acts[2].len() / FEATURES;
    let inv = T::one() / T::of(positions as f64);
    let mut d_act: Vec<T> = trace.acts[2]
        .chunks_exact(positions)
        .zip(&d_pooled)
        .flat_map(|(a, &d)| a.iter().map(move |&v| if v > T::zero() { d * inv } else { T::zero() }))
        .collect();

    for l in (0..CONV_LAYERS.len()).rev() {
        let (in_c, _, size) = CONV_LAYERS[l];
        let input: &[T] = if l == 0 { &x.data } else { &trace.acts[l - 1] };
        let mut d_input = (l > 0).then(|| vec![T::zero(); input.len()]);
        let (lo, hi) = g.tensors.split_at_mut(2 * l + 1);
        conv_backward(
            input,
            in_c,
            size,
            w.data(2 * l),
            &d_act,
            &mut lo[2 * l].data,
            &mut hi[0].data,
            d_input.as_deref_mut(),
        );
        if let Some(mut d_in) = d_input {
            for (d, &a) in d_in.iter_mut().zip(input) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
            d_act = d_in;
        }
    }
    (loss, g)
}

/// Mean loss and mean gradient over a batch.
///
/// Per-sample gradients may be computed in parallel, but they are always
/// summed in sample order, so the result does not depend on thread count.
pub fn batch_gradient<T: Real>(
    w: &Weights<T>,
    batch: &[(Input<T>, OffsetEstimate<T>)],
) -> Result<(T, Weights<T>), NetError> {
    if batch.is_empty() {
        return Err(NetError::Shape("empty batch".into()));
    }
    for (x, _) in batch {
        check_shapes(w, x)?;
    }
    let per_sample: Vec<(T, Weights<T>)> = batch
        .par_iter()
        .map(|(x, t)| backward_unchecked(w, x, *t))
        .collect();
    let mut total = Weights::zeros();
    let mut loss = T::zero();
    for (l, g) in &per_sample {
        loss += *l;
        total.add_scaled(g, T::one());
    }
    let inv = T::one() / T::of(batch.len() as f64);
    total.scale(inv);
    Ok((loss * inv, total))
}
