use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{input_channels, Activation, ArchSpec, LayerSpec, Padding, PoolMode, Shape, KERNEL};
use crate::error::{invalid, Result};

/// Numeric element type a network can run in.
pub trait Real: Float + Send + Sync + std::fmt::Debug + Default + 'static + std::iter::Sum {}
impl<T: Float + Send + Sync + std::fmt::Debug + Default + 'static + std::iter::Sum> Real for T {}

/// Weights and biases of one layer. Parameter-free layers hold empty vectors.
/// Conv weights are `[ky][kx][c_in][c_out]`, dense weights `[in][out]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    fn zeros_like(&self) -> Self {
        Self { w: vec![T::zero(); self.w.len()], b: vec![T::zero(); self.b.len()] }
    }
}

/// Per-layer parameter tensors (also used for gradients and optimizer moments).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(LayerParams::zeros_like).collect() }
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Every scalar, layer by layer, weights before biases.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a = *a + *b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in self.iter_mut() {
            *a = *a * k;
        }
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from(*x).unwrap()).collect();
        Params { layers: self.layers.iter().map(|l| LayerParams { w: c(&l.w), b: c(&l.b) }).collect() }
    }
}

/// Activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// Output of each layer (post-activation); `acts[0]` is the input.
    pub acts: Vec<Vec<T>>,
    /// For pool layers, the flat input index that won each output.
    argmax: Vec<Vec<u32>>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: ArchSpec,
    shapes: Vec<Shape>,
    pub params: Params<T>,
}

fn spatial(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Spatial { h, w, c } => (h, w, c),
        Shape::Flat(n) => (1, 1, n),
    }
}

fn glorot<T: Real>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| T::from(rng.gen_range(-limit..limit)).unwrap()).collect()
}

impl<T: Real> Network<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(arch, |n, fi, fo| glorot(&mut rng, n, fi, fo))
    }

    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        Self::build(arch, |n, _, _| vec![T::zero(); n])
    }

    fn build(arch: ArchSpec, mut init: impl FnMut(usize, usize, usize) -> Vec<T>) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, l) in arch.layers.iter().enumerate() {
            let lp = match *l {
                LayerSpec::Conv { filters, .. } => {
                    let cin = input_channels(shapes[i - 1]);
                    let k2 = KERNEL * KERNEL;
                    LayerParams {
                        w: init(k2 * cin * filters, k2 * cin, k2 * filters),
                        b: vec![T::zero(); filters],
                    }
                }
                LayerSpec::Dense { units, .. } => {
                    let fan_in = input_channels(shapes[i - 1]);
                    LayerParams { w: init(fan_in * units, fan_in, units), b: vec![T::zero(); units] }
                }
                _ => LayerParams::default(),
            };
            layers.push(lp);
        }
        Ok(Self { arch, shapes, params: Params { layers } })
    }

    pub fn from_params(arch: ArchSpec, params: Params<T>) -> Result<Self> {
        let template = Self::zeros(arch)?;
        if template.params.layers.len() != params.layers.len()
            || template.params.layers.iter().zip(&params.layers).any(|(a, b)| a.w.len() != b.w.len() || a.b.len() != b.b.len())
        {
            return Err(invalid("parameter tensors do not match the architecture"));
        }
        Ok(Self { params, ..template })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].len()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().map(Shape::len).unwrap_or(0)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network { arch: self.arch.clone(), shapes: self.shapes.clone(), params: self.params.cast() }
    }

    /// Output vector only.
    pub fn predict(&self, input: &[T], side: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(input, side)?.acts.pop().unwrap_or_default())
    }

    /// Forward pass; `input` is HWC, `side` holds the extra Flatten inputs.
    pub fn forward(&self, input: &[T], side: &[T]) -> Result<Trace<T>> {
        if input.len() != self.input_len() {
            return Err(invalid(format!("input has {} values, network expects {}", input.len(), self.input_len())));
        }
        if side.len() != self.arch.side_inputs {
            return Err(invalid(format!("{} side inputs given, network expects {}", side.len(), self.arch.side_inputs)));
        }
        let n = self.arch.layers.len();
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(n);
        let mut argmax = vec![Vec::new(); n];
        acts.push(input.to_vec());
        for i in 1..n {
            let x = &acts[i - 1];
            let (ih, iw, ic) = spatial(self.shapes[i - 1]);
            let p = &self.params.layers[i];
            let out = match self.arch.layers[i] {
                LayerSpec::Conv { filters, padding, activation } => {
                    let (oh, ow, _) = spatial(self.shapes[i]);
                    let mut y = conv_forward(x, (ih, iw, ic), &p.w, &p.b, (oh, ow, filters), padding);
                    activate(&mut y, activation);
                    y
                }
                LayerSpec::MaxPool { mode } => {
                    let (oh, ow, _) = spatial(self.shapes[i]);
                    let (y, idx) = pool_forward(x, (ih, iw, ic), (oh, ow), mode);
                    argmax[i] = idx;
                    y
                }
                LayerSpec::Flatten => x.iter().copied().chain(side.iter().copied()).collect(),
                LayerSpec::Dense { units, activation } => {
                    let mut y = p.b.clone();
                    for (xi, row) in x.iter().zip(p.w.chunks_exact(units)) {
                        // ReLU outputs are sparse; skipping zeros is exact.
                        if *xi != T::zero() {
                            axpy(&mut y, *xi, row);
                        }
                    }
                    activate(&mut y, activation);
                    y
                }
                LayerSpec::Input { .. } => unreachable!("validated: Input only at layer 0"),
            };
            acts.push(out);
        }
        Ok(Trace { acts, argmax })
    }

    /// Accumulate parameter gradients into `grads`, given dLoss/dOutput.
    pub fn backward(&self, trace: &Trace<T>, d_output: &[T], grads: &mut Params<T>) {
        let n = self.arch.layers.len();
        let mut delta = d_output.to_vec();
        for i in (1..n).rev() {
            let x = &trace.acts[i - 1];
            let y = &trace.acts[i];
            let need_dx = i > 1;
            let (ih, iw, ic) = spatial(self.shapes[i - 1]);
            let p = &self.params.layers[i];
            delta = match self.arch.layers[i] {
                LayerSpec::Conv { filters, padding, activation } => {
                    activation_backward(&mut delta, y, activation);
                    let (oh, ow, _) = spatial(self.shapes[i]);
                    let g = &mut grads.layers[i];
                    conv_backward(x, (ih, iw, ic), &p.w, &delta, (oh, ow, filters), padding, g, need_dx)
                }
                LayerSpec::MaxPool { .. } => {
                    let mut dx = vec![T::zero(); x.len()];
                    for (d, &j) in delta.iter().zip(&trace.argmax[i]) {
                        dx[j as usize] = dx[j as usize] + *d;
                    }
                    dx
                }
                LayerSpec::Flatten => {
                    delta.truncate(x.len());
                    delta
                }
                LayerSpec::Dense { units, activation } => {
                    activation_backward(&mut delta, y, activation);
                    let g = &mut grads.layers[i];
                    for (b, d) in g.b.iter_mut().zip(&delta) {
                        *b = *b + *d;
                    }
                    let mut dx = vec![T::zero(); if need_dx { x.len() } else { 0 }];
                    for (k, (xi, grow)) in x.iter().zip(g.w.chunks_exact_mut(units)).enumerate() {
                        if *xi != T::zero() {
                            axpy(grow, *xi, &delta);
                        }
                        if need_dx {
                            dx[k] = dot(&p.w[k * units..(k + 1) * units], &delta);
                        }
                    }
                    dx
                }
                LayerSpec::Input { .. } => unreachable!(),
            };
        }
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

fn activate<T: Real>(y: &mut [T], a: Activation) {
    match a {
        Activation::Linear => {}
        Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(T::zero())),
        Activation::Softmax => softmax_in_place(y),
    }
}

pub fn softmax_in_place<T: Real>(y: &mut [T]) {
    let m = y.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in y.iter_mut() {
        *v = (*v - m).exp();
        sum = sum + *v;
    }
    for v in y.iter_mut() {
        *v = *v / sum;
    }
}

/// Turn dL/dy into dL/dz in place, `y` being the activation output.
fn activation_backward<T: Real>(delta: &mut [T], y: &[T], a: Activation) {
    match a {
        Activation::Linear => {}
        Activation::Relu => {
            for (d, yi) in delta.iter_mut().zip(y) {
                if *yi <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        Activation::Softmax => {
            let s = dot(delta, y);
            for (d, yi) in delta.iter_mut().zip(y) {
                *d = *yi * (*d - s);
            }
        }
    }
}

/// Input row/col feeding output `o` through kernel tap `k`, if inside.
#[inline]
fn tap(o: usize, k: usize, padding: Padding, limit: usize) -> Option<usize> {
    let i = match padding {
        Padding::Valid => o + k,
        Padding::Same => (o + k).checked_sub(1)?,
    };
    (i < limit).then_some(i)
}

fn conv_forward<T: Real>(
    x: &[T],
    (ih, iw, ic): (usize, usize, usize),
    w: &[T],
    b: &[T],
    (oh, ow, oc): (usize, usize, usize),
    padding: Padding,
) -> Vec<T> {
    let mut y = Vec::with_capacity(oh * ow * oc);
    for oy in 0..oh {
        for ox in 0..ow {
            let start = y.len();
            y.extend_from_slice(b);
            let acc = &mut y[start..];
            for ky in 0..KERNEL {
                let Some(iy) = tap(oy, ky, padding, ih) else { continue };
                for kx in 0..KERNEL {
                    let Some(ix) = tap(ox, kx, padding, iw) else { continue };
                    let xin = &x[(iy * iw + ix) * ic..][..ic];
                    let wk = &w[(ky * KERNEL + kx) * ic * oc..][..ic * oc];
                    for (xv, wrow) in xin.iter().zip(wk.chunks_exact(oc)) {
                        if *xv != T::zero() {
                            axpy(acc, *xv, wrow);
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    x: &[T],
    (ih, iw, ic): (usize, usize, usize),
    w: &[T],
    delta: &[T],
    (oh, ow, oc): (usize, usize, usize),
    padding: Padding,
    g: &mut LayerParams<T>,
    need_dx: bool,
) -> Vec<T> {
    let mut dx = vec![T::zero(); if need_dx { x.len() } else { 0 }];
    for oy in 0..oh {
        for ox in 0..ow {
            let d = &delta[(oy * ow + ox) * oc..][..oc];
            if d.iter().all(|v| *v == T::zero()) {
                continue;
            }
            for (gb, dv) in g.b.iter_mut().zip(d) {
                *gb = *gb + *dv;
            }
            for ky in 0..KERNEL {
                let Some(iy) = tap(oy, ky, padding, ih) else { continue };
                for kx in 0..KERNEL {
                    let Some(ix) = tap(ox, kx, padding, iw) else { continue };
                    let base = (iy * iw + ix) * ic;
                    let off = (ky * KERNEL + kx) * ic * oc;
                    let gk = &mut g.w[off..off + ic * oc];
                    for (ci, grow) in gk.chunks_exact_mut(oc).enumerate() {
                        let xv = x[base + ci];
                        if xv != T::zero() {
                            axpy(grow, xv, d);
                        }
                    }
                    if need_dx {
                        let wk = &w[off..off + ic * oc];
                        for (ci, wrow) in wk.chunks_exact(oc).enumerate() {
                            dx[base + ci] = dx[base + ci] + dot(wrow, d);
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward<T: Real>(
    x: &[T],
    (ih, iw, c): (usize, usize, usize),
    (oh, ow): (usize, usize),
    _mode: PoolMode,
) -> (Vec<T>, Vec<u32>) {
    // Output size already encodes floor/ceil; windows are clipped to the input.
    let mut y = Vec::with_capacity(oh * ow * c);
    let mut idx = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = T::neg_infinity();
                let mut at = 0u32;
                for iy in (2 * oy)..(2 * oy + 2).min(ih) {
                    for ix in (2 * ox)..(2 * ox + 2).min(iw) {
                        let j = (iy * iw + ix) * c + ch;
                        if x[j] > best {
                            best = x[j];
                            at = j as u32;
                        }
                    }
                }
                y.push(best);
                idx.push(at);
            }
        }
    }
    (y, idx)
}
