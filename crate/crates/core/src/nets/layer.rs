//! Layers, sequential containers, and gradient storage.

use std::collections::HashMap;

use ndarray::{Array1, Array3, Array4, ArrayD, ArrayViewD, ArrayViewMutD, Axis};

use crate::nets::conv::{
    conv2d_backward, conv2d_forward, conv_out_side, conv_transpose2d_backward,
    conv_transpose2d_forward, conv_transpose_out_side,
};
use crate::nets::scalar::Scalar;

const NORM_EPS: f64 = 1e-5;

/// Named gradient accumulator. Accumulation order is fixed by the callers
/// (chunk order, then batch order), keeping runs bit-reproducible.
#[derive(Debug, Default)]
pub struct GradStore<T: Scalar> {
    map: HashMap<String, ArrayD<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn new() -> Self {
        GradStore {
            map: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, grad: ArrayD<T>) {
        match self.map.get_mut(name) {
            Some(acc) => *acc += &grad,
            None => {
                self.map.insert(name.to_string(), grad);
            }
        }
    }

    pub fn merge(&mut self, other: GradStore<T>) {
        for (name, grad) in other.map {
            match self.map.get_mut(&name) {
                Some(acc) => *acc += &grad,
                None => {
                    self.map.insert(name, grad);
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for grad in self.map.values_mut() {
            grad.mapv_inplace(|v| v * factor);
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.map.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.map
            .values()
            .map(|g| g.iter().map(|v| v.to_real() * v.to_real()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Anything that exposes named parameters for optimization and
/// checkpointing. Visit order is the layer construction order and therefore
/// stable.
pub trait Net<T: Scalar> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, v| n += v.len());
        n
    }

    fn named_param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, v| out.push((name.to_string(), v.shape().to_vec())));
        out
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub name: String,
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T: Scalar> {
    pub name: String,
    /// Layout `(in_c, out_c, k, k)`.
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Scalar> {
    pub inner: Sequential<T>,
}

/// A single layer. Activations and the norm carry no parameters.
#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Conv(Conv2d<T>),
    ConvT(ConvTranspose2d<T>),
    InstanceNorm,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Residual(ResidualBlock<T>),
}

/// Per-layer cache produced by the forward pass; residual blocks nest the
/// cache of their inner stack.
#[derive(Debug)]
pub enum LayerCache<T: Scalar> {
    None,
    Inner(Box<SeqCache<T>>),
}

/// Activations of a sequential stack: `acts[i]` is the input of layer `i`,
/// `acts[len]` the final output.
#[derive(Debug)]
pub struct SeqCache<T: Scalar> {
    pub acts: Vec<Array3<T>>,
    pub inner: Vec<LayerCache<T>>,
}

impl<T: Scalar> SeqCache<T> {
    pub fn output(&self) -> &Array3<T> {
        self.acts.last().expect("non-empty stack")
    }
}

impl<T: Scalar> Layer<T> {
    fn forward(&self, x: &Array3<T>) -> (Array3<T>, LayerCache<T>) {
        match self {
            Layer::Conv(c) => (
                conv2d_forward(x, &c.weight, &c.bias, c.stride, c.pad),
                LayerCache::None,
            ),
            Layer::ConvT(c) => (
                conv_transpose2d_forward(x, &c.weight, &c.bias, c.stride, c.pad, c.out_pad),
                LayerCache::None,
            ),
            Layer::InstanceNorm => (instance_norm_forward(x), LayerCache::None),
            Layer::Relu => (x.mapv(|v| v.max(T::zero())), LayerCache::None),
            Layer::LeakyRelu(slope) => {
                let s = T::from_real(*slope);
                (
                    x.mapv(|v| if v > T::zero() { v } else { v * s }),
                    LayerCache::None,
                )
            }
            Layer::Sigmoid => (x.mapv(sigmoid), LayerCache::None),
            Layer::Residual(block) => {
                let (inner_y, cache) = block.inner.forward(x);
                (x + &inner_y, LayerCache::Inner(Box::new(cache)))
            }
        }
    }

    fn backward(
        &self,
        x: &Array3<T>,
        y: &Array3<T>,
        cache: &LayerCache<T>,
        gy: &Array3<T>,
        grads: &mut GradStore<T>,
    ) -> Array3<T> {
        match self {
            Layer::Conv(c) => {
                let (gx, gw, gb) = conv2d_backward(x, &c.weight, c.stride, c.pad, gy);
                grads.add(&format!("{}.weight", c.name), gw.into_dyn());
                grads.add(&format!("{}.bias", c.name), gb.into_dyn());
                gx
            }
            Layer::ConvT(c) => {
                let (gx, gw, gb) = conv_transpose2d_backward(x, &c.weight, c.stride, c.pad, gy);
                grads.add(&format!("{}.weight", c.name), gw.into_dyn());
                grads.add(&format!("{}.bias", c.name), gb.into_dyn());
                gx
            }
            Layer::InstanceNorm => instance_norm_backward(x, gy),
            Layer::Relu => {
                let mut gx = gy.clone();
                ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                    if v <= T::zero() {
                        *g = T::zero();
                    }
                });
                gx
            }
            Layer::LeakyRelu(slope) => {
                let s = T::from_real(*slope);
                let mut gx = gy.clone();
                ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                    if v <= T::zero() {
                        *g = *g * s;
                    }
                });
                gx
            }
            Layer::Sigmoid => {
                let mut gx = gy.clone();
                ndarray::Zip::from(&mut gx).and(y).for_each(|g, &yv| {
                    *g = *g * yv * (T::one() - yv);
                });
                gx
            }
            Layer::Residual(block) => {
                let inner_cache = match cache {
                    LayerCache::Inner(c) => c,
                    LayerCache::None => unreachable!("residual cache"),
                };
                let gx_inner = block.inner.backward(inner_cache, gy, grads);
                gx_inner + gy
            }
        }
    }

    /// Output spatial side and channel count for a given input.
    pub fn out_shape(&self, side: usize, channels: usize) -> (usize, usize) {
        match self {
            Layer::Conv(c) => (
                conv_out_side(side, c.weight.dim().2, c.stride, c.pad),
                c.weight.dim().0,
            ),
            Layer::ConvT(c) => (
                conv_transpose_out_side(side, c.weight.dim().2, c.stride, c.pad, c.out_pad),
                c.weight.dim().1,
            ),
            Layer::Residual(_) => (side, channels),
            _ => (side, channels),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sequential<T: Scalar> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, SeqCache<T>) {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut inner = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for layer in &self.layers {
            let (y, cache) = layer.forward(acts.last().expect("pushed above"));
            inner.push(cache);
            acts.push(y);
        }
        let y = acts.last().expect("non-empty").clone();
        (y, SeqCache { acts, inner })
    }

    /// Forward without keeping activations (inference).
    pub fn forward_infer(&self, x: &Array3<T>) -> Array3<T> {
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, _) = layer.forward(&cur);
            cur = y;
        }
        cur
    }

    pub fn backward(
        &self,
        cache: &SeqCache<T>,
        gy: &Array3<T>,
        grads: &mut GradStore<T>,
    ) -> Array3<T> {
        let mut g = gy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&cache.acts[i], &cache.acts[i + 1], &cache.inner[i], &g, grads);
        }
        g
    }

    /// `(side, channels)` after each layer, starting with the input.
    pub fn shape_trace(&self, side: usize, channels: usize) -> Vec<(usize, usize)> {
        let mut out = vec![(side, channels)];
        let (mut s, mut c) = (side, channels);
        for layer in &self.layers {
            let (ns, nc) = layer.out_shape(s, c);
            s = ns;
            c = nc;
            out.push((s, c));
        }
        out
    }
}

impl<T: Scalar> Net<T> for Sequential<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, T>)) {
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    f(&format!("{}.weight", c.name), c.weight.view().into_dyn());
                    f(&format!("{}.bias", c.name), c.bias.view().into_dyn());
                }
                Layer::ConvT(c) => {
                    f(&format!("{}.weight", c.name), c.weight.view().into_dyn());
                    f(&format!("{}.bias", c.name), c.bias.view().into_dyn());
                }
                Layer::Residual(block) => block.inner.visit_params(f),
                _ => {}
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, T>)) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    f(&format!("{}.weight", c.name), c.weight.view_mut().into_dyn());
                    f(&format!("{}.bias", c.name), c.bias.view_mut().into_dyn());
                }
                Layer::ConvT(c) => {
                    f(&format!("{}.weight", c.name), c.weight.view_mut().into_dyn());
                    f(&format!("{}.bias", c.name), c.bias.view_mut().into_dyn());
                }
                Layer::Residual(block) => block.inner.visit_params_mut(f),
                _ => {}
            }
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    let one = T::one();
    if v >= T::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    }
}

/// Per-channel normalization without affine parameters:
/// `(x - mean) / sqrt(var + eps)` over each channel's spatial plane.
pub fn instance_norm_forward<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    let eps = T::from_real(NORM_EPS);
    let mut y = x.clone();
    for c in 0..x.dim().0 {
        let plane = x.index_axis(Axis(0), c);
        let n = T::from_real(plane.len() as f64);
        let mean = plane.sum() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv_std = T::one() / (var + eps).sqrt();
        let mut out_plane = y.index_axis_mut(Axis(0), c);
        out_plane.mapv_inplace(|v| (v - mean) * inv_std);
    }
    y
}

pub fn instance_norm_backward<T: Scalar>(x: &Array3<T>, gy: &Array3<T>) -> Array3<T> {
    let eps = T::from_real(NORM_EPS);
    let mut gx = gy.clone();
    for c in 0..x.dim().0 {
        let plane = x.index_axis(Axis(0), c);
        let g_plane = gy.index_axis(Axis(0), c);
        let n = T::from_real(plane.len() as f64);
        let mean = plane.sum() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv_std = T::one() / (var + eps).sqrt();
        let g_mean = g_plane.sum() / n;
        let gxhat_dot = plane
            .iter()
            .zip(g_plane.iter())
            .map(|(&v, &g)| g * (v - mean) * inv_std)
            .sum::<T>()
            / n;
        let mut out_plane = gx.index_axis_mut(Axis(0), c);
        ndarray::Zip::from(&mut out_plane)
            .and(&plane)
            .for_each(|g_out, &v| {
                let xhat = (v - mean) * inv_std;
                *g_out = inv_std * (*g_out - g_mean - xhat * gxhat_dot);
            });
    }
    gx
}
