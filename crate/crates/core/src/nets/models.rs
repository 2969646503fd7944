//! Network builders and forward/backward passes for the generator, the two
//! classifiers, and the patch discriminator.

use ndarray::{Array1, Array3, Array4, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::{FeatureMap, Patch, StainDomain};
use crate::error::{Error, Result};
use crate::nets::layer::{
    Conv2d, ConvTranspose2d, GradStore, Layer, Net, ResidualBlock, SeqCache, Sequential,
};
use crate::nets::loss::logit_to_probability;
use crate::nets::scalar::Scalar;
use crate::nets::spec::{
    BaselineClassifierSpec, DiscriminatorSpec, FeatureClassifierSpec, GeneratorSpec,
};

enum Init {
    /// Normal(0, 0.02), the GAN reference convention.
    Gan,
    /// Kaiming normal for ReLU stacks.
    He,
}

struct Builder {
    rng: ChaCha8Rng,
    init: Init,
}

impl Builder {
    fn new(seed: u64, init: Init) -> Self {
        Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            init,
        }
    }

    fn conv<T: Scalar>(
        &mut self,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Layer<T> {
        let std = match self.init {
            Init::Gan => 0.02,
            Init::He => (2.0 / (in_c * kernel * kernel) as f64).sqrt(),
        };
        let dist = Normal::new(0.0, std).expect("finite std");
        let rng = &mut self.rng;
        let weight =
            Array4::from_shape_fn((out_c, in_c, kernel, kernel), |_| {
                T::from_real(dist.sample(rng))
            });
        Layer::Conv(Conv2d {
            name: name.to_string(),
            weight,
            bias: Array1::zeros(out_c),
            stride,
            pad,
        })
    }

    fn conv_t<T: Scalar>(
        &mut self,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Layer<T> {
        let std = match self.init {
            Init::Gan => 0.02,
            Init::He => (2.0 / (in_c * kernel * kernel) as f64).sqrt(),
        };
        let dist = Normal::new(0.0, std).expect("finite std");
        let rng = &mut self.rng;
        let weight =
            Array4::from_shape_fn((in_c, out_c, kernel, kernel), |_| {
                T::from_real(dist.sample(rng))
            });
        Layer::ConvT(ConvTranspose2d {
            name: name.to_string(),
            weight,
            bias: Array1::zeros(out_c),
            stride,
            pad,
            out_pad,
        })
    }
}

/// ResNet-style translator with a deep feature tap after the last residual
/// block.
#[derive(Debug, Clone)]
pub struct Generator<T: Scalar> {
    pub spec: GeneratorSpec,
    pub encoder: Sequential<T>,
    pub decoder: Sequential<T>,
}

#[derive(Debug)]
pub struct GenCache<T: Scalar> {
    pub enc: SeqCache<T>,
    pub dec: SeqCache<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn build(spec: &GeneratorSpec, seed: u64) -> Self {
        let mut b = Builder::new(seed, Init::Gan);
        let bw = spec.base_width;
        let mut enc = vec![
            b.conv("g.stem", 3, bw, 7, 1, 3),
            Layer::InstanceNorm,
            Layer::Relu,
            b.conv("g.down1", bw, 2 * bw, 3, 2, 1),
            Layer::InstanceNorm,
            Layer::Relu,
            b.conv("g.down2", 2 * bw, 4 * bw, 3, 2, 1),
            Layer::InstanceNorm,
            Layer::Relu,
        ];
        for i in 0..spec.n_blocks {
            let inner = Sequential::new(vec![
                b.conv(&format!("g.block{i}.c1"), 4 * bw, 4 * bw, 3, 1, 1),
                Layer::InstanceNorm,
                Layer::Relu,
                b.conv(&format!("g.block{i}.c2"), 4 * bw, 4 * bw, 3, 1, 1),
                Layer::InstanceNorm,
            ]);
            enc.push(Layer::Residual(ResidualBlock { inner }));
        }
        let decoder = Sequential::new(vec![
            b.conv_t("g.up1", 4 * bw, 2 * bw, 3, 2, 1, 1),
            Layer::InstanceNorm,
            Layer::Relu,
            b.conv_t("g.up2", 2 * bw, bw, 3, 2, 1, 1),
            Layer::InstanceNorm,
            Layer::Relu,
            b.conv("g.head", bw, 3, 7, 1, 3),
            Layer::Sigmoid,
        ]);
        Generator {
            spec: spec.clone(),
            encoder: Sequential::new(enc),
            decoder,
        }
    }

    /// Full pass keeping activations for backprop. Returns
    /// `(output, feature tap, cache)`.
    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, Array3<T>, GenCache<T>) {
        let (tap, enc) = self.encoder.forward(x);
        let (out, dec) = self.decoder.forward(&tap);
        (out, tap, GenCache { enc, dec })
    }

    /// Inference pass without caches.
    pub fn forward_infer(&self, x: &Array3<T>) -> (Array3<T>, Array3<T>) {
        let tap = self.encoder.forward_infer(x);
        let out = self.decoder.forward_infer(&tap);
        (out, tap)
    }

    /// Backprop through the decoder and encoder. Either gradient may be
    /// absent; a tap gradient is added to whatever flows back from the
    /// decoder.
    pub fn backward(
        &self,
        cache: &GenCache<T>,
        g_out: Option<&Array3<T>>,
        g_tap: Option<&Array3<T>>,
        grads: &mut GradStore<T>,
    ) -> Array3<T> {
        let mut g = match g_out {
            Some(g_out) => self.decoder.backward(&cache.dec, g_out, grads),
            None => Array3::zeros(cache.enc.output().dim()),
        };
        if let Some(g_tap) = g_tap {
            g += g_tap;
        }
        self.encoder.backward(&cache.enc, &g, grads)
    }

    /// Translates a patch, tagging the result with `to_stain` and returning
    /// the raw feature tap in `(H, W, C)` order.
    pub fn forward_patch(
        &self,
        patch: &Patch,
        to_stain: StainDomain,
    ) -> Result<(Patch, Array3<f64>)> {
        let x = patch_to_input::<T>(patch);
        let (out, tap) = self.forward_infer(&x);
        let pixels = output_to_pixels(&out);
        let translated = Patch::new(pixels, to_stain, patch.source_id.clone(), patch.center)?;
        Ok((translated, chw_to_hwc(&tap)))
    }
}

impl<T: Scalar> Net<T> for Generator<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, T>)) {
        self.encoder.visit_params(f);
        self.decoder.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, T>)) {
        self.encoder.visit_params_mut(f);
        self.decoder.visit_params_mut(f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Baseline,
    Feature,
}

/// Fully convolutional classifier collapsing its input to one logit.
#[derive(Debug, Clone)]
pub struct Classifier<T: Scalar> {
    pub kind: ClassifierKind,
    pub body: Sequential<T>,
    pub input_channels: usize,
    pub input_side: usize,
}

impl<T: Scalar> Classifier<T> {
    pub fn build_baseline(spec: &BaselineClassifierSpec, seed: u64) -> Self {
        let mut b = Builder::new(seed, Init::He);
        let widths = spec.scaled_widths();
        let mut layers = Vec::new();
        let mut in_c = 3;
        for (i, &out_c) in widths.iter().enumerate() {
            let stride = if BaselineClassifierSpec::STRIDED.contains(&i) {
                2
            } else {
                1
            };
            layers.push(b.conv(&format!("bc.conv{}", i + 1), in_c, out_c, 3, stride, 0));
            layers.push(Layer::Relu);
            in_c = out_c;
        }
        layers.push(b.conv(
            "bc.final",
            in_c,
            1,
            BaselineClassifierSpec::FINAL_KERNEL,
            1,
            0,
        ));
        Classifier {
            kind: ClassifierKind::Baseline,
            body: Sequential::new(layers),
            input_channels: 3,
            input_side: 100,
        }
    }

    pub fn build_feature(_spec: &FeatureClassifierSpec, seed: u64) -> Self {
        let mut b = Builder::new(seed, Init::He);
        let mut layers = Vec::new();
        let mut in_c = FeatureClassifierSpec::IN_CHANNELS;
        for (i, &out_c) in FeatureClassifierSpec::WIDTHS.iter().enumerate() {
            let stride = if i == FeatureClassifierSpec::STRIDED {
                2
            } else {
                1
            };
            layers.push(b.conv(&format!("fc.conv{}", i + 1), in_c, out_c, 3, stride, 0));
            layers.push(Layer::Relu);
            in_c = out_c;
        }
        layers.push(b.conv("fc.final", in_c, 1, 1, 1, 0));
        Classifier {
            kind: ClassifierKind::Feature,
            body: Sequential::new(layers),
            input_channels: FeatureClassifierSpec::IN_CHANNELS,
            input_side: 25,
        }
    }

    fn check_input(&self, x: &Array3<T>) -> Result<()> {
        let want = [self.input_channels, self.input_side, self.input_side];
        if x.shape() != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{want:?}"),
                got: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    /// Pixel inputs are centered from [0,1] to [-1,1]; feature inputs are
    /// already normalized by the generator's instance norms and pass
    /// through unchanged.
    fn prepare(&self, x: &Array3<T>) -> Array3<T> {
        match self.kind {
            ClassifierKind::Baseline => x.mapv(|v| v + v - T::one()),
            ClassifierKind::Feature => x.clone(),
        }
    }

    /// Raw logit plus activations for backprop.
    pub fn forward_logit(&self, x: &Array3<T>) -> Result<(T, SeqCache<T>)> {
        self.check_input(x)?;
        let (y, cache) = self.body.forward(&self.prepare(x));
        debug_assert_eq!(y.len(), 1, "classifier must collapse to one value");
        Ok((y[[0, 0, 0]], cache))
    }

    /// Probability in (0,1); logistic of the logit with a saturation clamp.
    pub fn forward_prob(&self, x: &Array3<T>) -> Result<f64> {
        self.check_input(x)?;
        let y = self.body.forward_infer(&self.prepare(x));
        Ok(logit_to_probability(y[[0, 0, 0]]))
    }

    pub fn backward_from_logit(
        &self,
        cache: &SeqCache<T>,
        d_logit: T,
        grads: &mut GradStore<T>,
    ) -> Array3<T> {
        let mut g = Array3::zeros((1, 1, 1));
        g[[0, 0, 0]] = d_logit;
        self.body.backward(cache, &g, grads)
    }
}

impl<T: Scalar> Net<T> for Classifier<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, T>)) {
        self.body.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, T>)) {
        self.body.visit_params_mut(f);
    }
}

/// PatchGAN-style discriminator emitting a spatial logit map.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar> {
    pub spec: DiscriminatorSpec,
    pub body: Sequential<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn build(spec: &DiscriminatorSpec, seed: u64) -> Self {
        let mut b = Builder::new(seed, Init::Gan);
        let mut layers = Vec::new();
        let mut in_c = spec.in_channels;
        for (i, &out_c) in spec.widths.iter().enumerate() {
            layers.push(b.conv(&format!("d.conv{}", i + 1), in_c, out_c, 4, 2, 1));
            if i > 0 {
                layers.push(Layer::InstanceNorm);
            }
            layers.push(Layer::LeakyRelu(0.2));
            in_c = out_c;
        }
        layers.push(b.conv("d.final", in_c, 1, 4, 1, 1));
        Discriminator {
            spec: spec.clone(),
            body: Sequential::new(layers),
        }
    }

    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, SeqCache<T>) {
        self.body.forward(x)
    }

    pub fn forward_infer(&self, x: &Array3<T>) -> Array3<T> {
        self.body.forward_infer(x)
    }

    pub fn backward(
        &self,
        cache: &SeqCache<T>,
        gy: &Array3<T>,
        grads: &mut GradStore<T>,
    ) -> Array3<T> {
        self.body.backward(cache, gy, grads)
    }
}

impl<T: Scalar> Net<T> for Discriminator<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, T>)) {
        self.body.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, T>)) {
        self.body.visit_params_mut(f);
    }
}

/// `(H, W, 3)` pixels in [0,1] to the `(3, H, W)` network layout.
pub fn patch_to_input<T: Scalar>(patch: &Patch) -> Array3<T> {
    hwc_to_chw(&patch.pixels)
}

pub fn hwc_to_chw<T: Scalar>(hwc: &Array3<f64>) -> Array3<T> {
    let (h, w, c) = (hwc.shape()[0], hwc.shape()[1], hwc.shape()[2]);
    Array3::from_shape_fn((c, h, w), |(ci, y, x)| T::from_real(hwc[[y, x, ci]]))
}

pub fn chw_to_hwc<T: Scalar>(chw: &Array3<T>) -> Array3<f64> {
    let (c, h, w) = chw.dim();
    ndarray::Array3::from_shape_fn((h, w, c), |(y, x, ci)| chw[[ci, y, x]].to_real())
}

/// Decoder output (already in (0,1) thanks to the bounded activation) back
/// to `(H, W, 3)` pixel order.
pub fn output_to_pixels<T: Scalar>(out: &Array3<T>) -> ndarray::Array3<f64> {
    let mut pixels = chw_to_hwc(out);
    pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
    pixels
}

/// Network input for a feature map.
pub fn feature_to_input<T: Scalar>(fm: &FeatureMap) -> Array3<T> {
    hwc_to_chw(&fm.values)
}
