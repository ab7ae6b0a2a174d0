//! Style-based generator contract and the trainable toy generator.
//!
//! The toy generator mirrors the structure the attacks depend on: a
//! mapping network whose final nonlinearity is LeakyReLU(0.2) (so the
//! `W -> P` transform exactly inverts it), one affine transform per
//! synthesis layer producing the style code, and a synthesis network
//! that modulates feature maps with those styles while upsampling from a
//! learned 4x4 constant. Synthesis is differentiable with respect to the
//! style code: the attack-facing contract exposes exact VJP and JVP
//! hooks next to plain forward evaluation.

use crate::checkpoint::{self, Manifest};
use crate::latent::{LatentW, LatentWPlus, LatentZ, StyleCode};
use crate::nn::{
    bce_with_logit, bce_with_logit_grad, leaky_relu, leaky_relu_grad, sigmoid, upsample2,
    upsample2_backward, Adam, Conv2d, Conv2dGrad, ConvStack, ConvStackGrad, Dense, DenseGrad,
    MAPPING_LRELU_SLOPE,
};
use crate::{Error, Result};
use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

const SYNTH_LRELU_SLOPE: f64 = 0.2;

/// An image: `(height, width, 3)` grid of reals clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    /// Validates finiteness and clamps each value into `[0, 1]`.
    pub fn new(mut data: Array3<f64>) -> Result<Self> {
        if data.dim().2 != 3 {
            return Err(Error::InvalidInput(format!(
                "image needs 3 channels, got {}",
                data.dim().2
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("image contains non-finite values".into()));
        }
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.data.dim() == other.data.dim()
    }

    /// Mean squared pixel difference.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::InvalidInput("image shape mismatch".into()));
        }
        let n = self.data.len() as f64;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    /// SHA-256 of the raw f64 grid, for determinism checks.
    pub fn digest(&self) -> String {
        checkpoint::digest_params(&[self.data.as_slice().expect("contiguous")])
    }

    pub fn to_png(&self, path: &Path) -> Result<()> {
        let (h, w, _) = self.data.dim();
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = image::Rgb([
                    (self.data[[y, x, 0]] * 255.0).round() as u8,
                    (self.data[[y, x, 1]] * 255.0).round() as u8,
                    (self.data[[y, x, 2]] * 255.0).round() as u8,
                ]);
                img.put_pixel(x as u32, y as u32, px);
            }
        }
        img.save(path)
            .map_err(|e| Error::InvalidInput(format!("png write failed: {e}")))?;
        Ok(())
    }

    pub fn from_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::InvalidInput(format!("png read failed: {e}")))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
        });
        Image::new(data)
    }
}

/// Shape summary every generator implementation must expose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDims {
    pub d_z: usize,
    pub d_w: usize,
    pub layer_count: usize,
    /// Per-layer affine output dimensions; their sum is the channel
    /// count `C` of a style code.
    pub style_dims: Vec<usize>,
    pub image_size: usize,
}

impl GeneratorDims {
    pub fn total_channels(&self) -> usize {
        self.style_dims.iter().sum()
    }
}

/// Pluggable style-based generator.
///
/// `synthesize` must be deterministic given a style code. The gradient
/// hooks are optional; callers check `supports_gradients` first.
pub trait Generator: Send + Sync {
    fn dims(&self) -> &GeneratorDims;

    fn map_latent(&self, z: &LatentZ) -> Result<LatentW>;

    fn affine_to_style(&self, wp: &LatentWPlus) -> Result<StyleCode>;

    fn synthesize(&self, s: &StyleCode) -> Result<Image>;

    fn supports_gradients(&self) -> bool {
        false
    }

    /// Vector-Jacobian product: gradient of a scalar loss with respect
    /// to each style layer, given its gradient with respect to the
    /// synthesized image.
    fn synthesize_vjp(&self, _s: &StyleCode, _dimage: &Array3<f64>) -> Result<Vec<Array1<f64>>> {
        Err(Error::GradientUnavailable)
    }

    /// Jacobian-vector product: the image-space tangent of a unit
    /// perturbation of one flat style channel.
    fn synthesize_channel_jvp(&self, _s: &StyleCode, _flat_channel: usize) -> Result<Array3<f64>> {
        Err(Error::GradientUnavailable)
    }

    /// Gradient of a scalar loss with respect to each `w+` layer, given
    /// its gradient with respect to each style layer (the affines are
    /// linear, so this does not depend on the input point).
    fn affine_vjp(&self, _dstyle: &[Array1<f64>]) -> Result<Vec<Array1<f64>>> {
        Err(Error::GradientUnavailable)
    }

    fn map_latent_batch(&self, zs: &[LatentZ]) -> Result<Vec<LatentW>> {
        zs.iter().map(|z| self.map_latent(z)).collect()
    }
}

/// Architecture of the toy generator. The defaults are the desk-scale
/// stand-ins for a full-size style generator: 6 layers of 32 style
/// channels each (192 total) rendering 32x32 RGB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGeneratorConfig {
    pub d_z: usize,
    pub d_w: usize,
    pub layer_count: usize,
    pub style_dim: usize,
    pub mapping_depth: usize,
    pub mapping_hidden: usize,
    pub image_size: usize,
}

impl Default for ToyGeneratorConfig {
    fn default() -> Self {
        Self {
            d_z: 16,
            d_w: 16,
            layer_count: 6,
            style_dim: 32,
            mapping_depth: 3,
            mapping_hidden: 32,
            image_size: 32,
        }
    }
}

impl ToyGeneratorConfig {
    /// Synthesis feature channels; styles carry a scale and a shift per
    /// feature channel.
    pub fn feat_channels(&self) -> usize {
        self.style_dim / 2
    }

    fn upsample_count(&self) -> usize {
        (self.image_size / 4).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.style_dim % 2 != 0 {
            return Err(Error::Config("style_dim must be even (scale + shift)".into()));
        }
        if self.mapping_depth == 0 {
            return Err(Error::Config("mapping_depth must be at least 1".into()));
        }
        if self.image_size < 8 || self.image_size % 4 != 0 || !(self.image_size / 4).is_power_of_two()
        {
            return Err(Error::Config(
                "image_size must be 4 * 2^k for some k >= 1".into(),
            ));
        }
        let ups = self.upsample_count();
        if self.layer_count < ups + 1 {
            return Err(Error::Config(format!(
                "layer_count {} too small for image_size {} ({} upsamples)",
                self.layer_count, self.image_size, ups
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> GeneratorDims {
        GeneratorDims {
            d_z: self.d_z,
            d_w: self.d_w,
            layer_count: self.layer_count,
            style_dims: vec![self.style_dim; self.layer_count],
            image_size: self.image_size,
        }
    }
}

/// Mapping network: fully connected layers each followed by
/// LeakyReLU(0.2). The final activation is load-bearing: `w_to_p`
/// inverts exactly this slope.
#[derive(Debug, Clone)]
struct MappingNet {
    layers: Vec<Dense>,
}

struct MappingCache {
    inputs: Vec<Array1<f64>>,
    pre: Vec<Array1<f64>>,
    w: Array1<f64>,
}

impl MappingNet {
    fn new<R: Rng>(cfg: &ToyGeneratorConfig, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(cfg.mapping_depth);
        let mut din = cfg.d_z;
        for i in 0..cfg.mapping_depth {
            let dout = if i + 1 == cfg.mapping_depth {
                cfg.d_w
            } else {
                cfg.mapping_hidden
            };
            layers.push(Dense::new(din, dout, rng));
            din = dout;
        }
        Self { layers }
    }

    fn forward(&self, z: &Array1<f64>) -> MappingCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = z.clone();
        for layer in &self.layers {
            inputs.push(cur.clone());
            let p = layer.forward(&cur);
            cur = p.mapv(|v| leaky_relu(v, MAPPING_LRELU_SLOPE));
            pre.push(p);
        }
        MappingCache {
            inputs,
            pre,
            w: cur,
        }
    }

    fn backward(&self, cache: &MappingCache, dw: &Array1<f64>, grads: &mut [DenseGrad]) {
        let mut dcur = dw.clone();
        for i in (0..self.layers.len()).rev() {
            let dpre = Array1::from_shape_fn(dcur.len(), |j| {
                dcur[j] * leaky_relu_grad(cache.pre[i][j], MAPPING_LRELU_SLOPE)
            });
            dcur = self.layers[i].backward(&cache.inputs[i], &dpre, &mut grads[i]);
        }
    }
}

/// Style-modulated synthesis network.
#[derive(Debug, Clone)]
struct SynthesisNet {
    /// Learned 4x4 constant input, `(4, 4, F)`.
    constant: Array3<f64>,
    convs: Vec<Conv2d>,
    /// Whether a 2x nearest upsample runs before each block.
    upsample_before: Vec<bool>,
    to_rgb: Conv2d,
}

/// Forward activations reused by VJP/JVP passes.
pub struct SynthCache {
    styles: Vec<Array1<f64>>,
    /// Block inputs after any upsample, before modulation.
    block_in: Vec<Array3<f64>>,
    /// Modulated maps (conv inputs).
    modulated: Vec<Array3<f64>>,
    /// Conv pre-activations.
    pre: Vec<Array3<f64>>,
    /// Input to the RGB head.
    head_in: Array3<f64>,
    /// Image after sigmoid.
    image: Array3<f64>,
}

impl SynthCache {
    pub fn image(&self) -> &Array3<f64> {
        &self.image
    }
}

#[derive(Debug, Clone)]
struct SynthGrads {
    dconstant: Array3<f64>,
    convs: Vec<Conv2dGrad>,
    to_rgb: Conv2dGrad,
}

impl SynthesisNet {
    fn new<R: Rng>(cfg: &ToyGeneratorConfig, rng: &mut R) -> Self {
        let feat = cfg.feat_channels();
        let ups = cfg.upsample_count();
        let mut upsample_before = vec![false; cfg.layer_count];
        // Spread the upsamples over the later blocks: one before every
        // other block starting at 1 until the target resolution is hit.
        let mut placed = 0;
        let mut idx = 1;
        while placed < ups {
            upsample_before[idx] = true;
            placed += 1;
            idx = (idx + 2).min(cfg.layer_count - 1);
        }
        let convs = (0..cfg.layer_count)
            .map(|_| Conv2d::new(3, feat, feat, rng))
            .collect();
        Self {
            constant: Array3::from_shape_fn((4, 4, feat), |_| {
                let v: f64 = StandardNormal.sample(rng);
                v * 0.5
            }),
            convs,
            upsample_before,
            to_rgb: Conv2d::new(1, feat, 3, rng),
        }
    }

    fn feat(&self) -> usize {
        self.constant.dim().2
    }

    /// Modulation: per feature channel, `y = x * (1 + scale) + shift`
    /// with `(scale, shift)` split from the layer's style vector.
    fn modulate(x: &Array3<f64>, style: &Array1<f64>) -> Array3<f64> {
        let f = x.dim().2;
        Array3::from_shape_fn(x.dim(), |(y, xq, c)| {
            x[[y, xq, c]] * (1.0 + style[c]) + style[f + c]
        })
    }

    fn forward(&self, styles: &[Array1<f64>]) -> SynthCache {
        let mut block_in = Vec::with_capacity(self.convs.len());
        let mut modulated = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut cur = self.constant.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            if self.upsample_before[i] {
                cur = upsample2(&cur);
            }
            block_in.push(cur.clone());
            let xm = Self::modulate(&cur, &styles[i]);
            let z = conv.forward(&xm);
            cur = z.mapv(|v| leaky_relu(v, SYNTH_LRELU_SLOPE));
            modulated.push(xm);
            pre.push(z);
        }
        let head_in = cur;
        let rgb = self.to_rgb.forward(&head_in);
        let image = rgb.mapv(sigmoid);
        SynthCache {
            styles: styles.to_vec(),
            block_in,
            modulated,
            pre,
            head_in,
            image,
        }
    }

    /// Backward pass from an image-space gradient. Returns per-layer
    /// style gradients; parameter gradients accumulate when requested.
    fn backward(
        &self,
        cache: &SynthCache,
        dimage: &Array3<f64>,
        mut grads: Option<&mut SynthGrads>,
    ) -> Vec<Array1<f64>> {
        let f = self.feat();
        // Sigmoid derivative from the cached output.
        let drgb = Array3::from_shape_fn(dimage.dim(), |idx| {
            let y = cache.image[idx];
            dimage[idx] * y * (1.0 - y)
        });
        let mut dcur = match grads.as_deref_mut() {
            Some(g) => self.to_rgb.backward(&cache.head_in, &drgb, &mut g.to_rgb),
            None => self
                .to_rgb
                .backward_input(&drgb, cache.head_in.dim().0, cache.head_in.dim().1),
        };
        let mut dstyles = vec![Array1::<f64>::zeros(2 * f); self.convs.len()];
        for i in (0..self.convs.len()).rev() {
            let dz = Array3::from_shape_fn(dcur.dim(), |idx| {
                dcur[idx] * leaky_relu_grad(cache.pre[i][idx], SYNTH_LRELU_SLOPE)
            });
            let dxm = match grads.as_deref_mut() {
                Some(g) => self.convs[i].backward(&cache.modulated[i], &dz, &mut g.convs[i]),
                None => self.convs[i].backward_input(
                    &dz,
                    cache.modulated[i].dim().0,
                    cache.modulated[i].dim().1,
                ),
            };
            let x = &cache.block_in[i];
            let style = &cache.styles[i];
            let (h, w, _) = x.dim();
            let mut dx = Array3::<f64>::zeros(x.dim());
            for y in 0..h {
                for xq in 0..w {
                    for c in 0..f {
                        let g = dxm[[y, xq, c]];
                        dstyles[i][c] += g * x[[y, xq, c]];
                        dstyles[i][f + c] += g;
                        dx[[y, xq, c]] = g * (1.0 + style[c]);
                    }
                }
            }
            dcur = if self.upsample_before[i] {
                upsample2_backward(&dx, dx.dim().0 / 2, dx.dim().1 / 2)
            } else {
                dx
            };
        }
        if let Some(g) = grads {
            g.dconstant += &dcur;
        }
        dstyles
    }

    /// Tangent of the image under a unit perturbation of one style entry
    /// of one layer, reusing a cached forward pass.
    fn channel_jvp(&self, cache: &SynthCache, layer: usize, entry: usize) -> Array3<f64> {
        let f = self.feat();
        let x = &cache.block_in[layer];
        // Tangent of the modulated map at the perturbed layer: the
        // scale half multiplies the input map, the shift half is constant.
        let mut t = if entry < f {
            let c = entry;
            Array3::from_shape_fn(x.dim(), |(y, xq, ch)| {
                if ch == c {
                    x[[y, xq, ch]]
                } else {
                    0.0
                }
            })
        } else {
            let c = entry - f;
            Array3::from_shape_fn(x.dim(), |(_, _, ch)| if ch == c { 1.0 } else { 0.0 })
        };
        for i in layer..self.convs.len() {
            if i > layer {
                if self.upsample_before[i] {
                    t = upsample2(&t);
                }
                let style = &cache.styles[i];
                t = Array3::from_shape_fn(t.dim(), |(y, xq, c)| t[[y, xq, c]] * (1.0 + style[c]));
            }
            t = self.convs[i].forward_no_bias(&t);
            t = Array3::from_shape_fn(t.dim(), |idx| {
                t[idx] * leaky_relu_grad(cache.pre[i][idx], SYNTH_LRELU_SLOPE)
            });
        }
        t = self.to_rgb.forward_no_bias(&t);
        Array3::from_shape_fn(t.dim(), |idx| {
            let y = cache.image[idx];
            t[idx] * y * (1.0 - y)
        })
    }

    fn zero_grads(&self) -> SynthGrads {
        SynthGrads {
            dconstant: Array3::zeros(self.constant.dim()),
            convs: self.convs.iter().map(|c| c.zero_grad()).collect(),
            to_rgb: self.to_rgb.zero_grad(),
        }
    }
}

/// Trainable toy generator implementing the [`Generator`] contract.
#[derive(Debug, Clone)]
pub struct ToyGenerator {
    config: ToyGeneratorConfig,
    dims: GeneratorDims,
    mapping: MappingNet,
    affine: Vec<Dense>,
    synthesis: SynthesisNet,
}

impl ToyGenerator {
    /// Fresh random initialization (untrained).
    pub fn init(config: &ToyGeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mapping = MappingNet::new(config, &mut rng);
        let affine = (0..config.layer_count)
            .map(|_| Dense::new(config.d_w, config.style_dim, &mut rng))
            .collect();
        let synthesis = SynthesisNet::new(config, &mut rng);
        Ok(Self {
            config: config.clone(),
            dims: config.dims(),
            mapping,
            affine,
            synthesis,
        })
    }

    pub fn config(&self) -> &ToyGeneratorConfig {
        &self.config
    }

    fn check_style_layout(&self, s: &StyleCode) -> Result<()> {
        if s.layout() != self.dims.style_dims {
            return Err(Error::InvalidInput(format!(
                "style layout {:?} does not match generator layout {:?}",
                s.layout(),
                self.dims.style_dims
            )));
        }
        Ok(())
    }

    /// Forward synthesis keeping the activation cache for later
    /// gradient passes.
    pub fn synthesize_cached(&self, s: &StyleCode) -> Result<SynthCache> {
        self.check_style_layout(s)?;
        Ok(self.synthesis.forward(&s.layers))
    }

    /// JVP against an existing cache (cheap when probing many channels
    /// of the same style code).
    pub fn channel_jvp_cached(&self, cache: &SynthCache, flat_channel: usize) -> Array3<f64> {
        let layer = flat_channel / self.config.style_dim;
        let entry = flat_channel % self.config.style_dim;
        self.synthesis.channel_jvp(cache, layer, entry)
    }

    /// Stable parameter order: mapping, affines, synthesis constant,
    /// synthesis convs, RGB head.
    pub fn param_values(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.mapping.layers {
            out.extend(l.param_values());
        }
        for a in &self.affine {
            out.extend(a.param_values());
        }
        out.push(self.synthesis.constant.as_slice().expect("contiguous"));
        for c in &self.synthesis.convs {
            out.extend(c.param_values());
        }
        out.extend(self.synthesis.to_rgb.param_values());
        out
    }

    fn param_slices(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.mapping.layers {
            out.extend(l.param_slices());
        }
        for a in &mut self.affine {
            out.extend(a.param_slices());
        }
        out.push(self.synthesis.constant.as_slice_mut().expect("contiguous"));
        for c in &mut self.synthesis.convs {
            out.extend(c.param_slices());
        }
        out.extend(self.synthesis.to_rgb.param_slices());
        out
    }

    pub fn digest(&self) -> String {
        checkpoint::digest_params(&self.param_values())
    }

    pub fn save(&self, dir: &Path, seed: u64, extra: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        checkpoint::write_blob(&dir.join("params.bin"), &self.param_values())?;
        let manifest = Manifest {
            version: checkpoint::MANIFEST_VERSION,
            kind: "generator".into(),
            config: serde_json::to_value(&self.config)?,
            seed,
            digest: self.digest(),
            extra,
        };
        checkpoint::save_manifest(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = checkpoint::verify_checkpoint(dir, "generator")?;
        let config: ToyGeneratorConfig = serde_json::from_value(manifest.config)?;
        let mut g = Self::init(&config, 0)?;
        let mut slices = g.param_slices();
        checkpoint::read_blob(&dir.join("params.bin"), &mut slices)?;
        Ok(g)
    }
}

impl Generator for ToyGenerator {
    fn dims(&self) -> &GeneratorDims {
        &self.dims
    }

    fn map_latent(&self, z: &LatentZ) -> Result<LatentW> {
        if z.dim() != self.config.d_z {
            return Err(Error::InvalidInput(format!(
                "latent z has dimension {} but generator expects {}",
                z.dim(),
                self.config.d_z
            )));
        }
        LatentW::new(self.mapping.forward(&z.0).w)
    }

    fn affine_to_style(&self, wp: &LatentWPlus) -> Result<StyleCode> {
        if wp.layer_count() != self.config.layer_count || wp.layer_dim() != self.config.d_w {
            return Err(Error::InvalidInput(format!(
                "w+ is {}x{} but generator expects {}x{}",
                wp.layer_count(),
                wp.layer_dim(),
                self.config.layer_count,
                self.config.d_w
            )));
        }
        let layers = wp
            .layers
            .iter()
            .zip(&self.affine)
            .map(|(w, a)| a.forward(w))
            .collect();
        StyleCode::new(layers)
    }

    fn synthesize(&self, s: &StyleCode) -> Result<Image> {
        let cache = self.synthesize_cached(s)?;
        Image::new(cache.image)
    }

    fn supports_gradients(&self) -> bool {
        true
    }

    fn synthesize_vjp(&self, s: &StyleCode, dimage: &Array3<f64>) -> Result<Vec<Array1<f64>>> {
        let cache = self.synthesize_cached(s)?;
        Ok(self.synthesis.backward(&cache, dimage, None))
    }

    fn synthesize_channel_jvp(&self, s: &StyleCode, flat_channel: usize) -> Result<Array3<f64>> {
        if flat_channel >= self.dims.total_channels() {
            return Err(Error::InvalidInput(format!(
                "channel {flat_channel} out of range"
            )));
        }
        let cache = self.synthesize_cached(s)?;
        Ok(self.channel_jvp_cached(&cache, flat_channel))
    }

    fn affine_vjp(&self, dstyle: &[Array1<f64>]) -> Result<Vec<Array1<f64>>> {
        if dstyle.len() != self.affine.len() {
            return Err(Error::InvalidInput("style gradient layer count mismatch".into()));
        }
        Ok(dstyle
            .iter()
            .zip(&self.affine)
            .map(|(d, a)| a.backward_input(d))
            .collect())
    }
}

/// Per-channel first and second moments of style codes under the
/// generator's own latent distribution. Attack step sizes and sampling
/// scales are expressed in units of these standard deviations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub sample_count: usize,
    pub seed: u64,
}

impl StyleStats {
    pub fn channel_count(&self) -> usize {
        self.mean.len()
    }
}

/// Estimate per-channel style statistics over mapped Gaussian samples.
pub fn estimate_style_stats<G: Generator + ?Sized>(
    generator: &G,
    num_samples: usize,
    seed: u64,
) -> Result<StyleStats> {
    if num_samples < 2 {
        return Err(Error::Config("need at least 2 samples".into()));
    }
    let dims = generator.dims().clone();
    let c = dims.total_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = vec![0.0f64; c];
    let mut m2 = vec![0.0f64; c];
    for _ in 0..num_samples {
        let z = LatentZ(Array1::from_shape_fn(dims.d_z, |_| {
            StandardNormal.sample(&mut rng)
        }));
        let w = generator.map_latent(&z)?;
        let wp = LatentWPlus::broadcast(&w, dims.layer_count)?;
        let s = generator.affine_to_style(&wp)?;
        for (i, v) in s.flatten().iter().enumerate() {
            mean[i] += v;
            m2[i] += v * v;
        }
    }
    let n = num_samples as f64;
    let mut std = vec![0.0f64; c];
    for i in 0..c {
        mean[i] /= n;
        // Small floor keeps degenerate channels usable as step units.
        std[i] = (m2[i] / n - mean[i] * mean[i]).max(1e-12).sqrt().max(1e-6);
    }
    Ok(StyleStats {
        mean,
        std,
        sample_count: num_samples,
        seed,
    })
}

/// Image critic used only while training the toy generator.
#[derive(Debug, Clone)]
struct ImageCritic {
    trunk: ConvStack,
    head: Dense,
}

struct CriticGrads {
    trunk: ConvStackGrad,
    head: DenseGrad,
}

impl ImageCritic {
    fn new<R: Rng>(image_size: usize, rng: &mut R) -> Self {
        let trunk = ConvStack::new(3, &[8, 16, 16], image_size, 32, rng);
        let head = Dense::new(32, 1, rng);
        Self { trunk, head }
    }

    fn logit(&self, x: &Array3<f64>) -> (f64, crate::nn::ConvStackCache) {
        let cache = self.trunk.forward(x);
        let logit = self.head.forward(&cache.hidden)[0];
        (logit, cache)
    }

    /// Backward of a loss with `dlogit` known. Returns the input-image
    /// gradient; parameter grads accumulate when requested.
    fn backward(
        &self,
        cache: &crate::nn::ConvStackCache,
        dlogit: f64,
        grads: Option<&mut CriticGrads>,
    ) -> Array3<f64> {
        let dout = Array1::from_elem(1, dlogit);
        match grads {
            Some(g) => {
                let dhidden = self.head.backward(&cache.hidden, &dout, &mut g.head);
                self.trunk.backward(cache, &dhidden, Some(&mut g.trunk))
            }
            None => {
                let dhidden = self.head.backward_input(&dout);
                self.trunk.backward(cache, &dhidden, None)
            }
        }
    }

    fn zero_grads(&self) -> CriticGrads {
        CriticGrads {
            trunk: self.trunk.zero_grad(),
            head: self.head.zero_grad(),
        }
    }

    fn param_slices(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.trunk.param_slices();
        out.extend(self.head.param_slices());
        out
    }
}

/// Training hyperparameters for the toy adversarial game.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_critic: f64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 8,
            lr_generator: 2e-3,
            lr_critic: 2e-3,
        }
    }
}

/// Train the toy generator with the standard non-saturating adversarial
/// objective against a small image critic. Deterministic for a fixed
/// seed; zero steps returns the initialization unchanged.
pub fn train_toy_generator(
    dataset: &[Image],
    config: &ToyGeneratorConfig,
    train: &GanTrainConfig,
    seed: u64,
) -> Result<ToyGenerator> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let mut generator = ToyGenerator::init(config, seed)?;
    if train.steps == 0 {
        return Ok(generator);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut critic = ImageCritic::new(config.image_size, &mut ChaCha8Rng::seed_from_u64(
        seed.wrapping_add(2),
    ));
    let mut opt_g = Adam::with_betas(train.lr_generator, 0.5, 0.999);
    let mut opt_d = Adam::with_betas(train.lr_critic, 0.5, 0.999);

    for step in 0..train.steps {
        // ---- critic update: real up, fake down ----
        let mut d_grads = critic.zero_grads();
        let mut d_loss = 0.0;
        let mut fake_batch = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            let real = &dataset[rng.random_range(0..dataset.len())];
            let (logit, cache) = critic.logit(real.data());
            d_loss += bce_with_logit(logit, 1.0);
            critic.backward(&cache, bce_with_logit_grad(logit, 1.0), Some(&mut d_grads));

            let z = LatentZ(Array1::from_shape_fn(config.d_z, |_| {
                StandardNormal.sample(&mut rng)
            }));
            let map_cache = generator.mapping.forward(&z.0);
            let styles: Vec<Array1<f64>> = generator
                .affine
                .iter()
                .map(|a| a.forward(&map_cache.w))
                .collect();
            let synth_cache = generator.synthesis.forward(&styles);
            let (logit, cache) = critic.logit(&synth_cache.image);
            d_loss += bce_with_logit(logit, 0.0);
            critic.backward(&cache, bce_with_logit_grad(logit, 0.0), Some(&mut d_grads));
            fake_batch.push((z, map_cache, styles, synth_cache));
        }
        if !d_loss.is_finite() {
            return Err(Error::Training(format!(
                "critic loss became non-finite at step {step}"
            )));
        }
        let scale = 1.0 / (2.0 * train.batch_size as f64);
        d_grads.trunk.scale(scale);
        d_grads.head.scale(scale);
        let mut slices = d_grads.trunk.slices();
        slices.extend(d_grads.head.slices());
        opt_d.step(&mut critic.param_slices(), &slices);

        // ---- generator update: non-saturating, reuse the fakes ----
        let mut map_grads: Vec<DenseGrad> =
            generator.mapping.layers.iter().map(|l| l.zero_grad()).collect();
        let mut affine_grads: Vec<DenseGrad> =
            generator.affine.iter().map(|a| a.zero_grad()).collect();
        let mut synth_grads = generator.synthesis.zero_grads();
        let mut g_loss = 0.0;
        for (_, map_cache, _styles, synth_cache) in &fake_batch {
            let (logit, cache) = critic.logit(&synth_cache.image);
            g_loss += bce_with_logit(logit, 1.0);
            let dimage = critic.backward(&cache, bce_with_logit_grad(logit, 1.0), None);
            let dstyles = generator
                .synthesis
                .backward(synth_cache, &dimage, Some(&mut synth_grads));
            let mut dw = Array1::<f64>::zeros(config.d_w);
            for (li, dstyle) in dstyles.iter().enumerate() {
                let dwi = generator.affine[li].backward(
                    &map_cache.w,
                    dstyle,
                    &mut affine_grads[li],
                );
                dw += &dwi;
            }
            generator.mapping.backward(map_cache, &dw, &mut map_grads);
        }
        if !g_loss.is_finite() {
            return Err(Error::Training(format!(
                "generator loss became non-finite at step {step}"
            )));
        }
        let gscale = 1.0 / train.batch_size as f64;
        for g in &mut map_grads {
            g.scale(gscale);
        }
        for g in &mut affine_grads {
            g.scale(gscale);
        }
        synth_grads.dconstant.mapv_inplace(|v| v * gscale);
        for c in &mut synth_grads.convs {
            c.scale(gscale);
        }
        synth_grads.to_rgb.scale(gscale);

        let mut grad_slices: Vec<&[f64]> = Vec::new();
        for g in &map_grads {
            grad_slices.extend(g.slices());
        }
        for g in &affine_grads {
            grad_slices.extend(g.slices());
        }
        grad_slices.push(synth_grads.dconstant.as_slice().expect("contiguous"));
        for c in &synth_grads.convs {
            grad_slices.extend(c.slices());
        }
        grad_slices.extend(synth_grads.to_rgb.slices());
        opt_g.step(&mut generator.param_slices(), &grad_slices);
    }
    Ok(generator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{p_to_w, w_to_p, LatentP};

    fn small_config() -> ToyGeneratorConfig {
        ToyGeneratorConfig {
            image_size: 16,
            layer_count: 4,
            ..Default::default()
        }
    }

    fn random_style(g: &ToyGenerator, seed: u64) -> StyleCode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = g
            .dims()
            .style_dims
            .iter()
            .map(|&d| Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)))
            .collect();
        StyleCode::new(layers).unwrap()
    }

    #[test]
    fn map_latent_is_deterministic_and_batch_preserves_order() {
        let g = ToyGenerator::init(&ToyGeneratorConfig::default(), 3).unwrap();
        let z = LatentZ(Array1::from_shape_fn(16, |i| i as f64 * 0.1 - 0.8));
        let w1 = g.map_latent(&z).unwrap();
        let w2 = g.map_latent(&z).unwrap();
        assert_eq!(w1.0, w2.0);

        let zs: Vec<LatentZ> = (0..5)
            .map(|k| LatentZ(Array1::from_shape_fn(16, |i| (i + k) as f64 * 0.05)))
            .collect();
        let ws = g.map_latent_batch(&zs).unwrap();
        assert_eq!(ws.len(), 5);
        for (k, z) in zs.iter().enumerate() {
            assert_eq!(ws[k].0, g.map_latent(z).unwrap().0);
        }
    }

    #[test]
    fn mapping_output_recovers_pre_activation_through_w_to_p() {
        // The final mapping op is LeakyReLU(0.2); w_to_p must invert it,
        // so p_to_w(w_to_p(w)) == w on produced codes.
        let g = ToyGenerator::init(&ToyGeneratorConfig::default(), 4).unwrap();
        let z = LatentZ(Array1::from_shape_fn(16, |i| (i as f64 - 8.0) * 0.3));
        let w = g.map_latent(&z).unwrap();
        let p = w_to_p(&w).unwrap();
        let back = p_to_w(&LatentP(p.0.clone())).unwrap();
        for (a, b) in w.0.iter().zip(back.0.iter()) {
            assert!((a - b).abs() <= f64::EPSILON * a.abs().max(1.0));
        }
    }

    #[test]
    fn affine_broadcast_consistency() {
        let g = ToyGenerator::init(&ToyGeneratorConfig::default(), 5).unwrap();
        let w = LatentW(Array1::from_shape_fn(16, |i| (i as f64) * 0.07 - 0.5));
        let wp = LatentWPlus::broadcast(&w, 6).unwrap();
        let s = g.affine_to_style(&wp).unwrap();
        assert_eq!(s.channel_count(), 192);
        for (li, layer) in s.layers.iter().enumerate() {
            let single = g.affine[li].forward(&w.0);
            assert_eq!(layer, &single);
        }
    }

    #[test]
    fn affine_at_zero_returns_biases() {
        let g = ToyGenerator::init(&ToyGeneratorConfig::default(), 6).unwrap();
        let wp = LatentWPlus::new(vec![Array1::zeros(16); 6]).unwrap();
        let s = g.affine_to_style(&wp).unwrap();
        for (li, layer) in s.layers.iter().enumerate() {
            assert_eq!(layer, &g.affine[li].b);
        }
    }

    #[test]
    fn synthesize_is_deterministic_and_bounded() {
        let g = ToyGenerator::init(&small_config(), 7).unwrap();
        let s = random_style(&g, 1);
        let img1 = g.synthesize(&s).unwrap();
        let img2 = g.synthesize(&s).unwrap();
        assert_eq!(img1.digest(), img2.digest());
        assert!(img1.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(img1.height(), 16);
    }

    #[test]
    fn synthesize_vjp_matches_finite_differences_on_mean_pixel() {
        let g = ToyGenerator::init(&small_config(), 8).unwrap();
        let s = random_style(&g, 2);
        let npix = (16 * 16 * 3) as f64;
        let dimage = Array3::from_elem((16, 16, 3), 1.0 / npix);
        let grads = g.synthesize_vjp(&s, &dimage).unwrap();

        let mean_pixel = |code: &StyleCode| -> f64 {
            g.synthesize(code).unwrap().data().sum() / npix
        };
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let li = rng.random_range(0..4usize);
            let ci = rng.random_range(0..32usize);
            let mut plus = s.clone();
            plus.layers[li][ci] += h;
            let mut minus = s.clone();
            minus.layers[li][ci] -= h;
            let fd = (mean_pixel(&plus) - mean_pixel(&minus)) / (2.0 * h);
            let analytic = grads[li][ci];
            let denom = fd.abs().max(analytic.abs()).max(1e-6);
            assert!(
                (fd - analytic).abs() / denom < 1e-3,
                "layer {li} channel {ci}: fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn jvp_matches_vjp_row() {
        // <e_pixel-sum, J e_channel> computed both ways must agree.
        let g = ToyGenerator::init(&small_config(), 9).unwrap();
        let s = random_style(&g, 3);
        let dimage = Array3::from_elem((16, 16, 3), 1.0);
        let vjp = g.synthesize_vjp(&s, &dimage).unwrap();
        for flat in [0usize, 33, 77, 127] {
            let jvp = g.synthesize_channel_jvp(&s, flat).unwrap();
            let li = flat / 32;
            let ci = flat % 32;
            assert!(
                (jvp.sum() - vjp[li][ci]).abs() < 1e-9,
                "channel {flat}: {} vs {}",
                jvp.sum(),
                vjp[li][ci]
            );
        }
    }

    #[test]
    fn affine_vjp_is_transpose_product() {
        let g = ToyGenerator::init(&small_config(), 10).unwrap();
        let dstyle: Vec<Array1<f64>> = (0..4)
            .map(|k| Array1::from_shape_fn(32, |i| ((i + k) % 5) as f64 - 2.0))
            .collect();
        let dwp = g.affine_vjp(&dstyle).unwrap();
        for li in 0..4 {
            let manual = g.affine[li].w.t().dot(&dstyle[li]);
            assert_eq!(dwp[li], manual);
        }
    }

    #[test]
    fn zero_steps_matches_init_digest() {
        let cfg = small_config();
        let data = vec![Image::new(Array3::from_elem((16, 16, 3), 0.5)).unwrap()];
        let train = GanTrainConfig {
            steps: 0,
            ..Default::default()
        };
        let g = train_toy_generator(&data, &cfg, &train, 11).unwrap();
        let init = ToyGenerator::init(&cfg, 11).unwrap();
        assert_eq!(g.digest(), init.digest());
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let cfg = small_config();
        let train = GanTrainConfig::default();
        assert!(train_toy_generator(&[], &cfg, &train, 1).is_err());
    }

    #[test]
    fn same_seed_same_digest_after_short_training() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data: Vec<Image> = (0..4)
            .map(|_| {
                Image::new(Array3::from_shape_fn((16, 16, 3), |_| rng.random_range(0.0..1.0)))
                    .unwrap()
            })
            .collect();
        let train = GanTrainConfig {
            steps: 3,
            batch_size: 2,
            ..Default::default()
        };
        let g1 = train_toy_generator(&data, &cfg, &train, 21).unwrap();
        let g2 = train_toy_generator(&data, &cfg, &train, 21).unwrap();
        assert_eq!(g1.digest(), g2.digest());
    }

    #[test]
    fn checkpoint_round_trip_preserves_digest() {
        let g = ToyGenerator::init(&small_config(), 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        g.save(dir.path(), 13, serde_json::json!({})).unwrap();
        let back = ToyGenerator::load(dir.path()).unwrap();
        assert_eq!(back.digest(), g.digest());
        let s = random_style(&g, 4);
        assert_eq!(
            g.synthesize(&s).unwrap().digest(),
            back.synthesize(&s).unwrap().digest()
        );
    }

    #[test]
    fn style_stats_have_positive_std() {
        let g = ToyGenerator::init(&small_config(), 14).unwrap();
        let stats = estimate_style_stats(&g, 64, 5).unwrap();
        assert_eq!(stats.channel_count(), g.dims().total_channels());
        assert!(stats.std.iter().all(|&s| s > 0.0));
        let again = estimate_style_stats(&g, 64, 5).unwrap();
        assert_eq!(stats.mean, again.mean);
    }
}
