use rayon::prelude::*;

use super::pyramid::pyramid_l1;
use crate::error::{Error, Result};
use crate::gaussians::{
    apply_offsets, apply_offsets_backward, channel, AttributeMap, BaseGaussians, GaussianGrad, NUM_CHANNELS,
};
use crate::latent::Latent;
use crate::nn::{Grads, Inputs, Network, NetworkBuilder, ParamStore, Real, Tensor, Trace};
use crate::render::{render, render_backward, Camera, RenderedImage};
use crate::rng::SeededRng;

pub const DECODER_WIDTH: usize = 32;
pub const LAMBDA_IMAGE: f64 = 20.0;
pub const LAMBDA_FEATURE: f64 = 20.0;
pub const LAMBDA_OFFSET: f64 = 1.0;
const GEOMETRY_CHANNELS: usize = 10;
const TEXTURE_CHANNELS: usize = 4;

/// Convolutional decoder from a latent to a 4× larger attribute map. The
/// trunk's features are split in half: the first half feeds the geometry
/// head (δμ, δr, δs), the second the texture head (color, opacity).
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub latent_channels: usize,
    pub trunk: Network,
    pub geometry: Network,
    pub texture: Network,
}

pub struct DecoderTrace<T> {
    trunk: Trace<T>,
    geometry: Trace<T>,
    texture: Trace<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillMode {
    /// Direct regression of the attribute map.
    Attribute,
    /// Multi-view image loss through the renderer.
    Render,
}

/// One training pair. `pose` selects the base Gaussians in render mode.
#[derive(Debug, Clone)]
pub struct DistillExample {
    pub latent: Latent,
    pub target: AttributeMap,
    pub pose: usize,
}

/// Posed base Gaussians and cameras used by render-mode training.
pub struct RenderSetup<'a> {
    pub bases: &'a [BaseGaussians],
    pub cameras: &'a [Camera],
}

/// Batch means of the loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DistillLoss {
    pub total: f64,
    /// Squared error on attributes (attribute mode) or weighted image SSE.
    pub data: f64,
    /// Weighted pyramid L1 (render mode only).
    pub feature: f64,
    pub offset: f64,
}

fn head(prefix: &str, cin: usize, cout: usize) -> Result<Network> {
    let mut b = NetworkBuilder::new(prefix, cin);
    b.conv3x3("conv1", DECODER_WIDTH);
    b.silu();
    b.conv3x3_zero("out", cout);
    b.build()
}

impl Decoder {
    pub fn new(latent_channels: usize) -> Result<Decoder> {
        if latent_channels == 0 {
            return Err(Error::invalid("decoder needs at least one latent channel"));
        }
        let mut b = NetworkBuilder::new("decoder.trunk", latent_channels);
        b.transposed_conv("up1", DECODER_WIDTH);
        b.silu();
        b.conv3x3("conv1", DECODER_WIDTH);
        b.silu();
        b.transposed_conv("up2", DECODER_WIDTH);
        b.silu();
        b.conv3x3("conv2", DECODER_WIDTH);
        b.silu();
        let half = DECODER_WIDTH / 2;
        Ok(Decoder {
            latent_channels,
            trunk: b.build()?,
            geometry: head("decoder.geometry", half, GEOMETRY_CHANNELS)?,
            texture: head("decoder.texture", DECODER_WIDTH - half, TEXTURE_CHANNELS)?,
        })
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore<f32>> {
        let mut rng = SeededRng::new(seed, 0);
        let mut p = self.trunk.init_params(&mut rng);
        p.merge(self.geometry.init_params(&mut rng))?;
        p.merge(self.texture.init_params(&mut rng))?;
        Ok(p)
    }

    /// Output `[B, 14, 4H, 4W]`, channel-major.
    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        latents: &Tensor<T>,
        save: bool,
    ) -> Result<(Tensor<T>, DecoderTrace<T>)> {
        if latents.channels() != self.latent_channels {
            return Err(Error::network(
                "decoder.trunk",
                format!("expected {} latent channels, got {}", self.latent_channels, latents.channels()),
            ));
        }
        let (feat, trunk) = self.trunk.forward(params, Inputs::new(latents), save)?;
        let half = DECODER_WIDTH / 2;
        let g_in = feat.slice_channels(0, half)?;
        let t_in = feat.slice_channels(half, DECODER_WIDTH - half)?;
        let (g, geometry) = self.geometry.forward(params, Inputs::new(&g_in), save)?;
        let (t, texture) = self.texture.forward(params, Inputs::new(&t_in), save)?;
        let out = Tensor::concat_channels(&[&g, &t])?;
        Ok((
            out,
            DecoderTrace {
                trunk,
                geometry,
                texture,
            },
        ))
    }

    /// Accumulates parameter gradients for `grad_out` (shaped like the
    /// forward output).
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        trace: &DecoderTrace<T>,
        grad_out: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let dg = grad_out.slice_channels(0, GEOMETRY_CHANNELS)?;
        let dt = grad_out.slice_channels(GEOMETRY_CHANNELS, TEXTURE_CHANNELS)?;
        let g_in = self.geometry.backward(params, &trace.geometry, &dg, grads)?;
        let t_in = self.texture.backward(params, &trace.texture, &dt, grads)?;
        let dfeat = Tensor::concat_channels(&[&g_in.x, &t_in.x])?;
        self.trunk.backward(params, &trace.trunk, &dfeat, grads)?;
        Ok(())
    }

    pub fn decode(&self, params: &ParamStore<f32>, latent: &Latent) -> Result<AttributeMap> {
        Ok(self.decode_batch(params, &latent.to_tensor())?.remove(0))
    }

    pub fn decode_batch(&self, params: &ParamStore<f32>, latents: &Tensor<f32>) -> Result<Vec<AttributeMap>> {
        let (out, _) = self.forward(params, latents, false)?;
        (0..out.batch()).map(|b| tensor_to_map(&out, b)).collect()
    }

    /// Batch-mean loss and parameter gradients.
    pub fn loss_and_grads<T: Real>(
        &self,
        params: &ParamStore<T>,
        batch: &[DistillExample],
        mode: DistillMode,
        setup: Option<&RenderSetup>,
    ) -> Result<(DistillLoss, Grads<T>)> {
        let latents: Vec<&Latent> = batch.iter().map(|e| &e.latent).collect();
        let x: Tensor<T> = Latent::batch(&latents)?.cast();
        let (out, trace) = self.forward(params, &x, true)?;
        let (loss, grad) = self.output_loss(&out, batch, mode, setup)?;
        let mut grads = Grads::new();
        self.backward(params, &trace, &grad, &mut grads)?;
        Ok((loss, grads))
    }

    /// Loss of a decoded batch and its gradient with respect to the output.
    pub fn output_loss<T: Real>(
        &self,
        out: &Tensor<T>,
        batch: &[DistillExample],
        mode: DistillMode,
        setup: Option<&RenderSetup>,
    ) -> Result<(DistillLoss, Tensor<T>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty decoder batch"));
        }
        if mode == DistillMode::Render && setup.map_or(true, |s| s.cameras.is_empty()) {
            return Err(Error::invalid("render-mode training needs cameras and base Gaussians"));
        }
        let [b, c, h, w] = out.shape;
        if b != batch.len() || c != NUM_CHANNELS {
            return Err(Error::invalid("decoder output does not match the batch"));
        }
        let inv_b = 1.0 / b as f64;
        let per_sample: Vec<(DistillLoss, Vec<f64>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                if ex.target.width != w || ex.target.height != h {
                    return Err(Error::invalid(format!(
                        "target map {}×{} does not match decoder output {w}×{h}",
                        ex.target.width, ex.target.height
                    )));
                }
                let pred = out.sample(i);
                let (mut loss, mut grad) = match mode {
                    DistillMode::Attribute => attribute_term(pred, &ex.target, w, h),
                    DistillMode::Render => render_term(pred, ex, setup.unwrap(), w, h)?,
                };
                let plane = w * h;
                for ch in channel::POSITION {
                    for p in 0..plane {
                        let v = pred[ch * plane + p].f64();
                        loss.offset += LAMBDA_OFFSET * v * v;
                        grad[ch * plane + p] += 2.0 * LAMBDA_OFFSET * v;
                    }
                }
                loss.total = loss.data + loss.feature + loss.offset;
                Ok((loss, grad))
            })
            .collect::<Result<_>>()?;
        let mut total = DistillLoss::default();
        let mut grad = Tensor::zeros(out.shape);
        for (i, (l, g)) in per_sample.iter().enumerate() {
            total.total += l.total * inv_b;
            total.data += l.data * inv_b;
            total.feature += l.feature * inv_b;
            total.offset += l.offset * inv_b;
            for (d, &s) in grad.sample_mut(i).iter_mut().zip(g) {
                *d = T::of(s * inv_b);
            }
        }
        Ok((total, grad))
    }

    pub fn train_step(
        &self,
        params: &mut ParamStore<f32>,
        batch: &[DistillExample],
        mode: DistillMode,
        setup: Option<&RenderSetup>,
        lr: f64,
    ) -> Result<DistillLoss> {
        let (loss, grads) = self.loss_and_grads(params, batch, mode, setup)?;
        params.adam_step(&grads, lr)?;
        Ok(loss)
    }
}

fn attribute_term<T: Real>(pred: &[T], target: &AttributeMap, w: usize, h: usize) -> (DistillLoss, Vec<f64>) {
    let plane = w * h;
    let mut grad = vec![0.0; pred.len()];
    let mut loss = 0.0;
    for c in 0..NUM_CHANNELS {
        for p in 0..plane {
            let d = pred[c * plane + p].f64() - target.data[p * NUM_CHANNELS + c] as f64;
            loss += d * d;
            grad[c * plane + p] = 2.0 * d;
        }
    }
    (
        DistillLoss {
            data: loss,
            ..Default::default()
        },
        grad,
    )
}

fn render_term<T: Real>(
    pred: &[T],
    ex: &DistillExample,
    setup: &RenderSetup,
    w: usize,
    h: usize,
) -> Result<(DistillLoss, Vec<f64>)> {
    let base = setup
        .bases
        .get(ex.pose)
        .ok_or_else(|| Error::invalid(format!("no base Gaussians for pose {}", ex.pose)))?;
    let map = planes_to_map(pred, w, h);
    let set = apply_offsets(base, &map)?;
    let gt_set = apply_offsets(base, &ex.target)?;
    let mut loss = DistillLoss::default();
    let mut gauss = vec![GaussianGrad::default(); set.len()];
    for cam in setup.cameras {
        let (img, _) = render(&set, cam)?;
        let (gt, _) = render(&gt_set, cam)?;
        let (l, g) = image_loss(&img, &gt);
        loss.data += l.data;
        loss.feature += l.feature;
        for (acc, gg) in gauss.iter_mut().zip(render_backward(&set, cam, &g)?) {
            add_gaussian_grad(acc, &gg);
        }
    }
    let gmap = apply_offsets_backward(base, &map, &gauss)?;
    let plane = w * h;
    let mut grad = vec![0.0; pred.len()];
    for p in 0..plane {
        for c in 0..NUM_CHANNELS {
            grad[c * plane + p] = gmap.data[p * NUM_CHANNELS + c] as f64;
        }
    }
    Ok((loss, grad))
}

/// Weighted SSE plus pyramid L1 between two renders, with the gradient
/// with respect to `img`.
pub fn image_loss(img: &RenderedImage, gt: &RenderedImage) -> (DistillLoss, Vec<f64>) {
    let (fl, fg) = pyramid_l1(img.width, img.height, &img.rgb, &gt.rgb);
    let mut sse = 0.0;
    let mut grad = vec![0.0; img.rgb.len()];
    for i in 0..img.rgb.len() {
        let d = img.rgb[i] - gt.rgb[i];
        sse += d * d;
        grad[i] = LAMBDA_IMAGE * 2.0 * d + LAMBDA_FEATURE * fg[i];
    }
    (
        DistillLoss {
            total: LAMBDA_IMAGE * sse + LAMBDA_FEATURE * fl,
            data: LAMBDA_IMAGE * sse,
            feature: LAMBDA_FEATURE * fl,
            offset: 0.0,
        },
        grad,
    )
}

fn add_gaussian_grad(acc: &mut GaussianGrad, g: &GaussianGrad) {
    for k in 0..3 {
        acc.mean[k] += g.mean[k];
        acc.scale[k] += g.scale[k];
        acc.color[k] += g.color[k];
    }
    for k in 0..4 {
        acc.rotation[k] += g.rotation[k];
    }
    acc.opacity += g.opacity;
}

fn planes_to_map<T: Real>(planes: &[T], w: usize, h: usize) -> AttributeMap {
    let plane = w * h;
    let mut data = vec![0.0f32; plane * NUM_CHANNELS];
    for c in 0..NUM_CHANNELS {
        for p in 0..plane {
            data[p * NUM_CHANNELS + c] = planes[c * plane + p].f64() as f32;
        }
    }
    AttributeMap {
        width: w,
        height: h,
        data,
    }
}

/// Sample `b` of a `[B, 14, H, W]` tensor as an attribute map.
pub fn tensor_to_map<T: Real>(t: &Tensor<T>, b: usize) -> Result<AttributeMap> {
    let [_, c, h, w] = t.shape;
    if c != NUM_CHANNELS {
        return Err(Error::invalid(format!("attribute tensor has {c} channels")));
    }
    let map = planes_to_map(t.sample(b), w, h);
    if !map.is_finite() {
        return Err(Error::State("decoded attribute map is not finite".into()));
    }
    Ok(map)
}
