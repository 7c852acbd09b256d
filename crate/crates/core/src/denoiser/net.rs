use super::text::{TextEmbedder, EMBED_PARAM};
use crate::body::{BodyTemplate, Region};
use crate::diffusion::{NoiseSchedule, X0Model};
use crate::error::{Error, Result};
use crate::gaussians::region_mask;
use crate::latent::Latent;
use crate::nn::{Grads, Inputs, Network, NetworkBuilder, ParamStore, Real, Tensor, Trace};
use crate::rng::{hashed_uniform, mix64, SeededRng};

pub const TIME_FREQUENCIES: usize = 32;
pub const TIME_DIM: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.2;
const DROPOUT_KEY: u64 = 0xD209;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub latent_resolution: usize,
    pub width: usize,
    pub heads: usize,
    /// Diffusion steps `T`; timesteps outside `1..=T` are rejected.
    pub steps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            latent_channels: 8,
            latent_resolution: 16,
            width: 32,
            heads: 4,
            steps: 1000,
        }
    }
}

/// Region indicator planes (one per body region) at latent resolution.
/// They are appended to the noisy latent so convolutions know where each
/// body part lives in the atlas.
pub fn region_layout(template: &BodyTemplate, resolution: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(Region::ALL.len() * resolution * resolution);
    for r in Region::ALL {
        let m = region_mask(template, r, resolution)?;
        out.extend(m.data.iter().map(|&v| v as f32));
    }
    Ok(out)
}

/// Sinusoidal timestep features, `[B, 2·TIME_FREQUENCIES, 1, 1]`.
pub fn timestep_features<T: Real>(ts: &[usize]) -> Tensor<T> {
    let d = 2 * TIME_FREQUENCIES;
    let mut out = Tensor::zeros([ts.len(), d, 1, 1]);
    for (b, &t) in ts.iter().enumerate() {
        let s = out.sample_mut(b);
        for i in 0..TIME_FREQUENCIES {
            let freq = (-(10_000f64.ln()) * i as f64 / TIME_FREQUENCIES as f64).exp();
            let (sin, cos) = (t as f64 * freq).sin_cos();
            s[i] = T::of(sin);
            s[TIME_FREQUENCIES + i] = T::of(cos);
        }
    }
    out
}

/// Conditional x̂₀ predictor: residual conv blocks with FiLM timestep
/// conditioning around a cross-attention bottleneck over caption tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub embedder: TextEmbedder,
    pub time: Network,
    pub main: Network,
    layout: Vec<f32>,
}

pub struct DenoiserTrace<T> {
    time: Trace<T>,
    main: Trace<T>,
}

/// One training pair; `None` is the null caption.
#[derive(Debug, Clone)]
pub struct DenoiserExample {
    pub latent: Latent,
    pub caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserStep {
    /// Batch mean of `‖f̂₀ − f₀‖²`.
    pub loss: f64,
    pub timesteps: Vec<usize>,
    /// Whether each sample's caption was replaced by the null condition.
    pub dropped: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub dropout: f64,
    pub seed: u64,
    pub lr: f64,
}

fn res_block(b: &mut NetworkBuilder, name: &str, width: usize, groups: usize) {
    let skip = b.current();
    b.rms_norm(&format!("{name}.norm1"), groups);
    b.silu();
    b.conv3x3(&format!("{name}.conv1"), width);
    b.film(&format!("{name}.film"), TIME_DIM);
    b.silu();
    b.conv3x3(&format!("{name}.conv2"), width);
    b.add_skip(skip);
}

impl Denoiser {
    /// `layout` holds the region planes from [`region_layout`].
    pub fn new(config: DenoiserConfig, embedder: TextEmbedder, layout: Vec<f32>) -> Result<Denoiser> {
        let c = config;
        if c.width == 0 || c.heads == 0 || c.width % c.heads != 0 {
            return Err(Error::invalid(format!("width {} must be a multiple of {} heads", c.width, c.heads)));
        }
        if c.latent_resolution % 2 != 0 || c.latent_resolution == 0 {
            return Err(Error::invalid("latent resolution must be even"));
        }
        if c.steps < 2 {
            return Err(Error::invalid("denoiser needs a schedule of at least 2 steps"));
        }
        let plane = c.latent_resolution * c.latent_resolution;
        if layout.len() != Region::ALL.len() * plane {
            return Err(Error::invalid("region layout does not match the latent resolution"));
        }
        let mut t = NetworkBuilder::new("denoiser.time", 2 * TIME_FREQUENCIES);
        t.linear("fc1", TIME_DIM);
        t.silu();
        t.linear("fc2", TIME_DIM);
        let groups = (c.width / 8).max(1);
        let mut m = NetworkBuilder::new("denoiser", c.latent_channels + Region::ALL.len());
        m.conv3x3("in", c.width);
        res_block(&mut m, "down1", c.width, groups);
        let skip = res_block_id(&mut m, "down2", c.width, groups);
        m.avgpool();
        let attn_skip = m.current();
        m.rms_norm("attn.norm", groups);
        m.cross_attention("attn", embedder.dim, c.heads, c.width / c.heads);
        m.add_skip(attn_skip);
        res_block(&mut m, "mid1", c.width, groups);
        res_block(&mut m, "mid2", c.width, groups);
        m.upsample();
        m.add_skip(skip);
        m.rms_norm("out.norm", groups);
        m.silu();
        m.conv3x3_zero("out", c.latent_channels);
        Ok(Denoiser {
            config,
            embedder,
            time: t.build()?,
            main: m.build()?,
            layout,
        })
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore<f32>> {
        let mut rng = SeededRng::new(seed, 0);
        let mut p = self.embedder.init_params(&mut rng);
        p.merge(self.time.init_params(&mut rng))?;
        p.merge(self.main.init_params(&mut rng))?;
        Ok(p)
    }

    fn check_timesteps(&self, ts: &[usize]) -> Result<()> {
        if let Some(&t) = ts.iter().find(|&&t| t == 0 || t > self.config.steps) {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.config.steps)));
        }
        Ok(())
    }

    fn with_layout<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = x.shape;
        let r = self.config.latent_resolution;
        if c != self.config.latent_channels || h != r || w != r {
            return Err(Error::network(
                "denoiser.in",
                format!(
                    "expected latents [{}, {r}, {r}], got [{c}, {h}, {w}]",
                    self.config.latent_channels
                ),
            ));
        }
        let layout: Vec<T> = self.layout.iter().map(|&v| T::of(v as f64)).collect();
        let mut planes = Tensor::zeros([b, Region::ALL.len(), h, w]);
        for i in 0..b {
            planes.sample_mut(i).copy_from_slice(&layout);
        }
        Tensor::concat_channels(&[x, &planes])
    }

    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        x_t: &Tensor<T>,
        ts: &[usize],
        ids: &[Vec<usize>],
        save: bool,
    ) -> Result<(Tensor<T>, DenoiserTrace<T>)> {
        if ts.len() != x_t.batch() || ids.len() != x_t.batch() {
            return Err(Error::invalid("timesteps and conditions must match the batch"));
        }
        self.check_timesteps(ts)?;
        let x = self.with_layout(x_t)?;
        let (emb, time) = self.time.forward(params, Inputs::new(&timestep_features(ts)), save)?;
        let tokens = self.embedder.embed(params, ids)?;
        let inputs = Inputs {
            x: &x,
            emb: Some(&emb),
            tokens: Some(&tokens),
        };
        let (out, main) = self.main.forward(params, inputs, save)?;
        Ok((out, DenoiserTrace { time, main }))
    }

    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        trace: &DenoiserTrace<T>,
        ids: &[Vec<usize>],
        grad_out: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let g = self.main.backward(params, &trace.main, grad_out, grads)?;
        if let Some(de) = g.emb {
            self.time.backward(params, &trace.time, &de, grads)?;
        }
        if let Some(dt) = g.tokens {
            let entry = grads.entry(EMBED_PARAM.to_string()).or_default();
            self.embedder.backward(ids, &dt, entry);
        }
        Ok(())
    }

    pub fn predict_x0(&self, params: &ParamStore<f32>, x_t: &Latent, t: usize, ids: &[usize]) -> Result<Latent> {
        let (out, _) = self.forward(params, &x_t.to_tensor(), &[t], &[ids.to_vec()], false)?;
        Ok(Latent::from_tensor(&out, 0))
    }

    /// Batch-mean squared error against `targets` for fixed noisy inputs,
    /// with parameter gradients.
    pub fn loss_and_grads<T: Real>(
        &self,
        params: &ParamStore<T>,
        x_t: &Tensor<T>,
        ts: &[usize],
        ids: &[Vec<usize>],
        targets: &Tensor<T>,
    ) -> Result<(f64, Grads<T>)> {
        let (out, trace) = self.forward(params, x_t, ts, ids, true)?;
        if out.shape != targets.shape {
            return Err(Error::invalid("targets must be shaped like the latents"));
        }
        let inv_b = 1.0 / out.batch() as f64;
        let mut loss = 0.0;
        let mut grad = Tensor::zeros(out.shape);
        for i in 0..out.data.len() {
            let d = out.data[i].f64() - targets.data[i].f64();
            loss += d * d * inv_b;
            grad.data[i] = T::of(2.0 * d * inv_b);
        }
        let mut grads = Grads::new();
        self.backward(params, &trace, ids, &grad, &mut grads)?;
        Ok((loss, grads))
    }

    /// Timestep, noise and caption-dropout decision of sample `index` at
    /// `step`; a pure function of `(seed, step, index)`.
    pub fn draw(&self, seed: u64, step: u64, index: usize, dropout: f64) -> (usize, Vec<f32>, bool) {
        let mut rng = SeededRng::new(mix64(seed ^ mix64(step)), index as u64);
        let t = 1 + rng.below(self.config.steps);
        let r = self.config.latent_resolution;
        let e = rng.normal_vec_f32(self.config.latent_channels * r * r);
        let drop = hashed_uniform(&[seed, step, index as u64, DROPOUT_KEY]) < dropout;
        (t, e, drop)
    }

    pub fn train_step(
        &self,
        params: &mut ParamStore<f32>,
        schedule: &NoiseSchedule,
        batch: &[DenoiserExample],
        opts: TrainOptions,
        step: u64,
    ) -> Result<DenoiserStep> {
        if batch.is_empty() {
            return Err(Error::invalid("empty denoiser batch"));
        }
        if schedule.steps != self.config.steps {
            return Err(Error::invalid("schedule length differs from the denoiser's"));
        }
        let mut noisy = Vec::with_capacity(batch.len());
        let mut ts = Vec::with_capacity(batch.len());
        let mut ids = Vec::with_capacity(batch.len());
        let mut dropped = Vec::with_capacity(batch.len());
        for (i, ex) in batch.iter().enumerate() {
            let (t, e, drop) = self.draw(opts.seed, step, i, opts.dropout);
            noisy.push(schedule.forward_noise(&ex.latent, t, &e)?);
            ts.push(t);
            let caption = if drop { None } else { ex.caption.as_deref() };
            ids.push(self.embedder.token_ids(caption));
            dropped.push(drop);
        }
        let x = Latent::batch(&noisy.iter().collect::<Vec<_>>())?;
        let targets = Latent::batch(&batch.iter().map(|e| &e.latent).collect::<Vec<_>>())?;
        let (loss, grads) = self.loss_and_grads(params, &x, &ts, &ids, &targets)?;
        params.adam_step(&grads, opts.lr)?;
        Ok(DenoiserStep {
            loss,
            timesteps: ts,
            dropped,
        })
    }
}

fn res_block_id(b: &mut NetworkBuilder, name: &str, width: usize, groups: usize) -> usize {
    res_block(b, name, width, groups);
    b.current()
}

/// A denoiser bound to its parameters, usable by the samplers.
pub struct DenoiserModel<'a> {
    pub net: &'a Denoiser,
    pub params: &'a ParamStore<f32>,
}

impl X0Model for DenoiserModel<'_> {
    type Cond = [usize];

    fn predict_x0(&self, x_t: &Latent, t: usize, cond: &[usize]) -> Result<Latent> {
        self.net.predict_x0(self.params, x_t, t, cond)
    }

    fn predict_x0_pair(&self, x_t: &Latent, t: usize, cond: &[usize], null: &[usize]) -> Result<(Latent, Latent)> {
        let x = Latent::batch(&[x_t, x_t])?;
        let (out, _) = self
            .net
            .forward(self.params, &x, &[t, t], &[cond.to_vec(), null.to_vec()], false)?;
        Ok((Latent::from_tensor(&out, 0), Latent::from_tensor(&out, 1)))
    }
}
