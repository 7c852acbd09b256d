use rayon::prelude::*;

use super::kernels::{self, sigmoid};
use super::params::{accumulate, Grads, ParamStore};
use super::real::gemm;
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv3x3 { cin: usize, cout: usize },
    Conv1x1 { cin: usize, cout: usize },
    /// 4×4 kernel, stride 2, padding 1: doubles the spatial size.
    TransposedConv4x4 { cin: usize, cout: usize },
    /// Dense layer over `[B, cin, 1, 1]` inputs.
    Linear { cin: usize, cout: usize },
    RmsNorm { channels: usize, groups: usize },
    Silu,
    /// `y = x·(1 + scale) + shift` with `(scale, shift)` projected from the
    /// auxiliary embedding.
    Film { channels: usize, emb_dim: usize },
    CrossAttention { channels: usize, token_dim: usize, heads: usize, head_dim: usize },
    Upsample2x,
    AvgPool2x,
    /// Adds the value with id `from` (0 is the network input, `i + 1` the
    /// output of layer `i`).
    AddSkip { from: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Initialize the weights to zero instead of He-normal.
    pub zero_init: bool,
}

/// Condition tokens `[B, token_dim, max_len, 1]` and the valid length of
/// each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens<T> {
    pub data: Tensor<T>,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a, T> {
    pub x: &'a Tensor<T>,
    pub emb: Option<&'a Tensor<T>>,
    pub tokens: Option<&'a Tokens<T>>,
}

impl<'a, T> Inputs<'a, T> {
    pub fn new(x: &'a Tensor<T>) -> Self {
        Inputs {
            x,
            emb: None,
            tokens: None,
        }
    }
}

/// Activations saved by `forward` for the reverse pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    values: Vec<Tensor<T>>,
    attention: Vec<Option<Vec<T>>>,
    emb: Option<Tensor<T>>,
    tokens: Option<Tokens<T>>,
}

impl<T> Trace<T> {
    pub fn is_saved(&self) -> bool {
        !self.values.is_empty()
    }

    /// Attention probabilities of layer `i`, `[B, heads, positions, max_len]`.
    pub fn attention(&self, layer: usize) -> Option<&[T]> {
        self.attention.get(layer).and_then(|a| a.as_deref())
    }
}

/// Gradients with respect to the network inputs.
#[derive(Debug, Clone)]
pub struct InputGrads<T> {
    pub x: Tensor<T>,
    pub emb: Option<Tensor<T>>,
    pub tokens: Option<Tensor<T>>,
}

/// A validated sequential network with skip connections.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub in_channels: usize,
    pub out_channels: usize,
    pub layers: Vec<LayerSpec>,
}

pub struct NetworkBuilder {
    prefix: String,
    in_channels: usize,
    layers: Vec<LayerSpec>,
    /// Channels and log2 spatial scale of every value.
    values: Vec<(usize, i32)>,
    error: Option<Error>,
}

impl NetworkBuilder {
    pub fn new(prefix: &str, in_channels: usize) -> Self {
        NetworkBuilder {
            prefix: prefix.to_string(),
            in_channels,
            layers: Vec::new(),
            values: vec![(in_channels, 0)],
            error: None,
        }
    }

    /// Id of the most recent value.
    pub fn current(&self) -> usize {
        self.values.len() - 1
    }

    pub fn channels(&self) -> usize {
        self.values.last().unwrap().0
    }

    fn push(&mut self, name: Option<&str>, kind: LayerKind, zero_init: bool) -> usize {
        let name = match name {
            Some(n) => format!("{}.{n}", self.prefix),
            None => format!("{}.{}{}", self.prefix, kind_label(&kind), self.layers.len()),
        };
        let (c, scale) = *self.values.last().unwrap();
        let fail = |msg: String| Some(Error::network(name.clone(), msg));
        let mut out = (c, scale);
        let mut err = None;
        if self.layers.iter().any(|l| l.name == name) {
            err = fail("duplicate layer name".into());
        }
        match &kind {
            LayerKind::Conv3x3 { cin, cout }
            | LayerKind::Conv1x1 { cin, cout }
            | LayerKind::TransposedConv4x4 { cin, cout }
            | LayerKind::Linear { cin, cout } => {
                if *cin != c {
                    err = fail(format!("expects {cin} input channels, previous layer gives {c}"));
                }
                if *cout == 0 {
                    err = fail("zero output channels".into());
                }
                out.0 = *cout;
                if matches!(kind, LayerKind::TransposedConv4x4 { .. }) {
                    out.1 += 1;
                }
            }
            LayerKind::RmsNorm { channels, groups } => {
                if *channels != c || *groups == 0 || c % groups != 0 {
                    err = fail(format!("{groups} groups over {channels} channels, input has {c}"));
                }
            }
            LayerKind::Film { channels, emb_dim } => {
                if *channels != c || *emb_dim == 0 {
                    err = fail(format!("configured for {channels} channels, input has {c}"));
                }
            }
            LayerKind::CrossAttention {
                channels,
                token_dim,
                heads,
                head_dim,
            } => {
                if *channels != c || *token_dim == 0 || *heads == 0 || *head_dim == 0 {
                    err = fail(format!("configured for {channels} channels, input has {c}"));
                }
            }
            LayerKind::Silu => {}
            LayerKind::Upsample2x => out.1 += 1,
            LayerKind::AvgPool2x => out.1 -= 1,
            LayerKind::AddSkip { from } => match self.values.get(*from) {
                Some(&(fc, fs)) if fc == c && fs == scale => {}
                Some(&(fc, fs)) => {
                    err = fail(format!(
                        "skip from value {from} ({fc} channels, scale {fs}) does not match ({c}, {scale})"
                    ))
                }
                None => err = fail(format!("skip source {from} does not exist")),
            },
        }
        if self.error.is_none() {
            self.error = err;
        }
        self.layers.push(LayerSpec { name, kind, zero_init });
        self.values.push(out);
        self.current()
    }

    pub fn conv3x3(&mut self, name: &str, cout: usize) -> usize {
        let cin = self.channels();
        self.push(Some(name), LayerKind::Conv3x3 { cin, cout }, false)
    }

    pub fn conv3x3_zero(&mut self, name: &str, cout: usize) -> usize {
        let cin = self.channels();
        self.push(Some(name), LayerKind::Conv3x3 { cin, cout }, true)
    }

    pub fn conv1x1(&mut self, name: &str, cout: usize) -> usize {
        let cin = self.channels();
        self.push(Some(name), LayerKind::Conv1x1 { cin, cout }, false)
    }

    pub fn transposed_conv(&mut self, name: &str, cout: usize) -> usize {
        let cin = self.channels();
        self.push(Some(name), LayerKind::TransposedConv4x4 { cin, cout }, false)
    }

    pub fn linear(&mut self, name: &str, cout: usize) -> usize {
        let cin = self.channels();
        self.push(Some(name), LayerKind::Linear { cin, cout }, false)
    }

    pub fn rms_norm(&mut self, name: &str, groups: usize) -> usize {
        let channels = self.channels();
        self.push(Some(name), LayerKind::RmsNorm { channels, groups }, false)
    }

    pub fn silu(&mut self) -> usize {
        self.push(None, LayerKind::Silu, false)
    }

    pub fn film(&mut self, name: &str, emb_dim: usize) -> usize {
        let channels = self.channels();
        self.push(Some(name), LayerKind::Film { channels, emb_dim }, true)
    }

    pub fn cross_attention(&mut self, name: &str, token_dim: usize, heads: usize, head_dim: usize) -> usize {
        let channels = self.channels();
        self.push(
            Some(name),
            LayerKind::CrossAttention {
                channels,
                token_dim,
                heads,
                head_dim,
            },
            false,
        )
    }

    pub fn upsample(&mut self) -> usize {
        self.push(None, LayerKind::Upsample2x, false)
    }

    pub fn avgpool(&mut self) -> usize {
        self.push(None, LayerKind::AvgPool2x, false)
    }

    pub fn add_skip(&mut self, from: usize) -> usize {
        self.push(None, LayerKind::AddSkip { from }, false)
    }

    /// Appends an explicit layer (used when loading definitions).
    pub fn layer(&mut self, spec: LayerSpec) -> usize {
        let name = spec.name.strip_prefix(&format!("{}.", self.prefix)).map(str::to_string);
        self.push(name.as_deref(), spec.kind, spec.zero_init)
    }

    pub fn build(self) -> Result<Network> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if self.layers.is_empty() {
            return Err(Error::network(self.prefix, "network has no layers"));
        }
        Ok(Network {
            in_channels: self.in_channels,
            out_channels: self.values.last().unwrap().0,
            layers: self.layers,
        })
    }
}

fn kind_label(kind: &LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv3x3 { .. } => "conv3x3_",
        LayerKind::Conv1x1 { .. } => "conv1x1_",
        LayerKind::TransposedConv4x4 { .. } => "tconv_",
        LayerKind::Linear { .. } => "linear_",
        LayerKind::RmsNorm { .. } => "rms_norm_",
        LayerKind::Silu => "silu_",
        LayerKind::Film { .. } => "film_",
        LayerKind::CrossAttention { .. } => "cross_attention_",
        LayerKind::Upsample2x => "upsample_",
        LayerKind::AvgPool2x => "avgpool_",
        LayerKind::AddSkip { .. } => "add_skip_",
    }
}

fn param<'a, T: Real>(params: &'a ParamStore<T>, layer: &str, suffix: &str, len: usize) -> Result<&'a [T]> {
    let name = format!("{layer}.{suffix}");
    let v = params
        .get(&name)
        .map_err(|_| Error::network(layer, format!("missing parameter `{name}`")))?;
    if v.len() != len {
        return Err(Error::network(
            layer,
            format!("parameter `{name}` has {} values, expected {len}", v.len()),
        ));
    }
    Ok(v)
}

/// Runs `f` for every sample in parallel and returns the per-sample results
/// in sample order.
fn per_sample<R: Send>(batch: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..batch).into_par_iter().map(f).collect()
}

fn sum_into<T: Real>(acc: &mut [T], parts: impl IntoIterator<Item = Vec<T>>) {
    for part in parts {
        for (a, b) in acc.iter_mut().zip(part) {
            *a += b;
        }
    }
}

impl Network {
    /// Name and shape of every parameter, in layer order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            let n = |s: &str| format!("{}.{s}", l.name);
            match l.kind {
                LayerKind::Conv3x3 { cin, cout } => {
                    out.push((n("w"), vec![cout, cin, 3, 3]));
                    out.push((n("b"), vec![cout]));
                }
                LayerKind::Conv1x1 { cin, cout } | LayerKind::Linear { cin, cout } => {
                    out.push((n("w"), vec![cout, cin]));
                    out.push((n("b"), vec![cout]));
                }
                LayerKind::TransposedConv4x4 { cin, cout } => {
                    out.push((n("w"), vec![cin, cout, 4, 4]));
                    out.push((n("b"), vec![cout]));
                }
                LayerKind::RmsNorm { channels, .. } => out.push((n("g"), vec![channels])),
                LayerKind::Film { channels, emb_dim } => {
                    out.push((n("w"), vec![2 * channels, emb_dim]));
                    out.push((n("b"), vec![2 * channels]));
                }
                LayerKind::CrossAttention {
                    channels,
                    token_dim,
                    heads,
                    head_dim,
                } => {
                    let hd = heads * head_dim;
                    out.push((n("wq"), vec![hd, channels]));
                    out.push((n("wk"), vec![hd, token_dim]));
                    out.push((n("wv"), vec![hd, token_dim]));
                    out.push((n("wo"), vec![channels, hd]));
                    out.push((n("bo"), vec![channels]));
                }
                _ => {}
            }
        }
        out
    }

    /// Fresh parameters: He-normal weights, zero biases, unit norm gains;
    /// FiLM projections and layers marked `zero_init` start at zero.
    pub fn init_params(&self, rng: &mut SeededRng) -> ParamStore<f32> {
        let mut store = ParamStore::new();
        for (name, shape) in self.param_shapes() {
            let layer = self
                .layers
                .iter()
                .find(|l| name.starts_with(&format!("{}.", l.name)))
                .unwrap();
            let suffix = &name[layer.name.len() + 1..];
            let len: usize = shape.iter().product();
            let fan_in = match (&layer.kind, suffix) {
                (LayerKind::TransposedConv4x4 { cin, .. }, "w") => 4 * cin,
                (LayerKind::CrossAttention { .. }, _) => shape.get(1).copied().unwrap_or(1),
                (_, "w") => shape[1..].iter().product(),
                _ => 0,
            };
            let value: Vec<f32> = match (&layer.kind, suffix) {
                (LayerKind::RmsNorm { .. }, _) => vec![1.0; len],
                (LayerKind::Film { .. }, _) => vec![0.0; len],
                (_, "b") | (_, "bo") => vec![0.0; len],
                _ if layer.zero_init => vec![0.0; len],
                (LayerKind::CrossAttention { .. }, _) => {
                    let std = (1.0 / fan_in as f64).sqrt();
                    (0..len).map(|_| (rng.normal() * std) as f32).collect()
                }
                _ => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    (0..len).map(|_| (rng.normal() * std) as f32).collect()
                }
            };
            store.insert(name, shape, value);
        }
        store
    }

    fn check_input<T: Real>(&self, inputs: &Inputs<T>) -> Result<()> {
        let x = inputs.x;
        if x.channels() != self.in_channels {
            let first = self.layers.first().map(|l| l.name.as_str()).unwrap_or("input");
            return Err(Error::network(
                first,
                format!("expects {} input channels, got {}", self.in_channels, x.channels()),
            ));
        }
        if x.batch() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        Ok(())
    }

    /// Forward pass. With `save`, the returned trace holds the activations
    /// needed by `backward`.
    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        inputs: Inputs<T>,
        save: bool,
    ) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_input(&inputs)?;
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len() + 1);
        values.push(inputs.x.clone());
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = values.last().unwrap();
            let (y, attn) = self.layer_forward(layer, params, x, &values, &inputs)?;
            if cfg!(debug_assertions) && !y.is_finite() {
                return Err(Error::State(format!("non-finite activation after layer `{}`", layer.name)));
            }
            values.push(y);
            attention.push(if save { attn } else { None });
        }
        let out = values.pop().unwrap();
        let trace = if save {
            values.push(out.clone());
            Trace {
                values,
                attention,
                emb: inputs.emb.cloned(),
                tokens: inputs.tokens.cloned(),
            }
        } else {
            Trace {
                values: Vec::new(),
                attention: Vec::new(),
                emb: None,
                tokens: None,
            }
        };
        Ok((out, trace))
    }

    /// Forward pass without saving activations.
    pub fn infer<T: Real>(&self, params: &ParamStore<T>, inputs: Inputs<T>) -> Result<Tensor<T>> {
        Ok(self.forward(params, inputs, false)?.0)
    }

    fn layer_forward<T: Real>(
        &self,
        layer: &LayerSpec,
        params: &ParamStore<T>,
        x: &Tensor<T>,
        values: &[Tensor<T>],
        inputs: &Inputs<T>,
    ) -> Result<(Tensor<T>, Option<Vec<T>>)> {
        let [b, c, h, w] = x.shape;
        let name = layer.name.as_str();
        let plane = h * w;
        let y = match layer.kind {
            LayerKind::Conv3x3 { cin, cout } | LayerKind::Conv1x1 { cin, cout } => {
                let k = if matches!(layer.kind, LayerKind::Conv3x3 { .. }) { 3 } else { 1 };
                let wt = param(params, name, "w", cout * cin * k * k)?;
                let bias = param(params, name, "b", cout)?;
                let mut y = Tensor::zeros([b, cout, h, w]);
                y.data
                    .par_chunks_mut(cout * plane)
                    .enumerate()
                    .for_each(|(i, ys)| kernels::conv_forward(x.sample(i), cin, h, w, wt, bias, cout, k, ys));
                y
            }
            LayerKind::TransposedConv4x4 { cin, cout } => {
                let wt = param(params, name, "w", cin * cout * 16)?;
                let bias = param(params, name, "b", cout)?;
                let mut y = Tensor::zeros([b, cout, 2 * h, 2 * w]);
                y.data
                    .par_chunks_mut(cout * plane * 4)
                    .enumerate()
                    .for_each(|(i, ys)| kernels::tconv_forward(x.sample(i), cin, h, w, wt, bias, cout, ys));
                y
            }
            LayerKind::Linear { cin, cout } => {
                if plane != 1 {
                    return Err(Error::network(name, format!("linear layer needs 1×1 inputs, got {h}×{w}")));
                }
                let wt = param(params, name, "w", cout * cin)?;
                let bias = param(params, name, "b", cout)?;
                let mut y = Tensor::zeros([b, cout, 1, 1]);
                gemm(b, cin, cout, &x.data, false, wt, true, &mut y.data, T::zero());
                for row in y.data.chunks_mut(cout) {
                    for (v, &bb) in row.iter_mut().zip(bias) {
                        *v += bb;
                    }
                }
                y
            }
            LayerKind::RmsNorm { groups, .. } => {
                let gain = param(params, name, "g", c)?;
                let mut y = Tensor::zeros(x.shape);
                y.data
                    .par_chunks_mut(c * plane)
                    .enumerate()
                    .for_each(|(i, ys)| kernels::rms_forward(x.sample(i), c, plane, groups, gain, ys));
                y
            }
            LayerKind::Silu => Tensor {
                shape: x.shape,
                data: x.data.iter().map(|&v| v * sigmoid(v)).collect(),
            },
            LayerKind::Film { channels, emb_dim } => {
                let emb = check_emb(name, inputs.emb, b, emb_dim)?;
                let proj = film_projection(params, name, channels, emb_dim, emb)?;
                let mut y = Tensor::zeros(x.shape);
                for i in 0..b {
                    let p = &proj[i * 2 * c..(i + 1) * 2 * c];
                    let xs = x.sample(i);
                    let ys = y.sample_mut(i);
                    for ch in 0..c {
                        let (sc, sh) = (T::one() + p[ch], p[c + ch]);
                        for k in ch * plane..(ch + 1) * plane {
                            ys[k] = xs[k] * sc + sh;
                        }
                    }
                }
                y
            }
            LayerKind::CrossAttention {
                channels,
                token_dim,
                heads,
                head_dim,
            } => {
                let tokens = check_tokens(name, inputs.tokens, b, token_dim)?;
                let att = Attention::new(params, name, channels, token_dim, heads, head_dim)?;
                let results = per_sample(b, |i| att.forward(x.sample(i), plane, tokens, i));
                let mut y = Tensor::zeros(x.shape);
                let mut probs = Vec::with_capacity(b * heads * plane * tokens.data.shape[2]);
                for (i, (ys, p)) in results.into_iter().enumerate() {
                    y.sample_mut(i).copy_from_slice(&ys);
                    probs.extend(p);
                }
                return Ok((y, Some(probs)));
            }
            LayerKind::Upsample2x => {
                let mut y = Tensor::zeros([b, c, 2 * h, 2 * w]);
                for (bc, ys) in y.data.chunks_mut(4 * plane).enumerate() {
                    let xs = &x.data[bc * plane..(bc + 1) * plane];
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            ys[yy * 2 * w + xx] = xs[(yy / 2) * w + xx / 2];
                        }
                    }
                }
                y
            }
            LayerKind::AvgPool2x => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::network(name, format!("cannot pool odd size {h}×{w}")));
                }
                let (ho, wo) = (h / 2, w / 2);
                let mut y = Tensor::zeros([b, c, ho, wo]);
                let quarter = T::of(0.25);
                for (bc, ys) in y.data.chunks_mut(ho * wo).enumerate() {
                    let xs = &x.data[bc * plane..(bc + 1) * plane];
                    for yy in 0..ho {
                        for xx in 0..wo {
                            let at = |dy: usize, dx: usize| xs[(2 * yy + dy) * w + 2 * xx + dx];
                            ys[yy * wo + xx] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter;
                        }
                    }
                }
                y
            }
            LayerKind::AddSkip { from } => {
                let skip = &values[from];
                if skip.shape != x.shape {
                    return Err(Error::network(
                        name,
                        format!("skip shape {:?} differs from {:?}", skip.shape, x.shape),
                    ));
                }
                let mut y = x.clone();
                y.add_assign(skip);
                y
            }
        };
        Ok((y, None))
    }

    /// Reverse pass. Parameter gradients are added into `grads`.
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<InputGrads<T>> {
        if trace.values.len() != self.layers.len() + 1 {
            return Err(Error::State("backward needs a forward pass that saved activations".into()));
        }
        let out_shape = trace.values.last().unwrap().shape;
        if grad_out.shape != out_shape {
            return Err(Error::invalid(format!(
                "output gradient shape {:?} differs from output {:?}",
                grad_out.shape, out_shape
            )));
        }
        let mut dvals: Vec<Option<Tensor<T>>> = vec![None; trace.values.len()];
        dvals[self.layers.len()] = Some(grad_out.clone());
        let mut d_emb: Option<Tensor<T>> = None;
        let mut d_tokens: Option<Tensor<T>> = None;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let Some(dy) = dvals[li + 1].take() else { continue };
            let x = &trace.values[li];
            let dx = self.layer_backward(li, layer, params, trace, x, dy, grads, &mut dvals, &mut d_emb, &mut d_tokens)?;
            add_grad(&mut dvals[li], dx);
        }
        let x = dvals[0].take().unwrap_or_else(|| Tensor::zeros(trace.values[0].shape));
        Ok(InputGrads {
            x,
            emb: d_emb,
            tokens: d_tokens,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward<T: Real>(
        &self,
        li: usize,
        layer: &LayerSpec,
        params: &ParamStore<T>,
        trace: &Trace<T>,
        x: &Tensor<T>,
        dy: Tensor<T>,
        grads: &mut Grads<T>,
        dvals: &mut [Option<Tensor<T>>],
        d_emb: &mut Option<Tensor<T>>,
        d_tokens: &mut Option<Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let [b, c, h, w] = x.shape;
        let plane = h * w;
        let name = layer.name.as_str();
        let pname = |s: &str| format!("{name}.{s}");
        Ok(match layer.kind {
            LayerKind::Conv3x3 { cin, cout } | LayerKind::Conv1x1 { cin, cout } => {
                let k = if matches!(layer.kind, LayerKind::Conv3x3 { .. }) { 3 } else { 1 };
                let wlen = cout * cin * k * k;
                let wt = param(params, name, "w", wlen)?;
                let mut dx = Tensor::zeros(x.shape);
                let parts = per_sample(b, |i| {
                    let mut dw = vec![T::zero(); wlen];
                    let mut db = vec![T::zero(); cout];
                    let mut dxs = vec![T::zero(); cin * plane];
                    let dys = &dy.data[i * cout * plane..(i + 1) * cout * plane];
                    kernels::conv_backward(x.sample(i), cin, h, w, wt, cout, k, dys, &mut dw, &mut db, &mut dxs);
                    (dw, db, dxs)
                });
                let mut dw = vec![T::zero(); wlen];
                let mut db = vec![T::zero(); cout];
                for (i, (pw, pb, pdx)) in parts.into_iter().enumerate() {
                    sum_into(&mut dw, [pw]);
                    sum_into(&mut db, [pb]);
                    dx.sample_mut(i).copy_from_slice(&pdx);
                }
                accumulate(grads, &pname("w"), &dw);
                accumulate(grads, &pname("b"), &db);
                dx
            }
            LayerKind::TransposedConv4x4 { cin, cout } => {
                let wlen = cin * cout * 16;
                let wt = param(params, name, "w", wlen)?;
                let mut dx = Tensor::zeros(x.shape);
                let parts = per_sample(b, |i| {
                    let mut dw = vec![T::zero(); wlen];
                    let mut db = vec![T::zero(); cout];
                    let mut dxs = vec![T::zero(); cin * plane];
                    let n = cout * plane * 4;
                    kernels::tconv_backward(
                        x.sample(i),
                        cin,
                        h,
                        w,
                        wt,
                        cout,
                        &dy.data[i * n..(i + 1) * n],
                        &mut dw,
                        &mut db,
                        &mut dxs,
                    );
                    (dw, db, dxs)
                });
                let mut dw = vec![T::zero(); wlen];
                let mut db = vec![T::zero(); cout];
                for (i, (pw, pb, pdx)) in parts.into_iter().enumerate() {
                    sum_into(&mut dw, [pw]);
                    sum_into(&mut db, [pb]);
                    dx.sample_mut(i).copy_from_slice(&pdx);
                }
                accumulate(grads, &pname("w"), &dw);
                accumulate(grads, &pname("b"), &db);
                dx
            }
            LayerKind::Linear { cin, cout } => {
                let wt = param(params, name, "w", cout * cin)?;
                let mut dw = vec![T::zero(); cout * cin];
                gemm(cout, b, cin, &dy.data, true, &x.data, false, &mut dw, T::zero());
                let mut db = vec![T::zero(); cout];
                for row in dy.data.chunks(cout) {
                    for (a, &v) in db.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                let mut dx = Tensor::zeros(x.shape);
                gemm(b, cout, cin, &dy.data, false, wt, false, &mut dx.data, T::zero());
                accumulate(grads, &pname("w"), &dw);
                accumulate(grads, &pname("b"), &db);
                dx
            }
            LayerKind::RmsNorm { groups, .. } => {
                let gain = param(params, name, "g", c)?;
                let mut dx = Tensor::zeros(x.shape);
                let mut dg = vec![T::zero(); c];
                for i in 0..b {
                    let n = c * plane;
                    kernels::rms_backward(
                        x.sample(i),
                        c,
                        plane,
                        groups,
                        gain,
                        &dy.data[i * n..(i + 1) * n],
                        &mut dg,
                        &mut dx.data[i * n..(i + 1) * n],
                    );
                }
                accumulate(grads, &pname("g"), &dg);
                dx
            }
            LayerKind::Silu => Tensor {
                shape: x.shape,
                data: x
                    .data
                    .iter()
                    .zip(&dy.data)
                    .map(|(&v, &g)| {
                        let s = sigmoid(v);
                        g * s * (T::one() + v * (T::one() - s))
                    })
                    .collect(),
            },
            LayerKind::Film { channels, emb_dim } => {
                let emb = check_emb(name, trace.emb.as_ref(), b, emb_dim)?;
                let wt = param(params, name, "w", 2 * channels * emb_dim)?;
                let proj = film_projection(params, name, channels, emb_dim, emb)?;
                let mut dx = Tensor::zeros(x.shape);
                let mut dproj = vec![T::zero(); b * 2 * c];
                for i in 0..b {
                    let p = &proj[i * 2 * c..(i + 1) * 2 * c];
                    let xs = x.sample(i);
                    let n = c * plane;
                    let dys = &dy.data[i * n..(i + 1) * n];
                    let dxs = dx.sample_mut(i);
                    for ch in 0..c {
                        let sc = T::one() + p[ch];
                        let (mut dsc, mut dsh) = (T::zero(), T::zero());
                        for k in ch * plane..(ch + 1) * plane {
                            dxs[k] = dys[k] * sc;
                            dsc += dys[k] * xs[k];
                            dsh += dys[k];
                        }
                        dproj[i * 2 * c + ch] = dsc;
                        dproj[i * 2 * c + c + ch] = dsh;
                    }
                }
                let mut dw = vec![T::zero(); 2 * c * emb_dim];
                gemm(2 * c, b, emb_dim, &dproj, true, &emb.data, false, &mut dw, T::zero());
                let mut db = vec![T::zero(); 2 * c];
                for row in dproj.chunks(2 * c) {
                    for (a, &v) in db.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                let mut de = Tensor::zeros(emb.shape);
                gemm(b, 2 * c, emb_dim, &dproj, false, wt, false, &mut de.data, T::zero());
                add_grad(d_emb, de);
                accumulate(grads, &pname("w"), &dw);
                accumulate(grads, &pname("b"), &db);
                dx
            }
            LayerKind::CrossAttention {
                channels,
                token_dim,
                heads,
                head_dim,
            } => {
                let tokens = check_tokens(name, trace.tokens.as_ref(), b, token_dim)?;
                let att = Attention::new(params, name, channels, token_dim, heads, head_dim)?;
                let probs = trace
                    .attention(li)
                    .ok_or_else(|| Error::State(format!("layer `{name}` has no saved attention")))?;
                let lmax = tokens.data.shape[2];
                let per = heads * plane * lmax;
                let parts = per_sample(b, |i| {
                    att.backward(
                        x.sample(i),
                        plane,
                        tokens,
                        i,
                        &probs[i * per..(i + 1) * per],
                        &dy.data[i * c * plane..(i + 1) * c * plane],
                    )
                });
                let mut dx = Tensor::zeros(x.shape);
                let mut dt = Tensor::zeros(tokens.data.shape);
                let mut acc = AttentionGrads::zeros(&att);
                for (i, g) in parts.into_iter().enumerate() {
                    dx.sample_mut(i).copy_from_slice(&g.dx);
                    dt.sample_mut(i).copy_from_slice(&g.dtokens);
                    acc.add(&g);
                }
                accumulate(grads, &pname("wq"), &acc.wq);
                accumulate(grads, &pname("wk"), &acc.wk);
                accumulate(grads, &pname("wv"), &acc.wv);
                accumulate(grads, &pname("wo"), &acc.wo);
                accumulate(grads, &pname("bo"), &acc.bo);
                add_grad(d_tokens, dt);
                dx
            }
            LayerKind::Upsample2x => {
                let mut dx = Tensor::zeros(x.shape);
                for (bc, dys) in dy.data.chunks(4 * plane).enumerate() {
                    let dxs = &mut dx.data[bc * plane..(bc + 1) * plane];
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            dxs[(yy / 2) * w + xx / 2] += dys[yy * 2 * w + xx];
                        }
                    }
                }
                dx
            }
            LayerKind::AvgPool2x => {
                let (ho, wo) = (h / 2, w / 2);
                let mut dx = Tensor::zeros(x.shape);
                let quarter = T::of(0.25);
                for (bc, dys) in dy.data.chunks(ho * wo).enumerate() {
                    let dxs = &mut dx.data[bc * plane..(bc + 1) * plane];
                    for yy in 0..ho {
                        for xx in 0..wo {
                            let g = dys[yy * wo + xx] * quarter;
                            for (dyy, dxx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                dxs[(2 * yy + dyy) * w + 2 * xx + dxx] = g;
                            }
                        }
                    }
                }
                dx
            }
            LayerKind::AddSkip { from } => {
                add_grad(&mut dvals[from], dy.clone());
                dy
            }
        })
    }
}

fn add_grad<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn check_emb<'a, T: Real>(name: &str, emb: Option<&'a Tensor<T>>, b: usize, dim: usize) -> Result<&'a Tensor<T>> {
    let emb = emb.ok_or_else(|| Error::network(name, "layer needs an embedding input"))?;
    if emb.shape != [b, dim, 1, 1] {
        return Err(Error::network(
            name,
            format!("embedding shape {:?}, expected [{b}, {dim}, 1, 1]", emb.shape),
        ));
    }
    Ok(emb)
}

fn check_tokens<'a, T: Real>(name: &str, tokens: Option<&'a Tokens<T>>, b: usize, dim: usize) -> Result<&'a Tokens<T>> {
    let tokens = tokens.ok_or_else(|| Error::network(name, "layer needs condition tokens"))?;
    let [tb, td, tl, tw] = tokens.data.shape;
    if tb != b || td != dim || tw != 1 || tokens.lengths.len() != b {
        return Err(Error::network(
            name,
            format!("token shape {:?}, expected [{b}, {dim}, L, 1]", tokens.data.shape),
        ));
    }
    if tokens.lengths.iter().any(|&l| l == 0 || l > tl) {
        return Err(Error::network(name, "token lengths must be in 1..=max_len"));
    }
    Ok(tokens)
}

/// FiLM `(scale, shift)` per sample: `[B, 2C]`.
fn film_projection<T: Real>(
    params: &ParamStore<T>,
    name: &str,
    channels: usize,
    emb_dim: usize,
    emb: &Tensor<T>,
) -> Result<Vec<T>> {
    let wt = param(params, name, "w", 2 * channels * emb_dim)?;
    let bias = param(params, name, "b", 2 * channels)?;
    let b = emb.batch();
    let mut proj = vec![T::zero(); b * 2 * channels];
    gemm(b, emb_dim, 2 * channels, &emb.data, false, wt, true, &mut proj, T::zero());
    for row in proj.chunks_mut(2 * channels) {
        for (v, &bb) in row.iter_mut().zip(bias) {
            *v += bb;
        }
    }
    Ok(proj)
}

struct Attention<'a, T> {
    channels: usize,
    token_dim: usize,
    heads: usize,
    head_dim: usize,
    wq: &'a [T],
    wk: &'a [T],
    wv: &'a [T],
    wo: &'a [T],
    bo: &'a [T],
}

struct AttentionGrads<T> {
    wq: Vec<T>,
    wk: Vec<T>,
    wv: Vec<T>,
    wo: Vec<T>,
    bo: Vec<T>,
    dx: Vec<T>,
    dtokens: Vec<T>,
}

impl<T: Real> AttentionGrads<T> {
    fn zeros(a: &Attention<T>) -> Self {
        AttentionGrads {
            wq: vec![T::zero(); a.wq.len()],
            wk: vec![T::zero(); a.wk.len()],
            wv: vec![T::zero(); a.wv.len()],
            wo: vec![T::zero(); a.wo.len()],
            bo: vec![T::zero(); a.bo.len()],
            dx: Vec::new(),
            dtokens: Vec::new(),
        }
    }

    fn add(&mut self, o: &AttentionGrads<T>) {
        sum_into(&mut self.wq, [o.wq.clone()]);
        sum_into(&mut self.wk, [o.wk.clone()]);
        sum_into(&mut self.wv, [o.wv.clone()]);
        sum_into(&mut self.wo, [o.wo.clone()]);
        sum_into(&mut self.bo, [o.bo.clone()]);
    }
}

impl<'a, T: Real> Attention<'a, T> {
    fn new(
        params: &'a ParamStore<T>,
        name: &str,
        channels: usize,
        token_dim: usize,
        heads: usize,
        head_dim: usize,
    ) -> Result<Self> {
        let hd = heads * head_dim;
        Ok(Attention {
            channels,
            token_dim,
            heads,
            head_dim,
            wq: param(params, name, "wq", hd * channels)?,
            wk: param(params, name, "wk", hd * token_dim)?,
            wv: param(params, name, "wv", hd * token_dim)?,
            wo: param(params, name, "wo", channels * hd)?,
            bo: param(params, name, "bo", channels)?,
        })
    }

    /// Query, key and value projections of one sample.
    fn project(&self, x: &[T], n: usize, t: &[T], lmax: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
        let hd = self.heads * self.head_dim;
        let mut q = vec![T::zero(); hd * n];
        gemm(hd, self.channels, n, self.wq, false, x, false, &mut q, T::zero());
        let mut k = vec![T::zero(); hd * lmax];
        gemm(hd, self.token_dim, lmax, self.wk, false, t, false, &mut k, T::zero());
        let mut v = vec![T::zero(); hd * lmax];
        gemm(hd, self.token_dim, lmax, self.wv, false, t, false, &mut v, T::zero());
        (q, k, v)
    }

    fn forward(&self, x: &[T], n: usize, tokens: &Tokens<T>, i: usize) -> (Vec<T>, Vec<T>) {
        let lmax = tokens.data.shape[2];
        let len = tokens.lengths[i];
        let t = tokens.data.sample(i);
        let (q, k, v) = self.project(x, n, t, lmax);
        let d = self.head_dim;
        let inv = T::of(1.0 / (d as f64).sqrt());
        let mut probs = vec![T::zero(); self.heads * n * lmax];
        let mut o = vec![T::zero(); self.heads * d * n];
        for h in 0..self.heads {
            let p = &mut probs[h * n * lmax..(h + 1) * n * lmax];
            gemm(n, d, lmax, &q[h * d * n..], true, &k[h * d * lmax..], false, p, T::zero());
            p.iter_mut().for_each(|s| *s *= inv);
            kernels::softmax_rows(p, lmax, len);
            gemm(d, lmax, n, &v[h * d * lmax..], false, p, true, &mut o[h * d * n..], T::zero());
        }
        let mut y = vec![T::zero(); self.channels * n];
        gemm(self.channels, self.heads * d, n, self.wo, false, &o, false, &mut y, T::zero());
        for ch in 0..self.channels {
            for val in &mut y[ch * n..(ch + 1) * n] {
                *val += self.bo[ch];
            }
        }
        (y, probs)
    }

    fn backward(&self, x: &[T], n: usize, tokens: &Tokens<T>, i: usize, probs: &[T], dy: &[T]) -> AttentionGrads<T> {
        let lmax = tokens.data.shape[2];
        let t = tokens.data.sample(i);
        let (q, k, v) = self.project(x, n, t, lmax);
        let d = self.head_dim;
        let hd = self.heads * d;
        let inv = T::of(1.0 / (d as f64).sqrt());
        let mut g = AttentionGrads::zeros(self);

        let mut o = vec![T::zero(); hd * n];
        for h in 0..self.heads {
            let p = &probs[h * n * lmax..(h + 1) * n * lmax];
            gemm(d, lmax, n, &v[h * d * lmax..], false, p, true, &mut o[h * d * n..], T::zero());
        }
        gemm(self.channels, n, hd, dy, false, &o, true, &mut g.wo, T::zero());
        for ch in 0..self.channels {
            g.bo[ch] = dy[ch * n..(ch + 1) * n].iter().copied().sum();
        }
        let mut d_o = vec![T::zero(); hd * n];
        gemm(hd, self.channels, n, self.wo, true, dy, false, &mut d_o, T::zero());

        let mut dq = vec![T::zero(); hd * n];
        let mut dk = vec![T::zero(); hd * lmax];
        let mut dv = vec![T::zero(); hd * lmax];
        let mut dp = vec![T::zero(); n * lmax];
        for h in 0..self.heads {
            let p = &probs[h * n * lmax..(h + 1) * n * lmax];
            let doh = &d_o[h * d * n..(h + 1) * d * n];
            gemm(d, n, lmax, doh, false, p, false, &mut dv[h * d * lmax..], T::zero());
            gemm(n, d, lmax, doh, true, &v[h * d * lmax..], false, &mut dp, T::zero());
            for (prow, dprow) in p.chunks(lmax).zip(dp.chunks_mut(lmax)) {
                let dot: T = prow.iter().zip(dprow.iter()).map(|(&a, &b)| a * b).sum();
                for (a, b) in prow.iter().zip(dprow.iter_mut()) {
                    *b = *a * (*b - dot) * inv;
                }
            }
            gemm(d, lmax, n, &k[h * d * lmax..], false, &dp, true, &mut dq[h * d * n..], T::zero());
            gemm(d, n, lmax, &q[h * d * n..], false, &dp, false, &mut dk[h * d * lmax..], T::zero());
        }
        gemm(hd, n, self.channels, &dq, false, x, true, &mut g.wq, T::zero());
        g.dx = vec![T::zero(); self.channels * n];
        gemm(self.channels, hd, n, self.wq, true, &dq, false, &mut g.dx, T::zero());
        gemm(hd, lmax, self.token_dim, &dk, false, t, true, &mut g.wk, T::zero());
        gemm(hd, lmax, self.token_dim, &dv, false, t, true, &mut g.wv, T::zero());
        g.dtokens = vec![T::zero(); self.token_dim * lmax];
        gemm(self.token_dim, hd, lmax, self.wk, true, &dk, false, &mut g.dtokens, T::zero());
        gemm(self.token_dim, hd, lmax, self.wv, true, &dv, false, &mut g.dtokens, T::one());
        g
    }
}
