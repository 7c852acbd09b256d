use super::config::RunConfig;
use super::model::{check_dimensions, AvatarModel};
use crate::body::BodyTemplate;
use crate::data::{pose_bases, training_views, CaptionSet, Sample, VIEW_RESOLUTION};
use crate::denoiser::{region_layout, Denoiser, DenoiserConfig, DenoiserExample, DenoiserStep, TextEmbedder, TrainOptions};
use crate::diffusion::NoiseSchedule;
use crate::distill::{fit_teacher, Decoder, DistillExample, DistillLoss, DistillMode, RenderSetup, Teacher};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::nn::ParamStore;
use crate::rng::{mix64, SeededRng};

const BATCH_STREAM: u64 = 0xBA7C;
const CAPTION_STREAM: u64 = 0xCA97;

/// `batch` distinct indices below `n` (with repeats only when `batch > n`),
/// a pure function of `(seed, step)`.
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut rng = SeededRng::new(mix64(seed ^ mix64(step)), BATCH_STREAM);
    let mut pool: Vec<usize> = (0..n).collect();
    (0..batch)
        .map(|i| {
            let k = i % n;
            if k == 0 && i > 0 {
                pool = (0..n).collect();
            }
            let j = k + rng.below(n - k);
            pool.swap(k, j);
            pool[k]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderTraining {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: DistillMode,
}

/// Runs `opts.steps` optimizer steps; the step counter continues from
/// `params.step`, so a resumed run draws the same batches as an
/// uninterrupted one.
pub fn train_decoder(
    decoder: &Decoder,
    params: &mut ParamStore<f32>,
    examples: &[DistillExample],
    setup: Option<&RenderSetup>,
    opts: DecoderTraining,
    mut log: impl FnMut(u64, &DistillLoss),
) -> Result<Vec<DistillLoss>> {
    if examples.is_empty() || opts.batch == 0 {
        return Err(Error::invalid("decoder training needs examples and a positive batch"));
    }
    let mut out = Vec::with_capacity(opts.steps);
    for _ in 0..opts.steps {
        let step = params.step;
        let batch: Vec<DistillExample> = batch_indices(examples.len(), opts.batch, opts.seed, step)
            .into_iter()
            .map(|i| examples[i].clone())
            .collect();
        let loss = decoder.train_step(params, &batch, opts.mode, setup, opts.lr)?;
        log(step, &loss);
        out.push(loss);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserTraining {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub dropout: f64,
}

/// Trains on `(latent, caption set)` pairs. Each sample uses one caption
/// of its set, chosen per step.
pub fn train_denoiser(
    net: &Denoiser,
    params: &mut ParamStore<f32>,
    schedule: &NoiseSchedule,
    latents: &[Latent],
    captions: &[CaptionSet],
    opts: DenoiserTraining,
    mut log: impl FnMut(u64, &DenoiserStep),
) -> Result<Vec<DenoiserStep>> {
    if latents.is_empty() || latents.len() != captions.len() || opts.batch == 0 {
        return Err(Error::invalid("denoiser training needs matching latents and captions and a positive batch"));
    }
    let train = TrainOptions {
        dropout: opts.dropout,
        seed: opts.seed,
        lr: opts.lr,
    };
    let mut out = Vec::with_capacity(opts.steps);
    for _ in 0..opts.steps {
        let step = params.step;
        let mut pick = SeededRng::new(mix64(opts.seed ^ mix64(step)), CAPTION_STREAM);
        let batch: Vec<DenoiserExample> = batch_indices(latents.len(), opts.batch, opts.seed, step)
            .into_iter()
            .map(|i| {
                let all: Vec<&str> = captions[i].all().collect();
                DenoiserExample {
                    latent: latents[i].clone(),
                    caption: Some(all[pick.below(all.len())].to_string()),
                }
            })
            .collect();
        let record = net.train_step(params, schedule, &batch, train, step)?;
        log(step, &record);
        out.push(record);
    }
    Ok(out)
}

pub fn encode_samples(teacher: &Teacher, samples: &[Sample]) -> Result<Vec<Latent>> {
    samples.iter().map(|s| teacher.encode(&s.attributes)).collect()
}

/// Progress reported by [`train_model`].
#[derive(Debug, Clone, Copy)]
pub enum Progress<'a> {
    Teacher,
    Decoder(u64, &'a DistillLoss),
    Denoiser(u64, &'a DenoiserStep),
}

pub fn new_decoder(config: &RunConfig) -> Result<(Decoder, ParamStore<f32>)> {
    let d = Decoder::new(config.latent_channels)?;
    let p = d.init_params(config.seed)?;
    Ok((d, p))
}

pub fn new_denoiser(config: &RunConfig, template: &BodyTemplate) -> Result<(Denoiser, ParamStore<f32>)> {
    let dc = DenoiserConfig {
        latent_channels: config.latent_channels,
        latent_resolution: config.latent_resolution,
        width: config.denoiser_width,
        heads: config.denoiser_heads,
        steps: config.diffusion_steps,
    };
    let net = Denoiser::new(dc, TextEmbedder::default(), region_layout(template, config.latent_resolution)?)?;
    let p = net.init_params(config.seed)?;
    Ok((net, p))
}

/// Distillation examples with render-mode supervision when requested.
pub fn distill_examples(samples: &[Sample], latents: &[Latent]) -> Vec<DistillExample> {
    samples
        .iter()
        .zip(latents)
        .map(|(s, l)| DistillExample {
            latent: l.clone(),
            target: s.attributes.clone(),
            pose: s.spec.pose,
        })
        .collect()
}

/// Fits the teacher, then trains the decoder and the denoiser from scratch.
pub fn train_model(
    template: &BodyTemplate,
    samples: &[Sample],
    config: &RunConfig,
    mut progress: impl FnMut(Progress),
) -> Result<AvatarModel> {
    config.validate()?;
    let maps: Vec<_> = samples.iter().map(|s| s.attributes.clone()).collect();
    let teacher = fit_teacher(&maps, config.latent_channels)?;
    check_dimensions(config, &teacher, None, None)?;
    progress(Progress::Teacher);
    let latents = encode_samples(&teacher, samples)?;

    let (decoder, mut decoder_params) = new_decoder(config)?;
    let examples = distill_examples(samples, &latents);
    let bases;
    let cameras;
    let setup = if config.decoder_mode == DistillMode::Render {
        bases = pose_bases(template)?;
        cameras = training_views(VIEW_RESOLUTION)?;
        Some(RenderSetup {
            bases: &bases,
            cameras: &cameras,
        })
    } else {
        None
    };
    let dopts = DecoderTraining {
        steps: config.decoder_steps,
        batch: config.decoder_batch,
        lr: config.decoder_lr,
        seed: config.seed,
        mode: config.decoder_mode,
    };
    train_decoder(&decoder, &mut decoder_params, &examples, setup.as_ref(), dopts, |s, l| {
        progress(Progress::Decoder(s, l))
    })?;

    let schedule = config.schedule()?;
    let (denoiser, mut denoiser_params) = new_denoiser(config, template)?;
    let captions: Vec<CaptionSet> = samples.iter().map(|s| s.captions.clone()).collect();
    let nopts = DenoiserTraining {
        steps: config.denoiser_steps,
        batch: config.denoiser_batch,
        lr: config.denoiser_lr,
        seed: config.seed,
        dropout: config.denoiser_dropout,
    };
    train_denoiser(&denoiser, &mut denoiser_params, &schedule, &latents, &captions, nopts, |s, r| {
        progress(Progress::Denoiser(s, r))
    })?;
    Ok(AvatarModel {
        template: template.clone(),
        teacher,
        decoder,
        decoder_params,
        denoiser,
        denoiser_params,
        schedule,
    })
}
