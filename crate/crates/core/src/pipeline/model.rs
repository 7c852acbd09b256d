use std::path::Path;

use super::config::RunConfig;
use crate::body::{BodyTemplate, Region};
use crate::denoiser::{region_layout, Denoiser, DenoiserConfig, DenoiserModel, TextEmbedder};
use crate::diffusion::{inpaint_sample, sample, GuidanceConfig, NoiseSchedule};
use crate::distill::{Decoder, Teacher};
use crate::error::{Error, Result};
use crate::gaussians::{region_mask, AttributeMap};
use crate::latent::Latent;
use crate::nn::{Checkpoint, Network, ParamStore};

pub const TEMPLATE_FILE: &str = "template.tbdy";
pub const TEACHER_FILE: &str = "teacher.tpca";
pub const DECODER_FILE: &str = "decoder.tckp";
pub const DENOISER_FILE: &str = "denoiser.tckp";

fn check_params(networks: &[&Network], params: &ParamStore<f32>) -> Result<()> {
    for net in networks {
        for (name, shape) in net.param_shapes() {
            let p = params
                .params
                .get(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter `{name}`")))?;
            if p.shape != shape {
                return Err(Error::format(
                    "checkpoint",
                    format!("parameter `{name}` has shape {:?}, expected {shape:?}", p.shape),
                ));
            }
        }
    }
    Ok(())
}

fn meta_num<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    let v = ck.meta(key)?;
    v.parse()
        .map_err(|_| Error::format("checkpoint", format!("bad metadata `{key}` = `{v}`")))
}

pub fn decoder_checkpoint(decoder: &Decoder, params: &ParamStore<f32>) -> Checkpoint {
    let mut ck = Checkpoint::new(params.clone());
    ck.metadata.insert("kind".into(), "decoder".into());
    ck.metadata
        .insert("latent_channels".into(), decoder.latent_channels.to_string());
    ck
}

pub fn decoder_from_checkpoint(ck: &Checkpoint) -> Result<(Decoder, ParamStore<f32>)> {
    if ck.meta("kind")? != "decoder" {
        return Err(Error::format("checkpoint", "not a decoder checkpoint"));
    }
    let decoder = Decoder::new(meta_num(ck, "latent_channels")?)?;
    check_params(&[&decoder.trunk, &decoder.geometry, &decoder.texture], &ck.params)?;
    Ok((decoder, ck.params.clone()))
}

/// Stores the network dimensions and the vocabulary next to the weights.
pub fn denoiser_checkpoint(net: &Denoiser, params: &ParamStore<f32>) -> Checkpoint {
    let c = net.config;
    let mut ck = Checkpoint::new(params.clone());
    let m = &mut ck.metadata;
    m.insert("kind".into(), "denoiser".into());
    m.insert("latent_channels".into(), c.latent_channels.to_string());
    m.insert("latent_resolution".into(), c.latent_resolution.to_string());
    m.insert("width".into(), c.width.to_string());
    m.insert("heads".into(), c.heads.to_string());
    m.insert("steps".into(), c.steps.to_string());
    m.insert("vocabulary".into(), net.embedder.vocab.join(" "));
    ck
}

/// The region layout is not stored; it is rebuilt from `template`.
pub fn denoiser_from_checkpoint(ck: &Checkpoint, template: &BodyTemplate) -> Result<(Denoiser, ParamStore<f32>)> {
    if ck.meta("kind")? != "denoiser" {
        return Err(Error::format("checkpoint", "not a denoiser checkpoint"));
    }
    let config = DenoiserConfig {
        latent_channels: meta_num(ck, "latent_channels")?,
        latent_resolution: meta_num(ck, "latent_resolution")?,
        width: meta_num(ck, "width")?,
        heads: meta_num(ck, "heads")?,
        steps: meta_num(ck, "steps")?,
    };
    let vocab: Vec<String> = ck.meta("vocabulary")?.split_whitespace().map(String::from).collect();
    if vocab.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::format("checkpoint", "vocabulary is not sorted and unique"));
    }
    let layout = region_layout(template, config.latent_resolution)?;
    let net = Denoiser::new(config, TextEmbedder::new(vocab), layout)?;
    check_params(&[&net.time, &net.main], &ck.params)?;
    let table = ck.params.get(crate::denoiser::EMBED_PARAM)?;
    if table.len() != net.embedder.table_rows() * net.embedder.dim {
        return Err(Error::format("checkpoint", "embedding table does not match the vocabulary"));
    }
    Ok((net, ck.params.clone()))
}

/// Everything needed to generate, edit and render avatars.
#[derive(Debug, Clone)]
pub struct AvatarModel {
    pub template: BodyTemplate,
    pub teacher: Teacher,
    pub decoder: Decoder,
    pub decoder_params: ParamStore<f32>,
    pub denoiser: Denoiser,
    pub denoiser_params: ParamStore<f32>,
    pub schedule: NoiseSchedule,
}

/// Fails if `config` disagrees with a trained component.
pub fn check_dimensions(
    config: &RunConfig,
    teacher: &Teacher,
    decoder: Option<&Decoder>,
    denoiser: Option<&Denoiser>,
) -> Result<()> {
    let mismatch = |what: &str, cfg: usize, found: usize| {
        Err(Error::invalid(format!("config {what} = {cfg} but the trained model has {found}")))
    };
    if teacher.latent_channels != config.latent_channels {
        return mismatch("latent.channels", config.latent_channels, teacher.latent_channels);
    }
    if teacher.latent_resolution() != config.latent_resolution {
        return mismatch("latent.resolution", config.latent_resolution, teacher.latent_resolution());
    }
    if let Some(d) = decoder {
        if d.latent_channels != config.latent_channels {
            return mismatch("latent.channels", config.latent_channels, d.latent_channels);
        }
    }
    if let Some(n) = denoiser {
        let c = n.config;
        if c.latent_channels != config.latent_channels {
            return mismatch("latent.channels", config.latent_channels, c.latent_channels);
        }
        if c.latent_resolution != config.latent_resolution {
            return mismatch("latent.resolution", config.latent_resolution, c.latent_resolution);
        }
        if c.steps != config.diffusion_steps {
            return mismatch("diffusion.steps", config.diffusion_steps, c.steps);
        }
    }
    Ok(())
}

impl AvatarModel {
    /// Loads all four artifacts from `dir`. The config is validated before
    /// any file is read.
    pub fn load(dir: &Path, config: &RunConfig) -> Result<AvatarModel> {
        config.validate()?;
        let template = BodyTemplate::load(&dir.join(TEMPLATE_FILE))?;
        let teacher = Teacher::load(&dir.join(TEACHER_FILE))?;
        let (decoder, decoder_params) = decoder_from_checkpoint(&Checkpoint::load(&dir.join(DECODER_FILE))?)?;
        let (denoiser, denoiser_params) =
            denoiser_from_checkpoint(&Checkpoint::load(&dir.join(DENOISER_FILE))?, &template)?;
        check_dimensions(config, &teacher, Some(&decoder), Some(&denoiser))?;
        Ok(AvatarModel {
            template,
            teacher,
            decoder,
            decoder_params,
            denoiser,
            denoiser_params,
            schedule: config.schedule()?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.template.save(&dir.join(TEMPLATE_FILE))?;
        self.teacher.save(&dir.join(TEACHER_FILE))?;
        decoder_checkpoint(&self.decoder, &self.decoder_params).save(&dir.join(DECODER_FILE))?;
        denoiser_checkpoint(&self.denoiser, &self.denoiser_params).save(&dir.join(DENOISER_FILE))
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        let c = self.denoiser.config;
        [c.latent_channels, c.latent_resolution, c.latent_resolution]
    }

    fn model(&self) -> DenoiserModel<'_> {
        DenoiserModel {
            net: &self.denoiser,
            params: &self.denoiser_params,
        }
    }

    /// Samples a latent for `prompt` (`None` samples unconditionally).
    pub fn generate(&self, prompt: Option<&str>, guidance: GuidanceConfig, seed: u64) -> Result<Latent> {
        let cond = self.denoiser.embedder.token_ids(prompt);
        let null = self.denoiser.embedder.token_ids(None);
        sample(&self.model(), &self.schedule, self.latent_shape(), &cond, &null, guidance, seed)
    }

    /// Regenerates the latent texels of `region` for `prompt`, keeping the
    /// rest of `latent`.
    pub fn edit(
        &self,
        latent: &Latent,
        region: Region,
        prompt: Option<&str>,
        guidance: GuidanceConfig,
        seed: u64,
    ) -> Result<Latent> {
        let mask = region_mask(&self.template, region, latent.height)?;
        let cond = self.denoiser.embedder.token_ids(prompt);
        let null = self.denoiser.embedder.token_ids(None);
        inpaint_sample(&self.model(), &self.schedule, latent, &mask, &cond, &null, guidance, seed)
    }

    pub fn decode(&self, latent: &Latent) -> Result<AttributeMap> {
        if latent.shape() != self.latent_shape() {
            return Err(Error::invalid(format!(
                "latent shape {:?} does not match the model's {:?}",
                latent.shape(),
                self.latent_shape()
            )));
        }
        self.decoder.decode(&self.decoder_params, latent)
    }
}
