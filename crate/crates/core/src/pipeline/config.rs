use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::binio::read_text;
use crate::data::ATTRIBUTE_RESOLUTION;
use crate::diffusion::{GuidanceConfig, NoiseSchedule, BETA_END, BETA_START, DEFAULT_GUIDANCE, DEFAULT_SAMPLE_STEPS, DEFAULT_STEPS};
use crate::distill::{DistillMode, DOWNSAMPLE};
use crate::error::{Error, Result};
use crate::kv;

/// Every tunable of a run. Files use flat `key = value` lines; command-line
/// overrides use the same keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    pub dataset_size: usize,
    pub dataset_renders: bool,
    pub latent_channels: usize,
    pub latent_resolution: usize,
    pub attribute_resolution: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub decoder_mode: DistillMode,
    pub decoder_lr: f64,
    pub decoder_batch: usize,
    pub decoder_steps: usize,
    pub denoiser_width: usize,
    pub denoiser_heads: usize,
    pub denoiser_lr: f64,
    pub denoiser_batch: usize,
    pub denoiser_steps: usize,
    pub denoiser_dropout: f64,
    pub sample_steps: usize,
    pub guidance: f32,
    pub clamp: Option<f32>,
    pub render_resolution: usize,
    pub turntable_frames: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "data".into(),
            checkpoints: "checkpoints".into(),
            output: "out".into(),
            seed: 0,
            dataset_size: 512,
            dataset_renders: false,
            latent_channels: 8,
            latent_resolution: 16,
            attribute_resolution: ATTRIBUTE_RESOLUTION,
            diffusion_steps: DEFAULT_STEPS,
            beta_start: BETA_START,
            beta_end: BETA_END,
            decoder_mode: DistillMode::Attribute,
            decoder_lr: 2e-3,
            decoder_batch: 8,
            decoder_steps: 1200,
            denoiser_width: 32,
            denoiser_heads: 4,
            denoiser_lr: 1e-3,
            denoiser_batch: 16,
            denoiser_steps: 8000,
            denoiser_dropout: 0.2,
            sample_steps: DEFAULT_SAMPLE_STEPS,
            guidance: DEFAULT_GUIDANCE,
            clamp: Some(4.0),
            render_resolution: 128,
            turntable_frames: 4,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

fn mode_name(m: DistillMode) -> &'static str {
    match m {
        DistillMode::Attribute => "attribute",
        DistillMode::Render => "render",
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.into(),
            "checkpoints" => self.checkpoints = value.into(),
            "output" => self.output = value.into(),
            "seed" => self.seed = num(key, value)?,
            "dataset.size" => self.dataset_size = num(key, value)?,
            "dataset.renders" => self.dataset_renders = num(key, value)?,
            "latent.channels" => self.latent_channels = num(key, value)?,
            "latent.resolution" => self.latent_resolution = num(key, value)?,
            "attribute.resolution" => self.attribute_resolution = num(key, value)?,
            "diffusion.steps" => self.diffusion_steps = num(key, value)?,
            "diffusion.beta_start" => self.beta_start = num(key, value)?,
            "diffusion.beta_end" => self.beta_end = num(key, value)?,
            "decoder.mode" => {
                self.decoder_mode = match value {
                    "attribute" => DistillMode::Attribute,
                    "render" => DistillMode::Render,
                    _ => return Err(Error::invalid(format!("decoder.mode must be attribute or render, got `{value}`"))),
                }
            }
            "decoder.lr" => self.decoder_lr = num(key, value)?,
            "decoder.batch" => self.decoder_batch = num(key, value)?,
            "decoder.steps" => self.decoder_steps = num(key, value)?,
            "denoiser.width" => self.denoiser_width = num(key, value)?,
            "denoiser.heads" => self.denoiser_heads = num(key, value)?,
            "denoiser.lr" => self.denoiser_lr = num(key, value)?,
            "denoiser.batch" => self.denoiser_batch = num(key, value)?,
            "denoiser.steps" => self.denoiser_steps = num(key, value)?,
            "denoiser.dropout" => self.denoiser_dropout = num(key, value)?,
            "sample.steps" => self.sample_steps = num(key, value)?,
            "sample.guidance" => self.guidance = num(key, value)?,
            "sample.clamp" => {
                self.clamp = if value == "none" { None } else { Some(num(key, value)?) }
            }
            "render.resolution" => self.render_resolution = num(key, value)?,
            "render.frames" => self.turntable_frames = num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a config file over the defaults.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        for e in kv::parse(text)? {
            c.set(&e.key, &e.value).map_err(|err| Error::parse(e.line, err.to_string()))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_text(&read_text(path)?)
    }

    pub fn to_text(&self) -> String {
        let clamp = self.clamp.map_or("none".to_string(), |c| c.to_string());
        let lines: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.display().to_string()),
            ("checkpoints", self.checkpoints.display().to_string()),
            ("output", self.output.display().to_string()),
            ("seed", self.seed.to_string()),
            ("dataset.size", self.dataset_size.to_string()),
            ("dataset.renders", self.dataset_renders.to_string()),
            ("latent.channels", self.latent_channels.to_string()),
            ("latent.resolution", self.latent_resolution.to_string()),
            ("attribute.resolution", self.attribute_resolution.to_string()),
            ("diffusion.steps", self.diffusion_steps.to_string()),
            ("diffusion.beta_start", self.beta_start.to_string()),
            ("diffusion.beta_end", self.beta_end.to_string()),
            ("decoder.mode", mode_name(self.decoder_mode).to_string()),
            ("decoder.lr", self.decoder_lr.to_string()),
            ("decoder.batch", self.decoder_batch.to_string()),
            ("decoder.steps", self.decoder_steps.to_string()),
            ("denoiser.width", self.denoiser_width.to_string()),
            ("denoiser.heads", self.denoiser_heads.to_string()),
            ("denoiser.lr", self.denoiser_lr.to_string()),
            ("denoiser.batch", self.denoiser_batch.to_string()),
            ("denoiser.steps", self.denoiser_steps.to_string()),
            ("denoiser.dropout", self.denoiser_dropout.to_string()),
            ("sample.steps", self.sample_steps.to_string()),
            ("sample.guidance", self.guidance.to_string()),
            ("sample.clamp", clamp),
            ("render.resolution", self.render_resolution.to_string()),
            ("render.frames", self.turntable_frames.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks that dimensions agree across stages and every numeric
    /// setting is in range.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.attribute_resolution != ATTRIBUTE_RESOLUTION {
            return bad(format!(
                "attribute.resolution must be {ATTRIBUTE_RESOLUTION}, got {}",
                self.attribute_resolution
            ));
        }
        if self.latent_resolution * DOWNSAMPLE != self.attribute_resolution {
            return bad(format!(
                "latent.resolution {} times {DOWNSAMPLE} does not equal attribute.resolution {}",
                self.latent_resolution, self.attribute_resolution
            ));
        }
        if !(1..=14).contains(&self.latent_channels) {
            return bad(format!("latent.channels must be in 1..=14, got {}", self.latent_channels));
        }
        if self.denoiser_width == 0 || self.denoiser_heads == 0 || self.denoiser_width % self.denoiser_heads != 0 {
            return bad(format!(
                "denoiser.width {} must be a positive multiple of denoiser.heads {}",
                self.denoiser_width, self.denoiser_heads
            ));
        }
        if self.decoder_batch == 0 || self.denoiser_batch == 0 || self.dataset_size == 0 {
            return bad("batch sizes and dataset.size must be at least 1".into());
        }
        if !(self.decoder_lr > 0.0 && self.denoiser_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.denoiser_dropout) {
            return bad(format!("denoiser.dropout must be in [0,1], got {}", self.denoiser_dropout));
        }
        if self.render_resolution < 8 || self.turntable_frames == 0 {
            return bad("render.resolution must be ≥ 8 and render.frames ≥ 1".into());
        }
        let schedule = self.schedule()?;
        self.guidance_config().validate(&schedule)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    pub fn guidance_config(&self) -> GuidanceConfig {
        GuidanceConfig {
            weight: self.guidance,
            sample_steps: self.sample_steps,
            clamp: self.clamp,
        }
    }
}
