//! The `avatar` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::body::{default_template, BodyParams, BodyTemplate, Region, DEFAULT_TEMPLATE_SEED};
use crate::data::palette::{self, SHIRT_COLORS};
use crate::data::{build_dataset, load_dataset, pose_bases, training_views, CaptionSet, VIEW_RESOLUTION};
use crate::distill::{fit_teacher, DistillMode, RenderSetup, Teacher};
use crate::error::{Error, Result};
use crate::gaussians::AttributeMap;
use crate::latent::Latent;
use crate::nn::Checkpoint;
use crate::pipeline::{
    decoder_checkpoint, decoder_from_checkpoint, denoiser_checkpoint, denoiser_from_checkpoint, distill_examples,
    encode_samples, export_ply, load_poses, new_decoder, new_denoiser, realize, tint, train_decoder, train_denoiser,
    turntable, AvatarModel, DecoderTraining, DenoiserTraining, RunConfig, DECODER_FILE, DENOISER_FILE, TEACHER_FILE,
    TEMPLATE_FILE,
};
use crate::render::render;

#[derive(Debug, Parser)]
#[command(name = "avatar", version, about = "Text-conditioned Gaussian avatar generation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding the template, teacher and network checkpoints.
    #[arg(long, global = true, value_name = "DIR")]
    checkpoints: Option<PathBuf>,
    /// Body template file; the built-in template is used otherwise.
    #[arg(long, global = true, value_name = "FILE")]
    template: Option<PathBuf>,
    /// Print training progress every N steps (0 disables).
    #[arg(long, global = true, default_value_t = 100)]
    log_every: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Body template files.
    #[command(subcommand)]
    Template(TemplateCmd),
    /// Procedural training data.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Frozen latent encoder.
    #[command(subcommand)]
    Teacher(TeacherCmd),
    /// Network training.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Sample an avatar for a prompt and render a turntable.
    Generate(GenerateArgs),
    /// Regenerate or recolor one body region of a saved avatar.
    Edit(EditArgs),
    /// Drive a saved avatar with a pose sequence.
    Animate(AnimateArgs),
    /// Render a saved avatar from one camera.
    Render(RenderArgs),
    /// Write a saved avatar's Gaussians as ASCII PLY.
    ExportPly(ExportArgs),
}

#[derive(Debug, Subcommand)]
enum TemplateCmd {
    /// Write the built-in template.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetCmd {
    /// Generate avatars, captions and optional renders.
    Gen {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write four ground-truth views per avatar.
        #[arg(long)]
        renders: bool,
    },
}

#[derive(Debug, Subcommand)]
enum TeacherCmd {
    /// Fit the encoder on a dataset and store it with the template.
    Fit {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum TrainCmd {
    /// Train the latent-to-attribute decoder.
    Decoder(TrainArgs),
    /// Train the conditional denoiser.
    Denoiser(TrainArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// Continue from the existing checkpoint instead of starting fresh.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Sampling steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Classifier-free guidance weight.
    #[arg(long)]
    guidance: Option<f32>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    prompt: Option<String>,
    #[command(flatten)]
    sample: SampleArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EditArgs {
    #[arg(long)]
    latent: PathBuf,
    #[arg(long, value_parser = parse_region)]
    region: Region,
    /// Regenerate the region's latent texels for this prompt.
    #[arg(long)]
    prompt: Option<String>,
    /// Multiply the region's colors: a shirt color name or `r,g,b` in [0,1].
    #[arg(long, value_parser = parse_tint)]
    tint: Option<[f64; 3]>,
    #[command(flatten)]
    sample: SampleArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnimateArgs {
    #[arg(long)]
    latent: PathBuf,
    /// One frame per line: a `w x y z` quaternion per joint.
    #[arg(long)]
    poses: PathBuf,
    /// Shape coefficients, comma separated.
    #[arg(long, value_parser = parse_floats)]
    beta: Option<Vec<f64>>,
    /// Camera yaw in degrees.
    #[arg(long, default_value_t = 0.0)]
    yaw: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long, required_unless_present = "attributes")]
    latent: Option<PathBuf>,
    /// Render an attribute map instead of decoding a latent.
    #[arg(long, conflicts_with = "latent")]
    attributes: Option<PathBuf>,
    /// `front`, `left`, `back`, `right` or a yaw in degrees.
    #[arg(long, default_value = "front", value_parser = parse_camera)]
    camera: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, required_unless_present = "attributes")]
    latent: Option<PathBuf>,
    #[arg(long, conflicts_with = "latent")]
    attributes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_region(s: &str) -> std::result::Result<Region, String> {
    Region::parse(s).map_err(|_| {
        let names: Vec<_> = Region::ALL.iter().map(|r| r.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number `{v}`")))
        .collect()
}

fn parse_tint(s: &str) -> std::result::Result<[f64; 3], String> {
    if let Some(i) = palette::find(&SHIRT_COLORS, s) {
        return Ok(SHIRT_COLORS[i].rgb);
    }
    let v = parse_floats(s)?;
    match v.as_slice() {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([*r, *g, *b]),
        _ => Err("expected a shirt color name or three values in [0,1]".into()),
    }
}

fn parse_camera(s: &str) -> std::result::Result<f64, String> {
    match s {
        "front" => Ok(0.0),
        "left" => Ok(90.0),
        "back" => Ok(180.0),
        "right" => Ok(270.0),
        _ => s
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| "expected front, left, back, right or degrees".into()),
    }
}

/// Parses `args` (program name first) and runs the command. Returns 0 on
/// success, 2 on usage errors and 1 on runtime errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match execute(&cli, config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Config file, then `--set` overrides, then dedicated flags.
fn load_config(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut c = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &g.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{o}` is not KEY=VALUE")))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(d) = &g.checkpoints {
        c.checkpoints = d.clone();
    }
    match &cli.command {
        Command::Generate(a) => apply_sample_args(&mut c, &a.sample),
        Command::Edit(a) => apply_sample_args(&mut c, &a.sample),
        _ => {}
    }
    c.validate()?;
    Ok(c)
}

fn load_template(g: &Global) -> Result<BodyTemplate> {
    match &g.template {
        Some(p) => BodyTemplate::load(p),
        None => Ok(default_template(DEFAULT_TEMPLATE_SEED)),
    }
}

fn apply_sample_args(c: &mut RunConfig, s: &SampleArgs) {
    if let Some(n) = s.steps {
        c.sample_steps = n;
    }
    if let Some(w) = s.guidance {
        c.guidance = w;
    }
}

fn execute(cli: &Cli, config: RunConfig) -> Result<()> {
    let g = &cli.global;
    let ckpt = config.checkpoints.clone();
    match &cli.command {
        Command::Template(TemplateCmd::Gen { out }) => {
            load_template(g)?.save(out)?;
            println!("wrote {}", out.display());
        }
        Command::Dataset(DatasetCmd::Gen { n, out, renders }) => {
            let n = n.unwrap_or(config.dataset_size);
            let out = out.clone().unwrap_or(config.dataset.clone());
            let start = Instant::now();
            let m = build_dataset(&load_template(g)?, n, config.seed, &out, *renders || config.dataset_renders)?;
            println!(
                "wrote {} avatars to {} in {:.1}s",
                m.entries.len(),
                out.display(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::Teacher(TeacherCmd::Fit { dataset }) => {
            let template = load_template(g)?;
            let samples = load_dataset(dataset.as_ref().unwrap_or(&config.dataset))?;
            let maps: Vec<AttributeMap> = samples.into_iter().map(|s| s.attributes).collect();
            let teacher = fit_teacher(&maps, config.latent_channels)?;
            template.save(&ckpt.join(TEMPLATE_FILE))?;
            teacher.save(&ckpt.join(TEACHER_FILE))?;
            println!("fitted teacher on {} maps into {}", maps.len(), ckpt.display());
        }
        Command::Train(TrainCmd::Decoder(a)) => train_decoder_cmd(g, &config, a)?,
        Command::Train(TrainCmd::Denoiser(a)) => train_denoiser_cmd(g, &config, a)?,
        Command::Generate(a) => {
            let model = AvatarModel::load(&ckpt, &config)?;
            let out = a.out.clone().unwrap_or(config.output.clone());
            let latent = model.generate(a.prompt.as_deref(), config.guidance_config(), config.seed)?;
            latent.save(&out.join("latent.tatt"))?;
            write_turntable(&model, &model.decode(&latent)?, &config, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Edit(a) => {
            if a.prompt.is_none() && a.tint.is_none() {
                return Err(Error::invalid("edit needs --prompt, --tint or both"));
            }
            let model = AvatarModel::load(&ckpt, &config)?;
            let out = a.out.clone().unwrap_or(config.output.clone());
            let mut latent = Latent::load(&a.latent)?;
            if let Some(p) = &a.prompt {
                latent = model.edit(&latent, a.region, Some(p), config.guidance_config(), config.seed)?;
            }
            latent.save(&out.join("latent.tatt"))?;
            let mut attrs = model.decode(&latent)?;
            if let Some(t) = a.tint {
                attrs = tint(&model.template, &attrs, a.region, t)?;
            }
            attrs.save(&out.join("attributes.tatt"))?;
            write_turntable(&model, &attrs, &config, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Animate(a) => {
            let model = AvatarModel::load(&ckpt, &config)?;
            let attrs = model.decode(&Latent::load(&a.latent)?)?;
            let beta = a.beta.clone().unwrap_or_else(|| vec![0.0; model.template.num_shape]);
            let frames = load_poses(&a.poses, &model.template, &beta)?;
            let cam = crate::data::view_camera(a.yaw, config.render_resolution)?;
            let start = Instant::now();
            for (i, pose) in frames.iter().enumerate() {
                let set = realize(&model.template, &attrs, pose)?;
                render(&set, &cam)?.0.save(&a.out.join(format!("frame_{i:04}.png")))?;
            }
            println!(
                "rendered {} frames to {} in {:.1}s",
                frames.len(),
                a.out.display(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::Render(a) => {
            let (model, attrs) = load_attributes(&ckpt, &config, a.latent.as_deref(), a.attributes.as_deref())?;
            let set = realize(&model.template, &attrs, &BodyParams::rest(&model.template))?;
            let cam = crate::data::view_camera(a.camera, config.render_resolution)?;
            render(&set, &cam)?.0.save(&a.out)?;
            println!("wrote {}", a.out.display());
        }
        Command::ExportPly(a) => {
            let (model, attrs) = load_attributes(&ckpt, &config, a.latent.as_deref(), a.attributes.as_deref())?;
            let set = realize(&model.template, &attrs, &BodyParams::rest(&model.template))?;
            export_ply(&set, &a.out)?;
            println!("wrote {} Gaussians to {}", set.len(), a.out.display());
        }
    }
    Ok(())
}

fn load_attributes(
    ckpt: &Path,
    config: &RunConfig,
    latent: Option<&Path>,
    attributes: Option<&Path>,
) -> Result<(AvatarModel, AttributeMap)> {
    let model = AvatarModel::load(ckpt, config)?;
    let attrs = match (latent, attributes) {
        (Some(l), _) => model.decode(&Latent::load(l)?)?,
        (None, Some(a)) => AttributeMap::load(a)?,
        (None, None) => return Err(Error::invalid("need --latent or --attributes")),
    };
    Ok((model, attrs))
}

fn write_turntable(model: &AvatarModel, attrs: &AttributeMap, config: &RunConfig, out: &Path) -> Result<()> {
    let set = realize(&model.template, attrs, &BodyParams::rest(&model.template))?;
    for (i, img) in turntable(&set, config.turntable_frames, config.render_resolution)?
        .iter()
        .enumerate()
    {
        img.save(&out.join(format!("view_{i:02}.png")))?;
    }
    Ok(())
}

fn load_teacher(config: &RunConfig) -> Result<(BodyTemplate, Teacher)> {
    let dir = &config.checkpoints;
    let template = BodyTemplate::load(&dir.join(TEMPLATE_FILE))?;
    let teacher = Teacher::load(&dir.join(TEACHER_FILE))?;
    crate::pipeline::check_dimensions(config, &teacher, None, None)?;
    Ok((template, teacher))
}

fn train_decoder_cmd(g: &Global, config: &RunConfig, a: &TrainArgs) -> Result<()> {
    let (template, teacher) = load_teacher(config)?;
    let path = config.checkpoints.join(DECODER_FILE);
    let (decoder, mut params) = if a.resume {
        decoder_from_checkpoint(&Checkpoint::load(&path)?)?
    } else {
        new_decoder(config)?
    };
    crate::pipeline::check_dimensions(config, &teacher, Some(&decoder), None)?;
    let samples = load_dataset(a.dataset.as_ref().unwrap_or(&config.dataset))?;
    let latents = encode_samples(&teacher, &samples)?;
    let examples = distill_examples(&samples, &latents);
    let (bases, cameras);
    let setup = if config.decoder_mode == DistillMode::Render {
        bases = pose_bases(&template)?;
        cameras = training_views(VIEW_RESOLUTION)?;
        Some(RenderSetup {
            bases: &bases,
            cameras: &cameras,
        })
    } else {
        None
    };
    let opts = DecoderTraining {
        steps: a.steps.unwrap_or(config.decoder_steps),
        batch: config.decoder_batch,
        lr: config.decoder_lr,
        seed: config.seed,
        mode: config.decoder_mode,
    };
    let start = Instant::now();
    train_decoder(&decoder, &mut params, &examples, setup.as_ref(), opts, |s, l| {
        if g.log_every > 0 && s % g.log_every == 0 {
            println!(
                "decoder step {s}: loss {:.5} (data {:.5}, feature {:.5}, offset {:.5}) {:.1}s",
                l.total,
                l.data,
                l.feature,
                l.offset,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    decoder_checkpoint(&decoder, &params).save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}

fn train_denoiser_cmd(g: &Global, config: &RunConfig, a: &TrainArgs) -> Result<()> {
    let (template, teacher) = load_teacher(config)?;
    let path = config.checkpoints.join(DENOISER_FILE);
    let (net, mut params) = if a.resume {
        denoiser_from_checkpoint(&Checkpoint::load(&path)?, &template)?
    } else {
        new_denoiser(config, &template)?
    };
    crate::pipeline::check_dimensions(config, &teacher, None, Some(&net))?;
    let samples = load_dataset(a.dataset.as_ref().unwrap_or(&config.dataset))?;
    let latents = encode_samples(&teacher, &samples)?;
    let captions: Vec<CaptionSet> = samples.iter().map(|s| s.captions.clone()).collect();
    let opts = DenoiserTraining {
        steps: a.steps.unwrap_or(config.denoiser_steps),
        batch: config.denoiser_batch,
        lr: config.denoiser_lr,
        seed: config.seed,
        dropout: config.denoiser_dropout,
    };
    let schedule = config.schedule()?;
    let start = Instant::now();
    let mut window = 0.0;
    let mut count = 0;
    train_denoiser(&net, &mut params, &schedule, &latents, &captions, opts, |s, r| {
        window += r.loss;
        count += 1;
        if g.log_every > 0 && (s + 1) % g.log_every == 0 {
            println!(
                "denoiser step {}: mean loss {:.5} {:.1}s",
                s + 1,
                window / count as f64,
                start.elapsed().as_secs_f64()
            );
            window = 0.0;
            count = 0;
        }
    })?;
    denoiser_checkpoint(&net, &params).save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}
