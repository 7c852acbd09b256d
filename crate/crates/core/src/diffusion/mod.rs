//! DDPM noise schedule, x̂₀-parameterized ancestral sampling with
//! classifier-free guidance, and masked (blended-latent) inpainting.
//!
//! Sampling draws its initial state and per-step noise from
//! `SeededRng::new(seed, 0)`; inpainting re-noises the background from
//! `SeededRng::new(seed, 1)`, so an all-foreground mask reproduces
//! [`sample`] exactly.

mod schedule;
#[cfg(test)]
mod tests;

pub use schedule::{NoiseSchedule, Posterior, BETA_END, BETA_START, DEFAULT_STEPS};

use crate::error::{Error, Result};
use crate::gaussians::RegionMask;
use crate::latent::Latent;
use crate::rng::SeededRng;

pub const DEFAULT_GUIDANCE: f32 = 3.0;
pub const DEFAULT_SAMPLE_STEPS: usize = 100;

/// Anything that predicts the clean latent from a noisy one.
pub trait X0Model {
    type Cond: ?Sized;

    fn predict_x0(&self, x_t: &Latent, t: usize, cond: &Self::Cond) -> Result<Latent>;

    /// Conditional and unconditional predictions, in that order. Models that
    /// can batch the two passes override this.
    fn predict_x0_pair(
        &self,
        x_t: &Latent,
        t: usize,
        cond: &Self::Cond,
        null: &Self::Cond,
    ) -> Result<(Latent, Latent)> {
        Ok((self.predict_x0(x_t, t, cond)?, self.predict_x0(x_t, t, null)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub weight: f32,
    pub sample_steps: usize,
    /// Symmetric bound applied to the guided prediction.
    pub clamp: Option<f32>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            weight: DEFAULT_GUIDANCE,
            sample_steps: DEFAULT_SAMPLE_STEPS,
            clamp: None,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::invalid(format!("guidance weight must be ≥ 0, got {}", self.weight)));
        }
        if self.sample_steps == 0 || self.sample_steps > schedule.steps {
            return Err(Error::invalid(format!(
                "sample steps {} outside 1..={}",
                self.sample_steps, schedule.steps
            )));
        }
        if let Some(c) = self.clamp {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("x0 clamp must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// `null + w·(cond − null)`, with the optional clamp applied last.
pub fn guided_x0<M: X0Model + ?Sized>(
    model: &M,
    x_t: &Latent,
    t: usize,
    cond: &M::Cond,
    null: &M::Cond,
    weight: f32,
    clamp: Option<f32>,
) -> Result<Latent> {
    if !(weight >= 0.0) {
        return Err(Error::invalid(format!("guidance weight must be ≥ 0, got {weight}")));
    }
    let mut out = if weight == 0.0 {
        model.predict_x0(x_t, t, null)?
    } else if weight == 1.0 {
        model.predict_x0(x_t, t, cond)?
    } else {
        let (c, n) = model.predict_x0_pair(x_t, t, cond, null)?;
        check_shape(&c, x_t)?;
        check_shape(&n, x_t)?;
        let mut out = n;
        for (o, &cv) in out.data.iter_mut().zip(&c.data) {
            *o += weight * (cv - *o);
        }
        out
    };
    check_shape(&out, x_t)?;
    if let Some(b) = clamp {
        for v in &mut out.data {
            *v = v.clamp(-b, b);
        }
    }
    Ok(out)
}

fn check_shape(pred: &Latent, x_t: &Latent) -> Result<()> {
    if pred.shape() != x_t.shape() {
        return Err(Error::State(format!(
            "model returned shape {:?} for input {:?}",
            pred.shape(),
            x_t.shape()
        )));
    }
    Ok(())
}

/// One ancestral step from `t` to `t_prev`; `z` is ignored when the
/// posterior variance is zero.
fn posterior_step(p: Posterior, x0: &Latent, x_t: &mut Latent, z: Option<&[f32]>) {
    let sd = p.variance.sqrt();
    for (i, v) in x_t.data.iter_mut().enumerate() {
        let mut next = p.coef_x0 * x0.data[i] as f64 + p.coef_xt * *v as f64;
        if let Some(z) = z {
            next += sd * z[i] as f64;
        }
        *v = next as f32;
    }
}

struct Sampler<'a, M: X0Model + ?Sized> {
    model: &'a M,
    schedule: &'a NoiseSchedule,
    cond: &'a M::Cond,
    null: &'a M::Cond,
    guidance: GuidanceConfig,
}

impl<M: X0Model + ?Sized> Sampler<'_, M> {
    /// Runs the reverse chain, calling `blend(x, t_prev)` after every step.
    fn run(
        &self,
        shape: [usize; 3],
        seed: u64,
        mut blend: impl FnMut(&mut Latent, usize),
    ) -> Result<Latent> {
        self.guidance.validate(self.schedule)?;
        let [c, h, w] = shape;
        if c * h * w == 0 {
            return Err(Error::invalid("latent shape must be non-empty"));
        }
        let n = c * h * w;
        let mut rng = SeededRng::new(seed, 0);
        let mut x = Latent::from_data(c, h, w, rng.normal_vec_f32(n))?;
        let steps = self.schedule.sampling_timesteps(self.guidance.sample_steps)?;
        for (i, &t) in steps.iter().enumerate() {
            let t_prev = steps.get(i + 1).copied().unwrap_or(0);
            let x0 = guided_x0(
                self.model,
                &x,
                t,
                self.cond,
                self.null,
                self.guidance.weight,
                self.guidance.clamp,
            )?;
            let p = self.schedule.posterior(t, t_prev);
            if t_prev > 0 {
                let z = rng.normal_vec_f32(n);
                posterior_step(p, &x0, &mut x, Some(&z));
            } else {
                posterior_step(p, &x0, &mut x, None);
            }
            blend(&mut x, t_prev);
        }
        Ok(x)
    }
}

/// Draws a latent of `shape` (`[C, H, W]`) from the guided reverse chain.
pub fn sample<M: X0Model + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    shape: [usize; 3],
    cond: &M::Cond,
    null: &M::Cond,
    guidance: GuidanceConfig,
    seed: u64,
) -> Result<Latent> {
    Sampler {
        model,
        schedule,
        cond,
        null,
        guidance,
    }
    .run(shape, seed, |_, _| {})
}

/// Regenerates the texels under `mask_fg` while keeping the rest of
/// `background`. After every step the unmasked texels are replaced by the
/// background re-noised to the new timestep; the last step blends in the
/// clean background, so unmasked texels come back bit-for-bit.
pub fn inpaint_sample<M: X0Model + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    background: &Latent,
    mask_fg: &RegionMask,
    cond: &M::Cond,
    null: &M::Cond,
    guidance: GuidanceConfig,
    seed: u64,
) -> Result<Latent> {
    if mask_fg.resolution != background.width
        || mask_fg.resolution != background.height
        || mask_fg.data.len() != background.plane()
    {
        return Err(Error::invalid(format!(
            "mask {0}×{0} does not match latent {1}×{2}",
            mask_fg.resolution, background.height, background.width
        )));
    }
    let plane = background.plane();
    let mut bg_rng = SeededRng::new(seed, 1);
    let mut failure = None;
    let out = Sampler {
        model,
        schedule,
        cond,
        null,
        guidance,
    }
    .run(background.shape(), seed, |x, t_prev| {
        let bg_t = if t_prev == 0 {
            background.clone()
        } else {
            let e = bg_rng.normal_vec_f32(background.data.len());
            match schedule.forward_noise(background, t_prev, &e) {
                Ok(b) => b,
                Err(err) => {
                    failure.get_or_insert(err);
                    return;
                }
            }
        };
        for (i, v) in x.data.iter_mut().enumerate() {
            if mask_fg.data[i % plane] == 0 {
                *v = bg_t.data[i];
            }
        }
    })?;
    match failure {
        Some(err) => Err(err),
        None => Ok(out),
    }
}
