use crate::error::{Error, Result};
use crate::latent::Latent;

pub const DEFAULT_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Linear-beta DDPM schedule. Tables are indexed by timestep `0..=T`;
/// `t = 0` is the clean boundary with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    /// `β_t`; entry 0 is 0.
    pub betas: Vec<f32>,
    pub alpha_bar: Vec<f32>,
    /// `α(t) = √ᾱ_t`.
    pub alpha: Vec<f32>,
    /// `σ(t) = √(1 − ᾱ_t)`.
    pub sigma: Vec<f32>,
    /// Single-step posterior `q(x_{t−1} | x_t, x̂_0)` coefficients.
    pub coef_x0: Vec<f32>,
    pub coef_xt: Vec<f32>,
    pub posterior_var: Vec<f32>,
    alpha_bar_f64: Vec<f64>,
}

/// Coefficients of the posterior between two timesteps `t' < t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub coef_x0: f64,
    pub coef_xt: f64,
    pub variance: f64,
}

impl NoiseSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        Self::linear(steps, BETA_START, BETA_END)
    }

    /// Betas spaced linearly from `beta_start` at `t = 1` to `beta_end` at `t = T`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("schedule needs at least 2 steps, got {steps}")));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "betas must satisfy 0 < start ≤ end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let mut betas = vec![0.0f64; steps + 1];
        for (t, b) in betas.iter_mut().enumerate().skip(1) {
            *b = beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64;
        }
        let mut alpha_bar = vec![1.0f64; steps + 1];
        for t in 1..=steps {
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - betas[t]);
        }
        let mut s = NoiseSchedule {
            steps,
            betas: betas.iter().map(|&b| b as f32).collect(),
            alpha_bar: alpha_bar.iter().map(|&a| a as f32).collect(),
            alpha: alpha_bar.iter().map(|&a| a.sqrt() as f32).collect(),
            sigma: alpha_bar.iter().map(|&a| (1.0 - a).sqrt() as f32).collect(),
            coef_x0: vec![0.0; steps + 1],
            coef_xt: vec![0.0; steps + 1],
            posterior_var: vec![0.0; steps + 1],
            alpha_bar_f64: alpha_bar,
        };
        for t in 1..=steps {
            let p = s.posterior(t, t - 1);
            s.coef_x0[t] = p.coef_x0 as f32;
            s.coef_xt[t] = p.coef_xt as f32;
            s.posterior_var[t] = p.variance as f32;
        }
        Ok(s)
    }

    /// Posterior of `x_{t'}` given `x_t` and `x̂_0`, for `t' < t`.
    pub fn posterior(&self, t: usize, t_prev: usize) -> Posterior {
        debug_assert!(t_prev < t && t <= self.steps);
        let ab_t = self.alpha_bar_f64[t];
        let ab_p = self.alpha_bar_f64[t_prev];
        let step_alpha = ab_t / ab_p;
        let step_beta = 1.0 - step_alpha;
        let denom = 1.0 - ab_t;
        Posterior {
            coef_x0: ab_p.sqrt() * step_beta / denom,
            coef_xt: step_alpha.sqrt() * (1.0 - ab_p) / denom,
            variance: step_beta * (1.0 - ab_p) / denom,
        }
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// `α(t)·f_0 + σ(t)·e`. Accepts the clean boundary `t = 0`, where the
    /// result is `f_0`.
    pub fn forward_noise(&self, f0: &Latent, t: usize, e: &[f32]) -> Result<Latent> {
        if t > self.steps {
            return Err(Error::invalid(format!("timestep {t} outside 0..={}", self.steps)));
        }
        if e.len() != f0.data.len() {
            return Err(Error::invalid("noise must be shaped like the latent"));
        }
        let (a, s) = (self.alpha[t], self.sigma[t]);
        let mut out = f0.clone();
        if t > 0 {
            for (o, &n) in out.data.iter_mut().zip(e) {
                *o = a * *o + s * n;
            }
        }
        Ok(out)
    }

    /// `count` timesteps from `T` down to 1 on a uniform stride, both ends
    /// included.
    pub fn sampling_timesteps(&self, count: usize) -> Result<Vec<usize>> {
        if count == 0 || count > self.steps {
            return Err(Error::invalid(format!("sample steps {count} outside 1..={}", self.steps)));
        }
        if count == 1 {
            return Ok(vec![self.steps]);
        }
        let span = (self.steps - 1) as f64;
        Ok((0..count)
            .map(|i| (self.steps as f64 - span * i as f64 / (count - 1) as f64).round() as usize)
            .collect())
    }
}
