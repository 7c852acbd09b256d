use super::*;
use proptest::prelude::*;

struct Constant {
    null: Latent,
    cond: Latent,
}

impl X0Model for Constant {
    type Cond = bool;
    fn predict_x0(&self, _x: &Latent, _t: usize, cond: &bool) -> Result<Latent> {
        Ok(if *cond { self.cond.clone() } else { self.null.clone() })
    }
}

/// Returns the same latent regardless of input.
struct Oracle(Latent);

impl X0Model for Oracle {
    type Cond = ();
    fn predict_x0(&self, _x: &Latent, _t: usize, _c: &()) -> Result<Latent> {
        Ok(self.0.clone())
    }
}

/// Input-dependent toy model so sampling trajectories depend on the state.
struct Shrink;

impl X0Model for Shrink {
    type Cond = f32;
    fn predict_x0(&self, x: &Latent, t: usize, c: &f32) -> Result<Latent> {
        let mut out = x.clone();
        for v in &mut out.data {
            *v = 0.5 * (*v).tanh() + *c + 1e-4 * t as f32;
        }
        Ok(out)
    }
}

fn latent(c: usize, h: usize, w: usize, f: impl Fn(usize) -> f32) -> Latent {
    Latent::from_data(c, h, w, (0..c * h * w).map(f).collect()).unwrap()
}

#[test]
fn schedule_matches_scalar_product() {
    let s = NoiseSchedule::new(1000).unwrap();
    let mut prod = 1.0f64;
    for t in 1..=1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * (t as f64 - 1.0) / 999.0;
        prod *= 1.0 - beta;
        assert!((s.alpha_bar[t] as f64 - prod).abs() < 1e-6 * prod.max(1e-3));
    }
    assert!(s.alpha_bar[1000] < 2e-2);
    assert_eq!(s.alpha[0], 1.0);
    assert_eq!(s.sigma[0], 0.0);
    for t in 0..=1000 {
        let a = s.alpha[t] as f64;
        let g = s.sigma[t] as f64;
        assert!((a * a + g * g - 1.0).abs() < 1e-6);
    }
    for t in 2..=1000 {
        assert!(s.betas[t] > s.betas[t - 1]);
        assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    }
    assert!(s.betas[1] > 0.0 && s.betas[1000] < 1.0);
    assert!(NoiseSchedule::new(1).is_err());
}

#[test]
fn single_step_posterior_matches_textbook_form() {
    let s = NoiseSchedule::new(1000).unwrap();
    let beta = |t: usize| 1e-4 + (0.02 - 1e-4) * (t as f64 - 1.0) / 999.0;
    let alpha_bar = |t: usize| (1..=t).map(|k| 1.0 - beta(k)).product::<f64>();
    for &t in &[2usize, 10, 500, 1000] {
        let ab = alpha_bar(t);
        let abp = alpha_bar(t - 1);
        let b = beta(t);
        let cx0 = abp.sqrt() * b / (1.0 - ab);
        let cxt = (1.0 - b).sqrt() * (1.0 - abp) / (1.0 - ab);
        let var = b * (1.0 - abp) / (1.0 - ab);
        assert!((s.coef_x0[t] as f64 - cx0).abs() < 1e-5 * cx0, "t={t}");
        assert!((s.coef_xt[t] as f64 - cxt).abs() < 1e-5 * cxt, "t={t}");
        assert!((s.posterior_var[t] as f64 - var).abs() < 1e-5 * var, "t={t}");
    }
    let p = s.posterior(1, 0);
    assert_eq!(p.coef_x0, 1.0);
    assert_eq!(p.coef_xt, 0.0);
    assert_eq!(p.variance, 0.0);
}

#[test]
fn forward_noise_boundaries_and_errors() {
    let s = NoiseSchedule::new(1000).unwrap();
    let f0 = latent(2, 2, 2, |i| i as f32 - 3.0);
    let e = latent(2, 2, 2, |i| (i as f32 * 0.7).sin()).data;
    assert_eq!(s.forward_noise(&f0, 0, &e).unwrap(), f0);
    let zero = Latent::zeros(2, 2, 2);
    let out = s.forward_noise(&zero, 400, &e).unwrap();
    for (o, n) in out.data.iter().zip(&e) {
        assert_eq!(*o, s.sigma[400] * n);
    }
    let t = 250;
    let out = s.forward_noise(&f0, t, &e).unwrap();
    for i in 0..8 {
        assert_eq!(out.data[i], s.alpha[t] * f0.data[i] + s.sigma[t] * e[i]);
    }
    assert!(s.forward_noise(&f0, 1001, &e).is_err());
    assert!(s.forward_noise(&f0, 10, &e[..7]).is_err());
}

#[test]
fn forward_noise_statistics() {
    let s = NoiseSchedule::new(1000).unwrap();
    let mut rng = SeededRng::new(11, 0);
    let n = 10_000;
    for &t in &[50usize, 300, 900] {
        let f0 = Latent::from_data(1, 1, n, vec![0.8; n]).unwrap();
        let e = rng.normal_vec_f32(n);
        let ft = s.forward_noise(&f0, t, &e).unwrap();
        let mean = ft.data.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = ft.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sig2 = (s.sigma[t] as f64).powi(2);
        assert!((var / sig2 - 1.0).abs() < 0.03, "t={t} var {var} vs {sig2}");
        let expect_mean = s.alpha[t] as f64 * 0.8;
        assert!((mean - expect_mean).abs() < 4.0 * (sig2 / n as f64).sqrt());
    }
}

#[test]
fn timestep_subsequence() {
    let s = NoiseSchedule::new(1000).unwrap();
    let ts = s.sampling_timesteps(100).unwrap();
    assert_eq!(ts.len(), 100);
    assert_eq!(ts[0], 1000);
    assert_eq!(*ts.last().unwrap(), 1);
    assert!(ts.windows(2).all(|w| w[0] > w[1]));
    let full = s.sampling_timesteps(1000).unwrap();
    assert_eq!(full, (1..=1000).rev().collect::<Vec<_>>());
    assert!(s.sampling_timesteps(0).is_err());
    assert!(s.sampling_timesteps(1001).is_err());
}

#[test]
fn guidance_closed_forms() {
    let a = latent(1, 2, 2, |i| i as f32 * 0.25 - 0.3);
    let b = latent(1, 2, 2, |i| 1.0 - i as f32 * 0.5);
    let m = Constant {
        null: a.clone(),
        cond: b.clone(),
    };
    let x = Latent::zeros(1, 2, 2);
    assert_eq!(guided_x0(&m, &x, 5, &true, &false, 0.0, None).unwrap(), a);
    assert_eq!(guided_x0(&m, &x, 5, &true, &false, 1.0, None).unwrap(), b);
    let g = guided_x0(&m, &x, 5, &true, &false, 3.0, None).unwrap();
    for i in 0..4 {
        assert_eq!(g.data[i], a.data[i] + 3.0 * (b.data[i] - a.data[i]));
    }
    let c = guided_x0(&m, &x, 5, &true, &false, 3.0, Some(0.5)).unwrap();
    assert!(c.data.iter().all(|v| v.abs() <= 0.5));
    assert!(guided_x0(&m, &x, 5, &true, &false, -1.0, None).is_err());
}

proptest! {
    #[test]
    fn guidance_is_affine_in_weight(w0 in 0.0f32..4.0, dw in 0.1f32..2.0, seed in 0u64..100) {
        let mut rng = SeededRng::new(seed, 0);
        let a = Latent::from_data(1, 2, 3, rng.normal_vec_f32(6)).unwrap();
        let b = Latent::from_data(1, 2, 3, rng.normal_vec_f32(6)).unwrap();
        let m = Constant { null: a, cond: b };
        let x = Latent::zeros(1, 2, 3);
        let g0 = guided_x0(&m, &x, 1, &true, &false, w0, None).unwrap();
        let g1 = guided_x0(&m, &x, 1, &true, &false, w0 + dw, None).unwrap();
        let g2 = guided_x0(&m, &x, 1, &true, &false, w0 + 2.0 * dw, None).unwrap();
        for i in 0..6 {
            let mid = 0.5 * (g0.data[i] + g2.data[i]);
            prop_assert!((g1.data[i] - mid).abs() < 1e-4 * (1.0 + g1.data[i].abs()));
        }
    }

    #[test]
    fn oracle_recovery_any_seed(seed in any::<u64>()) {
        let s = NoiseSchedule::new(1000).unwrap();
        let f0 = latent(2, 3, 3, |i| (i as f32 * 1.3).sin() * 2.0);
        let cfg = GuidanceConfig { weight: 3.0, sample_steps: 20, clamp: None };
        let out = sample(&Oracle(f0.clone()), &s, [2, 3, 3], &(), &(), cfg, seed).unwrap();
        for (o, f) in out.data.iter().zip(&f0.data) {
            prop_assert!((o - f).abs() < 1e-3);
        }
    }
}

#[test]
fn constant_oracle_is_returned_exactly() {
    let s = NoiseSchedule::new(1000).unwrap();
    let f = latent(3, 4, 4, |i| (i % 7) as f32 * 0.37 - 1.0);
    let out = sample(&Oracle(f.clone()), &s, [3, 4, 4], &(), &(), GuidanceConfig::default(), 9).unwrap();
    for (o, v) in out.data.iter().zip(&f.data) {
        assert!((o - v).abs() < 1e-4);
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let s = NoiseSchedule::new(1000).unwrap();
    let cfg = GuidanceConfig {
        sample_steps: 25,
        ..GuidanceConfig::default()
    };
    let a = sample(&Shrink, &s, [2, 4, 4], &0.3, &0.0, cfg, 42).unwrap();
    let b = sample(&Shrink, &s, [2, 4, 4], &0.3, &0.0, cfg, 42).unwrap();
    let c = sample(&Shrink, &s, [2, 4, 4], &0.3, &0.0, cfg, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.data.iter().all(|v| v.is_finite()));
}

#[test]
fn full_stride_sampling_matches_manual_chain() {
    let s = NoiseSchedule::new(50).unwrap();
    let cfg = GuidanceConfig {
        weight: 2.0,
        sample_steps: 50,
        clamp: None,
    };
    let got = sample(&Shrink, &s, [1, 2, 2], &0.2, &0.0, cfg, 5).unwrap();
    let mut rng = SeededRng::new(5, 0);
    let mut x = Latent::from_data(1, 2, 2, rng.normal_vec_f32(4)).unwrap();
    for t in (1..=50).rev() {
        let x0 = guided_x0(&Shrink, &x, t, &0.2, &0.0, 2.0, None).unwrap();
        let cx0 = s.coef_x0[t] as f64;
        let cxt = s.coef_xt[t] as f64;
        let sd = (s.posterior_var[t] as f64).sqrt();
        let z = if t > 1 { rng.normal_vec_f32(4) } else { vec![0.0; 4] };
        for i in 0..4 {
            x.data[i] = (cx0 * x0.data[i] as f64 + cxt * x.data[i] as f64 + sd * z[i] as f64) as f32;
        }
    }
    for (g, m) in got.data.iter().zip(&x.data) {
        assert!((g - m).abs() < 1e-5, "{g} vs {m}");
    }
}

fn mask(res: usize, f: impl Fn(usize, usize) -> bool) -> RegionMask {
    let mut data = vec![0u8; res * res];
    for r in 0..res {
        for c in 0..res {
            data[r * res + c] = f(c, r) as u8;
        }
    }
    RegionMask {
        resolution: res,
        data,
    }
}

#[test]
fn inpainting_mask_extremes() {
    let s = NoiseSchedule::new(1000).unwrap();
    let cfg = GuidanceConfig {
        sample_steps: 30,
        ..GuidanceConfig::default()
    };
    let bg = latent(2, 4, 4, |i| (i as f32 * 0.9).cos());
    let none = inpaint_sample(&Shrink, &s, &bg, &mask(4, |_, _| false), &0.4, &0.0, cfg, 3).unwrap();
    assert_eq!(none, bg);
    let all = inpaint_sample(&Shrink, &s, &bg, &mask(4, |_, _| true), &0.4, &0.0, cfg, 3).unwrap();
    let direct = sample(&Shrink, &s, [2, 4, 4], &0.4, &0.0, cfg, 3).unwrap();
    assert_eq!(all.data, direct.data);
}

#[test]
fn inpainting_preserves_background_bitwise() {
    let s = NoiseSchedule::new(1000).unwrap();
    let cfg = GuidanceConfig {
        sample_steps: 40,
        ..GuidanceConfig::default()
    };
    let bg = latent(3, 6, 6, |i| (i as f32 * 0.31).sin() * 1.5);
    let m = mask(6, |c, r| c >= 2 && r < 3);
    let out = inpaint_sample(&Shrink, &s, &bg, &m, &0.7, &0.0, cfg, 17).unwrap();
    let plane = 36;
    let mut changed = 0;
    for i in 0..out.data.len() {
        if m.data[i % plane] == 0 {
            assert_eq!(out.data[i].to_bits(), bg.data[i].to_bits());
        } else if out.data[i] != bg.data[i] {
            changed += 1;
        }
    }
    assert!(changed > 0);
    let bad = mask(5, |_, _| true);
    assert!(inpaint_sample(&Shrink, &s, &bg, &bad, &0.7, &0.0, cfg, 17).is_err());
}

#[test]
fn guidance_config_validation() {
    let s = NoiseSchedule::new(100).unwrap();
    let f = Latent::zeros(1, 1, 1);
    let mut cfg = GuidanceConfig::default();
    assert!(sample(&Oracle(f.clone()), &s, [1, 1, 1], &(), &(), cfg, 0).is_ok());
    cfg.sample_steps = 101;
    assert!(sample(&Oracle(f.clone()), &s, [1, 1, 1], &(), &(), cfg, 0).is_err());
    cfg.sample_steps = 10;
    cfg.weight = f32::NAN;
    assert!(sample(&Oracle(f), &s, [1, 1, 1], &(), &(), cfg, 0).is_err());
}
