//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the whole suite fails if any criterion does.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use avatar_core::body::{canonical_mesh, default_template, lbs_deform, BodyParams, Region};
use avatar_core::data::gen_samples;
use avatar_core::data::palette::{PANTS_COLORS, SHIRT_COLORS, SHOE_COLORS};
use avatar_core::data::Sample;
use avatar_core::denoiser::{Denoiser, DenoiserConfig, TextEmbedder};
use avatar_core::diffusion::{guided_x0, inpaint_sample, sample, GuidanceConfig, NoiseSchedule, X0Model};
use avatar_core::gaussians::{region_mask, Gaussian, GaussianSet, RegionMask};
use avatar_core::latent::Latent;
use avatar_core::math::Quat;
use avatar_core::nn::{Grads, Inputs, Network, NetworkBuilder, ParamStore, Tensor, Tokens};
use avatar_core::pipeline::{
    read_shirt_color, seam_gradient, swap_region, train_denoiser, train_model, AvatarModel, DenoiserTraining,
    Progress, RunConfig,
};
use avatar_core::render::{
    project, rasterize, rasterize_reference, render, render_backward, Camera, Projection, RenderedImage, Splat2D,
};
use avatar_core::rng::SeededRng;

fn report(id: u32, name: &str, pass: bool, detail: String) -> bool {
    println!("[{}] criterion {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn ortho(res: usize, scale: f64, bg: [f64; 3]) -> Camera {
    Camera::look_at(
        Projection::Orthographic { scale },
        [0.0, 0.0, 5.0],
        [0.0; 3],
        [0.0, 1.0, 0.0],
        res,
        res,
        bg,
    )
    .unwrap()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error with a small absolute floor for near-zero gradients.
fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / (fd.abs().max(an.abs()) + 1e-5)
}

fn random_splats(n: usize, res: usize, rng: &mut SeededRng) -> Vec<Splat2D> {
    (0..n)
        .map(|i| {
            let sx = rng.uniform_range(0.5, 6.0);
            let sy = rng.uniform_range(0.5, 6.0);
            let rho = rng.uniform_range(-0.8, 0.8);
            Splat2D {
                mean2d: [rng.uniform_range(-4.0, res as f64 + 4.0), rng.uniform_range(-4.0, res as f64 + 4.0)],
                cov2d: [sx * sx + 0.3, rho * sx * sy, sy * sy + 0.3],
                depth: rng.uniform_range(0.5, 3.0),
                color: [rng.uniform(), rng.uniform(), rng.uniform()],
                opacity: rng.uniform_range(0.05, 1.0),
                source: i,
            }
        })
        .collect()
}

fn criterion_1() -> bool {
    let cam = ortho(64, 10.0, [0.3, 0.5, 0.7]);
    let mut rng = SeededRng::new(1, 0);
    let mut worst: f64 = 0.0;
    let mut tiled_time = Duration::ZERO;
    for _ in 0..20 {
        let splats = random_splats(50, 64, &mut rng);
        let t0 = Instant::now();
        let (tiled, _) = rasterize(&splats, &cam).unwrap();
        tiled_time += t0.elapsed();
        let oracle = rasterize_reference(&splats, &cam).unwrap();
        worst = worst.max(max_abs(&tiled.rgb, &oracle.rgb)).max(max_abs(&tiled.alpha, &oracle.alpha));
    }
    let pass = worst <= 1e-5 && tiled_time < Duration::from_secs(5);
    report(1, "tiled rasterizer matches per-pixel reference", pass, format!("20 scenes, max |Δ| {worst:.2e}, tiled time {tiled_time:.2?}"))
}

/// No splat's 3σ boundary or opacity clamp sits near a pixel center, so the
/// image is differentiable at this scene.
fn scene_is_smooth(splats: &[Splat2D], cam: &Camera) -> bool {
    splats.iter().all(|s| {
        let Some(a) = s.conic() else { return false };
        (0..cam.height).all(|y| {
            (0..cam.width).all(|x| {
                let d = [x as f64 + 0.5 - s.mean2d[0], y as f64 + 0.5 - s.mean2d[1]];
                let m2 = a[0] * d[0] * d[0] + 2.0 * a[1] * d[0] * d[1] + a[2] * d[1] * d[1];
                (m2 - 9.0).abs() >= 0.05 && s.opacity * (-0.5 * m2).exp() <= 0.99
            })
        })
    })
}

fn half_sse(img: &RenderedImage, target: &[f64]) -> f64 {
    img.rgb.iter().zip(target).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
}

fn criterion_2() -> bool {
    let cam = ortho(8, 20.0, [0.3, 0.1, 0.2]);
    let mut rng = SeededRng::new(2, 0);
    let (mut scenes, mut probes) = (0, 0);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    while scenes < 5 {
        let set = GaussianSet {
            gaussians: (0..5)
                .map(|_| Gaussian {
                    mean: [rng.uniform_range(-0.15, 0.15), rng.uniform_range(-0.15, 0.15), rng.uniform_range(-0.5, 0.5)],
                    rotation: Quat::new(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized(),
                    scale: [0; 3].map(|_| rng.uniform_range(0.05, 0.15)),
                    color: [0; 3].map(|_| rng.uniform()),
                    opacity: rng.uniform_range(0.2, 0.7),
                })
                .collect(),
        };
        if !scene_is_smooth(&project(&set, &cam).splats, &cam) {
            continue;
        }
        scenes += 1;
        let target: Vec<f64> = (0..8 * 8 * 3).map(|_| rng.uniform()).collect();
        let loss = |s: &GaussianSet| half_sse(&render(s, &cam).unwrap().0, &target);
        let (img, _) = render(&set, &cam).unwrap();
        let resid: Vec<f64> = img.rgb.iter().zip(&target).map(|(a, b)| a - b).collect();
        let grads = render_backward(&set, &cam, &resid).unwrap();
        for (i, g) in grads.iter().enumerate() {
            let mut check = |perturb: &dyn Fn(&mut Gaussian, f64), an: f64| {
                let mut plus = set.clone();
                perturb(&mut plus.gaussians[i], h);
                let mut minus = set.clone();
                perturb(&mut minus.gaussians[i], -h);
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                worst = worst.max(rel_err(fd, an));
                probes += 1;
            };
            for a in 0..3 {
                check(&|x, d| x.mean[a] += d, g.mean[a]);
                check(&|x, d| x.scale[a] += d, g.scale[a]);
                check(&|x, d| x.color[a] += d, g.color[a]);
            }
            for a in 0..4 {
                check(
                    &|x, d| {
                        let mut q = x.rotation.to_array();
                        q[a] += d;
                        x.rotation = Quat::from_array(q);
                    },
                    g.rotation[a],
                );
            }
            check(&|x, d| x.opacity += d, g.opacity);
        }
    }
    report(2, "render gradients match finite differences", worst < 1e-3, format!("{probes} probes over 5 scenes, max rel err {worst:.2e}"))
}

fn criterion_3() -> bool {
    let t = default_template(0);
    let mut rng = SeededRng::new(3, 0);
    let mut p = BodyParams::rest(&t);
    p.beta = (0..t.num_shape).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    p.psi = (0..t.num_expr).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let identity_exact = lbs_deform(&t, &p).unwrap().vertices == canonical_mesh(&t, &p).unwrap();

    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let mut posed = p.clone();
        posed.beta = vec![0.0; t.num_shape];
        posed.theta = (0..t.num_joints())
            .map(|_| Quat::from_axis_angle([rng.normal(), rng.normal(), rng.normal()], rng.uniform_range(-1.0, 1.0)))
            .collect();
        let before = lbs_deform(&t, &posed).unwrap().vertices;
        let r = Quat::from_axis_angle([0.3, 1.0, -0.4], -3.0 + 0.6 * k as f64);
        posed.theta[0] = r * posed.theta[0];
        let after = lbs_deform(&t, &posed).unwrap().vertices;
        for (a, b) in before.iter().zip(&after) {
            let e = r.rotate(*a);
            worst = worst.max((0..3).map(|i| (e[i] - b[i]).abs()).fold(0.0, f64::max));
        }
    }
    report(
        3,
        "skinning identity and rigidity",
        identity_exact && worst < 1e-5,
        format!("identity pose bit-exact: {identity_exact}, global rotation max |Δ| {worst:.2e}"),
    )
}

fn criterion_4() -> bool {
    let s = NoiseSchedule::new(1000).unwrap();
    let worst = (0..=1000)
        .map(|t| ((s.alpha[t] as f64).powi(2) + (s.sigma[t] as f64).powi(2) - 1.0).abs())
        .fold(0.0, f64::max);
    let last = s.alpha_bar[1000] as f64;
    report(
        4,
        "noise schedule identities",
        worst < 1e-6 && last < 2e-2,
        format!("max |α²+σ²−1| {worst:.2e}, ᾱ_T {last:.3e}"),
    )
}

struct Oracle(Latent);

impl X0Model for Oracle {
    type Cond = ();
    fn predict_x0(&self, _x: &Latent, _t: usize, _c: &()) -> avatar_core::Result<Latent> {
        Ok(self.0.clone())
    }
}

/// Toy model whose prediction depends on the state and the condition.
struct Shrink;

impl X0Model for Shrink {
    type Cond = f32;
    fn predict_x0(&self, x: &Latent, t: usize, c: &f32) -> avatar_core::Result<Latent> {
        let mut out = x.clone();
        for v in &mut out.data {
            *v = 0.5 * v.tanh() + *c + 1e-4 * t as f32;
        }
        Ok(out)
    }
}

fn criterion_5() -> bool {
    let s = NoiseSchedule::new(1000).unwrap();
    let mut rng = SeededRng::new(5, 0);
    let f0 = Latent::from_data(8, 16, 16, rng.normal_vec_f32(8 * 256)).unwrap();
    let mut worst: f32 = 0.0;
    for seed in 0..10 {
        let out = sample(&Oracle(f0.clone()), &s, [8, 16, 16], &(), &(), GuidanceConfig::default(), seed).unwrap();
        worst = out.data.iter().zip(&f0.data).map(|(a, b)| (a - b).abs()).fold(worst, f32::max);
    }
    report(5, "sampler recovers an oracle's x0", worst < 1e-3, format!("10 seeds, max |Δ| {worst:.2e}"))
}

fn criterion_6() -> bool {
    let t = default_template(0);
    let s = NoiseSchedule::new(1000).unwrap();
    let cfg = GuidanceConfig {
        sample_steps: 50,
        ..GuidanceConfig::default()
    };
    let mut rng = SeededRng::new(6, 0);
    let bg = Latent::from_data(8, 16, 16, rng.normal_vec_f32(8 * 256)).unwrap();
    let mask = region_mask(&t, Region::Torso, 16).unwrap();
    let out = inpaint_sample(&Shrink, &s, &bg, &mask, &0.7, &0.0, cfg, 11).unwrap();
    let mut bg_exact = true;
    let mut changed = 0;
    for (i, (o, b)) in out.data.iter().zip(&bg.data).enumerate() {
        if mask.data[i % 256] == 0 {
            bg_exact &= o.to_bits() == b.to_bits();
        } else if o != b {
            changed += 1;
        }
    }
    let all = RegionMask {
        resolution: 16,
        data: vec![1; 256],
    };
    let full = inpaint_sample(&Shrink, &s, &bg, &all, &0.7, &0.0, cfg, 11).unwrap();
    let direct = sample(&Shrink, &s, [8, 16, 16], &0.7, &0.0, cfg, 11).unwrap();
    let all_matches = full.data == direct.data;
    report(
        6,
        "inpainting keeps the background",
        bg_exact && changed > 0 && all_matches,
        format!("background bit-exact: {bg_exact}, {changed} foreground values changed, all-one mask equals sample: {all_matches}"),
    )
}

struct Constant {
    null: Latent,
    cond: Latent,
}

impl X0Model for Constant {
    type Cond = bool;
    fn predict_x0(&self, _x: &Latent, _t: usize, c: &bool) -> avatar_core::Result<Latent> {
        Ok(if *c { self.cond.clone() } else { self.null.clone() })
    }
}

fn criterion_7() -> bool {
    let mut rng = SeededRng::new(7, 0);
    let m = Constant {
        null: Latent::from_data(2, 4, 4, rng.normal_vec_f32(32)).unwrap(),
        cond: Latent::from_data(2, 4, 4, rng.normal_vec_f32(32)).unwrap(),
    };
    let x = Latent::zeros(2, 4, 4);
    let zero_exact = guided_x0(&m, &x, 10, &true, &false, 0.0, None).unwrap() == m.null;
    let d: Vec<f64> = m.cond.data.iter().zip(&m.null.data).map(|(c, n)| (c - n) as f64).collect();
    let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    for w in [0.5f32, 1.0, 2.0, 3.0, 7.5] {
        let g = guided_x0(&m, &x, 10, &true, &false, w, None).unwrap();
        let e: Vec<f64> = g.data.iter().zip(&m.null.data).map(|(a, n)| (a - n) as f64).collect();
        let en = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = e.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / (en * dn);
        worst = worst.max(1.0 - cos).max((en / dn - w as f64).abs() / w as f64);
    }
    report(
        7,
        "guidance is a linear extrapolation",
        zero_exact && worst < 1e-6,
        format!("w=0 returns the unconditional prediction: {zero_exact}, max collinearity/scale error {worst:.2e}"),
    )
}

fn random_tensor(shape: [usize; 4], rng: &mut SeededRng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Worst relative error of `backward` against central differences of
/// `Σ r·y` over every parameter entry and a spread of input entries.
fn layer_fd(net: &Network, x: &Tensor<f64>, emb: Option<&Tensor<f64>>, tokens: Option<&Tokens<f64>>, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed, 0);
    let mut params: ParamStore<f64> = net.init_params(&mut rng).cast();
    for (name, p) in params.params.iter_mut() {
        let gain = name.ends_with(".g");
        for v in p.value.iter_mut() {
            *v = if gain { 1.0 + 0.3 * rng.normal() } else { 0.4 * rng.normal() };
        }
    }
    let (y, trace) = net.forward(&params, Inputs { x, emb, tokens }, true).unwrap();
    let r = random_tensor(y.shape, &mut rng);
    let mut grads = Grads::new();
    let dx = net.backward(&params, &trace, &r, &mut grads).unwrap();
    let loss = |p: &ParamStore<f64>, x: &Tensor<f64>, e: Option<&Tensor<f64>>, t: Option<&Tokens<f64>>| {
        let y = net.infer(p, Inputs { x, emb: e, tokens: t }).unwrap();
        y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum::<f64>()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, p) in &params.params {
        for idx in 0..p.value.len() {
            let mut plus = params.clone();
            plus.params.get_mut(name).unwrap().value[idx] += h;
            let mut minus = params.clone();
            minus.params.get_mut(name).unwrap().value[idx] -= h;
            let fd = (loss(&plus, x, emb, tokens) - loss(&minus, x, emb, tokens)) / (2.0 * h);
            worst = worst.max(rel_err(fd, grads[name][idx]));
        }
    }
    for j in 0..12 {
        let idx = (j * 7919 + 5) % x.data.len();
        let mut plus = x.clone();
        plus.data[idx] += h;
        let mut minus = x.clone();
        minus.data[idx] -= h;
        let fd = (loss(&params, &plus, emb, tokens) - loss(&params, &minus, emb, tokens)) / (2.0 * h);
        worst = worst.max(rel_err(fd, dx.x.data[idx]));
    }
    if let (Some(e), Some(de)) = (emb, dx.emb.as_ref()) {
        for idx in 0..e.data.len() {
            let mut plus = e.clone();
            plus.data[idx] += h;
            let mut minus = e.clone();
            minus.data[idx] -= h;
            let fd = (loss(&params, x, Some(&plus), tokens) - loss(&params, x, Some(&minus), tokens)) / (2.0 * h);
            worst = worst.max(rel_err(fd, de.data[idx]));
        }
    }
    if let (Some(t), Some(dt)) = (tokens, dx.tokens.as_ref()) {
        for idx in 0..t.data.data.len() {
            let mut plus = t.clone();
            plus.data.data[idx] += h;
            let mut minus = t.clone();
            minus.data.data[idx] -= h;
            let fd = (loss(&params, x, emb, Some(&plus)) - loss(&params, x, emb, Some(&minus))) / (2.0 * h);
            worst = worst.max(rel_err(fd, dt.data[idx]));
        }
    }
    worst
}

fn criterion_8() -> bool {
    let mut rng = SeededRng::new(8, 1);
    let single = |cin: usize, f: &dyn Fn(&mut NetworkBuilder)| {
        let mut b = NetworkBuilder::new("t", cin);
        f(&mut b);
        b.build().unwrap()
    };
    let x = |shape: [usize; 4], rng: &mut SeededRng| random_tensor(shape, rng);
    let emb = x([2, 5, 1, 1], &mut rng);
    let tokens = Tokens {
        data: x([2, 5, 4, 1], &mut rng),
        lengths: vec![2, 4],
    };
    let cases: Vec<(&str, Network, Tensor<f64>, bool, bool)> = vec![
        ("conv3x3", single(3, &|b| { b.conv3x3("c", 4); }), x([2, 3, 5, 6], &mut rng), false, false),
        ("conv1x1", single(3, &|b| { b.conv1x1("c", 4); }), x([2, 3, 4, 4], &mut rng), false, false),
        ("transposed_conv", single(3, &|b| { b.transposed_conv("c", 2); }), x([2, 3, 3, 4], &mut rng), false, false),
        ("linear", single(6, &|b| { b.linear("l", 4); }), x([3, 6, 1, 1], &mut rng), false, false),
        ("rms_norm", single(6, &|b| { b.rms_norm("n", 2); }), x([2, 6, 3, 3], &mut rng), false, false),
        ("silu", single(2, &|b| { b.silu(); }), x([2, 2, 3, 3], &mut rng), false, false),
        ("film", single(3, &|b| { b.film("f", 5); }), x([2, 3, 3, 2], &mut rng), true, false),
        ("cross_attention", single(4, &|b| { b.cross_attention("a", 5, 2, 3); }), x([2, 4, 3, 3], &mut rng), false, true),
        ("avgpool", single(2, &|b| { b.avgpool(); }), x([2, 2, 4, 6], &mut rng), false, false),
        ("upsample", single(2, &|b| { b.upsample(); }), x([2, 2, 3, 2], &mut rng), false, false),
        (
            "add_skip",
            single(2, &|b| {
                let a = b.conv3x3("c0", 3);
                b.conv3x3("c1", 3);
                b.add_skip(a);
            }),
            x([2, 2, 4, 4], &mut rng),
            false,
            false,
        ),
    ];
    let mut pass = true;
    let mut worst_all: f64 = 0.0;
    let mut details = Vec::new();
    for (i, (name, net, input, use_emb, use_tokens)) in cases.iter().enumerate() {
        let worst = layer_fd(net, input, use_emb.then_some(&emb), use_tokens.then_some(&tokens), 80 + i as u64);
        if worst >= 1e-3 {
            pass = false;
            details.push(format!("{name} {worst:.1e}"));
        }
        worst_all = worst_all.max(worst);
    }
    let failing = if details.is_empty() { String::new() } else { format!(", failing: {}", details.join(", ")) };
    report(8, "every layer kind passes a gradient check", pass, format!("{} layer kinds, max rel err {worst_all:.2e}{failing}", cases.len()))
}

struct Trained {
    config: RunConfig,
    samples: Vec<Sample>,
    model: AvatarModel,
    decoder_time: Duration,
    denoiser_time: Duration,
}

/// One model trained with the default configuration, shared by the
/// end-to-end criteria.
fn trained() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| {
        let template = default_template(0);
        let config = RunConfig::default();
        let samples = gen_samples(&template, config.dataset_size, config.seed).unwrap();
        let start = Instant::now();
        let mut decoder_start = start;
        let mut denoiser_start = None;
        let model = train_model(&template, &samples, &config, |p| match p {
            Progress::Teacher => decoder_start = Instant::now(),
            Progress::Denoiser(0, _) => denoiser_start = Some(Instant::now()),
            _ => {}
        })
        .unwrap();
        let denoiser_start = denoiser_start.unwrap_or(start);
        Trained {
            decoder_time: denoiser_start - decoder_start,
            denoiser_time: denoiser_start.elapsed(),
            config,
            samples,
            model,
        }
    })
}

/// Prompts phrased unlike any training caption.
fn held_out_prompt(i: usize) -> (String, usize) {
    const TEMPLATES: [&str; 5] = [
        "{c} shirt",
        "a person in a {c} shirt",
        "{c} shirt and {p} pants",
        "wearing a {c} shirt",
        "a {c} shirt with {s} shoes",
    ];
    let c = i % SHIRT_COLORS.len();
    let prompt = TEMPLATES[(i / 8) % TEMPLATES.len()]
        .replace("{c}", SHIRT_COLORS[c].name)
        .replace("{p}", PANTS_COLORS[(i * 3) % PANTS_COLORS.len()].name)
        .replace("{s}", SHOE_COLORS[i % SHOE_COLORS.len()].name);
    (prompt, c)
}

fn criterion_9() -> bool {
    let tr = trained();
    let g = tr.config.guidance_config();
    let mut hits = 0;
    let mut misses = Vec::new();
    for i in 0..50 {
        let (prompt, want) = held_out_prompt(i);
        let latent = tr.model.generate(Some(&prompt), g, 1000 + i as u64).unwrap();
        let got = read_shirt_color(&tr.model.template, &tr.model.decode(&latent).unwrap()).unwrap();
        if got.color == want {
            hits += 1;
        } else {
            misses.push(format!("'{prompt}'→{}", SHIRT_COLORS[got.color].name));
        }
    }
    let rate = hits as f64 / 50.0;
    if !misses.is_empty() {
        println!("    misses: {}", misses.join("; "));
    }
    report(
        9,
        "generated shirts follow held-out prompts",
        rate >= 0.8,
        format!(
            "{hits}/50 = {:.0}% at w={} (decoder trained in {:.0?}, denoiser in {:.0?})",
            rate * 100.0,
            g.weight,
            tr.decoder_time,
            tr.denoiser_time
        ),
    )
}

fn criterion_10() -> bool {
    let tr = trained();
    let m = &tr.model;
    let g = tr.config.guidance_config();
    let mask = region_mask(&m.template, Region::Torso, m.latent_shape()[1]).unwrap();
    let mut wins = 0;
    for i in 0..20 {
        let s = &tr.samples[i];
        let source = m.teacher.encode(&s.attributes).unwrap();
        let target = (s.spec.shirt + 3) % SHIRT_COLORS.len();
        let prompt = format!("a person wearing a {} shirt", SHIRT_COLORS[target].name);
        let seed = 2000 + i as u64;
        let inpainted = m.edit(&source, Region::Torso, Some(&prompt), g, seed).unwrap();
        let donor = m.generate(Some(&prompt), g, seed).unwrap();
        let swapped = swap_region(&source, &donor, &mask).unwrap();
        let a = seam_gradient(&m.template, &m.decode(&inpainted).unwrap(), Region::Torso).unwrap();
        let b = seam_gradient(&m.template, &m.decode(&swapped).unwrap(), Region::Torso).unwrap();
        if a <= b {
            wins += 1;
        }
    }
    report(10, "inpainted try-on seams beat direct swaps", wins >= 15, format!("{wins}/20 edits with seam gradient ≤ swap"))
}

fn criterion_11() -> bool {
    let template = default_template(0);
    let config = DenoiserConfig {
        width: 8,
        heads: 2,
        ..DenoiserConfig::default()
    };
    let layout = avatar_core::denoiser::region_layout(&template, config.latent_resolution).unwrap();
    let net = Denoiser::new(config, TextEmbedder::default(), layout).unwrap();
    let mut params = net.init_params(11).unwrap();
    let schedule = NoiseSchedule::new(config.steps).unwrap();
    let samples = gen_samples(&template, 4, 11).unwrap();
    let latents: Vec<Latent> = (0..4).map(|i| Latent::from_data(8, 16, 16, SeededRng::new(11, i).normal_vec_f32(2048)).unwrap()).collect();
    let captions: Vec<_> = samples.iter().map(|s| s.captions.clone()).collect();
    let opts = DenoiserTraining {
        steps: 10_000,
        batch: 1,
        lr: 1e-3,
        seed: 11,
        dropout: 0.2,
    };
    let mut dropped = 0usize;
    let mut total = 0usize;
    train_denoiser(&net, &mut params, &schedule, &latents, &captions, opts, |_, r| {
        dropped += r.dropped.iter().filter(|&&d| d).count();
        total += r.dropped.len();
    })
    .unwrap();
    let rate = dropped as f64 / total as f64;
    report(11, "caption dropout rate", (rate - 0.2).abs() <= 0.01, format!("{dropped}/{total} = {rate:.4} dropped"))
}

fn cli_generate(dir: &Path, out: &Path) -> (bool, String) {
    let status = Command::new(env!("CARGO_BIN_EXE_avatar"))
        .arg("--checkpoints")
        .arg(dir)
        .args(["--set", "render.resolution=64", "generate", "--prompt", "a person in a green shirt", "--seed", "7", "--out"])
        .arg(out)
        .output()
        .unwrap();
    (status.status.success(), String::from_utf8_lossy(&status.stderr).into_owned())
}

fn criterion_12() -> bool {
    let tr = trained();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model");
    tr.model.save(&ckpt).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ok_a, err_a) = cli_generate(&ckpt, &a);
    let (ok_b, err_b) = cli_generate(&ckpt, &b);
    if !ok_a || !ok_b {
        return report(12, "CLI generation is reproducible", false, format!("CLI failed: {err_a} {err_b}"));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let identical = names.iter().all(|n| std::fs::read(a.join(n)).ok() == std::fs::read(b.join(n)).ok());
    let has_latent = names.iter().any(|n| n == "latent.tatt");
    let images = names.iter().filter(|n| n.to_string_lossy().ends_with(".png")).count();
    report(
        12,
        "CLI generation is reproducible",
        identical && has_latent && images > 0,
        format!("{} files ({images} images) byte-identical across runs: {identical}", names.len()),
    )
}

fn main() {
    let checks: [fn() -> bool; 12] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
        criterion_11,
        criterion_12,
    ];
    let results: Vec<bool> = checks.iter().map(|c| c()).collect();
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
