use super::pyramid::{self, Level};
use super::*;
use crate::body::{default_template, lbs_deform, BodyParams, DEFAULT_TEMPLATE_SEED};
use crate::gaussians::{build_base_gaussians, channel, AttributeMap, NUM_CHANNELS};
use crate::latent::Latent;
use crate::nn::{ParamStore, Tensor};
use crate::render::{Camera, Projection};
use crate::rng::SeededRng;
use nalgebra::{DMatrix, SymmetricEigen};

fn random_map(rng: &mut SeededRng, res: usize) -> AttributeMap {
    let data = (0..res * res * NUM_CHANNELS).map(|_| rng.normal() as f32).collect();
    AttributeMap::from_data(res, res, data).unwrap()
}

/// Maps whose 4×4 blocks are constant texels `mean + A z` with `A`
/// spanning a random `k`-dimensional subspace.
fn subspace_maps(rng: &mut SeededRng, count: usize, k: usize) -> (Vec<AttributeMap>, Vec<f64>) {
    let a: Vec<f64> = (0..NUM_CHANNELS * k).map(|_| rng.normal()).collect();
    let mean: Vec<f64> = (0..NUM_CHANNELS).map(|_| rng.normal()).collect();
    let maps = (0..count)
        .map(|_| {
            let mut m = AttributeMap::zeros(64, 64);
            for by in 0..16 {
                for bx in 0..16 {
                    let z: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
                    let texel: Vec<f32> = (0..NUM_CHANNELS)
                        .map(|c| (mean[c] + (0..k).map(|j| a[c * k + j] * z[j]).sum::<f64>()) as f32)
                        .collect();
                    for y in 0..4 {
                        for x in 0..4 {
                            m.texel_mut(bx * 4 + x, by * 4 + y).copy_from_slice(&texel);
                        }
                    }
                }
            }
            m
        })
        .collect();
    (maps, a)
}

#[test]
fn jacobi_matches_library_eigen() {
    let mut rng = SeededRng::new(1, 0);
    let n = NUM_CHANNELS;
    let b: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
        }
    }
    let (values, vectors) = symmetric_eigen(&a, n);
    let mut oracle: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &a)).eigenvalues.iter().copied().collect();
    oracle.sort_by(|x, y| y.total_cmp(x));
    for (v, o) in values.iter().zip(&oracle) {
        assert!((v - o).abs() < 1e-9 * oracle[0]);
    }
    for r in 0..n {
        let row = &vectors[r * n..(r + 1) * n];
        for i in 0..n {
            let av: f64 = (0..n).map(|k| a[i * n + k] * row[k]).sum();
            assert!((av - values[r] * row[i]).abs() < 1e-8 * oracle[0]);
        }
    }
}

#[test]
fn degenerate_and_small_inputs_fail() {
    let mut rng = SeededRng::new(2, 0);
    let texel: Vec<f32> = (0..NUM_CHANNELS).map(|c| c as f32 * 0.1).collect();
    let one = AttributeMap::from_data(64, 64, texel.repeat(64 * 64)).unwrap();
    let same = vec![one; 64];
    assert!(matches!(fit_teacher(&same, 8), Err(crate::Error::Fit(_))));
    let few: Vec<_> = (0..10).map(|_| random_map(&mut rng, 64)).collect();
    assert!(matches!(fit_teacher(&few, 8), Err(crate::Error::InvalidArgument(_))));
    let (low, _) = subspace_maps(&mut rng, 64, 5);
    assert!(matches!(fit_teacher(&low, 8), Err(crate::Error::Fit(_))));
}

#[test]
fn subspace_is_recovered() {
    let mut rng = SeededRng::new(3, 0);
    let (maps, _) = subspace_maps(&mut rng, 64, 8);
    let t = fit_teacher(&maps, 8).unwrap();
    let n = NUM_CHANNELS;
    for i in 0..8 {
        for j in 0..8 {
            let d: f64 = (0..n).map(|c| t.basis[i * n + c] * t.basis[j * n + c]).sum();
            assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-5);
        }
    }
    assert!(t.scales.iter().all(|s| *s > 0.0));
    for m in maps.iter().take(5) {
        let blocks = area_downsample(m, 4).unwrap();
        let back = t.unproject(&t.encode(m).unwrap()).unwrap();
        for (a, b) in blocks.iter().zip(&back) {
            assert!((a - b).abs() < 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn encoding_is_whitened_centered_and_linear() {
    let mut rng = SeededRng::new(4, 0);
    let maps: Vec<_> = (0..64).map(|_| random_map(&mut rng, 64)).collect();
    let t = fit_teacher(&maps, 8).unwrap();
    let latents: Vec<Latent> = maps.iter().map(|m| t.encode(m).unwrap()).collect();
    for k in 0..8 {
        let vals: Vec<f64> = latents
            .iter()
            .flat_map(|l| l.data[k * 256..(k + 1) * 256].iter().map(|&v| v as f64))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "channel {k} variance {var}");
    }
    let mut mean_map = AttributeMap::zeros(64, 64);
    for y in 0..64 {
        for x in 0..64 {
            for (c, v) in mean_map.texel_mut(x, y).iter_mut().enumerate() {
                *v = t.mean[c] as f32;
            }
        }
    }
    assert!(t.encode(&mean_map).unwrap().data.iter().all(|v| v.abs() < 1e-5));
    let a = 0.3f32;
    let mix = AttributeMap::from_data(
        64,
        64,
        maps[0].data.iter().zip(&maps[1].data).map(|(x, y)| a * x + (1.0 - a) * y).collect(),
    )
    .unwrap();
    let (l0, l1, lm) = (&latents[0], &latents[1], t.encode(&mix).unwrap());
    for i in 0..lm.data.len() {
        assert!((lm.data[i] - (a * l0.data[i] + (1.0 - a) * l1.data[i])).abs() < 1e-5 * (1.0 + lm.data[i].abs()) * 10.0);
    }
    assert!(t.encode(&AttributeMap::zeros(32, 32)).is_err());
}

#[test]
fn projection_is_optimal_against_svd() {
    let mut rng = SeededRng::new(5, 0);
    let maps: Vec<_> = (0..64).map(|_| random_map(&mut rng, 64)).collect();
    let t = fit_teacher(&maps, 8).unwrap();
    let n = NUM_CHANNELS;
    let rows: Vec<f64> = maps.iter().flat_map(|m| area_downsample(m, 4).unwrap()).collect();
    let count = rows.len() / n;
    let mut x = DMatrix::from_row_slice(count, n, &rows);
    for c in 0..n {
        let mean = x.column(c).mean();
        x.column_mut(c).add_scalar_mut(-mean);
    }
    let sv = x.clone().svd(false, false).singular_values;
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let oracle: f64 = s[8..].iter().map(|v| v * v).sum();
    let ours: f64 = maps
        .iter()
        .map(|m| {
            let blocks = area_downsample(m, 4).unwrap();
            let back = t.unproject(&t.encode(m).unwrap()).unwrap();
            blocks.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum();
    assert!((ours - oracle).abs() < 1e-3 * oracle, "{ours} vs {oracle}");
    // Any other rank-8 projector does no better on the first 10 samples.
    for trial in 0..5 {
        let mut r = SeededRng::new(100 + trial, 0);
        let q: Vec<f64> = (0..n * 8).map(|_| r.normal()).collect();
        let qr = DMatrix::from_row_slice(n, 8, &q).qr().q();
        let residual = |m: &AttributeMap| -> f64 {
            let blocks = area_downsample(m, 4).unwrap();
            blocks
                .chunks_exact(n)
                .map(|texel| {
                    let d = nalgebra::DVector::from_iterator(n, (0..n).map(|c| texel[c] - t.mean[c]));
                    let p = &qr * (qr.transpose() * &d);
                    (d - p).norm_squared()
                })
                .sum()
        };
        let other: f64 = maps.iter().take(10).map(residual).sum();
        let best: f64 = maps
            .iter()
            .take(10)
            .map(|m| {
                let blocks = area_downsample(m, 4).unwrap();
                let back = t.unproject(&t.encode(m).unwrap()).unwrap();
                blocks.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum();
        assert!(best <= other);
    }
}

#[test]
fn teacher_file_round_trip() {
    let mut rng = SeededRng::new(6, 0);
    let maps: Vec<_> = (0..64).map(|_| random_map(&mut rng, 64)).collect();
    let t = fit_teacher(&maps, 8).unwrap();
    assert_eq!(Teacher::from_bytes(&t.to_bytes()).unwrap(), t);
    assert_eq!(fit_teacher(&maps, 8).unwrap().to_bytes(), t.to_bytes());
    let bytes = t.to_bytes();
    assert!(Teacher::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Teacher::from_bytes(&bad).is_err());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.tpca");
    t.save(&p).unwrap();
    assert_eq!(Teacher::load(&p).unwrap(), t);
}

#[test]
fn pyramid_adjoint_and_gradient() {
    let mut rng = SeededRng::new(7, 0);
    let (w, h) = (13, 10);
    let x = Level {
        width: w,
        height: h,
        rgb: (0..w * h * 3).map(|_| rng.normal()).collect(),
    };
    let y = pyramid::reduce(&x);
    let g = Level {
        width: y.width,
        height: y.height,
        rgb: (0..y.rgb.len()).map(|_| rng.normal()).collect(),
    };
    let lhs: f64 = y.rgb.iter().zip(&g.rgb).map(|(a, b)| a * b).sum();
    let back = pyramid::reduce_adjoint(&g, w, h);
    let rhs: f64 = x.rgb.iter().zip(&back.rgb).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));

    let a: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.uniform()).collect();
    let b: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.uniform()).collect();
    let (_, grad) = pyramid::pyramid_l1(16, 16, &a, &b);
    let eps = 1e-7;
    for i in [0usize, 17, 300, 767] {
        let mut ap = a.clone();
        ap[i] += eps;
        let mut am = a.clone();
        am[i] -= eps;
        let fd = (pyramid::pyramid_l1(16, 16, &ap, &b).0 - pyramid::pyramid_l1(16, 16, &am, &b).0) / (2.0 * eps);
        assert!((fd - grad[i]).abs() < 1e-5, "{fd} vs {}", grad[i]);
    }
    let (zero, zg) = pyramid::pyramid_l1(16, 16, &a, &a);
    assert_eq!(zero, 0.0);
    assert!(zg.iter().all(|v| *v == 0.0));
}

fn latent(seed: u64) -> Latent {
    let mut rng = SeededRng::new(seed, 0);
    Latent::from_data(8, 16, 16, rng.normal_vec_f32(8 * 256)).unwrap()
}

#[test]
fn decoder_shapes_and_zero_init() {
    let d = Decoder::new(8).unwrap();
    let p = d.init_params(1).unwrap();
    let map = d.decode(&p, &Latent::zeros(8, 16, 16)).unwrap();
    assert_eq!((map.width, map.height), (64, 64));
    assert!(map.data.iter().all(|v| *v == 0.0));
    let small = Latent::zeros(8, 5, 7);
    let m = d.decode(&p, &small).unwrap();
    assert_eq!((m.width, m.height), (28, 20));
    assert!(matches!(d.decode(&p, &Latent::zeros(4, 16, 16)), Err(crate::Error::InvalidNetwork { .. })));
}

/// Parameters with the zero-initialized heads perturbed so every layer
/// receives gradient.
fn live_params(d: &Decoder, seed: u64) -> ParamStore<f32> {
    let mut p = d.init_params(seed).unwrap();
    let mut rng = SeededRng::new(seed, 9);
    for name in ["decoder.geometry.out.w", "decoder.texture.out.w"] {
        for v in p.get_mut(name).unwrap().iter_mut() {
            *v = 0.05 * rng.normal() as f32;
        }
    }
    p
}

/// Small head weights and a low opacity bias: neighbouring splats are
/// similar and semi-transparent, so depth-order swaps barely move the image.
fn smooth_params(d: &Decoder, seed: u64) -> ParamStore<f32> {
    let mut p = d.init_params(seed).unwrap();
    let mut rng = SeededRng::new(seed, 9);
    for name in ["decoder.geometry.out.w", "decoder.texture.out.w"] {
        for v in p.get_mut(name).unwrap().iter_mut() {
            *v = 0.01 * rng.normal() as f32;
        }
    }
    p.get_mut("decoder.texture.out.b").unwrap()[3] = 2.0;
    p
}

fn map_from_tensor(t: &Tensor<f32>) -> AttributeMap {
    tensor_to_map(t, 0).unwrap()
}

#[test]
fn attribute_loss_closed_forms() {
    let d = Decoder::new(8).unwrap();
    let p = live_params(&d, 2);
    let l = latent(3);
    let (out, _) = d.forward(&p, &l.to_tensor(), false).unwrap();
    let mut exact = out.clone();
    for v in &mut exact.data[..3 * 4096] {
        *v = 0.0;
    }
    let target = map_from_tensor(&exact);
    let ex = vec![DistillExample {
        latent: l.clone(),
        target: target.clone(),
        pose: 0,
    }];
    let (loss, _) = d.output_loss(&exact, &ex, DistillMode::Attribute, None).unwrap();
    assert_eq!(loss.total, 0.0);

    let mut offset = exact.clone();
    let v = 0.3f32;
    for x in &mut offset.data[..3 * 4096] {
        *x = v;
    }
    let (loss, grad) = d.output_loss(&offset, &ex, DistillMode::Attribute, None).unwrap();
    let oracle = LAMBDA_OFFSET * 3.0 * 4096.0 * (v as f64).powi(2);
    // Data term sees the same offset as a mismatch against the target.
    assert!((loss.offset - oracle).abs() < 1e-6 * oracle);
    assert!((loss.data - oracle / LAMBDA_OFFSET).abs() < 1e-6 * oracle);
    assert!((grad.data[0] as f64 - 2.0 * v as f64 * (1.0 + LAMBDA_OFFSET)).abs() < 1e-5);
    assert!(matches!(
        d.output_loss(&exact, &ex, DistillMode::Render, None),
        Err(crate::Error::InvalidArgument(_))
    ));
}

#[test]
fn attribute_gradients_match_finite_differences() {
    let d = Decoder::new(8).unwrap();
    let p = live_params(&d, 4).cast::<f64>();
    let l = Latent::from_data(8, 4, 4, SeededRng::new(5, 0).normal_vec_f32(128)).unwrap();
    let mut rng = SeededRng::new(6, 0);
    let target = random_map(&mut rng, 16);
    let batch = vec![DistillExample {
        latent: l,
        target,
        pose: 0,
    }];
    let (_, grads) = d.loss_and_grads(&p, &batch, DistillMode::Attribute, None).unwrap();
    let loss = |p: &ParamStore<f64>| {
        let x: Tensor<f64> = batch[0].latent.to_tensor().cast();
        let (out, _) = d.forward(p, &x, false).unwrap();
        d.output_loss(&out, &batch, DistillMode::Attribute, None).unwrap().0.total
    };
    for (name, idx) in [
        ("decoder.trunk.up1.w", 5usize),
        ("decoder.trunk.conv2.b", 3),
        ("decoder.geometry.conv1.w", 40),
        ("decoder.texture.out.w", 7),
        ("decoder.geometry.out.b", 1),
    ] {
        let eps = 1e-5;
        let mut pp = p.clone();
        pp.get_mut(name).unwrap()[idx] += eps;
        let mut pm = p.clone();
        pm.get_mut(name).unwrap()[idx] -= eps;
        let fd = (loss(&pp) - loss(&pm)) / (2.0 * eps);
        let an = grads[name][idx];
        assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "{name}: {fd} vs {an}");
    }
}

fn render_fixture() -> (Vec<crate::gaussians::BaseGaussians>, Vec<Camera>) {
    let tpl = default_template(DEFAULT_TEMPLATE_SEED);
    let mesh = lbs_deform(&tpl, &BodyParams::rest(&tpl)).unwrap();
    let base = build_base_gaussians(&mesh, &tpl, 64).unwrap();
    let cams = [0.0, 90.0]
        .iter()
        .map(|&y| {
            Camera::orbit(Projection::Orthographic { scale: 16.0 }, y, [0.0, -0.04, 0.0], 3.0, 32, 32, [0.5; 3]).unwrap()
        })
        .collect();
    (vec![base], cams)
}

fn shifted_target(d: &Decoder, p: &ParamStore<f32>, l: &Latent) -> AttributeMap {
    let mut t = d.decode(p, l).unwrap();
    for y in 0..64 {
        for x in 0..64 {
            let texel = t.texel_mut(x, y);
            texel[channel::COLOR.start] += 0.8;
            texel[channel::OPACITY] += 2.0;
        }
    }
    t
}

#[test]
fn render_path_gradients_match_finite_differences() {
    let d = Decoder::new(8).unwrap();
    let p32 = smooth_params(&d, 7);
    let l = latent(8);
    let target = shifted_target(&d, &p32, &l);
    let p = p32.cast::<f64>();
    let (bases, cams) = render_fixture();
    let setup = RenderSetup {
        bases: &bases,
        cameras: &cams,
    };
    let batch = vec![DistillExample {
        latent: l,
        target,
        pose: 0,
    }];
    let (_, grads) = d.loss_and_grads(&p, &batch, DistillMode::Render, Some(&setup)).unwrap();
    let loss = |p: &ParamStore<f64>| {
        let x: Tensor<f64> = batch[0].latent.to_tensor().cast();
        let (out, _) = d.forward(p, &x, false).unwrap();
        d.output_loss(&out, &batch, DistillMode::Render, Some(&setup)).unwrap().0.total
    };
    for (name, idx) in [
        ("decoder.geometry.out.b", 0usize),
        ("decoder.geometry.out.b", 8),
        ("decoder.texture.out.b", 0),
        ("decoder.trunk.conv2.w", 100),
    ] {
        // Small steps keep the hard 3σ cutoff and depth-order swaps from
        // firing inside the stencil.
        let eps = 1e-5;
        let mut pp = p.clone();
        pp.get_mut(name).unwrap()[idx] += eps;
        let mut pm = p.clone();
        pm.get_mut(name).unwrap()[idx] -= eps;
        let fd = (loss(&pp) - loss(&pm)) / (2.0 * eps);
        let an = grads[name][idx];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        assert!(rel < 5e-2, "{name}[{idx}]: fd {fd} vs analytic {an}");
    }
}

#[test]
fn one_step_decreases_loss() {
    let d = Decoder::new(8).unwrap();
    let l = latent(10);
    let mut rng = SeededRng::new(11, 0);
    let mut target = random_map(&mut rng, 64);
    for v in &mut target.data {
        *v *= 0.5;
    }
    let batch = vec![DistillExample {
        latent: l.clone(),
        target,
        pose: 0,
    }];
    let mut p = live_params(&d, 12);
    let before = d.loss_and_grads(&p, &batch, DistillMode::Attribute, None).unwrap().0.total;
    d.train_step(&mut p, &batch, DistillMode::Attribute, None, 1e-3).unwrap();
    let after = d.loss_and_grads(&p, &batch, DistillMode::Attribute, None).unwrap().0.total;
    assert!(after < before, "{after} !< {before}");

    let (bases, cams) = render_fixture();
    let setup = RenderSetup {
        bases: &bases,
        cameras: &cams,
    };
    let mut p = live_params(&d, 13);
    let rb = vec![DistillExample {
        latent: l.clone(),
        target: shifted_target(&d, &p, &l),
        pose: 0,
    }];
    let before = d.loss_and_grads(&p, &rb, DistillMode::Render, Some(&setup)).unwrap().0.total;
    d.train_step(&mut p, &rb, DistillMode::Render, Some(&setup), 1e-3).unwrap();
    let after = d.loss_and_grads(&p, &rb, DistillMode::Render, Some(&setup)).unwrap().0.total;
    assert!(after < before, "{after} !< {before}");
}
