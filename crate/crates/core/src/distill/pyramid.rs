//! Multi-scale L1 image distance over a binomial Gaussian pyramid.

const TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
pub const PYRAMID_LEVELS: usize = 3;

/// RGB image, row-major texel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// 5×5 binomial blur (clamped edges) followed by 2× decimation.
pub fn reduce(l: &Level) -> Level {
    let (w, h) = ((l.width / 2).max(1), (l.height / 2).max(1));
    let mut rgb = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * 3;
            for (i, ky) in TAPS.iter().enumerate() {
                let sy = clamp_index(2 * y as isize + i as isize - 2, l.height);
                for (j, kx) in TAPS.iter().enumerate() {
                    let sx = clamp_index(2 * x as isize + j as isize - 2, l.width);
                    let s = (sy * l.width + sx) * 3;
                    let k = ky * kx;
                    for c in 0..3 {
                        rgb[o + c] += k * l.rgb[s + c];
                    }
                }
            }
        }
    }
    Level { width: w, height: h, rgb }
}

/// Adjoint of [`reduce`]: scatters a gradient on the coarse level back to
/// the fine one.
pub fn reduce_adjoint(grad: &Level, width: usize, height: usize) -> Level {
    let mut rgb = vec![0.0; width * height * 3];
    for y in 0..grad.height {
        for x in 0..grad.width {
            let o = (y * grad.width + x) * 3;
            for (i, ky) in TAPS.iter().enumerate() {
                let sy = clamp_index(2 * y as isize + i as isize - 2, height);
                for (j, kx) in TAPS.iter().enumerate() {
                    let sx = clamp_index(2 * x as isize + j as isize - 2, width);
                    let s = (sy * width + sx) * 3;
                    let k = ky * kx;
                    for c in 0..3 {
                        rgb[s + c] += k * grad.rgb[o + c];
                    }
                }
            }
        }
    }
    Level { width, height, rgb }
}

pub fn build(width: usize, height: usize, rgb: &[f64]) -> Vec<Level> {
    let mut levels = vec![Level {
        width,
        height,
        rgb: rgb.to_vec(),
    }];
    for _ in 1..PYRAMID_LEVELS {
        let next = reduce(levels.last().unwrap());
        levels.push(next);
    }
    levels
}

/// `Σ_levels Σ |P(a) − P(b)|` and its gradient with respect to `a`.
pub fn pyramid_l1(width: usize, height: usize, a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let pa = build(width, height, a);
    let pb = build(width, height, b);
    let mut loss = 0.0;
    let mut grads: Vec<Level> = Vec::with_capacity(PYRAMID_LEVELS);
    for (la, lb) in pa.iter().zip(&pb) {
        let mut g = vec![0.0; la.rgb.len()];
        for (i, (x, y)) in la.rgb.iter().zip(&lb.rgb).enumerate() {
            let d = x - y;
            loss += d.abs();
            g[i] = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
        grads.push(Level {
            width: la.width,
            height: la.height,
            rgb: g,
        });
    }
    // Push coarse gradients down one level at a time.
    let mut acc = grads.pop().unwrap();
    while let Some(mut finer) = grads.pop() {
        let back = reduce_adjoint(&acc, finer.width, finer.height);
        for (f, b) in finer.rgb.iter_mut().zip(&back.rgb) {
            *f += b;
        }
        acc = finer;
    }
    (loss, acc.rgb)
}
