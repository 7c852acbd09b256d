//! Named colors of the synthetic wardrobe and the HSV nearest-name
//! classifier used to check rendered garments.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Swatch {
    pub name: &'static str,
    pub rgb: [f64; 3],
}

const fn sw(name: &'static str, r: f64, g: f64, b: f64) -> Swatch {
    Swatch { name, rgb: [r, g, b] }
}

pub const SKIN_TONES: [Swatch; 4] = [
    sw("fair", 0.96, 0.84, 0.75),
    sw("light", 0.88, 0.70, 0.57),
    sw("medium", 0.74, 0.55, 0.40),
    sw("dark", 0.42, 0.28, 0.19),
];

pub const SHIRT_COLORS: [Swatch; 8] = [
    sw("red", 1.0, 0.0, 0.0),
    sw("orange", 1.0, 0.5, 0.0),
    sw("yellow", 1.0, 1.0, 0.0),
    sw("green", 0.0, 1.0, 0.0),
    sw("cyan", 0.0, 1.0, 1.0),
    sw("blue", 0.0, 0.0, 1.0),
    sw("purple", 0.55, 0.0, 1.0),
    sw("pink", 1.0, 0.4, 0.7),
];

pub const PANTS_COLORS: [Swatch; 8] = [
    sw("black", 0.04, 0.04, 0.04),
    sw("white", 0.96, 0.96, 0.96),
    sw("gray", 0.5, 0.5, 0.5),
    sw("brown", 0.45, 0.27, 0.1),
    sw("navy", 0.05, 0.08, 0.35),
    sw("khaki", 0.76, 0.69, 0.5),
    sw("olive", 0.4, 0.42, 0.1),
    sw("maroon", 0.5, 0.05, 0.1),
];

pub const SHOE_COLORS: [Swatch; 4] = [
    sw("tan", 0.82, 0.7, 0.55),
    sw("silver", 0.75, 0.75, 0.78),
    sw("teal", 0.0, 0.5, 0.5),
    sw("ivory", 1.0, 1.0, 0.94),
];

pub fn find(palette: &[Swatch], name: &str) -> Option<usize> {
    palette.iter().position(|s| s.name == name)
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c.clamp(0.0, 1.0));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 1e-12 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max <= 1e-12 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dh = (a[0] - b[0]).abs();
    let dh = dh.min(360.0 - dh) / 30.0;
    // Hue is meaningless for unsaturated colors.
    let w = a[1].min(b[1]);
    w * dh * dh + 4.0 * (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index of the palette entry nearest to `rgb` in HSV space.
pub fn nearest_name(palette: &[Swatch], rgb: [f64; 3]) -> usize {
    let hsv = rgb_to_hsv(rgb);
    let mut best = (f64::INFINITY, 0);
    for (i, s) in palette.iter().enumerate() {
        let d = hsv_distance(hsv, rgb_to_hsv(s.rgb));
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}
