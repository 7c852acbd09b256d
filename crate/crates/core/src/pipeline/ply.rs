use std::fmt::Write as _;
use std::path::Path;

use crate::binio::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::gaussians::{Gaussian, GaussianSet};
use crate::math::Quat;

const PROPERTIES: [(&str, &str); 17] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("float", "nx"),
    ("float", "ny"),
    ("float", "nz"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("float", "opacity"),
    ("float", "scale_0"),
    ("float", "scale_1"),
    ("float", "scale_2"),
    ("float", "rot_0"),
    ("float", "rot_1"),
    ("float", "rot_2"),
    ("float", "rot_3"),
];

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// ASCII PLY with one vertex per Gaussian. The normal is the rotation's
/// third axis; `rot_*` is the quaternion `(w, x, y, z)`.
pub fn ply_string(set: &GaussianSet) -> String {
    let mut s = format!("ply\nformat ascii 1.0\nelement vertex {}\n", set.len());
    for (ty, name) in PROPERTIES {
        let _ = writeln!(s, "property {ty} {name}");
    }
    s.push_str("end_header\n");
    for g in &set.gaussians {
        let m = g.rotation.to_mat3();
        let n = [m[0][2], m[1][2], m[2][2]];
        let r = g.rotation.to_array();
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            g.mean[0],
            g.mean[1],
            g.mean[2],
            n[0],
            n[1],
            n[2],
            to_u8(g.color[0]),
            to_u8(g.color[1]),
            to_u8(g.color[2]),
            g.opacity,
            g.scale[0],
            g.scale[1],
            g.scale[2],
            r[0],
            r[1],
            r[2],
            r[3]
        );
    }
    s
}

pub fn export_ply(set: &GaussianSet, path: &Path) -> Result<()> {
    write_atomic(path, ply_string(set).as_bytes())
}

/// Reads an ASCII PLY carrying at least position, color, opacity, scale
/// and rotation properties, in any order.
pub fn parse_ply(text: &str) -> Result<GaussianSet> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let bad = |line: usize, m: &str| Error::parse(line, m);
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(bad(1, "missing `ply` magic")),
    }
    let mut count = None;
    let mut props: Vec<(String, String)> = Vec::new();
    let mut in_vertex = false;
    loop {
        let (n, line) = lines.next().ok_or_else(|| bad(0, "missing end_header"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(bad(n, "only ASCII PLY is supported")),
            ["comment", ..] | [] => {}
            ["element", name, c] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(c.parse::<usize>().map_err(|_| bad(n, "bad vertex count"))?);
                } else if c.parse::<usize>().map_err(|_| bad(n, "bad element count"))? != 0 {
                    return Err(bad(n, &format!("unsupported non-empty element `{name}`")));
                }
            }
            ["property", ty, name] if in_vertex => props.push((ty.to_string(), name.to_string())),
            ["property", ..] => {}
            _ => return Err(bad(n, &format!("unexpected header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| bad(0, "no vertex element"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|(_, p)| p == name)
            .ok_or_else(|| bad(0, &format!("missing property `{name}`")))
    };
    let pos = ["x", "y", "z"].map(col);
    let rgb = ["red", "green", "blue"].map(col);
    let scale = ["scale_0", "scale_1", "scale_2"].map(col);
    let rot = ["rot_0", "rot_1", "rot_2", "rot_3"].map(col);
    let opacity = col("opacity")?;
    let [p0, p1, p2] = pos;
    let pos = [p0?, p1?, p2?];
    let [c0, c1, c2] = rgb;
    let rgb = [c0?, c1?, c2?];
    let [s0, s1, s2] = scale;
    let scale = [s0?, s1?, s2?];
    let [r0, r1, r2, r3] = rot;
    let rot = [r0?, r1?, r2?, r3?];
    let mut gaussians = Vec::with_capacity(count);
    for (n, line) in lines.by_ref() {
        if gaussians.len() == count {
            if line.is_empty() {
                continue;
            }
            return Err(bad(n, "more records than declared"));
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad(n, &format!("bad number `{v}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != props.len() {
            return Err(bad(n, &format!("expected {} values, found {}", props.len(), vals.len())));
        }
        let color = rgb.map(|i| {
            if props[i].0 == "uchar" {
                vals[i] / 255.0
            } else {
                vals[i]
            }
        });
        gaussians.push(Gaussian {
            mean: pos.map(|i| vals[i]),
            rotation: Quat::from_array(rot.map(|i| vals[i])),
            scale: scale.map(|i| vals[i]),
            color,
            opacity: vals[opacity],
        });
    }
    if gaussians.len() != count {
        return Err(bad(0, &format!("declared {count} vertices, found {}", gaussians.len())));
    }
    Ok(GaussianSet { gaussians })
}

pub fn read_ply(path: &Path) -> Result<GaussianSet> {
    parse_ply(&read_text(path)?)
}
