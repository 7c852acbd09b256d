use std::fmt::Write as _;

use super::palette::{self, Swatch, PANTS_COLORS, SHIRT_COLORS, SHOE_COLORS, SKIN_TONES};
use crate::body::{BodyParams, BodyTemplate, Region, UvRaster};
use crate::error::{Error, Result};
use crate::gaussians::{channel, AttributeMap, NUM_CHANNELS};
use crate::kv;
use crate::math::{logit, Quat};
use crate::rng::{hashed_uniform, mix64, SeededRng};

pub const ATTRIBUTE_RESOLUTION: usize = 64;
pub const BODY_SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const OPACITY_LOGIT: f32 = 4.0;
pub const MAP_NOISE: f32 = 0.05;
const COLOR_CLAMP: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sleeve {
    Long,
    Short,
}

impl Sleeve {
    pub fn name(self) -> &'static str {
        match self {
            Sleeve::Long => "long",
            Sleeve::Short => "short",
        }
    }

    pub fn parse(s: &str) -> Option<Sleeve> {
        match s {
            "long" => Some(Sleeve::Long),
            "short" => Some(Sleeve::Short),
            _ => None,
        }
    }
}

/// Named poses of the synthetic set.
pub const POSE_NAMES: [&str; 3] = ["rest", "relaxed", "stride"];

/// Joint rotations of pose `id`.
pub fn pose_params(template: &BodyTemplate, id: usize) -> Result<BodyParams> {
    let mut p = BodyParams::rest(template);
    let joint = |name: &str| {
        template
            .joints
            .iter()
            .position(|j| j.name == name)
            .ok_or_else(|| Error::InvalidTemplate(format!("template has no joint `{name}`")))
    };
    let deg = |d: f64| d.to_radians();
    match id {
        0 => {}
        1 => {
            p.theta[joint("left_shoulder")?] = Quat::from_axis_angle([0.0, 0.0, 1.0], deg(-12.0));
            p.theta[joint("right_shoulder")?] = Quat::from_axis_angle([0.0, 0.0, 1.0], deg(12.0));
            p.theta[joint("left_elbow")?] = Quat::from_axis_angle([1.0, 0.0, 0.0], deg(-15.0));
            p.theta[joint("right_elbow")?] = Quat::from_axis_angle([1.0, 0.0, 0.0], deg(-15.0));
        }
        2 => {
            p.theta[joint("left_hip")?] = Quat::from_axis_angle([1.0, 0.0, 0.0], deg(-18.0));
            p.theta[joint("right_hip")?] = Quat::from_axis_angle([1.0, 0.0, 0.0], deg(14.0));
            p.theta[joint("left_knee")?] = Quat::from_axis_angle([1.0, 0.0, 0.0], deg(12.0));
            p.theta[joint("left_shoulder")?] = Quat::from_axis_angle([1.0, 0.0, 0.0], deg(12.0));
            p.theta[joint("right_shoulder")?] = Quat::from_axis_angle([1.0, 0.0, 0.0], deg(-12.0));
        }
        _ => return Err(Error::invalid(format!("unknown pose id {id}"))),
    }
    Ok(p)
}

/// Appearance and body parameters of one synthetic avatar. Colors are
/// indices into the palettes of [`palette`].
#[derive(Debug, Clone, PartialEq)]
pub struct AvatarSpec {
    pub skin: usize,
    pub shirt: usize,
    pub pants: usize,
    pub shoes: usize,
    pub sleeve: Sleeve,
    pub body_scale: f64,
    pub pose: usize,
    /// Drives texel noise and caption filler.
    pub seed: u64,
}

/// Deterministic spec `index` of the set drawn with `seed`.
pub fn gen_spec(seed: u64, index: u64) -> AvatarSpec {
    let mut rng = SeededRng::new(seed, index);
    AvatarSpec {
        skin: rng.below(SKIN_TONES.len()),
        shirt: rng.below(SHIRT_COLORS.len()),
        pants: rng.below(PANTS_COLORS.len()),
        shoes: rng.below(SHOE_COLORS.len()),
        sleeve: if rng.below(2) == 0 { Sleeve::Long } else { Sleeve::Short },
        body_scale: rng.uniform_range(BODY_SCALE_RANGE.0, BODY_SCALE_RANGE.1),
        pose: rng.below(POSE_NAMES.len()),
        seed: mix64(seed ^ mix64(index)),
    }
}

impl AvatarSpec {
    pub fn skin_name(&self) -> &'static str {
        SKIN_TONES[self.skin].name
    }
    pub fn shirt_name(&self) -> &'static str {
        SHIRT_COLORS[self.shirt].name
    }
    pub fn pants_name(&self) -> &'static str {
        PANTS_COLORS[self.pants].name
    }
    pub fn shoes_name(&self) -> &'static str {
        SHOE_COLORS[self.shoes].name
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.skin < SKIN_TONES.len()
            && self.shirt < SHIRT_COLORS.len()
            && self.pants < PANTS_COLORS.len()
            && self.shoes < SHOE_COLORS.len()
            && self.pose < POSE_NAMES.len()
            && (BODY_SCALE_RANGE.0..=BODY_SCALE_RANGE.1).contains(&self.body_scale);
        if !ok {
            return Err(Error::invalid(format!("avatar spec out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "skin = {}", self.skin_name());
        let _ = writeln!(s, "shirt = {}", self.shirt_name());
        let _ = writeln!(s, "pants = {}", self.pants_name());
        let _ = writeln!(s, "shoes = {}", self.shoes_name());
        let _ = writeln!(s, "sleeve = {}", self.sleeve.name());
        let _ = writeln!(s, "body_scale = {:?}", self.body_scale);
        let _ = writeln!(s, "pose = {}", POSE_NAMES[self.pose]);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn from_text(text: &str) -> Result<AvatarSpec> {
        let entries = kv::parse(text)?;
        let get = |key: &str| {
            entries
                .iter()
                .find(|e| e.key == key)
                .ok_or_else(|| Error::parse(0, format!("missing key `{key}`")))
        };
        let named = |key: &str, pal: &[Swatch]| -> Result<usize> {
            let e = get(key)?;
            palette::find(pal, &e.value)
                .ok_or_else(|| Error::parse(e.line, format!("unknown {key} `{}`", e.value)))
        };
        let sleeve = get("sleeve")?;
        let pose = get("pose")?;
        let spec = AvatarSpec {
            skin: named("skin", &SKIN_TONES)?,
            shirt: named("shirt", &SHIRT_COLORS)?,
            pants: named("pants", &PANTS_COLORS)?,
            shoes: named("shoes", &SHOE_COLORS)?,
            sleeve: Sleeve::parse(&sleeve.value)
                .ok_or_else(|| Error::parse(sleeve.line, format!("unknown sleeve `{}`", sleeve.value)))?,
            body_scale: kv::parse_value(get("body_scale")?)?,
            pose: POSE_NAMES
                .iter()
                .position(|p| *p == pose.value)
                .ok_or_else(|| Error::parse(pose.line, format!("unknown pose `{}`", pose.value)))?,
            seed: kv::parse_value(get("seed")?)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Garment covering band `row` (in sixteenths of the atlas, counted from
/// the top of the chart) of `region`.
pub fn garment_color(spec: &AvatarSpec, region: Region, row: usize) -> [f64; 3] {
    let skin = SKIN_TONES[spec.skin].rgb;
    let shirt = SHIRT_COLORS[spec.shirt].rgb;
    let pants = PANTS_COLORS[spec.pants].rgb;
    let shoes = SHOE_COLORS[spec.shoes].rgb;
    match region {
        Region::Head => skin,
        Region::Torso => match row {
            0 => skin,
            1..=6 => shirt,
            _ => pants,
        },
        Region::LeftArm | Region::RightArm => {
            let covered = match spec.sleeve {
                Sleeve::Long => 7,
                Sleeve::Short => 3,
            };
            if row < covered {
                shirt
            } else {
                skin
            }
        }
        Region::LeftLeg | Region::RightLeg => {
            if row < 8 {
                pants
            } else {
                shoes
            }
        }
    }
}

/// Texels of the torso chart painted with the shirt color.
pub fn is_shirt_band(region: Region, row: usize) -> bool {
    region == Region::Torso && (1..=6).contains(&row)
}

/// Per-texel chart region and band row at `resolution`.
pub fn texel_bands(template: &BodyTemplate, resolution: usize) -> Result<Vec<Option<(Region, usize)>>> {
    let raster = UvRaster::build(template, resolution)?;
    let regions = raster.regions(template);
    Ok(regions
        .iter()
        .enumerate()
        .map(|(t, r)| {
            r.map(|region| {
                let v = raster.texel_uv(t)[1];
                let v0 = template.chart(region).map_or(0.0, |c| c.v0);
                let row = ((v - v0) * 16.0).floor().max(0.0) as usize;
                (region, row)
            })
        })
        .collect())
}

/// Ground-truth attribute map of `spec`. Uncovered texels stay zero.
pub fn spec_to_attribute_map(spec: &AvatarSpec, template: &BodyTemplate) -> Result<AttributeMap> {
    spec.validate()?;
    let res = ATTRIBUTE_RESOLUTION;
    let bands = texel_bands(template, res)?;
    let mut map = AttributeMap::zeros(res, res);
    let log_scale = spec.body_scale.ln() as f32;
    for (t, band) in bands.iter().enumerate() {
        let Some((region, row)) = *band else { continue };
        let color = garment_color(spec, region, row);
        let texel = map.texel_mut(t % res, t / res);
        for c in channel::SCALE {
            texel[c] = log_scale;
        }
        for (k, c) in channel::COLOR.enumerate() {
            texel[c] = logit(color[k].clamp(COLOR_CLAMP, 1.0 - COLOR_CLAMP)) as f32;
        }
        texel[channel::OPACITY] = OPACITY_LOGIT;
        for (c, v) in texel.iter_mut().enumerate().take(NUM_CHANNELS) {
            let u = hashed_uniform(&[spec.seed, t as u64, c as u64]) as f32;
            *v += MAP_NOISE * (2.0 * u - 1.0);
        }
    }
    Ok(map)
}
