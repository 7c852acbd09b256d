use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::captions::{gen_captions, CaptionSet};
use super::spec::{gen_spec, pose_params, spec_to_attribute_map, AvatarSpec, ATTRIBUTE_RESOLUTION, POSE_NAMES};
use crate::binio::{read_text, write_atomic};
use crate::body::{lbs_deform, BodyTemplate};
use crate::error::{Error, Result};
use crate::gaussians::{apply_offsets, build_base_gaussians, AttributeMap, BaseGaussians};
use crate::render::{render, Camera, Projection, RenderedImage};

pub const VIEW_YAWS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
pub const VIEW_RESOLUTION: usize = 64;
/// Vertical center and extent of the template, framing every view.
const FRAME_CENTER: [f64; 3] = [0.0, -0.04, 0.0];
const FRAME_HEIGHT: f64 = 1.9;
const VIEW_DISTANCE: f64 = 3.0;

/// Orthographic camera circling the avatar at `yaw` degrees.
pub fn view_camera(yaw: f64, resolution: usize) -> Result<Camera> {
    Camera::orbit(
        Projection::Orthographic {
            scale: resolution as f64 / FRAME_HEIGHT,
        },
        yaw,
        FRAME_CENTER,
        VIEW_DISTANCE,
        resolution,
        resolution,
        [0.0; 3],
    )
}

pub fn training_views(resolution: usize) -> Result<Vec<Camera>> {
    VIEW_YAWS.iter().map(|&y| view_camera(y, resolution)).collect()
}

/// Base Gaussians of every named pose at the attribute resolution.
pub fn pose_bases(template: &BodyTemplate) -> Result<Vec<BaseGaussians>> {
    (0..POSE_NAMES.len())
        .map(|id| {
            let mesh = lbs_deform(template, &pose_params(template, id)?)?;
            build_base_gaussians(&mesh, template, ATTRIBUTE_RESOLUTION)
        })
        .collect()
}

/// One generated avatar held in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub index: u64,
    pub spec: AvatarSpec,
    pub attributes: AttributeMap,
    pub captions: CaptionSet,
}

pub fn gen_sample(template: &BodyTemplate, seed: u64, index: u64) -> Result<Sample> {
    let spec = gen_spec(seed, index);
    let attributes = spec_to_attribute_map(&spec, template)?;
    let captions = gen_captions(&spec, spec.seed);
    Ok(Sample {
        index,
        spec,
        attributes,
        captions,
    })
}

/// Samples `0..n` of the set drawn with `seed`.
pub fn gen_samples(template: &BodyTemplate, n: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| gen_sample(template, seed, i))
        .collect()
}

/// Renders `attrs` on `base` from each camera.
pub fn render_views(base: &BaseGaussians, attrs: &AttributeMap, cameras: &[Camera]) -> Result<Vec<RenderedImage>> {
    let set = apply_offsets(base, attrs)?;
    cameras.iter().map(|c| Ok(render(&set, c)?.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: u64,
    pub seed: u64,
    pub spec: String,
    pub attributes: String,
    pub captions: String,
    pub renders: Vec<String>,
}

/// Index of a dataset directory; paths are relative to it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# index\tseed\tspec\tattributes\tcaptions\trenders";

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("# avatar dataset v1\n# seed = {}\n{MANIFEST_HEADER}\n", self.seed);
        for e in &self.entries {
            let renders = if e.renders.is_empty() {
                "-".to_string()
            } else {
                e.renders.join(",")
            };
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.index, e.seed, e.spec, e.attributes, e.captions, renders
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<DatasetManifest> {
        let mut seed = None;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("seed =") {
                    seed = Some(v.trim().parse().map_err(|_| Error::parse(n, "bad dataset seed"))?);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(Error::parse(n, format!("expected 6 tab-separated fields, found {}", cols.len())));
            }
            let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| Error::parse(n, format!("bad {what} `{s}`")));
            entries.push(ManifestEntry {
                index: num(cols[0], "index")?,
                seed: num(cols[1], "seed")?,
                spec: cols[2].to_string(),
                attributes: cols[3].to_string(),
                captions: cols[4].to_string(),
                renders: if cols[5] == "-" {
                    Vec::new()
                } else {
                    cols[5].split(',').map(str::to_string).collect()
                },
            });
        }
        let seed = seed.ok_or_else(|| Error::parse(0, "manifest has no `# seed =` line"))?;
        Ok(DatasetManifest { seed, entries })
    }

    pub fn load(dir: &Path) -> Result<DatasetManifest> {
        DatasetManifest::from_text(&read_text(&dir.join(MANIFEST_FILE))?)
    }
}

fn write_sample(
    dir: &Path,
    sample: &Sample,
    bases: Option<&[BaseGaussians]>,
    cameras: &[Camera],
) -> Result<ManifestEntry> {
    let stem = format!("{:05}", sample.index);
    let spec = format!("specs/{stem}.txt");
    let attributes = format!("attributes/{stem}.tatt");
    let captions = format!("captions/{stem}.txt");
    write_atomic(&dir.join(&spec), sample.spec.to_text().as_bytes())?;
    sample.attributes.save(&dir.join(&attributes))?;
    write_atomic(&dir.join(&captions), sample.captions.to_text().as_bytes())?;
    let mut renders = Vec::new();
    if let Some(bases) = bases {
        let images = render_views(&bases[sample.spec.pose], &sample.attributes, cameras)?;
        for (img, yaw) in images.iter().zip(VIEW_YAWS) {
            let path = format!("renders/{stem}_{:03}.ppm", yaw as u32);
            img.save(&dir.join(&path))?;
            renders.push(path);
        }
    }
    Ok(ManifestEntry {
        index: sample.index,
        seed: sample.spec.seed,
        spec,
        attributes,
        captions,
        renders,
    })
}

/// Writes `n` avatars under `out_dir` and returns the manifest, which is
/// written last.
pub fn build_dataset(
    template: &BodyTemplate,
    n: usize,
    seed: u64,
    out_dir: &Path,
    with_renders: bool,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one avatar"));
    }
    for sub in ["specs", "attributes", "captions", "renders"] {
        if sub == "renders" && !with_renders {
            continue;
        }
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let bases = if with_renders { Some(pose_bases(template)?) } else { None };
    let cameras = training_views(VIEW_RESOLUTION)?;
    let entries = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let sample = gen_sample(template, seed, i)?;
            write_sample(out_dir, &sample, bases.as_deref(), &cameras)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { seed, entries };
    write_atomic(&out_dir.join(MANIFEST_FILE), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

/// Reads every avatar listed in the manifest of `dir`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest = DatasetManifest::load(dir)?;
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let path = |p: &str| -> PathBuf { dir.join(p) };
            Ok(Sample {
                index: e.index,
                spec: AvatarSpec::from_text(&read_text(&path(&e.spec))?)?,
                attributes: AttributeMap::load(&path(&e.attributes))?,
                captions: CaptionSet::from_text(&read_text(&path(&e.captions))?)?,
            })
        })
        .collect()
}
