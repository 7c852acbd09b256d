use super::palette::*;
use super::*;
use crate::body::{default_template, Region, DEFAULT_TEMPLATE_SEED};
use crate::gaussians::channel;
use crate::math::sigmoid;
use proptest::prelude::*;

fn template() -> crate::body::BodyTemplate {
    default_template(DEFAULT_TEMPLATE_SEED)
}

#[test]
fn specs_are_deterministic_and_streams_differ() {
    assert_eq!(gen_spec(3, 17), gen_spec(3, 17));
    let differ = (0..100u64).filter(|&s| gen_spec(s, 0) != gen_spec(s, 1)).count();
    assert!(differ >= 99);
    for i in 0..50 {
        gen_spec(9, i).validate().unwrap();
    }
}

#[test]
fn shirt_colors_are_uniform() {
    let mut counts = [0usize; 8];
    for i in 0..512 {
        counts[gen_spec(2024, i).shirt] += 1;
    }
    let mean = 512.0 / 8.0;
    let sd = (512.0 * (1.0 / 8.0) * (7.0 / 8.0) as f64).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn spec_text_round_trip_and_errors() {
    let s = gen_spec(5, 3);
    assert_eq!(AvatarSpec::from_text(&s.to_text()).unwrap(), s);
    let bad = s.to_text().replace(&format!("shirt = {}", s.shirt_name()), "shirt = plaid");
    assert!(matches!(AvatarSpec::from_text(&bad), Err(crate::Error::Parse { line: 2, .. })));
    let missing: String = s.to_text().lines().filter(|l| !l.starts_with("pose")).map(|l| format!("{l}\n")).collect();
    assert!(AvatarSpec::from_text(&missing).is_err());
}

fn spec_with(shirt: usize, sleeve: Sleeve, scale: f64) -> AvatarSpec {
    AvatarSpec {
        skin: 1,
        shirt,
        pants: 2,
        shoes: 3,
        sleeve,
        body_scale: scale,
        pose: 0,
        seed: 77,
    }
}

#[test]
fn attribute_map_paints_garments() {
    let tpl = template();
    let spec = spec_with(0, Sleeve::Short, 1.0);
    let map = spec_to_attribute_map(&spec, &tpl).unwrap();
    assert!(map.is_finite());
    let bands = texel_bands(&tpl, ATTRIBUTE_RESOLUTION).unwrap();
    let mut torso = 0;
    for (t, b) in bands.iter().enumerate() {
        let texel = map.texel(t % 64, t / 64);
        let Some((region, row)) = *b else {
            assert!(texel.iter().all(|&v| v == 0.0));
            continue;
        };
        for c in channel::SCALE {
            assert!(texel[c].abs() <= 0.05);
        }
        assert!((texel[channel::OPACITY] - 4.0).abs() <= 0.05);
        let rgb: Vec<f64> = channel::COLOR.map(|c| sigmoid(texel[c] as f64)).collect();
        let want = garment_color(&spec, region, row);
        for k in 0..3 {
            assert!((rgb[k] - want[k]).abs() < 0.06);
        }
        if is_shirt_band(region, row) {
            torso += 1;
            for k in 0..3 {
                assert!((rgb[k] - [1.0, 0.0, 0.0][k]).abs() < 0.06);
            }
        }
    }
    assert_eq!(torso, 32 * 24);
    let wide = spec_to_attribute_map(&spec_with(0, Sleeve::Short, 1.1), &tpl).unwrap();
    let (t, _) = bands.iter().enumerate().find(|(_, b)| b.is_some()).unwrap();
    let v = wide.texel(t % 64, t / 64)[channel::SCALE.start];
    assert!((v as f64 - 1.1f64.ln()).abs() <= 0.05);
}

#[test]
fn sleeves_change_arm_bands() {
    let long = spec_with(5, Sleeve::Long, 1.0);
    let short = spec_with(5, Sleeve::Short, 1.0);
    assert_eq!(garment_color(&long, Region::LeftArm, 5), SHIRT_COLORS[5].rgb);
    assert_eq!(garment_color(&short, Region::LeftArm, 5), SKIN_TONES[1].rgb);
    assert_eq!(garment_color(&long, Region::RightLeg, 9), SHOE_COLORS[3].rgb);
    assert_eq!(garment_color(&long, Region::Torso, 7), PANTS_COLORS[2].rgb);
}

#[test]
fn captions_respect_length_rules_and_parse_back() {
    for i in 0..200 {
        let spec = gen_spec(11, i);
        let caps = gen_captions(&spec, spec.seed);
        assert!(word_count(&caps.long) <= LONG_CAPTION_MAX_WORDS);
        assert_eq!(caps.short.len(), NUM_SHORT_CAPTIONS);
        let lens: Vec<usize> = caps.short.iter().map(|s| word_count(s)).collect();
        assert!(*lens.iter().max().unwrap() <= SHORT_CAPTION_MAX_WORDS);
        assert!(*lens.iter().min().unwrap() >= SHORT_CAPTION_MIN_WORDS);
        for c in caps.all() {
            assert!(parse_caption(c).matches(&spec), "{c}");
            let toks = tokenize(c);
            let k = toks.iter().position(|t| t == spec.shirt_name()).unwrap();
            assert_eq!(toks[k + 1], "shirt", "{c}");
        }
        assert_eq!(CaptionSet::from_text(&caps.to_text()).unwrap(), caps);
    }
}

#[test]
fn caption_seed_only_changes_filler() {
    let spec = gen_spec(1, 1);
    let a = gen_captions(&spec, 1);
    let mut any_diff = false;
    for s in 2..10 {
        let b = gen_captions(&spec, s);
        for (x, y) in a.all().zip(b.all()) {
            assert_eq!(parse_caption(x), parse_caption(y));
        }
        any_diff |= a != b;
    }
    assert!(any_diff);
    assert_eq!(gen_captions(&spec, 4), gen_captions(&spec, 4));
}

#[test]
fn vocabulary_covers_grammar() {
    let vocab = vocabulary();
    for i in 0..100 {
        let spec = gen_spec(3, i);
        for s in 0..3 {
            for c in gen_captions(&spec, s).all() {
                for t in tokenize(c) {
                    assert!(vocab.binary_search(&t).is_ok(), "{t}");
                }
            }
        }
    }
    assert_eq!(tokenize("Red shirt, BLUE pants!"), vec!["red", "shirt", "blue", "pants"]);
}

#[test]
fn hsv_classifier_recognises_palette() {
    assert_eq!(rgb_to_hsv([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
    assert_eq!(rgb_to_hsv([0.0, 0.0, 1.0]), [240.0, 1.0, 1.0]);
    assert_eq!(rgb_to_hsv([0.5, 0.5, 0.5])[1], 0.0);
    for (i, s) in SHIRT_COLORS.iter().enumerate() {
        assert_eq!(nearest_name(&SHIRT_COLORS, s.rgb), i);
        let dim = s.rgb.map(|c| c * 0.8 + 0.05);
        assert_eq!(nearest_name(&SHIRT_COLORS, dim), i, "{}", s.name);
    }
    for (i, s) in PANTS_COLORS.iter().enumerate() {
        assert_eq!(nearest_name(&PANTS_COLORS, s.rgb), i);
    }
}

#[test]
fn dataset_is_reproducible_and_loadable() {
    let tpl = template();
    let dir = tempfile::tempdir().unwrap();
    let m = build_dataset(&tpl, 8, 42, dir.path(), true).unwrap();
    assert_eq!(m.entries.len(), 8);
    assert_eq!(DatasetManifest::from_text(&m.to_text()).unwrap(), m);
    assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
    let snapshot: Vec<Vec<u8>> = m
        .entries
        .iter()
        .flat_map(|e| {
            let mut p = vec![e.spec.clone(), e.attributes.clone(), e.captions.clone()];
            p.extend(e.renders.clone());
            p
        })
        .map(|p| std::fs::read(dir.path().join(p)).unwrap())
        .collect();
    let m2 = build_dataset(&tpl, 8, 42, dir.path(), true).unwrap();
    assert_eq!(m, m2);
    let again: Vec<Vec<u8>> = m2
        .entries
        .iter()
        .flat_map(|e| {
            let mut p = vec![e.spec.clone(), e.attributes.clone(), e.captions.clone()];
            p.extend(e.renders.clone());
            p
        })
        .map(|p| std::fs::read(dir.path().join(p)).unwrap())
        .collect();
    assert_eq!(snapshot, again);
    assert_eq!(m.entries[0].renders.len(), 4);
    let loaded = load_dataset(dir.path()).unwrap();
    let direct = gen_samples(&tpl, 8, 42).unwrap();
    for (a, b) in loaded.iter().zip(&direct) {
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.attributes, b.attributes);
        assert_eq!(a.captions, b.captions);
    }
    assert!(build_dataset(&tpl, 0, 1, dir.path(), false).is_err());
    assert!(matches!(
        DatasetManifest::from_text("# seed = 1\n0\t1\tx\n"),
        Err(crate::Error::Parse { line: 2, .. })
    ));
}

#[test]
fn poses_are_valid() {
    let tpl = template();
    let bases = pose_bases(&tpl).unwrap();
    assert_eq!(bases.len(), POSE_NAMES.len());
    assert_ne!(bases[0].positions, bases[2].positions);
    assert!(pose_params(&tpl, 3).is_err());
}

proptest! {
    #[test]
    fn every_spec_round_trips(seed in any::<u64>(), index in 0u64..10_000) {
        let s = gen_spec(seed, index);
        prop_assert_eq!(AvatarSpec::from_text(&s.to_text()).unwrap(), s.clone());
        let caps = gen_captions(&s, seed);
        for c in caps.all() {
            prop_assert!(parse_caption(c).matches(&s));
        }
    }
}
