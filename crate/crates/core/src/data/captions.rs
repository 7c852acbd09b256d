use std::collections::BTreeSet;

use super::palette::{self, PANTS_COLORS, SHIRT_COLORS, SHOE_COLORS, SKIN_TONES};
use super::spec::{AvatarSpec, Sleeve};
use crate::rng::SeededRng;

pub const LONG_CAPTION_MAX_WORDS: usize = 40;
pub const SHORT_CAPTION_MIN_WORDS: usize = 8;
pub const SHORT_CAPTION_MAX_WORDS: usize = 16;
pub const NUM_SHORT_CAPTIONS: usize = 5;

const LONG_OPENER: &str =
    "a person with {skin} skin wearing a {sleeve} sleeve {shirt} shirt, {pants} pants and {shoes} shoes";

const SHORT_TEMPLATES: [&str; NUM_SHORT_CAPTIONS] = [
    "{shirt} shirt, {pants} pants, {shoes} shoes, {skin} skin, {sleeve} sleeves",
    "{skin} skin, {sleeve} sleeve {shirt} shirt, {pants} pants and {shoes} shoes",
    "wearing a {shirt} shirt with {sleeve} sleeves, {pants} pants, {shoes} shoes, {skin} skin",
    "{sleeve} sleeve {shirt} shirt over {pants} pants, {shoes} shoes, {skin} skin tone",
    "a person with {skin} skin in a {sleeve} sleeve {shirt} shirt and {pants} pants, {shoes} shoes",
];

const LONG_FILLER: [&str; 10] = [
    "standing upright",
    "facing forward",
    "in a neutral pose",
    "against a plain background",
    "with a relaxed posture",
    "shown in a full body view",
    "arms at the sides",
    "in a simple casual style",
    "under soft studio lighting",
    "looking straight ahead",
];

const SHORT_FILLER: [&str; 6] = [
    "standing",
    "casual outfit",
    "full body",
    "front view",
    "simple style",
    "plain background",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionSet {
    pub long: String,
    pub short: Vec<String>,
}

impl CaptionSet {
    /// Long caption first, then the short ones.
    pub fn all(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.long.as_str()).chain(self.short.iter().map(String::as_str))
    }

    /// One caption per line, long caption first.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in self.all() {
            s.push_str(c);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> crate::Result<CaptionSet> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != 1 + NUM_SHORT_CAPTIONS {
            return Err(crate::Error::parse(
                lines.len(),
                format!("expected {} captions, found {}", 1 + NUM_SHORT_CAPTIONS, lines.len()),
            ));
        }
        Ok(CaptionSet {
            long: lines[0].to_string(),
            short: lines[1..].iter().map(|s| s.to_string()).collect(),
        })
    }
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

fn fill(template: &str, spec: &AvatarSpec) -> String {
    template
        .replace("{skin}", spec.skin_name())
        .replace("{sleeve}", spec.sleeve.name())
        .replace("{shirt}", spec.shirt_name())
        .replace("{pants}", spec.pants_name())
        .replace("{shoes}", spec.shoes_name())
}

/// Caption set of `spec`; `seed` only picks the filler phrases.
pub fn gen_captions(spec: &AvatarSpec, seed: u64) -> CaptionSet {
    let mut rng = SeededRng::new(seed, 0);
    let mut long = fill(LONG_OPENER, spec);
    let mut pool: Vec<&str> = LONG_FILLER.to_vec();
    let extra = 1 + rng.below(4);
    for _ in 0..extra {
        let phrase = pool.remove(rng.below(pool.len()));
        if word_count(&long) + word_count(phrase) > LONG_CAPTION_MAX_WORDS {
            break;
        }
        long.push_str(", ");
        long.push_str(phrase);
    }
    let short = SHORT_TEMPLATES
        .iter()
        .map(|t| {
            let mut s = fill(t, spec);
            if rng.below(2) == 1 {
                let phrase = SHORT_FILLER[rng.below(SHORT_FILLER.len())];
                if word_count(&s) + word_count(phrase) <= SHORT_CAPTION_MAX_WORDS {
                    s.push_str(", ");
                    s.push_str(phrase);
                }
            }
            s
        })
        .collect();
    CaptionSet { long, short }
}

/// Lowercase words split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Every token the caption grammar can produce, sorted.
pub fn vocabulary() -> Vec<String> {
    let mut words = BTreeSet::new();
    let texts = std::iter::once(LONG_OPENER)
        .chain(SHORT_TEMPLATES)
        .chain(LONG_FILLER)
        .chain(SHORT_FILLER);
    for t in texts {
        for w in tokenize(t) {
            if !w.starts_with('{') && !w.ends_with('}') {
                words.insert(w);
            }
        }
    }
    for p in [&SKIN_TONES[..], &SHIRT_COLORS, &PANTS_COLORS, &SHOE_COLORS] {
        words.extend(p.iter().map(|s| s.name.to_string()));
    }
    words.extend(["long".to_string(), "short".to_string()]);
    words.into_iter().collect()
}

/// Attributes recovered from a caption; `None` where not mentioned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CaptionAttributes {
    pub skin: Option<usize>,
    pub shirt: Option<usize>,
    pub pants: Option<usize>,
    pub shoes: Option<usize>,
    pub sleeve: Option<Sleeve>,
}

impl CaptionAttributes {
    pub fn matches(&self, spec: &AvatarSpec) -> bool {
        self.skin == Some(spec.skin)
            && self.shirt == Some(spec.shirt)
            && self.pants == Some(spec.pants)
            && self.shoes == Some(spec.shoes)
            && self.sleeve == Some(spec.sleeve)
    }
}

/// Inverse of the grammar. Palettes are disjoint, so each color word
/// identifies its garment.
pub fn parse_caption(text: &str) -> CaptionAttributes {
    let mut out = CaptionAttributes::default();
    for w in tokenize(text) {
        if let Some(i) = palette::find(&SKIN_TONES, &w) {
            out.skin = Some(i);
        } else if let Some(i) = palette::find(&SHIRT_COLORS, &w) {
            out.shirt = Some(i);
        } else if let Some(i) = palette::find(&PANTS_COLORS, &w) {
            out.pants = Some(i);
        } else if let Some(i) = palette::find(&SHOE_COLORS, &w) {
            out.shoes = Some(i);
        } else if let Some(s) = Sleeve::parse(&w) {
            out.sleeve = Some(s);
        }
    }
    out
}
