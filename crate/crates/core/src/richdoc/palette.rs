use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::document::Rgb;
use crate::error::{Error, Result};

const COMMON_JSON: &str = include_str!("../../data/palettes/common.json");

/// Named colors. Names are unique; iteration is in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColorPalette {
    pub entries: BTreeMap<String, Rgb>,
}

impl ColorPalette {
    /// The 17 basic color names region prompts are quantized to.
    pub fn common() -> Self {
        Self::from_json(COMMON_JSON).expect("bundled palette is valid")
    }

    /// Parses a `name -> [r, g, b]` JSON map, rejecting duplicate names and
    /// out-of-range channels.
    pub fn from_json(text: &str) -> Result<Self> {
        let pairs = parse_ordered(text)?;
        let mut entries = BTreeMap::new();
        for (name, rgb) in pairs {
            if entries.insert(name.clone(), rgb).is_some() {
                return Err(Error::InvalidInput(format!("duplicate palette name {name:?}")));
            }
        }
        Ok(ColorPalette { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<Rgb> {
        self.entries.get(name).copied()
    }
}

/// Parses a palette file keeping the listing order.
pub fn parse_ordered(text: &str) -> Result<Vec<(String, Rgb)>> {
    // serde_json::Map without preserve_order sorts keys, so walk the raw
    // object with a visitor that keeps insertion order and duplicates.
    struct Ordered(Vec<(String, serde_json::Value)>);
    impl<'de> Deserialize<'de> for Ordered {
        fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
            struct V;
            impl<'de> serde::de::Visitor<'de> for V {
                type Value = Ordered;
                fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                    f.write_str("a map of color name to [r, g, b]")
                }
                fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> std::result::Result<Ordered, A::Error> {
                    let mut out = Vec::new();
                    while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                        out.push((k, v));
                    }
                    Ok(Ordered(out))
                }
            }
            d.deserialize_map(V)
        }
    }

    let Ordered(raw) = serde_json::from_str(text)?;
    raw.into_iter()
        .map(|(name, v)| {
            let chans: Vec<i64> = serde_json::from_value(v)
                .map_err(|_| Error::InvalidInput(format!("palette entry {name:?} is not an integer triplet")))?;
            if chans.len() != 3 {
                return Err(Error::InvalidInput(format!("palette entry {name:?} needs 3 channels")));
            }
            let mut rgb = [0u8; 3];
            for (dst, &c) in rgb.iter_mut().zip(&chans) {
                *dst = u8::try_from(c)
                    .map_err(|_| Error::InvalidInput(format!("palette entry {name:?} channel {c} out of range")))?;
            }
            Ok((name, Rgb(rgb)))
        })
        .collect()
}

/// Palette name closest to `rgb` in raw 0-255 RGB space. Ties go to the
/// lexicographically smallest name.
pub fn nearest_color_name(rgb: Rgb, palette: &ColorPalette) -> Result<&str> {
    let mut best: Option<(&str, u32)> = None;
    for (name, &c) in &palette.entries {
        let d = rgb.distance_sq(c);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((name, d));
        }
    }
    best.map(|(n, _)| n).ok_or(Error::EmptyPalette)
}
