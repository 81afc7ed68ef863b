//! The rich-text document schema.
//!
//! A document is a flat ordered list of text elements, each optionally
//! carrying attributes:
//!
//! ```json
//! {"version":"1","elements":[
//!   {"text":"a "},
//!   {"text":"church","attributes":{"color":[136,68,20]}}
//! ]}
//! ```
//!
//! Parsing goes through [`serde_json::Value`] so that validation errors can
//! name the offending element and field instead of surfacing a generic
//! deserializer message.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";

/// 8-bit RGB triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Rgb([r, g, b])
    }

    /// Channels scaled into `[0, 1]`.
    pub fn normalized(self) -> [f64; 3] {
        self.0.map(|c| f64::from(c) / 255.0)
    }

    pub fn distance_sq(self, other: Rgb) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| {
                let d = i32::from(a) - i32::from(b);
                (d * d) as u32
            })
            .sum()
    }
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}]", self.0[0], self.0[1], self.0[2])
    }
}

/// A path or URI naming an RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Rgb>,
    #[serde(default = "default_size_weight", skip_serializing_if = "is_unit_weight")]
    pub size_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footnote: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedded_image: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<Texture>,
}

fn default_size_weight() -> f64 {
    1.0
}

fn is_unit_weight(w: &f64) -> bool {
    *w == 1.0
}

impl Default for AttributeSet {
    fn default() -> Self {
        AttributeSet {
            style: None,
            color: None,
            size_weight: 1.0,
            footnote: None,
            embedded_image: None,
            texture: None,
        }
    }
}

impl AttributeSet {
    /// An empty set marks the element as part of the unformatted pool.
    pub fn is_empty(&self) -> bool {
        self.style.is_none()
            && self.color.is_none()
            && self.size_weight == 1.0
            && self.footnote.is_none()
            && self.embedded_image.is_none()
            && self.texture.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextElement {
    pub text: String,
    #[serde(default, skip_serializing_if = "AttributeSet::is_empty")]
    pub attributes: AttributeSet,
}

impl TextElement {
    pub fn plain(text: impl Into<String>) -> Self {
        TextElement {
            text: text.into(),
            attributes: AttributeSet::default(),
        }
    }

    pub fn with(text: impl Into<String>, attributes: AttributeSet) -> Self {
        TextElement {
            text: text.into(),
            attributes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichTextDocument {
    pub version: String,
    pub elements: Vec<TextElement>,
}

impl RichTextDocument {
    pub fn new(elements: Vec<TextElement>) -> Self {
        RichTextDocument {
            version: SCHEMA_VERSION.to_string(),
            elements,
        }
    }

    /// Concatenation of all element texts.
    pub fn plain_text(&self) -> String {
        self.elements.iter().map(|e| e.text.as_str()).collect()
    }

    pub fn formatted_count(&self) -> usize {
        self.elements.iter().filter(|e| !e.attributes.is_empty()).count()
    }

    /// Canonical JSON form. Re-parses to an equal document.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("document serialization is infallible")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::validation(
                None,
                "version",
                format!("unsupported schema version {:?}", self.version),
            ));
        }
        if self.elements.is_empty() {
            return Err(Error::validation(None, "elements", "document has no elements"));
        }
        for (i, el) in self.elements.iter().enumerate() {
            if el.text.is_empty() {
                return Err(Error::validation(Some(i), "text", "text is empty"));
            }
            let a = &el.attributes;
            if !(a.size_weight.is_finite() && a.size_weight > 0.0) {
                return Err(Error::validation(
                    Some(i),
                    "size_weight",
                    format!("must be a positive finite number, got {}", a.size_weight),
                ));
            }
            for (field, value) in [("style", &a.style), ("footnote", &a.footnote)] {
                if value.as_deref().is_some_and(|s| s.trim().is_empty()) {
                    return Err(Error::validation(Some(i), field, "must not be blank"));
                }
            }
            if let Some(img) = &a.embedded_image {
                if img.0.trim().is_empty() {
                    return Err(Error::validation(Some(i), "embedded_image", "empty reference"));
                }
            }
            if let Some(tex) = &a.texture {
                if tex.image.0.trim().is_empty() {
                    return Err(Error::validation(Some(i), "texture.image", "empty reference"));
                }
            }
        }
        if self.plain_text().trim().is_empty() {
            return Err(Error::validation(None, "elements", "document text is blank"));
        }
        Ok(())
    }
}

/// Parses and validates a UTF-8 JSON document.
pub fn parse_document(raw: &[u8]) -> Result<RichTextDocument> {
    let text = std::str::from_utf8(raw).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        message: "input is not valid UTF-8".to_string(),
    })?;
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    document_from_value(&value)
}

/// Validates an already-parsed JSON value against the document schema.
pub fn document_from_value(value: &Value) -> Result<RichTextDocument> {
    let root = value
        .as_object()
        .ok_or_else(|| Error::validation(None, "document", "expected a JSON object"))?;
    reject_unknown(root, &["version", "elements"], None, "document")?;
    let version = match root.get("version") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(Error::validation(None, "version", "expected a string")),
        None => return Err(Error::validation(None, "version", "missing")),
    };
    let elements = root
        .get("elements")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::validation(None, "elements", "expected an array"))?;

    let mut out = Vec::with_capacity(elements.len());
    for (i, el) in elements.iter().enumerate() {
        let obj = el
            .as_object()
            .ok_or_else(|| Error::validation(Some(i), "element", "expected an object"))?;
        reject_unknown(obj, &["text", "attributes"], Some(i), "element")?;
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::validation(Some(i), "text", "expected a string"))?
            .to_string();
        let attributes = match obj.get("attributes") {
            None | Some(Value::Null) => AttributeSet::default(),
            Some(Value::Object(attrs)) => parse_attributes(attrs, i)?,
            Some(_) => return Err(Error::validation(Some(i), "attributes", "expected an object")),
        };
        out.push(TextElement { text, attributes });
    }

    let doc = RichTextDocument { version, elements: out };
    doc.validate()?;
    Ok(doc)
}

fn parse_attributes(attrs: &Map<String, Value>, i: usize) -> Result<AttributeSet> {
    reject_unknown(
        attrs,
        &["style", "color", "size_weight", "footnote", "embedded_image", "texture"],
        Some(i),
        "attributes",
    )?;
    let mut set = AttributeSet::default();
    set.style = opt_string(attrs, "style", i)?;
    set.footnote = opt_string(attrs, "footnote", i)?;
    set.embedded_image = opt_string(attrs, "embedded_image", i)?.map(ImageRef);

    if let Some(v) = attrs.get("color").filter(|v| !v.is_null()) {
        set.color = Some(parse_color(v, i)?);
    }
    if let Some(v) = attrs.get("size_weight").filter(|v| !v.is_null()) {
        set.size_weight = v
            .as_f64()
            .ok_or_else(|| Error::validation(Some(i), "size_weight", "expected a number"))?;
    }
    if let Some(v) = attrs.get("texture").filter(|v| !v.is_null()) {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::validation(Some(i), "texture", "expected an object"))?;
        reject_unknown(obj, &["image", "description"], Some(i), "texture")?;
        let image = obj
            .get("image")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::validation(Some(i), "texture.image", "expected a string"))?;
        let description = match obj.get("description") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(Error::validation(Some(i), "texture.description", "expected a string")),
        };
        set.texture = Some(Texture {
            image: ImageRef(image.to_string()),
            description,
        });
    }
    Ok(set)
}

fn parse_color(v: &Value, i: usize) -> Result<Rgb> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 3)
        .ok_or_else(|| Error::validation(Some(i), "color", "expected an array of 3 integers"))?;
    let mut rgb = [0u8; 3];
    for (ch, c) in arr.iter().enumerate() {
        let n = c
            .as_i64()
            .ok_or_else(|| Error::validation(Some(i), &format!("color[{ch}]"), "expected an integer"))?;
        rgb[ch] = u8::try_from(n).map_err(|_| {
            Error::validation(
                Some(i),
                &format!("color[{ch}]"),
                format!("channel {ch} out of range 0-255: {n}"),
            )
        })?;
    }
    Ok(Rgb(rgb))
}

fn opt_string(attrs: &Map<String, Value>, key: &str, i: usize) -> Result<Option<String>> {
    match attrs.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::validation(Some(i), key, "expected a string")),
    }
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], element: Option<usize>, what: &str) -> Result<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::validation(element, k, format!("unknown {what} key"))),
        None => Ok(()),
    }
}

/// serde_json reports 1-based line and column (in bytes); convert to an
/// absolute byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
