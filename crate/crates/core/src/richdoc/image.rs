use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use sha2::{Digest, Sha256};

use super::document::ImageRef;
use crate::error::{Error, Result};

/// Loads the images that documents reference.
pub trait ImageResolver: Send + Sync {
    fn resolve(&self, reference: &ImageRef) -> Result<RgbImage>;
}

/// Resolves plain paths and `file://` URIs, relative paths against `base`.
#[derive(Debug, Clone, Default)]
pub struct FsImageResolver {
    pub base: PathBuf,
}

impl FsImageResolver {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        FsImageResolver { base: base.into() }
    }
}

impl ImageResolver for FsImageResolver {
    fn resolve(&self, reference: &ImageRef) -> Result<RgbImage> {
        let raw = reference.as_str();
        let path = Path::new(raw.strip_prefix("file://").unwrap_or(raw));
        if raw.contains("://") && !raw.starts_with("file://") {
            return Err(Error::Image {
                reference: raw.to_string(),
                message: "only file paths and file:// URIs are supported".into(),
            });
        }
        let full = if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        };
        let img = image::open(&full).map_err(|e| Error::Image {
            reference: raw.to_string(),
            message: e.to_string(),
        })?;
        Ok(img.to_rgb8())
    }
}

/// In-memory images keyed by reference string.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageResolver {
    images: HashMap<String, RgbImage>,
}

impl MemoryImageResolver {
    pub fn insert(&mut self, reference: impl Into<String>, image: RgbImage) {
        self.images.insert(reference.into(), image);
    }
}

impl ImageResolver for MemoryImageResolver {
    fn resolve(&self, reference: &ImageRef) -> Result<RgbImage> {
        self.images
            .get(reference.as_str())
            .cloned()
            .ok_or_else(|| Error::Image {
                reference: reference.to_string(),
                message: "unknown image".into(),
            })
    }
}

/// Hex SHA-256 over the image dimensions and decoded RGB pixels, so the
/// same picture hashes identically regardless of file encoding.
pub fn content_hash(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Converts an embedded image into a textual footnote.
pub trait ImageToPrompt: Send + Sync {
    fn caption(&self, image: &RgbImage) -> std::result::Result<String, String>;
}

/// Caption lookup keyed by [`content_hash`]. Stands in for a learned
/// image-to-prompt inverter.
#[derive(Debug, Clone, Default)]
pub struct CaptionTable {
    captions: HashMap<String, String>,
}

impl CaptionTable {
    pub fn register(&mut self, image: &RgbImage, caption: impl Into<String>) {
        self.captions.insert(content_hash(image), caption.into());
    }

    pub fn register_hash(&mut self, hash: impl Into<String>, caption: impl Into<String>) {
        self.captions.insert(hash.into(), caption.into());
    }
}

impl ImageToPrompt for CaptionTable {
    fn caption(&self, image: &RgbImage) -> std::result::Result<String, String> {
        let hash = content_hash(image);
        self.captions
            .get(&hash)
            .cloned()
            .ok_or_else(|| format!("no caption registered for image {hash}; register one in the caption table"))
    }
}

/// Produces the footnote text for an embedded image.
pub fn resolve_embedded_image(
    reference: &ImageRef,
    images: &dyn ImageResolver,
    img2prompt: &dyn ImageToPrompt,
) -> Result<String> {
    let img = images.resolve(reference)?;
    img2prompt
        .caption(&img)
        .map_err(|message| Error::Caption { span_id: None, message })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(c: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(4, 4, image::Rgb(c))
    }

    #[test]
    fn table_lookup() {
        let mut images = MemoryImageResolver::default();
        images.insert("cat.png", solid([10, 20, 30]));
        images.insert("dog.png", solid([1, 2, 3]));
        let mut table = CaptionTable::default();
        table.register(&solid([10, 20, 30]), "a tabby cat");

        let r = ImageRef("cat.png".into());
        assert_eq!(resolve_embedded_image(&r, &images, &table).unwrap(), "a tabby cat");
        assert_eq!(resolve_embedded_image(&r, &images, &table).unwrap(), "a tabby cat");

        let err = resolve_embedded_image(&ImageRef("dog.png".into()), &images, &table).unwrap_err();
        assert!(matches!(err, Error::Caption { .. }));
        assert!(err.to_string().contains("register"));
    }

    #[test]
    fn unresolvable_reference() {
        let err = FsImageResolver::new("/nonexistent")
            .resolve(&ImageRef("missing.png".into()))
            .unwrap_err();
        assert!(matches!(err, Error::Image { .. }));
        let err = FsImageResolver::default()
            .resolve(&ImageRef("https://example.com/x.png".into()))
            .unwrap_err();
        assert!(matches!(err, Error::Image { .. }));
    }

    #[test]
    fn fs_round_trip_keeps_hash() {
        let dir = tempfile::tempdir().unwrap();
        let img = solid([200, 100, 50]);
        img.save(dir.path().join("t.png")).unwrap();
        let loaded = FsImageResolver::new(dir.path())
            .resolve(&ImageRef("t.png".into()))
            .unwrap();
        assert_eq!(content_hash(&loaded), content_hash(&img));
    }
}
