use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};

use super::tokenmap::TokenMapSet;
use crate::error::{Error, Result};
use crate::tensor::Map2;

pub const INDEX_FILE: &str = "index.json";

pub fn map_to_gray(m: &Map2) -> GrayImage {
    let (h, w) = m.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(255.0 * m[[y as usize, x as usize]]).round().clamp(0.0, 255.0) as u8])
    })
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Image {
        reference: "token map".into(),
        message: e.to_string(),
    })?;
    Ok(out.into_inner())
}

pub fn map_file_name(span_id: usize) -> String {
    format!("span_{span_id}.png")
}

/// Index JSON mapping each span id to its PNG file name, plus the grid.
pub fn token_map_index(set: &TokenMapSet) -> serde_json::Value {
    let mut index = serde_json::Map::new();
    for id in set.span_ids() {
        index.insert(id.to_string(), map_file_name(id).into());
    }
    index.insert("grid".into(), serde_json::json!([set.grid.0, set.grid.1]));
    serde_json::Value::Object(index)
}

/// In-memory export: file name to bytes, index included.
pub fn export_token_maps(set: &TokenMapSet) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for (&id, m) in &set.maps {
        files.insert(map_file_name(id), encode_png(&map_to_gray(m))?);
    }
    files.insert(INDEX_FILE.into(), serde_json::to_vec_pretty(&token_map_index(set))?);
    Ok(files)
}

pub fn write_token_maps(set: &TokenMapSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in export_token_maps(set)? {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_pngs_and_index() {
        let set = TokenMapSet {
            grid: (1, 2),
            maps: [(0, ndarray::array![[1.0, 0.5]]), (3, ndarray::array![[0.0, 0.5]])].into(),
        };
        let dir = tempfile::tempdir().unwrap();
        write_token_maps(&set, dir.path()).unwrap();
        let index: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(INDEX_FILE)).unwrap()).unwrap();
        assert_eq!(index["3"], "span_3.png");
        assert_eq!(index["grid"], serde_json::json!([1, 2]));
        let img = image::open(dir.path().join("span_0.png")).unwrap().to_luma8();
        assert_eq!(img.as_raw(), &vec![255, 128]);
    }
}
