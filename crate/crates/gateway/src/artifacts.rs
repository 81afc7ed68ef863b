use std::io::{Cursor, Write};
use std::path::Path;

use richtx::attnmap::write_token_maps;
use richtx::regionfuse::write_diagnostics_jsonl;
use richtx::tensor::encode_rgb_png;
use richtx::GenerationResult;
use serde_json::json;
use zip::write::SimpleFileOptions;

pub const IMAGE_FILE: &str = "image.png";
pub const PLAIN_IMAGE_FILE: &str = "plain.png";
pub const TOKEN_MAP_DIR: &str = "tokenmaps";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const SUMMARY_FILE: &str = "result.json";

/// Writes a finished job's outputs into `dir` and returns the token-map
/// file names.
pub(crate) fn write_result(dir: &Path, res: &GenerationResult) -> std::io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let to_io = |e: richtx::Error| std::io::Error::other(e.to_string());
    std::fs::write(dir.join(IMAGE_FILE), encode_rgb_png(&res.image).map_err(to_io)?)?;
    std::fs::write(
        dir.join(PLAIN_IMAGE_FILE),
        encode_rgb_png(&res.plain_image).map_err(to_io)?,
    )?;
    let maps = dir.join(TOKEN_MAP_DIR);
    write_token_maps(&res.token_maps, &maps).map_err(to_io)?;
    let mut diag = Vec::new();
    write_diagnostics_jsonl(&res.diagnostics, &mut diag).map_err(to_io)?;
    std::fs::write(dir.join(DIAGNOSTICS_FILE), diag)?;
    let summary = json!({
        "plain_prompt": res.spans.plain_prompt,
        "region_prompts": res.region_prompts,
        "token_map_grid": [res.token_maps.grid.0, res.token_maps.grid.1],
    });
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(&summary)?)?;

    let mut names: Vec<String> = std::fs::read_dir(&maps)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(names)
}

/// Zip archive of every regular file directly inside `dir`, in name order.
pub fn zip_dir(dir: &Path) -> std::io::Result<Vec<u8>> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
        .collect();
    entries.sort_by_key(|e| e.file_name());
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    for e in entries {
        zip.start_file(e.file_name().to_string_lossy(), opts)
            .map_err(std::io::Error::other)?;
        zip.write_all(&std::fs::read(e.path())?)?;
    }
    Ok(zip.finish().map_err(std::io::Error::other)?.into_inner())
}
