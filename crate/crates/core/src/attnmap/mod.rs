//! From captured attention to per-span token maps.

mod aggregate;
mod container;
mod cross;
mod export;
mod label;
mod record;
mod spectral;
mod tokenmap;

pub use aggregate::{aggregate_self_attention, SimilarityMatrix};
pub use container::{
    decode_container, encode_container, read_container, write_container, ContainerHeader, TensorEntry, TensorKind,
};
pub use cross::{averaged_token_maps, normalize_cross_scores, reweighted_token_maps, token_softmax};
pub use export::{
    encode_png, export_token_maps, map_file_name, map_to_gray, token_map_index, write_token_maps, INDEX_FILE,
};
pub use label::{label_segments, min_max_normalize, LabelReducer, SegmentAssignment};
pub use record::{AttentionRecord, CaptureTag, CrossAttentionScores, SelfAttentionMap, DISCARD_ABOVE_T_NORM};
pub use spectral::{spectral_segment, SegmentSet, KMEANS_MAX_ITERS, KMEANS_TOLERANCE};
pub use tokenmap::{build_token_maps, import_external_masks, resample_maps, TokenMapSet, PARTITION_TOLERANCE};
