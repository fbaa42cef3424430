//! Sequence-to-clip matching, gallery ranking, fusion and detection.

mod index;
mod matching;

pub use index::{
    acc_at_k, detect_pages, embed_queries, index_digest, rank_gallery, ClipEntry, DetectionRow, GalleryIndex, Mode,
    Query, RankedEntry, RankedResult,
};
pub use matching::{
    cost_table, detect_action, detection_success, fuse_ranks, interval_distance, order_by, page_bounds,
    ranks_from_scores, sequence_distance, sequence_distance_costs, DETECTION_TOLERANCE,
};
