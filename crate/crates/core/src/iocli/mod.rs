//! File formats, phrase-annotation ingestion, reports and the command line.
//!
//! Binary files start with an ASCII header (magic line, `KEY=value` lines,
//! blank line) followed by little-endian 32-bit payload words. Readers
//! name the byte offset of the first problem they find.

mod annotation;
mod binfmt;
pub mod cli;
mod config;
mod dataset;
mod embedding;
mod heatmap;
mod report;

pub use annotation::{
    ingest_phrases, parse_annotation_documents, Accessories, BodyAppearance, Clothing, IngestedPhrases,
    PhraseAnnotation, ANNOTATION_SCHEMA, CONTROLLED_TOKENS, DEFAULT_INGEST_PHRASES,
};
pub use config::{parse_key_values, parse_list, RunConfig, CONFIG_KEYS};
pub use dataset::{
    decode_images, decode_params, encode_images, encode_params, load_dataset, load_params, save_dataset,
    save_params, ANNOTATIONS_FILE, IMAGES_FILE, IMAGES_MAGIC, PARAMS_MAGIC, SCENES_FILE,
};
pub use embedding::{decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, EMBEDDING_MAGIC};
pub use heatmap::{quantize, read_heatmap, write_heatmap, HeatmapImage};
pub use report::{
    aggregate_sweeps, fmt_g6, parse_sweep, read_sweep, render_curves, render_loss_curve, render_report,
    render_sweep, sweep_header, write_report, SweepRow, REPORT_HEADER,
};
