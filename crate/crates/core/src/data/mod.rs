//! Procedural word images, their on-disk form and batching.

mod corpus;
pub mod font;
mod io;
mod render;

pub use corpus::{
    generate_corpus, generate_samples, load_corpus, sample_text, text_overlap, write_corpus,
    Corpus, IMAGE_DIR, MANIFEST,
};
pub use io::{
    decode_pgm, encode_pgm, parse_manifest, read_manifest, read_pgm, write_manifest, write_pgm,
    ManifestRow,
};
pub use render::{render_sample, CorpusSpec, Sample};
