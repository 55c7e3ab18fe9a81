//! On-disk formats: tensor containers, vocabularies, manifests, embedding
//! tables, split files and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod split_file;
pub mod tensor_file;
pub mod vocab;

pub use checkpoint::RawCheckpoint;
pub use data::{
    load_dataset, parse_manifest_records, read_feature_file, resolve_samples, write_feature_file, write_manifest,
    Dataset, DatasetCounts, EmbeddingTable, FeatureSequence, ManifestRecord, Sample,
};
pub use split_file::SplitFile;
pub use vocab::{VocabFile, Vocabulary};
