//! Embedding matrices and dataset manifests exchanged with the encoder toolchain.

mod emb;
mod manifest;

pub use emb::{read_embedding_file, write_embedding_file, EmbeddingMeta, EmbeddingSet, HEADER_LEN};
pub use manifest::{read_manifest, DatasetManifest, ManifestEntry, PromptFiles, Role};
