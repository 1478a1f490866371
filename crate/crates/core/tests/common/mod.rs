#![allow(dead_code)]

use std::path::PathBuf;

use ood_sentinel::calibration::{calibrate, CalibrationConfig, DetectorModel};
use ood_sentinel::embedding_io::{read_embedding_file, EmbeddingSet};
use ood_sentinel::recipe::parse_recipe;
use ood_sentinel::representation::EmbeddingInputs;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load(name: &str) -> EmbeddingSet {
    read_embedding_file(fixture(name)).unwrap()
}

/// Latent-only model fitted on the training cluster.
pub fn latent_model(recipe: &str, encoder: &str) -> DetectorModel {
    let train = load("id_train.emb");
    let mut config = CalibrationConfig::new(parse_recipe(recipe).unwrap());
    config.encoder = encoder.into();
    calibrate(
        &EmbeddingInputs {
            latents: Some(&train),
            ..Default::default()
        },
        &config,
    )
    .unwrap()
}
