//! Shared fixtures for integration tests: small phantom corpora and
//! miniature network specs that keep training-dynamics tests fast.

use std::path::Path;

use stainbridge_core::domain::CorpusStore;
use stainbridge_core::nets::{DiscriminatorSpec, GeneratorSpec};
use stainbridge_core::phantom::{generate_corpus, PhantomConfig};

#[allow(dead_code)]
pub fn tiny_generator() -> GeneratorSpec {
    GeneratorSpec {
        base_width: 6,
        n_blocks: 1,
    }
}

#[allow(dead_code)]
pub fn tiny_discriminator() -> DiscriminatorSpec {
    DiscriminatorSpec {
        in_channels: 3,
        widths: vec![8, 16],
    }
}

#[allow(dead_code)]
pub fn corpus(
    dir: &Path,
    seed: u64,
    n_slides: usize,
    patches_per_slide: usize,
    patch_size: usize,
    imbalance: f64,
) -> CorpusStore {
    let config = PhantomConfig {
        seed,
        patch_size,
        nuclei_per_patch: (2, 4),
        imbalance_target: imbalance,
        mitosis_rate: 1.0 / (1.0 + imbalance),
        ..Default::default()
    };
    generate_corpus(&config, n_slides, patches_per_slide, dir).expect("corpus generation");
    CorpusStore::open(dir).expect("corpus store")
}
