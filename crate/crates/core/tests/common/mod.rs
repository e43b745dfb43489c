#![allow(dead_code)]

use std::path::PathBuf;

use examguard::dataset::{generate_synthetic, load_csv, Dataset, SynthSpec};
use examguard::encoder::{AssessmentManifest, Difficulty, Encoder, EncoderConfig, Label};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn default_manifest() -> AssessmentManifest {
    AssessmentManifest::uniform(Difficulty::Easy, 5).unwrap()
}

pub fn default_encoder() -> Encoder {
    Encoder::new(default_manifest(), EncoderConfig::default())
}

pub fn synth(n: usize, prior: f64, seed: u64) -> Dataset {
    generate_synthetic(&SynthSpec {
        n,
        suspected_prior: prior,
        seed,
        manifest: default_manifest(),
        encoder: EncoderConfig::default(),
    })
    .unwrap()
}

/// `per_class` samples of each label.
pub fn balanced(per_class: usize, seed: u64) -> Dataset {
    let pool = synth(per_class * 8, 0.5, seed);
    let mut picked = Vec::new();
    for label in Label::ALL {
        picked.extend(
            pool.samples()
                .iter()
                .filter(|s| s.label == label)
                .take(per_class)
                .cloned(),
        );
    }
    assert_eq!(picked.len(), 2 * per_class);
    Dataset::new("balanced", pool.provenance, picked)
}

pub fn lms_sample_encoder() -> Encoder {
    let manifest = AssessmentManifest::load(fixture("lms_sample_manifest.json")).unwrap();
    Encoder::new(manifest, EncoderConfig::default())
}

pub fn lms_sample() -> Dataset {
    load_csv(fixture("lms_sample.csv"), &lms_sample_encoder()).unwrap()
}

pub fn named(name: &str, ds: Dataset) -> Dataset {
    Dataset::new(name, ds.provenance, ds.samples().to_vec())
}
