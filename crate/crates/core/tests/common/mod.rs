#![allow(dead_code)]

use std::path::PathBuf;

use spectral_cert::data::Configuration;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn tiny() -> Configuration {
    Configuration::from_path(&fixture("tiny.yaml")).unwrap()
}
