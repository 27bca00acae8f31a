#![allow(dead_code)]

pub mod oracle;
pub mod toy;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use patchwork::data::{load_index, Dataset, DatasetIndex};
use patchwork::fixture;
use patchwork::networks::NetConfig;

static FIXTURE_LOCK: Mutex<()> = Mutex::new(());

/// Fixture dataset of `n` faces, generated once per `(n, seed)` under the
/// target's scratch directory.
pub fn fixture_index(n: usize, seed: u64) -> DatasetIndex {
    let _g = FIXTURE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("fixture-{n}-{seed}"));
    let attr = dir.join(fixture::ATTR_FILE);
    if !attr.exists() {
        let tmp = dir.with_extension("partial");
        let _ = std::fs::remove_dir_all(&tmp);
        fixture::generate(&tmp, n, seed).unwrap();
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::rename(&tmp, &dir).unwrap();
    }
    load_index(&dir, &attr, &fixture::attribute_names()).unwrap()
}

pub fn fixture_dataset(n: usize, seed: u64, size: usize) -> Arc<Dataset> {
    Arc::new(Dataset::new(fixture_index(n, seed), size))
}

pub fn tiny_net(image_size: usize, patch_size: usize) -> NetConfig {
    NetConfig {
        image_size,
        patch_size,
        n_attributes: 2,
        base_channels: 2,
        n_res_blocks: 1,
    }
}
