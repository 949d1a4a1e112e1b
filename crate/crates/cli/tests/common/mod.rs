#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lapnerf::dataset::DatasetManifest;
use lapnerf::field::{FieldConfig, HashGridConfig};
use lapnerf::synthetic::{fixture_render_settings, SyntheticConfig, SyntheticScene};
use lapnerf::train::TrainConfig;
use lapnerf_cli::commands::TrainFile;

pub fn lapnerf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lapnerf"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn small_scene(n_cameras: usize, size: u32) -> SyntheticScene {
    let base = SyntheticConfig::default();
    SyntheticScene::new(SyntheticConfig {
        n_cameras,
        width: size,
        height: size,
        focal: base.focal * size as f64 / base.width as f64,
        ..base
    })
}

/// Raw and prepared fixture under `dir`; returns the manifest and prepared dir.
pub fn prepared(dir: &Path, n_cameras: usize, size: u32) -> (DatasetManifest, PathBuf) {
    small_scene(n_cameras, size).build_prepared(dir).unwrap()
}

pub fn tiny_field() -> FieldConfig {
    FieldConfig {
        grid: HashGridConfig {
            levels: 4,
            table_size_log2: 10,
            features_per_level: 2,
            base_resolution: 4,
            max_resolution: 32,
        },
        density_hidden: 16,
        density_layers: 1,
        geo_features: 7,
        color_hidden: 16,
        color_layers: 2,
        sh_degree: 2,
    }
}

/// Writes a small-model training config next to the dataset.
pub fn write_tiny_config(manifest: &DatasetManifest, path: &Path, iterations: u64) {
    let train = TrainConfig {
        iterations,
        batch_size: 128,
        grid_resolution: 16,
        grid_threshold: Some(0.5),
        grid_warm_updates: 8,
        init_sigma: Some(1.0),
        lr_dense: 1e-2,
        render: Some(fixture_render_settings(&manifest.bounds)),
        ..TrainConfig::default()
    };
    let file = TrainFile {
        field: Some(tiny_field()),
        train: Some(train),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file).unwrap()).unwrap();
}
