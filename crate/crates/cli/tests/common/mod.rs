#![allow(dead_code)]

use std::path::{Path, PathBuf};

use eapcr_cli::config::RunConfig;
use eapcr_core::synth::{AnomalyMix, SynthSpec};

/// Three sensors, 400 rows: small enough to train in well under a second.
pub fn tiny_spec() -> SynthSpec {
    SynthSpec {
        n_sensors: 3,
        length: 400,
        seasonal_period: 25.0,
        ar_coef: 0.5,
        coupling: 0.1,
        noise_sd: 0.5,
        anomaly_mix: AnomalyMix { point: 0.5, contextual: 0.0, collective: 0.5 },
        collective_run: [5, 10],
        sensors_per_event: 3,
        magnitude: 3.0,
        anomaly_fraction: 0.1,
    }
}

pub fn tiny_config() -> RunConfig {
    RunConfig {
        window: 12,
        bins: 8,
        epochs: 2,
        batch_size: 16,
        embed_width: 4,
        lstm_width: 6,
        conv1_channels: 2,
        conv2_channels: 4,
        branch_width: 6,
        seed: 3,
        ..RunConfig::default()
    }
}

pub fn write_tiny_data(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join(format!("tiny_{seed}.csv"));
    let table = eapcr_core::synth::synth_generate(&tiny_spec(), seed).unwrap();
    eapcr_cli::table::save_csv(&table, &path).unwrap();
    path
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

/// Parses a CSV written by the commands, skipping `#` lines.
pub fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}
