#![no_main]
use libfuzzer_sys::fuzz_target;
use noisy_pull::experiment::{self, ExperimentConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::from_json(text) else { return };
    let again = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(format!("{cfg:?}"), format!("{again:?}"));
    // Resolution allocates per agent for presets; keep populations small.
    if cfg.n > 100_000 || cfg.noise.as_ref().is_some_and(|m| m.d() > 16) {
        return;
    }
    let _ = cfg.resolve();
    if let Ok(cells) = experiment::sweep_cells(&cfg) {
        for cell in cells.iter().take(64).filter(|c| c.n <= 100_000) {
            let _ = cell.resolve();
        }
    }
});
