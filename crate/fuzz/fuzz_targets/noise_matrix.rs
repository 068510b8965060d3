#![no_main]
use libfuzzer_sys::fuzz_target;
use noisy_pull::experiment;
use noisy_pull::noise::NoiseMatrix;

// Accepted matrices must round-trip and survive classification and
// uniformization without panicking.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = serde_json::from_str::<NoiseMatrix>(text) {
        let again: NoiseMatrix = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, again);
    }
    if let Ok((m, delta)) = experiment::load_noise(text) {
        if m.d() <= 16 {
            let _ = experiment::verify_noise(&m, delta);
        }
    }
});
