#![no_main]
use libfuzzer_sys::fuzz_target;
use noisy_pull::engine::{AdversarySpec, Engine};
use noisy_pull::experiment::{ExperimentConfig, ProtocolKind};
use noisy_pull::ssf::SelfStabilizingSourceFilter;

// Parsed specs are applied to a small SSF population and run for a few
// rounds; rejected specs must fail with an error, never a panic.
fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<AdversarySpec>(data) else { return };
    let mut cfg = ExperimentConfig::new(ProtocolKind::Ssf, 16, 2, 1, 2, 0.05);
    cfg.m = Some(8);
    let pop = cfg.resolve().expect("fixed config resolves").population;
    let noisy_pull::engine::ProtocolParams::Ssf(params) = &pop.protocol else { unreachable!() };
    let engine = Engine::new(&pop, SelfStabilizingSourceFilter::new(params.clone())).expect("valid");
    if let Ok(mut state) = engine.adversarial_init(&spec) {
        engine.run_rounds(&mut state, 4);
    }
});
