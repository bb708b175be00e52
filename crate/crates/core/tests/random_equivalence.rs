use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcm_core::synth::{random_model, RandomSpec};
use rcm_core::{fove_continuous_with, ground_marginal, EngineOptions};

#[test]
fn lifted_matches_ground_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let spec = RandomSpec::default();
    let opts = EngineOptions { check_closure: true, ..Default::default() };
    let mut failures = Vec::new();
    for i in 0..300 {
        let m = random_model(&mut rng, &spec);
        let g = ground_marginal::<f64>(&m, 1000, None).unwrap();
        match fove_continuous_with::<f64>(&m, &opts) {
            Ok(r) => {
                let d = r.marginal.max_rel_diff(&g);
                if d > 1e-8 {
                    failures.push(format!("#{i}: deviation {d:e}\n{}", rcm_core::serialize_model(&m)));
                }
            }
            Err(e) => failures.push(format!("#{i}: {e}\n{}", rcm_core::serialize_model(&m))),
        }
    }
    assert!(
        failures.is_empty(),
        "{} failures\n{}",
        failures.len(),
        failures.iter().take(1).cloned().collect::<Vec<_>>().join("\n")
    );
}
