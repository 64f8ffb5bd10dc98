use std::sync::{Arc, Mutex};

use drillsim::config::{Traversal, TraversalMode, TrialConfig};
use drillsim::controller::{run_batch, run_trial, Classification, CompletionSensor, Trial, TrialError};
use drillsim::exec::Execution;
use drillsim::specimen::{ShellSpecimen, SpecimenConfig};

/// Replays a fixed sequence and logs the removed volume it was shown.
struct Probe {
    script: Vec<f64>,
    tick: usize,
    seen: Arc<Mutex<Vec<f64>>>,
}

impl CompletionSensor for Probe {
    fn observe(&mut self, specimen: &ShellSpecimen, _: Option<(f64, f64)>) -> Result<Vec<f64>, TrialError> {
        self.seen.lock().unwrap().push(specimen.removal_field().iter().sum());
        let c = self.script[self.tick % self.script.len()];
        self.tick += 1;
        Ok(vec![c; 30])
    }
}

#[test]
fn each_period_uses_its_own_fresh_reading() {
    let script = vec![0.0, 0.8, 0.5, 0.7, 0.25];
    let seen = Arc::new(Mutex::new(Vec::new()));
    let probe = Probe { script: script.clone(), tick: 0, seen: seen.clone() };
    let config = TrialConfig::default();
    let step = config.v0 / config.frequency;
    let mut trial = Trial::with_sensor(config, Box::new(probe)).unwrap();
    let mut removed_after = Vec::new();
    for c in script.iter().cycle().take(20) {
        let before = trial.path().points()[7].z();
        trial.tick().unwrap();
        let drop = before - trial.path().points()[7].z();
        assert!((drop - (1.0 - c) * step).abs() < 1e-18, "descent used a stale reading");
        removed_after.push(trial.specimen().removal_field().iter().sum::<f64>());
    }
    // the sensor saw the specimen as left by the previous period
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0], 0.0);
    assert!(removed_after[5] > 0.0);
    assert_eq!(&seen[1..], &removed_after[..removed_after.len() - 1]);
}

fn quasi_static() -> TrialConfig {
    TrialConfig {
        traversal: Traversal { mode: TraversalMode::QuasiStatic, lap_period: 10.0 },
        specimen: SpecimenConfig::uniform(300e-6),
        ..TrialConfig::default()
    }
}

#[test]
fn quasi_static_oracle_follows_the_exponential() {
    let config = quasi_static();
    let h = 300e-6;
    let outcome = run_trial(config.clone()).unwrap();
    assert_eq!(outcome.classification, Classification::Success);
    let expected = h / config.v0 * (1.0f64 / 0.15).ln();
    assert!((outcome.drilling_time - expected).abs() / expected < 0.02);
    let sup = outcome
        .trace
        .iter()
        .map(|r| (r.c_true - (1.0 - (-config.v0 * r.t / h).exp())).abs())
        .fold(0.0, f64::max);
    assert!(sup < 0.01, "sup-norm error {sup}");
}

#[test]
fn trials_are_deterministic() {
    let mut config = TrialConfig::default();
    config.noise.sigma = 0.19;
    config.max_time = 20.0;
    let a = Trial::new(config.clone()).unwrap().run().unwrap();
    let b = Trial::new(config).unwrap().run().unwrap();
    assert_eq!(a, b);
}

#[test]
fn batches_match_across_execution_strategies() {
    let mut config = TrialConfig::default();
    config.noise.sigma = 0.19;
    config.max_time = 15.0;
    let seq = run_batch(&config, 4, 40, Execution::Sequential).unwrap();
    let par = run_batch(&config, 4, 40, Execution::Parallel).unwrap();
    let two = run_batch(&config, 4, 40, Execution::Threads(2)).unwrap();
    assert_eq!(seq, par);
    assert_eq!(seq, two);
    assert_eq!(seq.to_json(), par.to_json());
}

#[test]
fn oracle_batch_always_succeeds() {
    let summary = run_batch(&TrialConfig::default(), 20, 1, Execution::Parallel).unwrap();
    assert_eq!(summary.successes, 20, "{:?}", summary.failures);
    assert_eq!(summary.success_line, "success: 20/20 (100%)");
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let config = TrialConfig { points: 2, ..TrialConfig::default() };
    assert!(matches!(run_trial(config), Err(TrialError::Config(_))));
}

#[test]
fn oracle_descent_halts_at_the_inner_surface() {
    // stop rule out of reach: the points must settle on their own
    for mode in [TraversalMode::Swept, TraversalMode::QuasiStatic] {
        let mut config = TrialConfig {
            traversal: Traversal { mode, lap_period: 10.0 },
            specimen: SpecimenConfig::uniform(300e-6),
            max_time: 400.0,
            ..TrialConfig::default()
        };
        config.stop.completion_threshold = 1.0;
        config.stop.point_fraction = 1.0;
        config.specimen.membrane_tolerance = config.v0 / config.frequency;
        let outcome = Trial::new(config).unwrap().record_trace(false).run().unwrap();
        assert_ne!(outcome.classification, Classification::MembraneRupture, "{mode:?}");
        assert!(outcome.final_true.iter().all(|&c| c > 0.99), "{mode:?}");
    }
}
