//! Simulation against the analytic layers, across module boundaries.

use nads::montecarlo::{roc_sweep, run, SimPlan};
use nads::streams::substream;
use nads::system_perf::{Method, SpatialSpec, SystemModel};
use nads::Hypothesis;
use rand::Rng;

fn within_se(rate: f64, expected: f64, trials: u64, k: f64) -> bool {
    let se = (expected * (1.0 - expected) / trials as f64).sqrt();
    (rate - expected).abs() <= k * se
}

#[test]
fn correlated_detection_at_four_sensors() {
    let model = SystemModel { m: 4, rho: vec![0.0], method: Method::Exact, ..Default::default() };
    let exact = model.evaluate().unwrap();
    let trials = 1_000_000;
    let sim = run(&SimPlan::new(model, Hypothesis::H1, trials, 2024)).unwrap();
    assert!(
        within_se(sim.network.rate, exact.p_d, trials, 3.0),
        "simulated {} vs exact {}",
        sim.network.rate,
        exact.p_d
    );
}

#[test]
fn single_sensor_miss_probability_matches_closed_form() {
    let model = SystemModel { m: 1, n: 9, rho: vec![0.2], ..Default::default() };
    let p_d_ncc = model.sensor_law().unwrap().p_d();
    let trials = 1_000_000;
    let roc = roc_sweep(&SimPlan::new(model, Hypothesis::H1, trials, 12), &[1e-6]).unwrap();
    let p_m_sim = 1.0 - roc[0].p_d_ncc.rate;
    assert!(within_se(p_m_sim, 1.0 - p_d_ncc, roc[0].p_d_ncc.trials, 3.0), "simulated {p_m_sim} vs {}", 1.0 - p_d_ncc);
}

#[test]
fn per_sensor_false_alarm_rate_is_eta() {
    let model = SystemModel { m: 1, eta1: 0.01, ..Default::default() };
    let trials = 10_000_000;
    let sim = run(&SimPlan::new(model, Hypothesis::H0, trials, 99)).unwrap();
    assert!(within_se(sim.snm.rate, 0.01, trials, 3.0), "{}", sim.snm.rate);
}

#[test]
fn analytic_values_inside_simulation_intervals() {
    let mut rng = substream(50, 0);
    let (mut inside, mut total) = (0, 0);
    while total < 50 {
        let n = rng.random_range(1..=6usize);
        let model = SystemModel {
            n,
            rho: if n > 1 { vec![rng.random_range(0.0..0.3)] } else { vec![] },
            m: rng.random_range(1..=5),
            spatial: SpatialSpec::Geometric { base: rng.random_range(0.0..0.6) },
            eta1: 10f64.powf(rng.random_range(-3.0..-0.5)),
            k: rng.random_range(0.3..3.0),
            sigma_mcc: rng.random_range(0.05..0.8),
            prior_h1: rng.random_range(0.2..0.8),
            method: Method::Exact,
            ..Default::default()
        };
        let truth = if rng.random::<bool>() { Hypothesis::H1 } else { Hypothesis::H0 };
        let r = model.evaluate().unwrap();
        let target = if truth == Hypothesis::H1 { r.p_d } else { r.p_f };
        if !(1e-3..=0.999).contains(&target) {
            continue;
        }
        total += 1;
        let sim = run(&SimPlan::new(model, truth, 100_000, rng.random())).unwrap();
        inside += sim.network.covers(target) as usize;
    }
    assert!(inside >= 45, "{inside}/50 inside");
}
