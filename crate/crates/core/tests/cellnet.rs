use coopfl_core::cellnet::{EnvConfig, NetworkState, SleepMode};
use coopfl_core::rng::{stream, Purpose, SimRng};
use rand::Rng;

fn network(cfg: &EnvConfig, n: usize, seed: u64) -> NetworkState {
    NetworkState::new(cfg, n, &mut stream(seed, Purpose::Topology, &[]), &mut stream(seed, Purpose::Environment, &[]))
        .unwrap()
}

fn random_modes(rng: &mut SimRng, n: usize) -> Vec<SleepMode> {
    (0..n).map(|_| SleepMode::from_index(rng.random_range(0..3)).unwrap()).collect()
}

#[test]
fn energy_efficiency_balances_throughput_and_energy() {
    let cfg = EnvConfig::default();
    let mut net = network(&cfg, 6, 1);
    let mut rng = stream(1, Purpose::Client, &[0]);
    let dt = cfg.step_seconds();
    for _ in 0..300 {
        let modes = random_modes(&mut rng, 6);
        let out = net.step(&modes, &mut rng).unwrap();
        let lhs = out.energy_efficiency * out.total_energy();
        let rhs = out.system_throughput * dt;
        assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
        assert!(out.system_throughput >= 0.0 && out.total_energy() > 0.0);
        assert!(out.sbs_energy.iter().all(|e| *e >= 0.0));
    }
}

#[test]
fn all_active_maximizes_throughput() {
    let cfg = EnvConfig::default();
    let n = 4;
    let mut net = network(&cfg, n, 2);
    let mut rng = stream(2, Purpose::Client, &[0]);
    for step in 0..96 {
        let all_active = {
            let mut probe = net.clone();
            probe.step(&vec![SleepMode::Active; n], &mut stream(9, Purpose::Environment, &[step])).unwrap()
        };
        for code in 0..3usize.pow(n as u32) {
            let modes: Vec<SleepMode> =
                (0..n).map(|i| SleepMode::from_index(code / 3usize.pow(i as u32) % 3).unwrap()).collect();
            let mut probe = net.clone();
            let out = probe.step(&modes, &mut stream(9, Purpose::Environment, &[step])).unwrap();
            assert!(
                out.system_throughput <= all_active.system_throughput * (1.0 + 1e-12),
                "step {step} modes {modes:?}: {} > {}",
                out.system_throughput,
                all_active.system_throughput
            );
        }
        let modes = random_modes(&mut rng, n);
        net.step(&modes, &mut rng).unwrap();
    }
}

#[test]
fn same_seed_replays_identically() {
    let cfg = EnvConfig::default();
    let run = || {
        let mut net = network(&cfg, 6, 3);
        let mut rng = stream(3, Purpose::Client, &[1]);
        (0..50)
            .map(|_| {
                let modes = random_modes(&mut rng, 6);
                net.step(&modes, &mut rng).unwrap()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn traffic_scale_sets_the_demand_ratio() {
    let cfg = EnvConfig { ues_per_sbs: vec![5, 5], traffic_scale: vec![1.0, 0.5], ..EnvConfig::default() };
    let mut net = network(&cfg, 2, 4);
    let mut rng = stream(4, Purpose::Environment, &[7]);
    let mut sums = [0.0; 2];
    for _ in 0..4000 {
        for (i, cell) in net.sbs.iter().enumerate() {
            sums[i] += cell.ues.iter().map(|&u| net.ues[u].demand).sum::<f64>();
        }
        net.step(&[SleepMode::Active, SleepMode::Active], &mut rng).unwrap();
    }
    let ratio = sums[0] / sums[1];
    assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
}
