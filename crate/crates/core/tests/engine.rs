use coopfl_core::attack::{AttackKind, AttackSpec};
use coopfl_core::engine::{resolve_thresholds, run_experiment, ExperimentPlan, RunConfig, Simulation};
use coopfl_core::strategies::{CooperationMode, StrategyKind};

fn plan(seed: u64, rounds: usize) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(RunConfig {
        seed,
        rounds,
        env_steps_per_round: 48,
        train_steps_per_round: 24,
        ..RunConfig::default()
    });
    plan.dqn.batch_size = 16;
    plan
}

fn first_round(plan: &ExperimentPlan) -> Simulation {
    let mut sim = Simulation::new(plan.clone(), resolve_thresholds(plan).unwrap()).unwrap();
    sim.run_round().unwrap();
    sim
}

#[test]
fn attacks_leave_benign_clients_untouched_until_aggregation() {
    for kind in [AttackKind::ModelPoison, AttackKind::DataPoison, AttackKind::FreeRider] {
        let mut clean = plan(21, 1);
        clean.strategy.cooperation = CooperationMode::Fixed(0.0);
        let mut attacked = clean.clone();
        attacked.attack = AttackSpec::new(kind, [1, 3]);
        let a = first_round(&clean);
        let b = first_round(&attacked);
        for (x, y) in a.clients().iter().zip(b.clients()) {
            let benign = !attacked.attack.attackers.contains(&x.id);
            // Only data poisoning alters an attacker's own state.
            if benign || kind != AttackKind::DataPoison {
                assert_eq!(x.buffer, y.buffer, "{kind:?} client {}", x.id);
                assert_eq!(x.agent.params(), y.agent.params(), "{kind:?} client {}", x.id);
            } else {
                assert_ne!(x.buffer, y.buffer, "{kind:?} client {}", x.id);
            }
        }
    }
}

#[test]
fn benign_models_ignore_upload_attacks_at_zero_cooperation() {
    for strategy in [StrategyKind::FedAvg, StrategyKind::MemeDistillation, StrategyKind::MultiTask] {
        let mut clean = plan(22, 6);
        clean.strategy.kind = strategy;
        clean.strategy.cooperation = CooperationMode::Fixed(0.0);
        let reference = run_experiment(&clean).unwrap();
        for kind in [AttackKind::ModelPoison, AttackKind::FreeRider] {
            let mut attacked = clean.clone();
            attacked.attack = AttackSpec::new(kind, [0, 4]);
            let result = run_experiment(&attacked).unwrap();
            for i in [1, 2, 3, 5] {
                assert_eq!(result.final_models[i], reference.final_models[i], "{strategy:?} {kind:?} client {i}");
            }
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let mut base = plan(23, 4);
    base.attack = AttackSpec::new(AttackKind::ModelPoison, [2]);
    let mut results = Vec::new();
    for workers in [1, 3] {
        let mut p = base.clone();
        p.run.workers = workers;
        results.push(run_experiment(&p).unwrap());
    }
    assert_eq!(results[0].records, results[1].records);
    assert_eq!(results[0].final_models, results[1].final_models);
}

#[test]
fn cooperation_drops_under_heavy_model_poisoning() {
    let mean_benign_c = |attackers: usize| {
        let mut total = 0.0;
        let mut count = 0;
        for seed in 0..5 {
            let mut p = plan(300 + seed, 12);
            p.attack = AttackSpec::new(AttackKind::ModelPoison, 0..attackers);
            for r in run_experiment(&p).unwrap().records {
                for (c, benign) in r.client_cooperation.iter().zip(&r.benign) {
                    if *benign {
                        total += c;
                        count += 1;
                    }
                }
            }
        }
        total / count as f64
    };
    let clean = mean_benign_c(0);
    let attacked = mean_benign_c(4);
    assert!(attacked < clean, "benign c {attacked} under attack vs {clean} without");
}

#[test]
fn staged_schedule_counts_active_attackers() {
    let mut p = plan(24, 6);
    p.attack = AttackSpec::new(AttackKind::ModelPoison, 0..4);
    p.attack.stages = vec![4, 2, 0];
    p.attack.rounds_per_stage = 2;
    let active: Vec<usize> = run_experiment(&p).unwrap().records.iter().map(|r| r.attackers_active).collect();
    assert_eq!(active, [4, 4, 2, 2, 0, 0]);
}
