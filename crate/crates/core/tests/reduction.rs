use forge_core::problems::{generate_toy_dataset, ToyConfig};
use forge_core::sfge::{train_sfge, SfgeConfig};
use forge_core::trainer::{train, Ablation, TrainerConfig};

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn gate_off_trainer_is_plain_sfge() {
    let ds = generate_toy_dataset(
        &ToyConfig {
            dim_y: 8,
            n_instances: 200,
            ..ToyConfig::default()
        },
        1,
    )
    .unwrap();
    for seed in [0, 3] {
        let cfg = TrainerConfig {
            beta: 0.0,
            ablation: Ablation {
                smoothing: false,
                pretrain: false,
                sharing: false,
                differentiation: false,
            },
            epochs: 10,
            patience: 10,
            record_trajectory: true,
            ..TrainerConfig::default()
        };
        let full = train(&ds, &cfg, seed).unwrap();
        let plain = train_sfge(
            &ds,
            &SfgeConfig {
                epochs: 10,
                patience: 10,
                hidden: cfg.hidden.clone(),
                ..SfgeConfig::default()
            },
            seed,
        )
        .unwrap();
        assert_eq!(full.metrics.trajectory.len(), plain.trajectory.len());
        for (k, (theta, e)) in full
            .metrics
            .trajectory
            .iter()
            .zip(&plain.trajectory)
            .enumerate()
        {
            assert_eq!(bits(theta), bits(&e.theta), "epoch {k} parameters differ");
            assert_eq!(
                full.metrics.epochs[k].val_regret.to_bits(),
                e.val_regret.to_bits()
            );
        }
        assert_eq!(full.metrics.solver_calls_total, plain.regret_evals);
        assert_eq!(full.metrics.surrogate_hit_rate, 0.0);
    }
}
