use pidrl::actor::ControllerParams;
use pidrl::analysis::{closed_loop_matrix, is_stable, spectral_radius};
use pidrl::artifacts::{load_critic, load_params, save_critic, save_params};
use pidrl::config::ExperimentConfig;
use pidrl::critic::Mlp;
use pidrl::env::DoneKind;
use pidrl::plant::PlantModel;
use pidrl::rl::{evaluate, train, Experience, ReplayMemory};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMALL: &str = r#"
seed = 7

[plant]
sections = [{ gain = 2.0, tau = 6.0 }]
dead_time = 1.0

[episode]
max_steps = 60

[[schedule]]
start = 0
level = [-2.0, -1.0, 1.0, 2.0]

[actor]
kp = 0.2
ki = 0.05
trainable = ["kp", "ki"]

[train]
episodes = 5
batch = 32
critic_hidden = [16, 16]
"#;

#[test]
fn trained_artifacts_round_trip_and_replay() {
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let mut env = cfg.env().unwrap();
    let mut tc = cfg.train_config();
    tc.seed = cfg.seed;
    let art = train(&tc, &mut env, cfg.initial_params().unwrap()).unwrap();
    assert_eq!(art.log.len(), 5);
    assert!(art.log.iter().all(|e| e.steps <= 60 && e.kd == 0.0 && e.rho == 0.0));

    let dir = tempfile::tempdir().unwrap();
    save_params(&dir.path().join("params.json"), &art.params.snapshot()).unwrap();
    save_critic(&dir.path().join("critic.bin"), &art.critic).unwrap();
    let snap = load_params(&dir.path().join("params.json")).unwrap();
    let critic = load_critic(&dir.path().join("critic.bin")).unwrap();
    assert_eq!(snap, art.params.snapshot());
    assert_eq!(critic, art.critic);

    // Evaluation with reloaded gains is the same roll-out.
    let k = ControllerParams::from_snapshot(snap, art.params.trainable);
    let a = evaluate(&mut env, &art.params, cfg.limits(), 11).unwrap();
    let b = evaluate(&mut env, &k, cfg.limits(), 11).unwrap();
    assert_eq!(a.total_reward.to_bits(), b.total_reward.to_bits());
    assert_eq!(a.records.len(), a.steps);
}

#[test]
fn fixed_stable_gains_track_example2() {
    let cfg = ExperimentConfig::parse(
        r#"
seed = 0
[plant]
sections = [{ gain = 1.0, tau = 1.0 }, { gain = 1.0, tau = 1.0 }, { gain = 1.0, tau = 1.0 }]
[[schedule]]
start = 0
level = 1.0
[actor]
simc = {}
[train]
limits = { u_min = 0.0, u_max = 2.0 }
"#,
    )
    .unwrap();
    let k = cfg.initial_params().unwrap();
    let mut env = cfg.env().unwrap();
    let ev = evaluate(&mut env, &k, cfg.limits(), 0).unwrap();
    assert_eq!(ev.done, DoneKind::Tracked);
    assert!(is_stable(&cfg.plant_model(), k.kp, k.ki, cfg.dt()).unwrap());
}

fn experience(i: usize) -> Experience {
    let s = pidrl::env::FeatureState { e_y: i as f64, ..Default::default() };
    Experience { state: s, action: 0.0, next_state: s, reward: -(i as f64), done: DoneKind::Running }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_memory_keeps_the_newest(capacity in 1usize..50, pushes in 0usize..200) {
        let mut m = ReplayMemory::new(capacity).unwrap();
        for i in 0..pushes {
            m.push(experience(i));
        }
        prop_assert_eq!(m.len(), pushes.min(capacity));
        let mut kept: Vec<usize> = m.iter().map(|e| e.state.e_y as usize).collect();
        kept.sort_unstable();
        let expected: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn critic_bytes_round_trip(seed in any::<u64>(), h1 in 1usize..12, h2 in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[h1, h2], &mut rng).unwrap();
        prop_assert_eq!(Mlp::from_bytes(&net.to_bytes()).unwrap(), net);
    }

    #[test]
    fn spectral_radius_matches_power_iteration(kp in -0.4f64..3.0, ki in 0.0f64..1.0) {
        // Independent estimate: ||M^n||^(1/n) tends to the spectral radius.
        let m = closed_loop_matrix(&PlantModel::example1(), kp, ki, 0.1).unwrap();
        let rho = spectral_radius(&m);
        let mut p = m.clone();
        let mut log_scale = 0.0;
        let n = 4000;
        for _ in 1..n {
            p = &p * &m;
            let s = p.norm();
            p /= s;
            log_scale += s.ln();
        }
        let estimate = ((log_scale + p.norm().ln()) / n as f64).exp();
        prop_assert!((estimate - rho).abs() < 5e-3, "power {} vs eig {}", estimate, rho);
    }
}
