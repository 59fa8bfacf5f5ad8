use std::collections::HashMap;

use multiexplore::env::{Action, EnvConfig, GridWorld, MapSpec, Pos, Task};
use multiexplore::nn::Params;
use multiexplore::novelty::RewardKind;
use multiexplore::trainer::{
    evaluate, random_actions, read_jsonl, run_episode, Ablations, EpisodeRecord, HeadChoice,
    LossRecord, RunConfig, Trainer,
};
use multiexplore::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick() -> RunConfig {
    RunConfig {
        map: "small".into(),
        total_steps: 1_500,
        steps_per_update: 100,
        niters: 2,
        batch_size: 64,
        buffer_capacity: 10_000,
        env: EnvConfig {
            max_ep_length: 200,
            ..EnvConfig::new(Task::Task1, 2)
        },
        ..RunConfig::default()
    }
}

#[test]
fn zero_steps_is_a_valid_empty_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        total_steps: 0,
        ..quick()
    };
    let summary = Trainer::new(&config, Some(dir.path()))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(summary.env_steps, 0);
    assert_eq!(summary.update_rounds, 0);
    assert_eq!(summary.episodes, 0);
    let metrics: Vec<EpisodeRecord> = read_jsonl(dir.path().join("metrics.jsonl")).unwrap();
    assert!(metrics.is_empty());
    for f in [
        "config.toml",
        "checkpoint.mxa",
        "visits.csv",
        "summary.json",
        "map.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn step_and_round_counts() {
    let dir = tempfile::tempdir().unwrap();
    let summary = Trainer::new(&quick(), Some(dir.path()))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(summary.env_steps, 1_500);
    assert_eq!(summary.update_rounds, 15);
    // 100 records are already stored when the first round is due.
    assert_eq!(summary.skipped_update_rounds, 0);
    assert_eq!(summary.learner_iterations, 30);
    let losses: Vec<LossRecord> = read_jsonl(dir.path().join("losses.jsonl")).unwrap();
    assert_eq!(losses.len(), 15);
    let episodes: Vec<EpisodeRecord> = read_jsonl(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(episodes.len() as u64, summary.episodes);
    for e in &episodes {
        assert!((e.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(e.length <= 200);
    }
    let steps: usize = episodes.iter().map(|e| e.length).sum();
    assert!(steps <= 1_500 && 1_500 - steps < 200);
}

#[test]
fn small_buffer_defers_updates() {
    let config = RunConfig {
        batch_size: 250,
        ..quick()
    };
    let s = Trainer::new(&config, None).unwrap().run().unwrap();
    assert_eq!(s.update_rounds, 15);
    assert_eq!(s.skipped_update_rounds, 2);
}

#[test]
fn fixed_head_never_touches_the_selector() {
    let config = RunConfig {
        heads: vec![RewardKind::Burrowing],
        ..quick()
    };
    let mut t = Trainer::new(&config, None).unwrap();
    let s = t.run().unwrap();
    assert!(s.episodes > 0);
    assert_eq!(s.selector_gradient_steps, 0);
    assert_eq!(t.selector().phi, vec![0.0]);

    let multi = Trainer::new(&quick(), None).unwrap().run().unwrap();
    assert_eq!(multi.selector_gradient_steps, multi.episodes * 2);
}

#[test]
fn all_independent_heads_share_rewards_not_parameters() {
    let config = RunConfig {
        ablation: Ablations {
            all_independent_heads: true,
            ..Ablations::default()
        },
        ..quick()
    };
    let mut t = Trainer::new(&config, None).unwrap();
    t.run().unwrap();
    let batch = t
        .buffer()
        .sample::<f32, _>(32, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let rewards = t.intrinsic_rewards(&batch).unwrap();
    assert_eq!(rewards.len(), 5);
    for j in 1..5 {
        assert_eq!(rewards[j], rewards[0]);
    }
    let actor = t.learner().actor(0);
    for j in 1..5 {
        assert_ne!(actor.heads[j].param_slices(), actor.heads[0].param_slices());
    }

    // Without the ablation the kinds differ somewhere on the same batch.
    let mut plain = Trainer::new(&quick(), None).unwrap();
    plain.run().unwrap();
    let batch = plain
        .buffer()
        .sample::<f32, _>(256, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let rewards = plain.intrinsic_rewards(&batch).unwrap();
    assert!((1..5).any(|j| rewards[j] != rewards[0]));
}

#[test]
fn visit_tables_match_the_trajectory() {
    let mut t = Trainer::new(&quick(), None).unwrap();
    t.record_trajectory(true);
    t.run().unwrap();
    let mut counts: HashMap<(usize, Pos), u64> = HashMap::new();
    for joint in t.trajectory().unwrap() {
        for (i, &p) in joint.iter().enumerate() {
            *counts.entry((i, p)).or_default() += 1;
        }
    }
    let map = t.env().map().clone();
    for i in 0..2 {
        for p in map.open_cells() {
            let want = counts.get(&(i, p)).copied().unwrap_or(0);
            assert_eq!(t.visits().count(i, p), want, "agent {i} at {p}");
        }
    }
    // One entry per reset plus one per step.
    let resets = t.episodes().len() as u64 + 1;
    assert_eq!(t.trajectory().unwrap().len() as u64, 1_500 + resets);
}

#[test]
fn same_seed_same_run_and_echo_reproduces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Trainer::new(&quick(), Some(a.path()))
        .unwrap()
        .run()
        .unwrap();
    let echoed = RunConfig::load(a.path().join("config.toml")).unwrap();
    Trainer::new(&echoed, Some(b.path()))
        .unwrap()
        .run()
        .unwrap();
    for f in ["metrics.jsonl", "losses.jsonl", "visits.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    assert_eq!(
        std::fs::read(a.path().join("checkpoint.mxa")).unwrap(),
        std::fs::read(b.path().join("checkpoint.mxa")).unwrap()
    );

    let other = RunConfig { seed: 1, ..quick() };
    let c = tempfile::tempdir().unwrap();
    Trainer::new(&other, Some(c.path())).unwrap().run().unwrap();
    assert_ne!(
        std::fs::read(a.path().join("losses.jsonl")).unwrap(),
        std::fs::read(c.path().join("losses.jsonl")).unwrap()
    );
}

#[test]
fn exploding_values_abort_naming_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        total_steps: 20_000,
        checkpoint_every: 100,
        env: EnvConfig {
            treasure_reward: 1e39,
            max_ep_length: 40,
            ..EnvConfig::new(Task::Task1, 2)
        },
        ..quick()
    };
    let err = Trainer::new(&config, Some(dir.path()))
        .unwrap()
        .run()
        .unwrap_err();
    match err {
        Error::NonFinite(msg) => assert!(msg.contains("checkpoint"), "{msg}"),
        other => panic!("unexpected error {other}"),
    }
    assert!(dir.path().join("checkpoint.mxa").exists());
}

#[test]
fn evaluation_is_deterministic_and_checks_the_config() {
    let dir = tempfile::tempdir().unwrap();
    Trainer::new(&quick(), Some(dir.path()))
        .unwrap()
        .run()
        .unwrap();
    let ckpt = dir.path().join("checkpoint.mxa");
    let a = evaluate(&ckpt, 5, HeadChoice::Greedy, 9, Some(&quick())).unwrap();
    let b = evaluate(&ckpt, 5, HeadChoice::Greedy, 9, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.treasures.len(), 5);
    let u = evaluate(&ckpt, 5, HeadChoice::Uniform, 9, None).unwrap();
    assert_eq!(u, evaluate(&ckpt, 5, HeadChoice::Uniform, 9, None).unwrap());
    assert!(evaluate(&ckpt, 1, HeadChoice::Fixed(5), 0, None).is_err());

    let mut wrong = quick();
    wrong.env.task = Task::Task3;
    let err = evaluate(&ckpt, 1, HeadChoice::Greedy, 0, Some(&wrong)).unwrap_err();
    assert!(err.to_string().contains("env.task"), "{err}");
    let mut wrong = quick();
    wrong.heads.pop();
    let err = evaluate(&ckpt, 1, HeadChoice::Greedy, 0, Some(&wrong)).unwrap_err();
    assert!(err.to_string().contains("heads"), "{err}");
    let mut wrong = quick();
    wrong.map = "default".into();
    let err = evaluate(&ckpt, 1, HeadChoice::Greedy, 0, Some(&wrong)).unwrap_err();
    assert!(
        err.to_string().contains("env.") || err.to_string().contains("map"),
        "{err}"
    );
}

#[test]
fn random_policy_rarely_finds_treasure_on_the_default_map() {
    let env = GridWorld::new(EnvConfig::new(Task::Task1, 2), MapSpec::default_map()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut policy_rng = ChaCha8Rng::seed_from_u64(1);
    let total: usize = (0..100)
        .map(|_| {
            run_episode(&env, &mut rng, |_, _| {
                Ok(random_actions(2, &mut policy_rng))
            })
            .unwrap()
            .treasures
        })
        .sum();
    assert!((total as f64 / 100.0) < 0.5, "{total}");
}

#[test]
fn scripted_policy_collects_both_treasures() {
    let map: MapSpec = "#####\n#A.B#\n#...#\n#SS.#\n#####\n".parse().unwrap();
    let config = EnvConfig {
        slip_prob: 0.0,
        ..EnvConfig::new(Task::Task1, 2)
    };
    let env = GridWorld::new(config, map.clone()).unwrap();
    let goals = [map.treasure_positions[0], map.treasure_positions[1]];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut found = Vec::new();
    for _ in 0..10 {
        let out = run_episode(&env, &mut rng, |state, _| {
            Ok(state
                .positions
                .iter()
                .zip(goals)
                .map(|(p, g)| {
                    if p.y > g.y {
                        Action::North
                    } else if p.x < g.x {
                        Action::East
                    } else if p.x > g.x {
                        Action::West
                    } else {
                        Action::Stay
                    }
                })
                .collect())
        })
        .unwrap();
        assert!(out.completed);
        found.push(out.treasures as f64);
    }
    assert_eq!(multiexplore::trainer::mean_std(&found), (2.0, 0.0));
}
