use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use multiexplore::env::{EnvConfig, GridWorld, MapSpec, Task};
use multiexplore::novelty::{intrinsic_reward, RewardKind, VisitTable};
use multiexplore::replay::{ReplayBuffer, TransitionRecord};
use multiexplore::sac::{Learner, LearnerConfig};
use multiexplore::trainer::{net_dims, random_actions};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn world() -> GridWorld {
    GridWorld::new(EnvConfig::new(Task::Task1, 2), MapSpec::default_map()).unwrap()
}

fn env_step(c: &mut Criterion) {
    let env = world();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut state, _) = env.reset();
    c.bench_function("env_step", |b| {
        b.iter(|| {
            if state.done {
                state = env.reset().0;
            }
            let actions = random_actions(2, &mut rng);
            black_box(env.step(&mut state, &actions, &mut rng).unwrap());
        })
    });
}

fn novelty(c: &mut Criterion) {
    let env = world();
    let map = env.map().clone();
    let mut table = VisitTable::for_map(&map, 4, 0.7);
    let cells: Vec<_> = map.open_cells().collect();
    for (k, &p) in cells.iter().enumerate() {
        for _ in 0..(k % 17) {
            table.record_visit(k % 4, p);
        }
    }
    c.bench_function("novelty_rewards_5_kinds_4_agents", |b| {
        let mut k = 0;
        b.iter(|| {
            let cell = cells[k % cells.len()];
            k += 1;
            let f = table.novelties(cell);
            let kinds = [
                RewardKind::Independent,
                RewardKind::Minimum,
                RewardKind::Covering,
                RewardKind::Burrowing,
                RewardKind::LeaderFollower,
            ];
            for kind in kinds {
                for i in 0..4 {
                    black_box(intrinsic_reward(kind, &f, i).unwrap());
                }
            }
        })
    });
}

fn filled_buffer(env: &GridWorld, rng: &mut ChaCha8Rng) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(10_000, 2, env.state_dim(), env.obs_dim());
    let (mut state, mut obs) = env.reset();
    for _ in 0..5_000 {
        let actions = random_actions(2, rng);
        let out = env.step(&mut state, &actions, rng).unwrap();
        buf.push(&TransitionRecord {
            state: obs.state.clone(),
            next_state: out.observation.state.clone(),
            obs: obs.obs.clone(),
            next_obs: out.observation.obs.clone(),
            actions: actions.iter().map(|a| a.index()).collect(),
            extrinsic_reward: out.reward,
            done: out.terminated,
            next_cells: state.positions.clone(),
        })
        .unwrap();
        obs = out.observation;
        if state.done {
            (state, obs) = env.reset();
        }
    }
    buf
}

fn learner_updates(c: &mut Criterion) {
    let env = world();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let buf = filled_buffer(&env, &mut rng);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("learner_batch256");
    group.sample_size(20);
    for heads in [1usize, 5] {
        let dims = net_dims(&env, heads);
        let mut learner: Learner<f32> =
            Learner::new(dims, LearnerConfig::default(), &mut rng).unwrap();
        let intrinsic = vec![vec![Array1::<f32>::zeros(256); 2]; heads];
        group.bench_function(format!("critic_update_{heads}_heads"), |b| {
            b.iter_batched(
                || buf.sample::<f32, _>(256, &mut sample_rng).unwrap(),
                |batch| {
                    learner
                        .update_critics(&batch, &intrinsic, &mut rng)
                        .unwrap()
                },
                BatchSize::SmallInput,
            )
        });
        group.bench_function(format!("policy_update_{heads}_heads"), |b| {
            b.iter_batched(
                || buf.sample::<f32, _>(256, &mut sample_rng).unwrap(),
                |batch| learner.update_policies(&batch, &mut rng).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, env_step, novelty, learner_updates);
criterion_main!(benches);
