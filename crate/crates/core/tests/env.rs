use proptest::prelude::*;
use rapl_core::env::{
    gt_reward, rollout, step, ActionSequence, Embodiment, EnvState, FeatureLift, TaskKind, Zone, FEATURE_DIM,
    HORIZON,
};
use rapl_core::Error;

fn group_state() -> EnvState {
    EnvState::initial(TaskKind::Group, 1)
}

#[test]
fn zero_action_leaves_state_unchanged() {
    for task in TaskKind::ALL {
        let s = EnvState::initial(task, 3);
        for e in Embodiment::all() {
            assert_eq!(step(&s, [0.0, 0.0], &e).unwrap(), s);
        }
    }
}

#[test]
fn distant_object_is_not_pushed() {
    let mut s = group_state();
    s.agent = [0.1, 0.1];
    s.objects = vec![[0.9, 0.9], [0.8, 0.9]];
    let next = step(&s, [0.01, 0.0], &Embodiment::medium()).unwrap();
    assert_eq!(next.objects, s.objects);
    assert!((next.agent[0] - 0.11).abs() < 1e-15);
}

#[test]
fn push_toward_object_moves_it_by_the_step() {
    let mut s = group_state();
    s.agent = [0.5, 0.5];
    s.heading = 0.0;
    s.objects = vec![[0.53, 0.5], [0.1, 0.9]];
    let next = step(&s, [0.02, 0.0], &Embodiment::medium()).unwrap();
    assert!((next.objects[0][0] - 0.55).abs() < 1e-12);
    assert!((next.objects[0][1] - 0.5).abs() < 1e-12);
    assert_eq!(next.objects[1], s.objects[1]);
}

#[test]
fn step_clips_to_max_step() {
    let mut s = group_state();
    s.agent = [0.5, 0.1];
    s.objects = vec![[0.9, 0.9], [0.8, 0.9]];
    let e = Embodiment::small();
    let next = step(&s, [0.0, 1.0], &e).unwrap();
    assert!((next.agent[1] - (0.1 + e.max_step)).abs() < 1e-12);
}

#[test]
fn non_finite_action_rejected() {
    let s = group_state();
    assert_eq!(step(&s, [f64::NAN, 0.0], &Embodiment::small()), Err(Error::NonFiniteAction));
    assert_eq!(step(&s, [0.0, f64::INFINITY], &Embodiment::small()), Err(Error::NonFiniteAction));
}

fn avoid_state(goal_dist: f64, zone_dist: f64, d_safety: f64) -> EnvState {
    let mut s = EnvState::initial(TaskKind::Avoid, 0);
    s.goal = [0.0, 0.0];
    // object on the x axis: d_goal2obj = |x| - goal radius
    let x = goal_dist + rapl_core::env::GOAL_RADIUS;
    s.objects = vec![[x, 0.0]];
    s.zone = Some(Zone {
        center: [x, zone_dist],
        d_safety,
    });
    s
}

#[test]
fn avoid_reward_examples() {
    let r = gt_reward(&avoid_state(1.0, 0.5, 0.3), TaskKind::Avoid).unwrap();
    assert!((r + 1.0).abs() < 1e-12);
    let r = gt_reward(&avoid_state(1.0, 0.2, 0.3), TaskKind::Avoid).unwrap();
    assert!((r + 3.0).abs() < 1e-12);
}

#[test]
fn group_and_clutter_zero_at_goal() {
    let mut s = group_state();
    s.objects = vec![s.goal, s.goal];
    assert_eq!(gt_reward(&s, TaskKind::Group).unwrap(), 0.0);

    let mut c = EnvState::initial(TaskKind::Clutter, 4);
    c.objects[0] = c.goal;
    c.objects[1] = c.goal;
    assert_eq!(gt_reward(&c, TaskKind::Clutter).unwrap(), 0.0);
}

#[test]
fn reward_task_mismatch() {
    let s = group_state();
    assert_eq!(gt_reward(&s, TaskKind::Avoid), Err(Error::TaskMismatch));
    assert_eq!(gt_reward(&s, TaskKind::Clutter), Err(Error::TaskMismatch));
}

#[test]
fn observe_is_deterministic_and_64_wide() {
    let lift = FeatureLift::new(TaskKind::Group, 7);
    let again = FeatureLift::new(TaskKind::Group, 7);
    let s = group_state();
    let a = lift.observe(&s, &Embodiment::medium()).unwrap();
    assert_eq!(a.len(), FEATURE_DIM);
    assert_eq!(a, again.observe(&s, &Embodiment::medium()).unwrap());
    assert_ne!(a, lift.observe(&s, &Embodiment::small()).unwrap());
}

#[test]
fn thousand_distinct_states_give_distinct_features() {
    use rand::{Rng, SeedableRng};
    let lift = FeatureLift::new(TaskKind::Group, 7);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let e = Embodiment::medium();
    let feats: Vec<Vec<f64>> = (0..1000)
        .map(|_| {
            let mut s = group_state();
            s.agent = [r.random(), r.random()];
            s.objects = vec![[r.random(), r.random()], [r.random(), r.random()]];
            lift.observe(&s, &e).unwrap()
        })
        .collect();
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            assert_ne!(feats[i], feats[j], "collision between states {i} and {j}");
        }
    }
}

#[test]
fn zero_policy_rollout_stays_put() {
    let lift = FeatureLift::new(TaskKind::Avoid, 2);
    let t = rollout(&mut ActionSequence::zeros(HORIZON), TaskKind::Avoid, &Embodiment::small(), HORIZON, 8, &lift)
        .unwrap();
    assert_eq!(t.states.len(), HORIZON + 1);
    assert!(t.states.iter().all(|s| *s == t.states[0]));
}

#[test]
fn rollout_is_reproducible_and_rewards_recompute() {
    let lift = FeatureLift::new(TaskKind::Clutter, 2);
    let actions = ActionSequence((0..HORIZON).map(|t| [0.01 * (t as f64).sin(), 0.03]).collect());
    let run = || rollout(&mut &actions, TaskKind::Clutter, &Embodiment::gripper(), HORIZON, 11, &lift).unwrap();
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.observations.len(), HORIZON);
    for (t, r) in a.gt_rewards.values().iter().enumerate() {
        assert_eq!(*r, gt_reward(&a.states[t + 1], TaskKind::Clutter).unwrap());
    }
}

#[test]
fn executed_actions_replay_the_episode() {
    let lift = FeatureLift::new(TaskKind::Group, 2);
    let actions = ActionSequence(vec![[0.0, 0.05]; HORIZON]);
    let a = rollout(&mut &actions, TaskKind::Group, &Embodiment::medium(), HORIZON, 4, &lift).unwrap();
    let replay = rollout(&mut a.executed_actions(), TaskKind::Group, &Embodiment::medium(), HORIZON, 4, &lift)
        .unwrap();
    for (s, r) in a.states.iter().zip(&replay.states) {
        for (x, y) in s.to_vec().iter().zip(r.to_vec()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn state_vector_round_trip() {
    for task in TaskKind::ALL {
        let s = EnvState::initial(task, 9);
        let v = s.to_vec();
        assert_eq!(v.len(), task.state_len());
        assert_eq!(EnvState::from_vec(task, &v).unwrap(), s);
    }
    assert_eq!(TaskKind::Group.state_len(), 3 + 8 + 2);
}

fn task() -> impl Strategy<Value = TaskKind> {
    prop::sample::select(TaskKind::ALL.to_vec())
}

fn embodiment() -> impl Strategy<Value = Embodiment> {
    prop::sample::select(Embodiment::all().to_vec())
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(x, y)| [x, y])
}

fn state() -> impl Strategy<Value = EnvState> {
    (task(), any::<u64>(), point(), -3.2..3.2f64, prop::collection::vec(point(), 6)).prop_map(
        |(task, seed, agent, heading, pts)| {
            let mut s = EnvState::initial(task, seed);
            s.agent = agent;
            s.heading = heading;
            let n = s.objects.len();
            s.objects = pts[..n].to_vec();
            s
        },
    )
}

proptest! {
    #[test]
    fn reward_is_never_positive(s in state()) {
        prop_assert!(gt_reward(&s, s.task).unwrap() <= 0.0);
    }

    #[test]
    fn arena_is_closed(s in state(), e in embodiment(), a in (-0.2..0.2f64, -0.2..0.2f64)) {
        let next = step(&s, [a.0, a.1], &e).unwrap();
        prop_assert!(next.in_bounds());
    }

    #[test]
    fn step_is_pure(s in state(), e in embodiment(), a in (-0.1..0.1f64, -0.1..0.1f64)) {
        prop_assert_eq!(step(&s, [a.0, a.1], &e).unwrap(), step(&s, [a.0, a.1], &e).unwrap());
    }

    #[test]
    fn step_never_exceeds_max_step(s in state(), e in embodiment(), a in (-0.2..0.2f64, -0.2..0.2f64)) {
        let next = step(&s, [a.0, a.1], &e).unwrap();
        let moved = rapl_core::env::dist(s.agent, next.agent);
        prop_assert!(moved <= e.max_step + 1e-12);
    }

    #[test]
    fn avoid_indicator_jumps_by_two(goal in 0.0..1.0f64, safety in 0.05..0.5f64, margin in 1e-6..0.04f64) {
        let outside = gt_reward(&avoid_state(goal, safety + margin, safety), TaskKind::Avoid).unwrap();
        let inside = gt_reward(&avoid_state(goal, safety - margin, safety), TaskKind::Avoid).unwrap();
        prop_assert!((outside - inside - 2.0).abs() < 1e-12);
    }
}
