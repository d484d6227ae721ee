#![allow(dead_code)]

use rapl_core::env::{Embodiment, FeatureLift, TaskKind};
use rapl_core::oracle::{build_pool, TrajectoryPool};
use rapl_core::policy::Rollouts;

pub const SHORT: usize = 12;

pub fn lift() -> FeatureLift {
    FeatureLift::new(TaskKind::Group, 3)
}

pub fn rollouts(lift: &FeatureLift) -> Rollouts<'_> {
    Rollouts {
        task: TaskKind::Group,
        embodiment: Embodiment::medium(),
        lift,
        horizon: SHORT,
    }
}

pub fn pool(lift: &FeatureLift, size: usize, bins: usize, seed: u64) -> TrajectoryPool {
    build_pool(&rollouts(lift), &[], size, bins, seed).unwrap()
}
