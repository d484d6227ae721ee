//! Planar pushing environments with closed-form ground-truth rewards.
//!
//! The arena is the unit square. An agent moves by clipped displacements and
//! pushes point objects that fall inside its contact radius. Tasks:
//!
//! * `Avoid`: one object to the goal while staying clear of an off-limits zone.
//! * `Group`: two objects to the goal, kept together on the way.
//! * `Clutter`: two rectangles to the goal together, four distractor cubes left
//!   where they started.
//!
//! Observations are a frozen random Fourier lift of the privileged state (plus
//! embodiment identity); they stand in for a pre-trained visual backbone.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::frames::FeatureSequence;
use crate::reward_models::RewardTrace;
use crate::rng;

pub type Vec2 = [f64; 2];

pub const GOAL: Vec2 = [0.5, 0.85];
pub const GOAL_RADIUS: f64 = 0.1;
pub const D_SAFETY: f64 = 0.15;
pub const HORIZON: usize = 40;
/// Half-width of the uniform box each spawn point is drawn from.
pub const SPAWN_JITTER: f64 = 0.005;
pub const FEATURE_DIM: usize = 64;
/// Weight of the distractor-cube displacement penalty in `Clutter`.
pub const CUBE_PENALTY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Avoid,
    Group,
    Clutter,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Avoid, TaskKind::Group, TaskKind::Clutter];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Avoid => "avoid",
            TaskKind::Group => "group",
            TaskKind::Clutter => "clutter",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn object_count(self) -> usize {
        match self {
            TaskKind::Avoid => 1,
            TaskKind::Group => 2,
            TaskKind::Clutter => 6,
        }
    }

    /// Length of the flat state vector produced by [`EnvState::to_vec`].
    pub fn state_len(self) -> usize {
        let base = 3 + 4 * self.object_count() + 2;
        match self {
            TaskKind::Avoid => base + 3,
            _ => base,
        }
    }

    /// Nominal spawn points: agent first, then objects.
    fn layout(self) -> (Vec2, &'static [Vec2]) {
        match self {
            TaskKind::Avoid => ([0.5, 0.2], &[[0.5, 0.35]]),
            TaskKind::Group => ([0.5, 0.25], &[[0.47, 0.42], [0.53, 0.5]]),
            TaskKind::Clutter => (
                [0.5, 0.3],
                &[
                    [0.4, 0.45],
                    [0.6, 0.45],
                    [0.25, 0.6],
                    [0.75, 0.6],
                    [0.3, 0.8],
                    [0.7, 0.8],
                ],
            ),
        }
    }
}

/// How contact is made. A gripper has two fingertips either side of the
/// heading direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Contact {
    Point,
    Fingers { half_spread: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Embodiment {
    pub name: &'static str,
    pub contact_radius: f64,
    pub max_step: f64,
    pub contact: Contact,
    /// Position of the identity coordinate set to 1 in the observation.
    pub identity: usize,
}

impl Embodiment {
    pub const COUNT: usize = 3;

    pub fn small() -> Self {
        Self {
            name: "small",
            contact_radius: 0.03,
            max_step: 0.04,
            contact: Contact::Point,
            identity: 0,
        }
    }

    pub fn medium() -> Self {
        Self {
            name: "medium",
            contact_radius: 0.06,
            max_step: 0.04,
            contact: Contact::Point,
            identity: 1,
        }
    }

    pub fn gripper() -> Self {
        Self {
            name: "gripper",
            contact_radius: 0.06,
            max_step: 0.04,
            contact: Contact::Fingers { half_spread: 0.02 },
            identity: 2,
        }
    }

    pub fn all() -> [Self; 3] {
        [Self::small(), Self::medium(), Self::gripper()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|e| e.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contact_radius > 0.0) || !(self.max_step > 0.0) {
            return Err(Error::InvalidConfig("embodiment radius and step must be > 0"));
        }
        Ok(())
    }

    fn contact_points(&self, agent: Vec2, heading: f64) -> ([Vec2; 2], usize) {
        match self.contact {
            Contact::Point => ([agent, agent], 1),
            Contact::Fingers { half_spread } => {
                let (s, c) = (libm::sin(heading), libm::cos(heading));
                let perp = [-s * half_spread, c * half_spread];
                (
                    [
                        [agent[0] + perp[0], agent[1] + perp[1]],
                        [agent[0] - perp[0], agent[1] - perp[1]],
                    ],
                    2,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zone {
    pub center: Vec2,
    pub d_safety: f64,
}

/// Privileged state. Derived distances are computed on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub task: TaskKind,
    pub agent: Vec2,
    pub heading: f64,
    /// Avoid: `[obj]`; Group: `[obj1, obj2]`; Clutter: `[rect1, rect2, cube1..4]`.
    pub objects: Vec<Vec2>,
    pub initial_objects: Vec<Vec2>,
    pub goal: Vec2,
    pub zone: Option<Zone>,
}

#[inline]
pub fn dist(a: Vec2, b: Vec2) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

fn clamp_unit(p: Vec2) -> Vec2 {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

impl EnvState {
    /// Deterministic initial state for `seed`: every spawn point is drawn
    /// uniformly from a small box around the task's nominal layout.
    pub fn initial(task: TaskKind, seed: u64) -> Self {
        let mut rng = rng::child(seed, 0x21, task as u64);
        let mut jitter = |p: Vec2| {
            [
                p[0] + rng.random_range(-SPAWN_JITTER..=SPAWN_JITTER),
                p[1] + rng.random_range(-SPAWN_JITTER..=SPAWN_JITTER),
            ]
        };
        let (agent, objects) = task.layout();
        let agent = jitter(agent);
        let objects: Vec<Vec2> = objects.iter().map(|&p| jitter(p)).collect();
        let zone = (task == TaskKind::Avoid).then_some(Zone {
            center: [0.5, 0.6],
            d_safety: D_SAFETY,
        });
        Self {
            task,
            agent,
            heading: PI / 2.0,
            initial_objects: objects.clone(),
            objects,
            goal: GOAL,
            zone,
        }
    }

    fn check(&self, task: TaskKind) -> Result<()> {
        let n = task.object_count();
        if self.task != task
            || self.objects.len() != n
            || self.initial_objects.len() != n
            || self.zone.is_some() != (task == TaskKind::Avoid)
        {
            return Err(Error::TaskMismatch);
        }
        Ok(())
    }

    /// Distance from object `i` to the goal region (zero inside it).
    pub fn d_goal2obj(&self, i: usize) -> f64 {
        (dist(self.objects[i], self.goal) - GOAL_RADIUS).max(0.0)
    }

    /// Distance from the (first) object to the off-limits zone centre.
    pub fn d_obs2obj(&self) -> Option<f64> {
        self.zone.map(|z| dist(self.objects[0], z.center))
    }

    /// `[agent, heading, objects, initial objects, goal, (zone, d_safety)]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.task.state_len());
        v.extend_from_slice(&self.agent);
        v.push(self.heading);
        for p in self.objects.iter().chain(&self.initial_objects) {
            v.extend_from_slice(p);
        }
        v.extend_from_slice(&self.goal);
        if let Some(z) = self.zone {
            v.extend_from_slice(&z.center);
            v.push(z.d_safety);
        }
        v
    }

    pub fn from_vec(task: TaskKind, v: &[f64]) -> Result<Self> {
        if v.len() != task.state_len() {
            return Err(Error::DimensionMismatch {
                expected: task.state_len(),
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        let n = task.object_count();
        let pt = |k: usize| [v[k], v[k + 1]];
        let objects = (0..n).map(|i| pt(3 + 2 * i)).collect();
        let initial_objects = (0..n).map(|i| pt(3 + 2 * n + 2 * i)).collect();
        let g = 3 + 4 * n;
        let zone = (task == TaskKind::Avoid).then(|| Zone {
            center: pt(g + 2),
            d_safety: v[g + 4],
        });
        Ok(Self {
            task,
            agent: pt(0),
            heading: v[2],
            objects,
            initial_objects,
            goal: pt(g),
            zone,
        })
    }

    pub fn in_bounds(&self) -> bool {
        let ok = |p: &Vec2| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]);
        ok(&self.agent) && self.objects.iter().all(ok)
    }
}

/// Clip `action` to the embodiment's step length, move, then push every
/// object whose distance to a post-move contact point is below the contact
/// radius by the component of the motion along the pre-move
/// contact-point-to-object direction.
pub fn step(state: &EnvState, action: Vec2, embodiment: &Embodiment) -> Result<EnvState> {
    if !action[0].is_finite() || !action[1].is_finite() {
        return Err(Error::NonFiniteAction);
    }
    let mut next = state.clone();
    let len = libm::hypot(action[0], action[1]);
    let scale = if len > embodiment.max_step {
        embodiment.max_step / len
    } else {
        1.0
    };
    let target = [
        state.agent[0] + action[0] * scale,
        state.agent[1] + action[1] * scale,
    ];
    next.agent = clamp_unit(target);
    let motion = [next.agent[0] - state.agent[0], next.agent[1] - state.agent[1]];
    let moved = libm::hypot(motion[0], motion[1]);
    if moved == 0.0 {
        return Ok(next);
    }
    next.heading = libm::atan2(motion[1], motion[0]);

    let (before, count) = embodiment.contact_points(state.agent, state.heading);
    let (after, _) = embodiment.contact_points(next.agent, next.heading);
    for obj in next.objects.iter_mut() {
        let mut push: Option<Vec2> = None;
        let mut best = 0.0;
        for k in 0..count {
            if dist(*obj, after[k]) >= embodiment.contact_radius {
                continue;
            }
            let d = [obj[0] - before[k][0], obj[1] - before[k][1]];
            let n = libm::hypot(d[0], d[1]);
            let dir = if n > 1e-12 {
                [d[0] / n, d[1] / n]
            } else {
                [motion[0] / moved, motion[1] / moved]
            };
            let along = motion[0] * dir[0] + motion[1] * dir[1];
            if along > best {
                best = along;
                push = Some([motion[0] / moved * along, motion[1] / moved * along]);
            }
        }
        if let Some(p) = push {
            *obj = clamp_unit([obj[0] + p[0], obj[1] + p[1]]);
        }
    }
    Ok(next)
}

/// `-d_goal2obj - 2 * 1[d_obs2obj < d_safety]`
pub fn avoid_reward(d_goal2obj: f64, d_obs2obj: f64, d_safety: f64) -> f64 {
    let penalty = if d_obs2obj < d_safety { 2.0 } else { 0.0 };
    -d_goal2obj - penalty
}

/// `-max(d_goal2obj^1, d_goal2obj^2) - |p1 - p2|`
pub fn group_reward(d_goal2obj1: f64, d_goal2obj2: f64, separation: f64) -> f64 {
    -d_goal2obj1.max(d_goal2obj2) - separation
}

/// Ground-truth reward of `state` under `task`.
pub fn gt_reward(state: &EnvState, task: TaskKind) -> Result<f64> {
    state.check(task)?;
    Ok(match task {
        TaskKind::Avoid => {
            let zone = state.zone.ok_or(Error::TaskMismatch)?;
            avoid_reward(
                state.d_goal2obj(0),
                dist(state.objects[0], zone.center),
                zone.d_safety,
            )
        }
        TaskKind::Group => group_reward(
            state.d_goal2obj(0),
            state.d_goal2obj(1),
            dist(state.objects[0], state.objects[1]),
        ),
        TaskKind::Clutter => {
            let displaced: f64 = (2..6)
                .map(|i| dist(state.objects[i], state.initial_objects[i]))
                .sum();
            group_reward(
                state.d_goal2obj(0),
                state.d_goal2obj(1),
                dist(state.objects[0], state.objects[1]),
            ) - CUBE_PENALTY * displaced
        }
    })
}

/// Input block a lift feature reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureGroup {
    /// Agent position and heading.
    Agent,
    /// Joint object coordinates.
    Objects,
    /// Object-to-goal (and zone) distances.
    Distances,
    /// Embodiment identity one-hot.
    Embodiment,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] = [
        FeatureGroup::Agent,
        FeatureGroup::Objects,
        FeatureGroup::Distances,
        FeatureGroup::Embodiment,
    ];

    /// `(feature count, frequency scale)` of the block.
    fn spec(self) -> (usize, f64) {
        match self {
            FeatureGroup::Agent => (16, 20.0),
            FeatureGroup::Objects => (24, 4.0),
            FeatureGroup::Distances => (16, 4.0),
            FeatureGroup::Embodiment => (8, 2.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Agent => "agent",
            FeatureGroup::Objects => "objects",
            FeatureGroup::Distances => "distances",
            FeatureGroup::Embodiment => "embodiment",
        }
    }
}

/// Frozen random Fourier features `cos(<omega_i, s_g(i)> + b_i)`, where each
/// feature reads a single input block `g(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLift {
    task: TaskKind,
    groups: Vec<FeatureGroup>,
    omegas: Vec<Vec<f64>>,
    phases: Vec<f64>,
}

impl FeatureLift {
    pub fn new(task: TaskKind, seed: u64) -> Self {
        let mut rng = rng::child(seed, 0x22, task as u64);
        let mut groups = Vec::with_capacity(FEATURE_DIM);
        let mut omegas = Vec::with_capacity(FEATURE_DIM);
        let mut phases = Vec::with_capacity(FEATURE_DIM);
        for group in FeatureGroup::ALL {
            let (count, scale) = group.spec();
            let width = Self::block_width(task, group);
            for _ in 0..count {
                let omega: Vec<f64> = (0..width)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                    .collect();
                groups.push(group);
                omegas.push(omega);
                phases.push(rng.random_range(0.0..2.0 * PI));
            }
        }
        debug_assert_eq!(groups.len(), FEATURE_DIM);
        Self {
            task,
            groups,
            omegas,
            phases,
        }
    }

    fn block_width(task: TaskKind, group: FeatureGroup) -> usize {
        match group {
            FeatureGroup::Agent => 4,
            FeatureGroup::Objects => 2 * task.object_count(),
            FeatureGroup::Distances => {
                task.object_count() + usize::from(task == TaskKind::Avoid)
            }
            FeatureGroup::Embodiment => Embodiment::COUNT,
        }
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn dim(&self) -> usize {
        self.groups.len()
    }

    /// Input block of every feature, in feature order.
    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    fn block(state: &EnvState, embodiment: &Embodiment, group: FeatureGroup) -> Vec<f64> {
        match group {
            FeatureGroup::Agent => vec![
                state.agent[0],
                state.agent[1],
                libm::cos(state.heading),
                libm::sin(state.heading),
            ],
            FeatureGroup::Objects => state.objects.iter().flatten().copied().collect(),
            FeatureGroup::Distances => {
                let mut d: Vec<f64> = (0..state.objects.len()).map(|i| state.d_goal2obj(i)).collect();
                d.extend(state.d_obs2obj());
                d
            }
            FeatureGroup::Embodiment => {
                let mut one_hot = vec![0.0; Embodiment::COUNT];
                one_hot[embodiment.identity.min(Embodiment::COUNT - 1)] = 1.0;
                one_hot
            }
        }
    }

    pub fn observe(&self, state: &EnvState, embodiment: &Embodiment) -> Result<Vec<f64>> {
        state.check(self.task)?;
        let blocks: Vec<Vec<f64>> = FeatureGroup::ALL
            .iter()
            .map(|&g| Self::block(state, embodiment, g))
            .collect();
        Ok(self
            .groups
            .iter()
            .zip(&self.omegas)
            .zip(&self.phases)
            .map(|((g, w), b)| {
                let input = &blocks[*g as usize];
                let arg: f64 = w.iter().zip(input).map(|(wi, si)| wi * si).sum();
                libm::cos(arg + b)
            })
            .collect())
    }
}

/// Something that picks an action from the current state.
pub trait Policy {
    fn act(&mut self, t: usize, state: &EnvState) -> Vec2;
}

/// Open-loop action list; steps past its end act as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence(pub Vec<Vec2>);

impl ActionSequence {
    pub fn zeros(horizon: usize) -> Self {
        Self(vec![[0.0, 0.0]; horizon])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> &[Vec2] {
        &self.0
    }
}

impl Policy for ActionSequence {
    fn act(&mut self, t: usize, _state: &EnvState) -> Vec2 {
        self.0.get(t).copied().unwrap_or([0.0, 0.0])
    }
}

impl Policy for &ActionSequence {
    fn act(&mut self, t: usize, _state: &EnvState) -> Vec2 {
        self.0.get(t).copied().unwrap_or([0.0, 0.0])
    }
}

/// Feedback policy from a closure.
pub struct FnPolicy<F>(pub F);

impl<F: FnMut(usize, &EnvState) -> Vec2> Policy for FnPolicy<F> {
    fn act(&mut self, t: usize, state: &EnvState) -> Vec2 {
        (self.0)(t, state)
    }
}

/// A rolled-out episode. `observations[t]` and `gt_rewards[t]` describe
/// `states[t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: TaskKind,
    pub embodiment: &'static str,
    pub seed: u64,
    pub states: Vec<EnvState>,
    pub observations: FeatureSequence,
    pub gt_rewards: RewardTrace,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.observations.len()
    }

    /// Undiscounted ground-truth return.
    pub fn gt_return(&self) -> f64 {
        self.gt_rewards.values().iter().sum()
    }

    /// Executed agent displacements; replaying them reproduces the episode.
    pub fn executed_actions(&self) -> ActionSequence {
        ActionSequence(
            self.states
                .windows(2)
                .map(|w| [w[1].agent[0] - w[0].agent[0], w[1].agent[1] - w[0].agent[1]])
                .collect(),
        )
    }

    pub fn final_state(&self) -> &EnvState {
        self.states.last().expect("trajectory has an initial state")
    }
}

/// Runs `policy` for `horizon` steps from `start`.
pub fn rollout_from<P: Policy + ?Sized>(
    policy: &mut P,
    start: EnvState,
    embodiment: &Embodiment,
    horizon: usize,
    seed: u64,
    lift: &FeatureLift,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be >= 1"));
    }
    let task = start.task;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut observations = FeatureSequence::with_capacity(lift.dim(), horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut state = start;
    for t in 0..horizon {
        let action = policy.act(t, &state);
        let next = step(&state, action, embodiment)?;
        observations.push(&lift.observe(&next, embodiment)?)?;
        rewards.push(gt_reward(&next, task)?);
        states.push(state);
        state = next;
    }
    states.push(state);
    Ok(Trajectory {
        task,
        embodiment: embodiment.name,
        seed,
        states,
        observations,
        gt_rewards: RewardTrace::new(rewards),
    })
}

/// Runs `policy` from the initial state drawn from `seed`.
pub fn rollout<P: Policy + ?Sized>(
    policy: &mut P,
    task: TaskKind,
    embodiment: &Embodiment,
    horizon: usize,
    seed: u64,
    lift: &FeatureLift,
) -> Result<Trajectory> {
    rollout_from(
        policy,
        EnvState::initial(task, seed),
        embodiment,
        horizon,
        seed,
        lift,
    )
}
