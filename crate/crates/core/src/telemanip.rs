//! One-joint follower robot tracking the operator's rotation.
//!
//! The operator is a replayed trajectory; the robot only sees the commanded
//! angle each control tick and answers with an angular velocity, either
//! from a rate-limited proportional law or from a tabular Q-policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{SceneError, Trajectory, TrajectoryLabel, DEFAULT_FPS};

#[derive(Debug, Error)]
pub enum TelemanipError {
    #[error("invalid control config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    RateLimited,
    QLearned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkovGameConfig {
    pub discount: f64,
    /// Control period in seconds.
    pub dt: f64,
    /// Proportional gain, 1/s.
    pub gain: f64,
    /// Angular speed limit, deg/s.
    pub max_speed: f64,
    pub policy: PolicyKind,
}

impl Default for MarkovGameConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            dt: 1.0 / DEFAULT_FPS,
            gain: 10.0,
            max_speed: 120.0,
            policy: PolicyKind::RateLimited,
        }
    }
}

impl MarkovGameConfig {
    pub fn validate(&self) -> Result<(), TelemanipError> {
        let bad = |what: &str, v: f64| Err(TelemanipError::InvalidConfig(format!("{what} {v}")));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("timestep", self.dt);
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return bad("gain", self.gain);
        }
        if !(self.max_speed.is_finite() && self.max_speed > 0.0) {
            return bad("max speed", self.max_speed);
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount", self.discount);
        }
        Ok(())
    }
}

/// Uniform buckets over a closed error range; errors beyond it fall in the
/// outermost buckets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBins {
    pub count: usize,
    pub limit: f64,
}

impl Default for ErrorBins {
    fn default() -> Self {
        Self {
            count: 21,
            limit: 40.0,
        }
    }
}

impl ErrorBins {
    pub fn width(&self) -> f64 {
        2.0 * self.limit / self.count as f64
    }

    pub fn index(&self, err: f64) -> usize {
        let i = ((err + self.limit) / self.width()).floor();
        i.clamp(0.0, (self.count - 1) as f64) as usize
    }
}

pub const ACTIONS: [f64; 7] = [-90.0, -45.0, -15.0, 0.0, 15.0, 45.0, 90.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QLearningParams {
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub episodes: usize,
    pub episode_len: usize,
    /// Steps between redraws of the target.
    pub retarget_every: usize,
    /// Targets are drawn uniformly from `[-target_range, target_range]`.
    pub target_range: f64,
}

impl Default for QLearningParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            episodes: 500,
            episode_len: 150,
            retarget_every: 30,
            target_range: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPolicy {
    pub bins: ErrorBins,
    /// Angular velocities, deg/s.
    pub actions: Vec<f64>,
    /// Row per bucket, column per action.
    pub q: Vec<Vec<f64>>,
    pub params: QLearningParams,
    /// Undiscounted return of every training episode.
    pub returns: Vec<f64>,
}

impl QPolicy {
    fn zeros(bins: ErrorBins, params: QLearningParams) -> Self {
        Self {
            bins,
            actions: ACTIONS.to_vec(),
            q: vec![vec![0.0; ACTIONS.len()]; bins.count],
            params,
            returns: Vec::new(),
        }
    }

    /// Best action index in a bucket; ties go to the slowest action.
    pub fn greedy(&self, bucket: usize) -> usize {
        self.best_of(bucket, |_| true)
    }

    /// Greedy velocity restricted to actions that do not move away from
    /// the target. Sparsely visited edge buckets can otherwise point the
    /// wrong way.
    pub fn velocity(&self, err: f64) -> f64 {
        let bucket = self.bins.index(err);
        self.actions[self.best_of(bucket, |v| v * err >= 0.0)]
    }

    fn best_of(&self, bucket: usize, allowed: impl Fn(f64) -> bool) -> usize {
        let row = &self.q[bucket];
        let mut best: Option<usize> = None;
        for (a, &v) in self.actions.iter().enumerate() {
            if !allowed(v) {
                continue;
            }
            let better = best.is_none_or(|b| {
                row[a] > row[b] || (row[a] == row[b] && v.abs() < self.actions[b].abs())
            });
            if better {
                best = Some(a);
            }
        }
        best.expect("action set holds zero velocity")
    }
}

/// Episodic tabular Q-learning on the tracking error.
pub fn train_tracking_policy(
    cfg: &MarkovGameConfig,
    params: QLearningParams,
    seed: u64,
) -> Result<QPolicy, TelemanipError> {
    cfg.validate()?;
    if params.episodes == 0 || params.episode_len == 0 || params.retarget_every == 0 {
        return Err(TelemanipError::InvalidConfig(
            "episodes, episode length and retarget period must be positive".into(),
        ));
    }
    let mut policy = QPolicy::zeros(ErrorBins::default(), params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_actions = policy.actions.len();
    for ep in 0..params.episodes {
        let frac = if params.episodes > 1 {
            ep as f64 / (params.episodes - 1) as f64
        } else {
            1.0
        };
        let epsilon = params.epsilon_start + (params.epsilon_end - params.epsilon_start) * frac;
        let mut angle = 0.0;
        let mut target = 0.0;
        let mut total = 0.0;
        for t in 0..params.episode_len {
            if t % params.retarget_every == 0 {
                target = rng.random_range(-params.target_range..=params.target_range);
            }
            let s = policy.bins.index(target - angle);
            let a = if rng.random_bool(epsilon.clamp(0.0, 1.0)) {
                rng.random_range(0..n_actions)
            } else {
                policy.greedy(s)
            };
            angle += policy.actions[a] * cfg.dt;
            let reward = -(target - angle).abs();
            total += reward;
            let s2 = policy.bins.index(target - angle);
            let future = policy.q[s2].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let q = &mut policy.q[s][a];
            *q += params.learning_rate * (reward + cfg.discount * future - *q);
        }
        policy.returns.push(total);
    }
    Ok(policy)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Controller {
    RateLimited { gain: f64, max_speed: f64 },
    Learned(QPolicy),
}

impl Controller {
    pub fn rate_limited(cfg: &MarkovGameConfig) -> Self {
        Self::RateLimited {
            gain: cfg.gain,
            max_speed: cfg.max_speed,
        }
    }

    /// The controller named by `cfg.policy`; a Q-policy is trained first.
    pub fn from_config(cfg: &MarkovGameConfig, seed: u64) -> Result<Self, TelemanipError> {
        cfg.validate()?;
        Ok(match cfg.policy {
            PolicyKind::RateLimited => Self::rate_limited(cfg),
            PolicyKind::QLearned => {
                Self::Learned(train_tracking_policy(cfg, QLearningParams::default(), seed)?)
            }
        })
    }

    /// Commanded angular velocity for a tracking error, deg/s.
    pub fn velocity(&self, err: f64) -> f64 {
        match self {
            Self::RateLimited { gain, max_speed } => (gain * err).clamp(-max_speed, *max_speed),
            Self::Learned(p) => p.velocity(err),
        }
    }
}

pub fn follower_step(current: f64, target: f64, controller: &Controller, dt: f64) -> f64 {
    current + controller.velocity(target - current) * dt
}

/// Robot trajectory following `target`, starting on its first sample.
pub fn run_telemanipulation(
    target: &Trajectory,
    controller: &Controller,
    dt: f64,
) -> Result<Trajectory, TelemanipError> {
    let goal = target.angles();
    let mut angles = Vec::with_capacity(goal.len());
    let mut cur = goal[0];
    angles.push(cur);
    for &g in &goal[1..] {
        cur = follower_step(cur, g, controller, dt);
        angles.push(cur);
    }
    Ok(Trajectory::new(angles, target.fps(), TrajectoryLabel::Reconstructed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::gen_sinusoid;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn trained() -> &'static QPolicy {
        static P: OnceLock<QPolicy> = OnceLock::new();
        P.get_or_init(|| {
            let cfg = MarkovGameConfig {
                policy: PolicyKind::QLearned,
                ..Default::default()
            };
            train_tracking_policy(&cfg, QLearningParams::default(), 17).unwrap()
        })
    }

    fn rate() -> Controller {
        Controller::rate_limited(&MarkovGameConfig::default())
    }

    #[test]
    fn config_validation() {
        let ok = MarkovGameConfig::default();
        assert!(ok.validate().is_ok());
        assert!(MarkovGameConfig { dt: 0.0, ..ok }.validate().is_err());
        assert!(MarkovGameConfig { gain: -1.0, ..ok }.validate().is_err());
        assert!(MarkovGameConfig { max_speed: 0.0, ..ok }.validate().is_err());
        assert!(MarkovGameConfig { discount: 1.5, ..ok }.validate().is_err());
    }

    #[test]
    fn rate_limited_steps() {
        let dt = 1.0 / 30.0;
        assert_eq!(follower_step(7.0, 7.0, &rate(), dt), 7.0);
        assert!((follower_step(0.0, 3.0, &rate(), dt) - 1.0).abs() < 1e-12);
        assert!((follower_step(0.0, 30.0, &rate(), dt) - 4.0).abs() < 1e-12);
        assert!((follower_step(0.0, -30.0, &rate(), dt) + 4.0).abs() < 1e-12);
    }

    #[test]
    fn bins_cover_the_range() {
        let b = ErrorBins::default();
        assert!((b.width() - 80.0 / 21.0).abs() < 1e-12);
        assert_eq!(b.index(0.0), 10);
        assert_eq!(b.index(-40.0), 0);
        assert_eq!(b.index(40.0), 20);
        assert_eq!(b.index(-500.0), 0);
        assert_eq!(b.index(500.0), 20);
    }

    #[test]
    fn greedy_ties_prefer_standing_still() {
        let p = QPolicy::zeros(ErrorBins::default(), QLearningParams::default());
        assert_eq!(p.velocity(12.0), 0.0);
        let mut p = p;
        p.q[15] = vec![0.0, 0.0, 0.0, -1.0, -0.5, -0.5, -2.0];
        assert_eq!(p.actions[p.greedy(15)], -15.0);
    }

    #[test]
    fn learned_policy_rests_at_zero_error() {
        let p = trained();
        assert_eq!(p.velocity(0.0), 0.0);
        assert_eq!(follower_step(4.5, 4.5, &Controller::Learned(p.clone()), 1.0 / 30.0), 4.5);
    }

    #[test]
    fn learned_policy_tracks_a_step() {
        let c = Controller::Learned(trained().clone());
        let dt = 1.0 / 30.0;
        for goal in [-18.0, -7.0, 5.0, 12.0, 20.0] {
            let mut a = 0.0;
            for _ in 0..30 {
                a = follower_step(a, goal, &c, dt);
            }
            assert!((a - goal).abs() <= ErrorBins::default().width(), "goal {goal}: {a}");
        }
    }

    #[test]
    fn learning_improves_returns() {
        let r = &trained().returns;
        assert_eq!(r.len(), 500);
        let tail = r[r.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail > r[0], "{} -> {tail}", r[0]);
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = MarkovGameConfig::default();
        let params = QLearningParams {
            episodes: 40,
            ..Default::default()
        };
        let a = train_tracking_policy(&cfg, params, 3).unwrap();
        let b = train_tracking_policy(&cfg, params, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, train_tracking_policy(&cfg, params, 4).unwrap());
    }

    #[test]
    fn constant_target_is_a_fixed_point() {
        let t = Trajectory::new(vec![12.5; 40], 30.0, TrajectoryLabel::GroundTruth).unwrap();
        for c in [rate(), Controller::Learned(trained().clone())] {
            let r = run_telemanipulation(&t, &c, 1.0 / 30.0).unwrap();
            assert!(r.angles().iter().all(|a| *a == 12.5));
            assert_eq!(r.label(), TrajectoryLabel::Reconstructed);
        }
    }

    #[test]
    fn slow_sinusoid_is_tracked() {
        let t = gen_sinusoid(150, 20.0, 0.002).unwrap();
        let r = run_telemanipulation(&t, &rate(), 1.0 / 30.0).unwrap();
        assert_eq!(r.angles()[0], t.angles()[0]);
        let e = crate::metrics::rmse(t.angles(), r.angles(), None).unwrap();
        assert!(e <= 0.5, "{e}");
    }

    proptest! {
        #[test]
        fn rate_limited_never_overshoots(cur in -90.0f64..90.0, goal in -90.0f64..90.0) {
            let next = follower_step(cur, goal, &rate(), 1.0 / 30.0);
            prop_assert!((next - goal).abs() <= (cur - goal).abs() + 1e-12);
            prop_assert!((next - cur) * (goal - cur) >= 0.0);
        }

        #[test]
        fn learned_moves_toward_target(cur in -60.0f64..60.0, goal in -60.0f64..60.0) {
            let c = Controller::Learned(trained().clone());
            let dt = 1.0 / 30.0;
            let next = follower_step(cur, goal, &c, dt);
            prop_assert!((next - cur) * (goal - cur) >= 0.0);
            let quantum = ACTIONS.iter().fold(0.0f64, |m, a| m.max(a.abs())) * dt;
            prop_assert!((next - goal).abs() <= (cur - goal).abs().max(quantum) + 1e-12);
        }

        #[test]
        fn rate_limited_is_lipschitz_in_target(
            base in prop::collection::vec(-40.0f64..40.0, 2..60),
            noise in prop::collection::vec(-1.0f64..1.0, 60),
            delta in 0.0f64..5.0,
        ) {
            let a = Trajectory::new(base.clone(), 30.0, TrajectoryLabel::GroundTruth).unwrap();
            let moved: Vec<f64> = base.iter().zip(&noise).map(|(v, n)| v + delta * n).collect();
            let b = Trajectory::new(moved, 30.0, TrajectoryLabel::GroundTruth).unwrap();
            let ra = run_telemanipulation(&a, &rate(), 1.0 / 30.0).unwrap();
            let rb = run_telemanipulation(&b, &rate(), 1.0 / 30.0).unwrap();
            for (x, y) in ra.angles().iter().zip(rb.angles()) {
                prop_assert!((x - y).abs() <= delta + 1e-9);
            }
        }
    }
}
