//! Goal-level deep Q-learning: rewards, TD targets, epsilon-greedy goal
//! selection, the replay trainer and the episode loop.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{forward_q, Activations, NetShape, QMap, QNetwork};
use super::replay::ReplayBuffer;
use super::state::{build_state_tensor, CentroidMask, LiftedState, StateTensor};
use super::RlError;
use crate::episode::{SearchContext, SearchEpisode};
use crate::world::{Cell, EpisodeSpec, Heading, ObjectPlacement, Outcome, Pose};

/// Reward per executed primitive.
pub const R_STEP: f64 = -0.01;
/// Bonus when a decision ends in a successful declaration.
pub const R_SUCCESS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Gradient steps between target-network copies.
    pub target_sync_every: u64,
    pub episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub hidden: usize,
    pub kernel: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            learning_rate: 1e-3,
            batch_size: 64,
            buffer_capacity: 50_000,
            target_sync_every: 2000,
            episodes: 5000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.8,
            hidden: 16,
            kernel: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be at least batch_size > 0");
        }
        if self.target_sync_every == 0 {
            return bad("target_sync_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon endpoints must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilon_decay_fraction must lie in [0, 1]");
        }
        self.net_shape().validate()
    }

    pub fn net_shape(&self) -> NetShape {
        NetShape {
            hidden: self.hidden,
            kernel: self.kernel,
            ..NetShape::default()
        }
    }
}

/// Linear decay from `epsilon_start` at episode 0 to `epsilon_end` at
/// `floor(decay_fraction · episodes)`, constant afterwards.
pub fn epsilon_at(episode: usize, cfg: &TrainConfig) -> f64 {
    let end = (cfg.epsilon_decay_fraction * cfg.episodes as f64).floor() as usize;
    if episode >= end {
        cfg.epsilon_end
    } else {
        cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * (episode as f64 / end as f64)
    }
}

/// Reward of one goal decision.
pub fn compute_reward(primitives: usize, success: bool) -> f64 {
    primitives as f64 * R_STEP + if success { R_SUCCESS } else { 0.0 }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Arc<StateTensor>,
    pub goal: Cell,
    pub reward: f64,
    pub next_state: Arc<StateTensor>,
    pub next_mask: Arc<CentroidMask>,
    pub done: bool,
}

/// `r` for terminal transitions, else `r + γ · max Q_target(next_state, g')`
/// over the admissible cells of the next mask.
pub fn td_target(t: &Transition, target_net: &QNetwork, gamma: f64) -> Result<f64, RlError> {
    if t.done {
        return Ok(t.reward);
    }
    let next = target_net.masked_max(&t.next_state, &t.next_mask)?.unwrap_or(0.0);
    Ok(t.reward + gamma * next)
}

fn select_from<R: Rng + ?Sized>(
    cells: &[Cell],
    q: impl Fn(usize) -> f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<Cell, RlError> {
    if cells.is_empty() {
        return Err(RlError::EmptyMask);
    }
    let u: f64 = rng.random();
    if u < epsilon {
        return Ok(cells[rng.random_range(0..cells.len())]);
    }
    let mut best = 0;
    for i in 1..cells.len() {
        if q(i) > q(best) {
            best = i;
        }
    }
    Ok(cells[best])
}

/// Epsilon-greedy choice restricted to the admissible cells; greedy ties go
/// to the smallest cell. One uniform draw is always consumed.
pub fn masked_select<R: Rng + ?Sized>(
    q: &QMap,
    mask: &CentroidMask,
    epsilon: f64,
    rng: &mut R,
) -> Result<Cell, RlError> {
    let cells = mask.cells();
    select_from(cells, |i| q.get(cells[i]), epsilon, rng)
}

/// [`masked_select`] evaluating the network only on admissible cells.
pub fn select_goal<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &StateTensor,
    mask: &CentroidMask,
    epsilon: f64,
    rng: &mut R,
) -> Result<Cell, RlError> {
    let q = net.q_at_cells(state, mask.cells())?;
    select_from(mask.cells(), |i| q[i], epsilon, rng)
}

pub fn huber(e: f64) -> f64 {
    if e.abs() <= 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

fn huber_grad(e: f64) -> f64 {
    e.clamp(-1.0, 1.0)
}

/// Mean Huber loss of `targets` against the network's values at each goal
/// window, with its parameter gradient.
pub fn huber_loss_and_grad(net: &QNetwork, patches: &[&[f32]], targets: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; net.params().len()];
    let mut act = Activations::default();
    let n = patches.len() as f64;
    let mut loss = 0.0;
    for (patch, &y) in patches.iter().zip(targets) {
        let q = net.forward_patch(patch, &mut act);
        loss += huber(q - y);
        net.backward_patch(patch, &act, huber_grad(q - y) / n, &mut grad);
    }
    (loss / n, grad)
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Transition plus the cached goal window and the TD target computed for a
/// given target-network version.
#[derive(Debug, Clone)]
pub struct StoredTransition {
    pub transition: Transition,
    goal_patch: Vec<f32>,
    target: Option<(u64, f64)>,
}

/// Online and target networks, optimizer and replay memory.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    online: QNetwork,
    target: QNetwork,
    adam: Adam,
    buffer: ReplayBuffer<StoredTransition>,
    grad_steps: u64,
    target_version: u64,
}

impl Trainer {
    pub fn new(net: QNetwork, cfg: TrainConfig) -> Result<Self, RlError> {
        cfg.validate()?;
        Ok(Trainer {
            adam: Adam::new(net.params().len(), cfg.learning_rate),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            target: net.clone(),
            online: net,
            cfg,
            grad_steps: 0,
            target_version: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn into_online(self) -> QNetwork {
        self.online
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn buffer(&self) -> &ReplayBuffer<StoredTransition> {
        &self.buffer
    }

    pub fn push(&mut self, transition: Transition) {
        let lifted = LiftedState::new(&transition.state);
        let goal_patch = lifted.patch(transition.goal, self.online.shape().kernel);
        self.buffer.push(StoredTransition {
            transition,
            goal_patch,
            target: None,
        });
    }

    /// One Adam step on a uniformly sampled batch. Returns the batch loss
    /// before the update, or [`RlError::NotReady`] while the buffer holds fewer
    /// than `batch_size` transitions.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64, RlError> {
        if self.buffer.len() < self.cfg.batch_size {
            return Err(RlError::NotReady {
                have: self.buffer.len(),
                need: self.cfg.batch_size,
            });
        }
        let idx = self.buffer.sample_indices(self.cfg.batch_size, rng);
        let mut targets = Vec::with_capacity(idx.len());
        for &i in &idx {
            let item = self.buffer.get_mut(i).expect("sampled index in range");
            let y = match item.target {
                Some((v, y)) if v == self.target_version => y,
                _ => {
                    let y = td_target(&item.transition, &self.target, self.cfg.gamma)?;
                    item.target = Some((self.target_version, y));
                    y
                }
            };
            targets.push(y);
        }
        let patches: Vec<&[f32]> = idx
            .iter()
            .map(|&i| {
                self.buffer
                    .get(i)
                    .expect("sampled index in range")
                    .goal_patch
                    .as_slice()
            })
            .collect();
        let (loss, grad) = huber_loss_and_grad(&self.online, &patches, &targets);
        self.adam.step(self.online.params_mut(), &grad);
        self.grad_steps += 1;
        if self.grad_steps.is_multiple_of(self.cfg.target_sync_every) {
            self.target = self.online.clone();
            self.target_version += 1;
        }
        Ok(loss)
    }
}

/// Map, detector and the placements used to generate training episodes.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub ctx: SearchContext,
    pub targets: Vec<ObjectPlacement>,
    /// Distractor objects; those sharing the episode's target class are left out.
    pub clutter: Vec<ObjectPlacement>,
    pub horizon: usize,
    pub confidence_threshold: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: usize,
    pub outcome: Outcome,
    pub epsilon: f64,
    pub loss: Option<f64>,
}

/// Runs one training episode with a uniformly drawn training target and start
/// pose, storing one transition per goal decision and taking one gradient step
/// after each stored transition.
pub fn train_episode<R: Rng + ?Sized>(
    trainer: &mut Trainer,
    setup: &TrainingSetup,
    episode: usize,
    rng: &mut R,
) -> Result<TrainLogRow, RlError> {
    if setup.targets.is_empty() {
        return Err(RlError::Config("no training targets".into()));
    }
    let map = setup.ctx.map.clone();
    let epsilon = epsilon_at(episode, &trainer.cfg);
    let target = setup.targets[rng.random_range(0..setup.targets.len())];
    let start = Pose::new(
        map.free_cells()[rng.random_range(0..map.free_count())],
        Heading::from_index(rng.random_range(0..4)),
    );
    let spec = EpisodeSpec {
        map: map.clone(),
        target_class: target.class,
        target_cell: target.cell,
        clutter: setup
            .clutter
            .iter()
            .copied()
            .filter(|o| o.class != target.class)
            .collect(),
        start_pose: start,
        horizon: setup.horizon,
        confidence_threshold: setup.confidence_threshold,
        rng_seed: rng.random(),
    };
    spec.validate().map_err(|e| RlError::Config(e.to_string()))?;

    let mut ep = SearchEpisode::new(&setup.ctx, spec);
    let mut pending: Option<(Arc<StateTensor>, Cell, f64)> = None;
    let mut episode_return = 0.0;
    let mut losses = Vec::new();
    let mut record = |trainer: &mut Trainer, t: Transition, rng: &mut R| -> Result<(), RlError> {
        trainer.push(t);
        match trainer.train_step(rng) {
            Ok(l) => losses.push(l),
            Err(RlError::NotReady { .. }) => {}
            Err(e) => return Err(e),
        }
        Ok(())
    };
    while !ep.is_finished() {
        let admissible = ep.prepare_decision();
        let mask = Arc::new(CentroidMask::from_centroids(&map, &admissible));
        let state = Arc::new(build_state_tensor(ep.belief(), target.class, &map, ep.pose()));
        if let Some((s, g, r)) = pending.take() {
            let t = Transition {
                state: s,
                goal: g,
                reward: r,
                next_state: state.clone(),
                next_mask: mask.clone(),
                done: false,
            };
            record(trainer, t, rng)?;
        }
        let goal = select_goal(&trainer.online, &state, &mask, epsilon, rng)?;
        let n = ep.navigate(goal);
        let r = compute_reward(n, ep.outcome() == Outcome::Success);
        episode_return += r;
        pending = Some((state, goal, r));
    }
    if let Some((s, g, r)) = pending {
        let t = Transition {
            next_state: s.clone(),
            state: s,
            goal: g,
            reward: r,
            next_mask: Arc::new(CentroidMask::empty(map.width(), map.height())),
            done: true,
        };
        record(trainer, t, rng)?;
    }
    let loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
    Ok(TrainLogRow {
        episode,
        episode_return,
        length: ep.state().primitives_executed,
        outcome: ep.outcome(),
        epsilon,
        loss,
    })
}

/// Trains a fresh network for `cfg.episodes` episodes.
pub fn run_training(
    setup: &TrainingSetup,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(QNetwork, Vec<TrainLogRow>), RlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = QNetwork::new(cfg.net_shape(), &mut rng)?;
    let mut trainer = Trainer::new(net, cfg.clone())?;
    let mut log = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let row = train_episode(&mut trainer, setup, episode, &mut rng)?;
        if (episode + 1) % 500 == 0 {
            let recent = &log[log.len().saturating_sub(499)..];
            let mean = (recent.iter().map(|r: &TrainLogRow| r.episode_return).sum::<f64>() + row.episode_return)
                / (recent.len() + 1) as f64;
            log::info!(
                "episode {} epsilon {:.3} mean return (last 500) {:.3}",
                episode + 1,
                row.epsilon,
                mean
            );
        }
        log.push(row);
    }
    Ok((trainer.into_online(), log))
}

/// Greedy Q-map for inspection.
pub fn greedy_qmap(net: &QNetwork, state: &StateTensor) -> Result<QMap, RlError> {
    forward_q(net, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_examples() {
        assert!((compute_reward(12, false) + 0.12).abs() < 1e-12);
        assert_eq!(compute_reward(0, true), 1.0);
        assert!((compute_reward(50, true) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(epsilon_at(0, &cfg), 1.0);
        assert!((epsilon_at(2000, &cfg) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon_at(4000, &cfg), 0.05);
        assert_eq!(epsilon_at(4999, &cfg), 0.05);
        assert!(epsilon_at(3999, &cfg) > 0.05);
    }

    #[test]
    fn huber_shape() {
        assert_eq!(huber(0.5), 0.125);
        assert_eq!(huber(-3.0), 2.5);
        assert_eq!(huber_grad(4.0), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            buffer_capacity: 10,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            gamma: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
