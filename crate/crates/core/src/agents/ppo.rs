//! PPO with a 4-layer actor and a 3-layer critic over the 4-feature observation.

use rand::seq::SliceRandom;

use super::gae::{gae_with_form, normalize_advantages, GaeForm};
use super::Policy;
use crate::env::{Action, Observation, TradingEnv};
use crate::nn::{
    categorical_sample, entropy, log_softmax, softmax, Activation, AdamConfig, AdamState, Grads, MlpParams, StepOutcome,
};
use crate::{seeded_rng, Error, Result, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub update_passes: usize,
    pub minibatch: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_coef: f64,
    pub seed: u64,
    /// Hidden widths; the actor has three hidden layers, the critic two.
    pub actor_hidden: [usize; 3],
    pub critic_hidden: [usize; 2],
    pub hidden_activation: Activation,
    pub rollouts_per_epoch: usize,
    /// Environment rewards are divided by this before advantage estimation.
    pub reward_scale: f64,
    pub normalize_advantages: bool,
    pub sell_transitions_only: bool,
    pub gae_form: GaeForm,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 1000,
            update_passes: 4,
            minibatch: 32,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            entropy_coef: 0.01,
            seed: 42,
            actor_hidden: [64, 64, 64],
            critic_hidden: [64, 64],
            hidden_activation: Activation::Tanh,
            rollouts_per_epoch: 1,
            reward_scale: 1.0,
            normalize_advantages: true,
            sell_transitions_only: false,
            gae_form: GaeForm::Standard,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.update_passes == 0 || self.minibatch == 0 || self.rollouts_per_epoch == 0 {
            return bad("update_passes, minibatch and rollouts_per_epoch must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be non-negative");
        }
        if !(self.reward_scale > 0.0) {
            return bad("reward_scale must be positive");
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

/// Actor and critic networks.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoAgent {
    pub actor: MlpParams,
    pub critic: MlpParams,
}

impl PpoAgent {
    /// Fan-balanced init; the actor's output layer is scaled down so the
    /// initial policy is close to uniform, and the critic's output layer
    /// starts at zero.
    pub fn new(cfg: &PpoConfig, rng: &mut Rng) -> Result<Self> {
        let h = cfg.hidden_activation;
        let [a1, a2, a3] = cfg.actor_hidden;
        let mut actor = MlpParams::init(
            &[Observation::DIM, a1, a2, a3, Action::COUNT],
            &[h, h, h, Activation::Identity],
            rng,
        )?;
        let last = actor.layers_mut().last_mut().unwrap();
        last.weight.iter_mut().for_each(|w| *w *= 0.01);

        let [c1, c2] = cfg.critic_hidden;
        let mut critic = MlpParams::init(&[Observation::DIM, c1, c2, 1], &[h, h, Activation::Identity], rng)?;
        let last = critic.layers_mut().last_mut().unwrap();
        last.weight.iter_mut().for_each(|w| *w = 0.0);
        Self::from_parts(actor, critic)
    }

    pub fn from_parts(actor: MlpParams, critic: MlpParams) -> Result<Self> {
        if actor.in_dim() != Observation::DIM || actor.out_dim() != Action::COUNT {
            return Err(Error::Config("actor must map 4 features to 2 logits".into()));
        }
        if critic.in_dim() != Observation::DIM || critic.out_dim() != 1 {
            return Err(Error::Config("critic must map 4 features to 1 value".into()));
        }
        Ok(Self { actor, critic })
    }
}

/// Action probabilities `[hold, sell]`.
pub fn actor_forward(actor: &MlpParams, obs: &Observation) -> [f64; 2] {
    let logits = actor
        .forward(&obs.to_array())
        .expect("actor input dimension is fixed at 4");
    let p = softmax(&logits);
    [p[0], p[1]]
}

pub fn critic_forward(critic: &MlpParams, obs: &Observation) -> f64 {
    critic
        .forward(&obs.to_array())
        .expect("critic input dimension is fixed at 4")[0]
}

/// Greedy choice; ties go to hold.
pub fn greedy_action(probs: &[f64; 2]) -> Action {
    if probs[1] > probs[0] {
        Action::Sell
    } else {
        Action::Hold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub action: Action,
    pub old_log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episode_totals: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn append(&mut self, other: RolloutBuffer) {
        self.transitions.extend(other.transitions);
        self.advantages.extend(other.advantages);
        self.returns.extend(other.returns);
        self.episode_totals.extend(other.episode_totals);
    }

    /// Fills advantages and returns; rewards are divided by `reward_scale` first.
    pub fn compute_advantages(&mut self, cfg: &PpoConfig) -> Result<()> {
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward / cfg.reward_scale).collect();
        let values: Vec<f64> = self.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = self.transitions.iter().map(|t| t.done).collect();
        let (mut adv, ret) = gae_with_form(&rewards, &values, &dones, cfg.gamma, cfg.lambda, cfg.gae_form)?;
        if cfg.normalize_advantages {
            normalize_advantages(&mut adv);
        }
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

/// Runs one full episode, sampling actions from the actor (or taking the
/// greedy action) and recording `log π_old` and the critic's value.
pub fn collect_rollout(env: &mut TradingEnv, agent: &PpoAgent, rng: &mut Rng, greedy: bool) -> Result<RolloutBuffer> {
    let mut obs = env.reset();
    let mut buf = RolloutBuffer::default();
    loop {
        let probs = actor_forward(&agent.actor, &obs);
        let (action, log_prob) = if greedy {
            let a = greedy_action(&probs);
            (a, probs[a.index()].ln())
        } else {
            let (i, lp) = categorical_sample(&probs, rng)?;
            (Action::from_index(i), lp)
        };
        let value = critic_forward(&agent.critic, &obs);
        let step = env.step(action)?;
        buf.transitions.push(Transition {
            observation: obs,
            action,
            old_log_prob: log_prob,
            reward: step.reward,
            value,
            done: step.done,
        });
        obs = step.observation;
        if step.done {
            break;
        }
    }
    buf.episode_totals.push(env.episode_total()?);
    Ok(buf)
}

/// Clipped surrogate for one sample: `min(r·Â, clip(r, 1-ε, 1+ε)·Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    unclipped.min(clipped)
}

#[derive(Debug, Clone)]
pub struct PpoLoss {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub actor_grads: Grads,
    pub critic_grads: Grads,
    /// Samples dropped because their probability ratio was not finite.
    pub excluded: usize,
    pub clip_fraction: f64,
}

/// Policy loss `-mean(surrogate) - entropy_coef·mean(H)` and value loss
/// `mean((V - return)^2)` over `indices`, with gradients for both networks.
pub fn ppo_loss(
    buffer: &RolloutBuffer,
    indices: &[usize],
    agent: &PpoAgent,
    clip: f64,
    entropy_coef: f64,
) -> Result<PpoLoss> {
    if buffer.advantages.len() != buffer.len() || buffer.returns.len() != buffer.len() {
        return Err(Error::Contract("ppo_loss needs advantages and returns".into()));
    }
    struct Sample {
        idx: usize,
        ratio: f64,
        probs: Vec<f64>,
        log_probs: Vec<f64>,
        cache: crate::nn::ForwardCache,
    }
    let mut samples = Vec::with_capacity(indices.len());
    let mut excluded = 0;
    for &i in indices {
        let t = &buffer.transitions[i];
        let (logits, cache) = agent.actor.forward_cached(&t.observation.to_array())?;
        let log_probs = log_softmax(&logits);
        let ratio = (log_probs[t.action.index()] - t.old_log_prob).exp();
        if !ratio.is_finite() {
            excluded += 1;
            continue;
        }
        samples.push(Sample {
            idx: i,
            ratio,
            probs: softmax(&logits),
            log_probs,
            cache,
        });
    }
    if excluded > 0 {
        log::warn!("ppo_loss: excluded {excluded} sample(s) with non-finite ratio");
    }

    let mut actor_grads = agent.actor.zero_grads();
    let mut critic_grads = agent.critic.zero_grads();
    let n = samples.len();
    if n == 0 {
        return Ok(PpoLoss {
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            actor_grads,
            critic_grads,
            excluded,
            clip_fraction: 0.0,
        });
    }
    let inv_n = 1.0 / n as f64;
    let (mut surr_sum, mut ent_sum, mut v_sum, mut clipped) = (0.0, 0.0, 0.0, 0usize);
    for s in &samples {
        let t = &buffer.transitions[s.idx];
        let adv = buffer.advantages[s.idx];
        let a = t.action.index();
        let unclipped = s.ratio * adv;
        let surr = clipped_surrogate(s.ratio, adv, clip);
        // gradient flows only through the unclipped branch when it is the minimum
        let dsurr_dlogp = if unclipped <= surr { s.ratio * adv } else { 0.0 };
        if (s.ratio - 1.0).abs() > clip {
            clipped += 1;
        }
        let h = entropy(&s.probs);
        surr_sum += surr;
        ent_sum += h;

        let upstream: Vec<f64> = (0..s.probs.len())
            .map(|j| {
                let onehot = if j == a { 1.0 } else { 0.0 };
                let d_logp = onehot - s.probs[j];
                let d_ent = -s.probs[j] * (s.log_probs[j] + h);
                inv_n * (-dsurr_dlogp * d_logp - entropy_coef * d_ent)
            })
            .collect();
        actor_grads.add_assign(&agent.actor.backward(&s.cache, &upstream)?.grads);

        let (v, vcache) = agent.critic.forward_cached(&t.observation.to_array())?;
        let err = v[0] - buffer.returns[s.idx];
        v_sum += err * err;
        critic_grads.add_assign(&agent.critic.backward(&vcache, &[2.0 * err * inv_n])?.grads);
    }
    Ok(PpoLoss {
        policy_loss: -surr_sum * inv_n - entropy_coef * ent_sum * inv_n,
        value_loss: v_sum * inv_n,
        entropy: ent_sum * inv_n,
        actor_grads,
        critic_grads,
        excluded,
        clip_fraction: clipped as f64 * inv_n,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: PpoAgent,
    /// Mean rollout episode total per epoch.
    pub curve: Vec<f64>,
    /// Copies of the agent taken after the requested epoch counts.
    pub snapshots: Vec<(usize, PpoAgent)>,
}

pub fn train(env: &TradingEnv, cfg: &PpoConfig) -> Result<TrainOutput> {
    train_with_snapshots(env, cfg, &[])
}

/// Trains for `cfg.epochs`, also returning the agent as it was after each
/// epoch count listed in `snapshot_epochs` (0 means the initial networks).
pub fn train_with_snapshots(env: &TradingEnv, cfg: &PpoConfig, snapshot_epochs: &[usize]) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut init_rng = seeded_rng(cfg.seed, 0);
    let mut rollout_rng = seeded_rng(cfg.seed, 1);
    let mut shuffle_rng = seeded_rng(cfg.seed, 2);
    let mut agent = PpoAgent::new(cfg, &mut init_rng)?;
    let mut actor_opt = AdamState::new(AdamConfig::with_lr(cfg.actor_lr), &agent.actor);
    let mut critic_opt = AdamState::new(AdamConfig::with_lr(cfg.critic_lr), &agent.critic);
    let mut env = env.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    if snapshot_epochs.contains(&0) {
        snapshots.push((0, agent.clone()));
    }

    for epoch in 1..=cfg.epochs {
        let mut buffer = RolloutBuffer::default();
        for _ in 0..cfg.rollouts_per_epoch {
            let mut ep = collect_rollout(&mut env, &agent, &mut rollout_rng, false)?;
            ep.compute_advantages(cfg)?;
            buffer.append(ep);
        }
        let mean_total = buffer.episode_totals.iter().sum::<f64>() / buffer.episode_totals.len() as f64;
        curve.push(mean_total);

        let mut indices: Vec<usize> = (0..buffer.len())
            .filter(|&i| !cfg.sell_transitions_only || buffer.transitions[i].action == Action::Sell)
            .collect();
        for _ in 0..cfg.update_passes {
            indices.shuffle(&mut shuffle_rng);
            for batch in indices.chunks(cfg.minibatch) {
                let loss = ppo_loss(&buffer, batch, &agent, cfg.clip, cfg.entropy_coef)?;
                let a = actor_opt.update(&mut agent.actor, &loss.actor_grads)?;
                let c = critic_opt.update(&mut agent.critic, &loss.critic_grads)?;
                if a == StepOutcome::SkippedNonFinite || c == StepOutcome::SkippedNonFinite {
                    log::warn!("epoch {epoch}: skipped a non-finite update");
                }
            }
        }
        if !(agent.actor.is_finite() && agent.critic.is_finite()) {
            return Err(Error::Divergence(format!(
                "PPO parameters became non-finite at epoch {epoch}"
            )));
        }
        if snapshot_epochs.contains(&epoch) {
            snapshots.push((epoch, agent.clone()));
        }
        log::debug!("epoch {epoch}: mean total {mean_total:.4}");
    }
    Ok(TrainOutput {
        agent,
        curve,
        snapshots,
    })
}

/// A trained actor used as a policy: sampled (evaluation protocol) or greedy.
#[derive(Debug, Clone)]
pub struct PpoPolicy {
    pub actor: MlpParams,
    pub greedy: bool,
}

impl Policy for PpoPolicy {
    fn act(&self, _env: &TradingEnv, obs: &Observation, rng: &mut Rng) -> Result<Action> {
        let probs = actor_forward(&self.actor, obs);
        if self.greedy {
            Ok(greedy_action(&probs))
        } else {
            Ok(Action::from_index(categorical_sample(&probs, rng)?.0))
        }
    }
}
