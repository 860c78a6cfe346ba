//! Multi-agent deterministic policy gradient with centralized critics.
//!
//! Each UAV has an actor mapping its private observation to a normalized
//! action in `[-1, 1]^2`, and a critic scoring the full state together with
//! the joint action. Critics regress onto importance-weighted TD targets built
//! from every agent's target actor; actors follow the critic's action
//! gradient. Each agent keeps its own prioritized replay buffer.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::SimConfig;
use crate::env::UavAction;
use crate::error::{Error, Result};
use crate::neural::{adam_step, soft_update, Activation, AdamState, DenseNet, Gradients};
use crate::replay::{is_weight, Batch, PriorityBuffer, Transition};

/// Action components per agent (heading, distance).
pub const ACTION_DIM: usize = 2;

/// Maps a normalized action in `[-1, 1]^2` onto heading and distance.
///
/// `u0 = -1` is heading 0 and `u0 = 1` wraps back to 0; `u1` spans
/// `[0, d_max]` linearly, so the zero vector is heading pi at `d_max / 2`.
pub fn to_uav_action(raw: [f64; 2], d_max: f64) -> UavAction {
    let u0 = raw[0].clamp(-1.0, 1.0);
    let u1 = raw[1].clamp(-1.0, 1.0);
    let mut angle = (u0 + 1.0) * PI;
    if angle >= TAU {
        angle -= TAU;
    }
    let dist = ((u1 + 1.0) * 0.5 * d_max).clamp(0.0, d_max);
    UavAction::new(angle, dist)
}

/// Inverse of [`to_uav_action`] (heading 0 maps to `u0 = -1`).
pub fn from_uav_action(action: &UavAction, d_max: f64) -> [f64; 2] {
    [action.angle / PI - 1.0, 2.0 * action.dist / d_max - 1.0]
}

/// Anything that can act from a single agent's private observation.
pub trait DecentralizedPolicy {
    fn act(&mut self, agent: usize, observation: &[f64]) -> Result<UavAction>;
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub index: usize,
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub target_actor: DenseNet,
    pub target_critic: DenseNet,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    /// Current exploration noise standard deviation.
    pub noise_std: f64,
    pub buffer: PriorityBuffer,
}

/// Learning constants shared by all agents.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub mu_is: f64,
    pub noise_decay: f64,
    pub reward_scale: f64,
    pub terminal_mask: bool,
    pub actor_preact_reg: f64,
}

impl Hyper {
    pub fn from_config(c: &SimConfig) -> Self {
        Self {
            gamma: c.gamma,
            tau: c.tau,
            batch_size: c.batch_size,
            mu_is: c.mu_is,
            noise_decay: c.noise_decay,
            reward_scale: c.reward_scale,
            terminal_mask: c.terminal_mask,
            actor_preact_reg: c.actor_preact_reg,
        }
    }
}

/// What one call to [`Maddpg::train_step`] did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainDiagnostics {
    /// False while some buffer still holds fewer than `batch_size` items.
    pub trained: bool,
    pub critic_loss: Vec<f64>,
    pub mean_abs_td: Vec<f64>,
    pub stale_skipped: usize,
    pub noise_std: f64,
}

/// Result of one critic update.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    /// `|delta_k|` per sampled transition, before the update.
    pub abs_td: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Maddpg {
    pub agents: Vec<Agent>,
    pub obs_len: usize,
    pub hyper: Hyper,
    /// Largest flying distance, for mapping normalized actions.
    pub d_max: f64,
}

impl Maddpg {
    pub fn new<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Self {
        let m = config.n_uavs;
        let obs_len = config.obs_len();
        let mut actor_w = vec![obs_len];
        actor_w.extend(&config.hidden);
        actor_w.push(ACTION_DIM);
        let mut critic_w = vec![m * obs_len + m * ACTION_DIM];
        critic_w.extend(&config.hidden);
        critic_w.push(1);
        let agents = (0..m)
            .map(|index| {
                let mut actor = DenseNet::new(&actor_w, Activation::Relu, Activation::Tanh, rng);
                actor.scale_last_layer(config.actor_out_init_scale);
                let critic = DenseNet::new(&critic_w, Activation::Relu, Activation::Identity, rng);
                Agent {
                    index,
                    actor_opt: AdamState::new(&actor, config.lr_actor),
                    critic_opt: AdamState::new(&critic, config.lr_critic),
                    target_actor: actor.clone(),
                    target_critic: critic.clone(),
                    actor,
                    critic,
                    noise_std: config.noise_std,
                    buffer: PriorityBuffer::new(
                        config.buffer_capacity,
                        config.eps_priority,
                        config.beta_priority,
                    ),
                }
            })
            .collect();
        Self {
            agents,
            obs_len,
            hyper: Hyper::from_config(config),
            d_max: config.d_max,
        }
    }

    /// Assembles agents from existing networks, checking every dimension.
    pub fn from_networks(
        config: &SimConfig,
        nets: Vec<[DenseNet; 4]>,
    ) -> Result<Self> {
        let m = config.n_uavs;
        let obs_len = config.obs_len();
        if nets.len() != m {
            return Err(Error::Shape {
                expected: m,
                actual: nets.len(),
                context: "agent count",
            });
        }
        let critic_in = m * obs_len + m * ACTION_DIM;
        let mut agents = Vec::with_capacity(m);
        for (index, [actor, critic, target_actor, target_critic]) in nets.into_iter().enumerate() {
            for (net, input, output, ctx) in [
                (&actor, obs_len, ACTION_DIM, "actor"),
                (&target_actor, obs_len, ACTION_DIM, "target actor"),
                (&critic, critic_in, 1, "critic"),
                (&target_critic, critic_in, 1, "target critic"),
            ] {
                if net.input_len() != input {
                    return Err(Error::Shape {
                        expected: input,
                        actual: net.input_len(),
                        context: ctx,
                    });
                }
                if net.output_len() != output {
                    return Err(Error::Shape {
                        expected: output,
                        actual: net.output_len(),
                        context: ctx,
                    });
                }
            }
            if actor.widths() != target_actor.widths() || critic.widths() != target_critic.widths() {
                return Err(Error::Contract("target networks must mirror online networks".into()));
            }
            agents.push(Agent {
                index,
                actor_opt: AdamState::new(&actor, config.lr_actor),
                critic_opt: AdamState::new(&critic, config.lr_critic),
                actor,
                critic,
                target_actor,
                target_critic,
                noise_std: config.noise_std,
                buffer: PriorityBuffer::new(
                    config.buffer_capacity,
                    config.eps_priority,
                    config.beta_priority,
                ),
            });
        }
        Ok(Self {
            agents,
            obs_len,
            hyper: Hyper::from_config(config),
            d_max: config.d_max,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn state_len(&self) -> usize {
        self.n_agents() * self.obs_len
    }

    pub fn joint_action_len(&self) -> usize {
        self.n_agents() * ACTION_DIM
    }

    /// Normalized action of agent `m`; with `explore`, Gaussian noise of the
    /// agent's current std is added per component before clipping.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        m: usize,
        observation: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<[f64; 2]> {
        let agent = &self.agents[m];
        let out = agent.actor.forward(observation)?;
        let mut raw = [out[0], out[1]];
        if explore && agent.noise_std > 0.0 {
            let normal = Normal::new(0.0, agent.noise_std)
                .map_err(|e| Error::Contract(format!("noise distribution: {e}")))?;
            for v in &mut raw {
                *v += normal.sample(rng);
            }
        }
        Ok(raw.map(|v| v.clamp(-1.0, 1.0)))
    }

    /// Stores a transition in agent `m`'s buffer, with a TD-derived priority
    /// when `td_priority` is set and the max-priority default otherwise.
    pub fn remember(&mut self, m: usize, transition: Transition, td_priority: bool) -> Result<()> {
        let delta = if td_priority {
            Some(self.td_errors(m, std::slice::from_ref(&transition))?[0])
        } else {
            None
        };
        self.agents[m].buffer.push(transition, delta);
        Ok(())
    }

    fn check_transitions(&self, ts: &[Transition]) -> Result<()> {
        let (s, a) = (self.state_len(), self.joint_action_len());
        for t in ts {
            for (len, want, ctx) in [
                (t.state.len(), s, "transition state"),
                (t.next_state.len(), s, "transition next state"),
                (t.action.len(), a, "transition action"),
            ] {
                if len != want {
                    return Err(Error::Shape {
                        expected: want,
                        actual: len,
                        context: ctx,
                    });
                }
            }
        }
        Ok(())
    }

    /// Joint action produced by every agent's target actor on its slice of
    /// each next state, `batch x joint_action_len`.
    fn target_joint_actions(&self, ts: &[Transition]) -> Result<Vec<f64>> {
        let n = ts.len();
        let ja = self.joint_action_len();
        let mut out = vec![0.0; n * ja];
        for (j, agent) in self.agents.iter().enumerate() {
            let obs: Vec<f64> = ts
                .iter()
                .flat_map(|t| t.next_state[j * self.obs_len..(j + 1) * self.obs_len].iter().copied())
                .collect();
            let tape = agent.target_actor.forward_batch(&obs, n)?;
            for (k, a) in tape.output().chunks(ACTION_DIM).enumerate() {
                out[k * ja + j * ACTION_DIM..k * ja + (j + 1) * ACTION_DIM].copy_from_slice(a);
            }
        }
        Ok(out)
    }

    /// TD targets `r + gamma * Q'_m(s', a')` for agent `m` (reward scaled).
    pub fn td_targets(&self, m: usize, ts: &[Transition]) -> Result<Vec<f64>> {
        self.check_transitions(ts)?;
        let next_actions = self.target_joint_actions(ts)?;
        let ja = self.joint_action_len();
        let inputs = critic_inputs(
            ts.iter().map(|t| t.next_state.as_slice()),
            next_actions.chunks(ja),
        );
        let q_next = self.agents[m].target_critic.forward_batch(&inputs, ts.len())?;
        let h = &self.hyper;
        Ok(ts
            .iter()
            .zip(q_next.output())
            .map(|(t, &q)| {
                let boot = if h.terminal_mask && t.terminal { 0.0 } else { h.gamma * q };
                h.reward_scale * t.reward + boot
            })
            .collect())
    }

    /// TD-errors `delta = r + gamma * Q'_m(s', a') - Q_m(s, a)` for agent `m`.
    pub fn td_errors(&self, m: usize, ts: &[Transition]) -> Result<Vec<f64>> {
        let targets = self.td_targets(m, ts)?;
        let inputs = critic_inputs(
            ts.iter().map(|t| t.state.as_slice()),
            ts.iter().map(|t| t.action.as_slice()),
        );
        let q = self.agents[m].critic.forward_batch(&inputs, ts.len())?;
        Ok(targets.iter().zip(q.output()).map(|(y, q)| y - q).collect())
    }

    /// One Adam step on agent `m`'s critic against the importance-weighted
    /// squared TD-error of `batch`.
    pub fn critic_update(&mut self, m: usize, batch: &Batch) -> Result<CriticStats> {
        let k = batch.transitions.len();
        let targets = self.td_targets(m, &batch.transitions)?;
        let weights = batch
            .probabilities
            .iter()
            .map(|&p| is_weight(k, p, self.hyper.mu_is))
            .collect::<Result<Vec<_>>>()?;
        let inputs = critic_inputs(
            batch.transitions.iter().map(|t| t.state.as_slice()),
            batch.transitions.iter().map(|t| t.action.as_slice()),
        );
        let agent = &mut self.agents[m];
        let (loss, grads, deltas) = critic_loss_grad(&agent.critic, &inputs, &targets, &weights)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "critic loss of agent {m}: {loss} (targets {:?}..)",
                &targets[..targets.len().min(4)]
            )));
        }
        adam_step(&mut agent.critic, &grads, &mut agent.critic_opt)?;
        Ok(CriticStats {
            loss,
            abs_td: deltas.iter().map(|d| d.abs()).collect(),
        })
    }

    /// One Adam step on agent `m`'s actor along the critic's action gradient,
    /// with the other agents' actions taken from the batch.
    pub fn actor_update(&mut self, m: usize, batch: &Batch) -> Result<f64> {
        self.check_transitions(&batch.transitions)?;
        let states: Vec<f64> = batch
            .transitions
            .iter()
            .flat_map(|t| t.state.iter().copied())
            .collect();
        let actions: Vec<f64> = batch
            .transitions
            .iter()
            .flat_map(|t| t.action.iter().copied())
            .collect();
        let obs_len = self.obs_len;
        let reg = self.hyper.actor_preact_reg;
        let agent = &mut self.agents[m];
        let (objective, mut grads) =
            actor_objective_grad(&agent.actor, &agent.critic, &states, &actions, m, obs_len, reg)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("actor gradient of agent {m}")));
        }
        // Ascend the objective.
        grads.scale(-1.0);
        adam_step(&mut agent.actor, &grads, &mut agent.actor_opt)?;
        Ok(objective)
    }

    /// One learning round for every agent: prioritized sampling, critic and
    /// actor updates, soft target updates, priority refresh and noise decay.
    /// A no-op until every buffer holds at least `batch_size` transitions.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<TrainDiagnostics> {
        let k = self.hyper.batch_size;
        let mut diag = TrainDiagnostics {
            noise_std: self.agents.first().map_or(0.0, |a| a.noise_std),
            ..Default::default()
        };
        if self.agents.iter().any(|a| a.buffer.len() < k) {
            return Ok(diag);
        }
        for m in 0..self.n_agents() {
            let batch = self.agents[m].buffer.sample(k, rng)?;
            let stats = self.critic_update(m, &batch)?;
            self.actor_update(m, &batch)?;
            let tau = self.hyper.tau;
            let agent = &mut self.agents[m];
            soft_update(&mut agent.target_actor, &agent.actor, tau)?;
            soft_update(&mut agent.target_critic, &agent.critic, tau)?;
            diag.stale_skipped += agent.buffer.update_priorities(&batch.indices, &stats.abs_td)?;
            agent.noise_std *= self.hyper.noise_decay;
            diag.critic_loss.push(stats.loss);
            diag.mean_abs_td
                .push(stats.abs_td.iter().sum::<f64>() / stats.abs_td.len() as f64);
        }
        diag.trained = true;
        diag.noise_std = self.agents[0].noise_std;
        Ok(diag)
    }
}

/// Greedy execution: agent `m` acts on its own observation only.
impl DecentralizedPolicy for Maddpg {
    fn act(&mut self, agent: usize, observation: &[f64]) -> Result<UavAction> {
        let out = self.agents[agent].actor.forward(observation)?;
        Ok(to_uav_action([out[0], out[1]], self.d_max))
    }
}

/// Rows of `[state | joint action]` for the critics.
pub fn critic_inputs<'a>(
    states: impl Iterator<Item = &'a [f64]>,
    actions: impl Iterator<Item = &'a [f64]>,
) -> Vec<f64> {
    let mut out = Vec::new();
    for (s, a) in states.zip(actions) {
        out.extend_from_slice(s);
        out.extend_from_slice(a);
    }
    out
}

/// Loss `mean_k w_k (y_k - Q(x_k))^2`, its parameter gradient, and the
/// per-sample TD-errors `y_k - Q(x_k)`.
pub fn critic_loss_grad(
    critic: &DenseNet,
    inputs: &[f64],
    targets: &[f64],
    weights: &[f64],
) -> Result<(f64, Gradients, Vec<f64>)> {
    let k = targets.len();
    if weights.len() != k {
        return Err(Error::Shape {
            expected: k,
            actual: weights.len(),
            context: "importance weights",
        });
    }
    let tape = critic.forward_batch(inputs, k)?;
    let deltas: Vec<f64> = targets.iter().zip(tape.output()).map(|(y, q)| y - q).collect();
    let kf = k as f64;
    let loss = deltas
        .iter()
        .zip(weights)
        .map(|(d, w)| w * d * d)
        .sum::<f64>()
        / kf;
    let upstream: Vec<f64> = deltas
        .iter()
        .zip(weights)
        .map(|(d, w)| -2.0 * w * d / kf)
        .collect();
    let (grads, _) = critic.backward(&tape, &upstream)?;
    Ok((loss, grads, deltas))
}

/// Objective `J = mean_k [Q(s_k, a_k with a_m <- actor(o_m)) - reg * |z_k|^2]`
/// and its gradient with respect to the actor's parameters (chain rule
/// through the critic). `z_k` is the actor's pre-tanh output.
pub fn actor_objective_grad(
    actor: &DenseNet,
    critic: &DenseNet,
    states: &[f64],
    actions: &[f64],
    m: usize,
    obs_len: usize,
    reg: f64,
) -> Result<(f64, Gradients)> {
    let batch = batch_len(states, actions, critic)?;
    let state_len = states.len() / batch;
    let ja_len = actions.len() / batch;
    let obs: Vec<f64> = states
        .chunks(state_len)
        .flat_map(|s| s[m * obs_len..(m + 1) * obs_len].iter().copied())
        .collect();
    let actor_tape = actor.forward_batch(&obs, batch)?;
    let own = actor_tape.output();
    let mut inputs = Vec::with_capacity(batch * critic.input_len());
    for k in 0..batch {
        inputs.extend_from_slice(&states[k * state_len..(k + 1) * state_len]);
        let mut a = actions[k * ja_len..(k + 1) * ja_len].to_vec();
        a[m * ACTION_DIM..(m + 1) * ACTION_DIM]
            .copy_from_slice(&own[k * ACTION_DIM..(k + 1) * ACTION_DIM]);
        inputs.extend_from_slice(&a);
    }
    let critic_tape = critic.forward_batch(&inputs, batch)?;
    let bf = batch as f64;
    let z = actor_tape.output_pre();
    let penalty = reg * z.iter().map(|v| v * v).sum::<f64>() / bf;
    let objective = critic_tape.output().iter().sum::<f64>() / bf - penalty;
    let (_, dq_dinput) = critic.backward(&critic_tape, &vec![1.0 / bf; batch])?;
    let in_len = critic.input_len();
    let da: Vec<f64> = (0..batch)
        .flat_map(|k| {
            let off = k * in_len + state_len + m * ACTION_DIM;
            dq_dinput[off..off + ACTION_DIM].to_vec()
        })
        .collect();
    let pre_grad: Vec<f64> = z.iter().map(|v| -2.0 * reg * v / bf).collect();
    let (grads, _) = actor.backward_with(&actor_tape, &da, (reg > 0.0).then_some(&pre_grad[..]))?;
    Ok((objective, grads))
}

fn batch_len(states: &[f64], actions: &[f64], critic: &DenseNet) -> Result<usize> {
    let total = states.len() + actions.len();
    let in_len = critic.input_len();
    if in_len == 0 || total % in_len != 0 || total == 0 {
        return Err(Error::Shape {
            expected: in_len,
            actual: total,
            context: "actor update batch",
        });
    }
    Ok(total / in_len)
}
