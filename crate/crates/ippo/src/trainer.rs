//! Rollout collection and minibatched recurrent updates for both agents.
//!
//! Lanes are stepped sequentially in a fixed order and every random draw
//! comes from a per-lane or per-trainer ChaCha stream, so a run is a pure
//! function of its configuration.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cholec_core::env::{CholecEnv, JointAction, Outcome, SceneTemplate};
use cholec_nn::checkpoint::{AgentState, Checkpoint};
use cholec_nn::dist::sample_action;
use cholec_nn::net::one_hot;
use cholec_nn::optim::Adam;
use cholec_nn::params::clip_global_norm;
use cholec_nn::{Gradients, Graph, PolicyValueNet, RecurrentState};

use crate::config::TrainConfig;
use crate::error::TrainError;
use crate::gae::{compute_gae, normalize, value_targets, LaneSegment};
use crate::loss::{clip_fraction, ppo_loss, LossTargets};

pub const AGENT_NAMES: [&str; 2] = ["gripper", "cauter"];

/// Per-agent quantities of one iteration. Losses are means over all
/// minibatch updates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentStats {
    /// Mean discounted return of the episodes completed this iteration.
    pub mean_return: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Statistics of the raw advantages before normalization.
    pub advantage_mean: f64,
    pub advantage_std: f64,
    /// Mean and standard deviation after normalization.
    pub normalized_mean: f64,
    pub normalized_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub iteration: u64,
    /// Cumulative environment steps after this iteration.
    pub env_steps: u64,
    pub iteration_env_steps: u64,
    pub episodes: u32,
    /// Indexed like `Outcome::index`.
    pub outcome_counts: [u32; 3],
    pub outcome_fractions: [f64; 3],
    pub agents: [AgentStats; 2],
    /// Joint pre-clip gradient norm over both agents.
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    pub clipped_grad_norm_max: f64,
    pub updates: u32,
}

/// A network with its optimizer.
#[derive(Debug, Clone)]
pub struct Learner {
    pub net: PolicyValueNet<f32>,
    pub optimizer: Adam<f32>,
}

struct Lane {
    env: CholecEnv,
    rng: ChaCha8Rng,
    episode_seed: u64,
    /// Discrete actions of the running episode, for replay on resume.
    history: Vec<[u8; 2]>,
    state: [RecurrentState<f32>; 2],
    prev: [Option<usize>; 2],
    returns: [f64; 2],
    discount: f64,
    obs: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LaneSnapshot {
    rng: ChaCha8Rng,
    episode_seed: u64,
    history: Vec<[u8; 2]>,
    h: [Vec<f32>; 2],
    c: [Vec<f32>; 2],
    prev: [Option<usize>; 2],
    returns: [f64; 2],
    discount: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResumeState {
    config: TrainConfig,
    iteration: u64,
    env_steps: u64,
    update_rng: ChaCha8Rng,
    lanes: Vec<LaneSnapshot>,
}

/// Time-major storage of one iteration, rows indexed `t·E + e`.
struct Rollout {
    obs: Vec<f32>,
    actions: [Vec<usize>; 2],
    prev: [Vec<Option<usize>>; 2],
    log_probs: [Vec<f64>; 2],
    values: [Vec<f64>; 2],
    rewards: [Vec<f64>; 2],
    truncation_values: [Vec<f64>; 2],
    terminals: Vec<bool>,
    truncations: Vec<bool>,
    keep: Vec<Vec<f32>>,
    initial: [RecurrentState<f32>; 2],
    bootstrap: [Vec<f64>; 2],
}

fn agent_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64 + 1)
}

fn batch_states(lanes: &[Lane], k: usize) -> RecurrentState<f32> {
    let mut s = RecurrentState { batch: lanes.len(), h: Vec::new(), c: Vec::new() };
    for l in lanes {
        s.h.extend_from_slice(&l.state[k].h);
        s.c.extend_from_slice(&l.state[k].c);
    }
    s
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt())
}

pub struct Trainer {
    config: TrainConfig,
    template: Arc<SceneTemplate>,
    learners: [Learner; 2],
    lanes: Vec<Lane>,
    update_rng: ChaCha8Rng,
    iteration: u64,
    env_steps: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let template = Arc::new(SceneTemplate::build(&config.env)?);
        Self::with_template(config, template)
    }

    /// Shares an already settled scene between trainers.
    pub fn with_template(config: TrainConfig, template: Arc<SceneTemplate>) -> Result<Self, TrainError> {
        config.validate()?;
        let arch = config.architecture();
        let mk = |k: usize| -> Result<Learner, TrainError> {
            let net = PolicyValueNet::new(arch.clone(), AGENT_NAMES[k], agent_seed(config.seed, k))?;
            let optimizer = Adam::new(config.ppo.adam(), &net.params);
            Ok(Learner { net, optimizer })
        };
        let learners = [mk(0)?, mk(1)?];
        let mut lanes = Vec::with_capacity(config.ppo.n_parallel_envs);
        for e in 0..config.ppo.n_parallel_envs {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(e as u64 + 1);
            let episode_seed = rng.gen();
            let mut env = CholecEnv::with_template(config.env.clone(), Arc::clone(&template))?;
            let obs = env.reset(episode_seed).to_tensor_data();
            lanes.push(Lane {
                env,
                rng,
                episode_seed,
                history: Vec::new(),
                state: [learners[0].net.zero_state(1), learners[1].net.zero_state(1)],
                prev: [None, None],
                returns: [0.0; 2],
                discount: 1.0,
                obs,
            });
        }
        let mut update_rng = ChaCha8Rng::seed_from_u64(config.seed);
        update_rng.set_stream(0);
        Ok(Self { config, template, learners, lanes, update_rng, iteration: 0, env_steps: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn template(&self) -> &Arc<SceneTemplate> {
        &self.template
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn learner(&self, k: usize) -> &Learner {
        &self.learners[k]
    }

    pub fn net(&self, k: usize) -> &PolicyValueNet<f32> {
        &self.learners[k].net
    }

    /// Collects one batch and runs all updates on it.
    pub fn train_iteration(&mut self) -> Result<TrainStats, TrainError> {
        let mut stats = TrainStats { iteration: self.iteration + 1, ..TrainStats::default() };
        let mut returns: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let roll = self.collect(&mut stats, &mut returns)?;
        self.update(&roll, &mut stats)?;
        for k in 0..2 {
            stats.agents[k].mean_return = (!returns[k].is_empty()).then(|| returns[k].iter().sum::<f64>() / returns[k].len() as f64);
        }
        if stats.episodes > 0 {
            for i in 0..3 {
                stats.outcome_fractions[i] = f64::from(stats.outcome_counts[i]) / f64::from(stats.episodes);
            }
        }
        self.iteration += 1;
        stats.env_steps = self.env_steps;
        Ok(stats)
    }

    fn collect(&mut self, stats: &mut TrainStats, returns: &mut [Vec<f64>; 2]) -> Result<Rollout, TrainError> {
        let ppo = &self.config.ppo;
        let (n_envs, unroll) = (ppo.n_parallel_envs, ppo.unroll_length());
        let rows = n_envs * unroll;
        let obs_len = self.config.observation_len();
        let gamma = ppo.gamma;
        let shared = ppo.shared_reward;
        let two = |v: Vec<f64>| [v.clone(), v];
        let mut r = Rollout {
            obs: Vec::with_capacity(rows * obs_len),
            actions: [Vec::with_capacity(rows), Vec::with_capacity(rows)],
            prev: [Vec::with_capacity(rows), Vec::with_capacity(rows)],
            log_probs: two(Vec::with_capacity(rows)),
            values: two(Vec::with_capacity(rows)),
            rewards: two(Vec::with_capacity(rows)),
            truncation_values: two(vec![0.0; rows]),
            terminals: Vec::with_capacity(rows),
            truncations: Vec::with_capacity(rows),
            keep: Vec::with_capacity(unroll),
            initial: [batch_states(&self.lanes, 0), batch_states(&self.lanes, 1)],
            bootstrap: [Vec::new(), Vec::new()],
        };
        let nets = [&self.learners[0].net, &self.learners[1].net];
        for t in 0..unroll {
            let obs: Vec<f32> = self.lanes.iter().flat_map(|l| l.obs.iter().copied()).collect();
            r.obs.extend_from_slice(&obs);
            r.keep.push(self.lanes.iter().map(|l| if l.env.state().step == 0 { 0.0 } else { 1.0 }).collect());
            let mut outs = Vec::with_capacity(2);
            for k in 0..2 {
                let prevs: Vec<Option<usize>> = self.lanes.iter().map(|l| l.prev[k]).collect();
                outs.push(nets[k].step(&obs, &prevs, &batch_states(&self.lanes, k))?);
                r.prev[k].extend(prevs);
            }
            for (e, lane) in self.lanes.iter_mut().enumerate() {
                let mut act = [0usize; 2];
                for k in 0..2 {
                    let na = nets[k].arch.n_actions;
                    let s = sample_action(outs[k].lane_logits(e, na), &mut lane.rng);
                    act[k] = s.action;
                    r.actions[k].push(s.action);
                    r.log_probs[k].push(s.log_prob);
                    r.values[k].push(f64::from(outs[k].values[e]));
                    let (h, c) = outs[k].state.lane(e);
                    lane.state[k] = RecurrentState { batch: 1, h: h.to_vec(), c: c.to_vec() };
                }
                let step = lane.env.state().step;
                let res = lane.env.step(&JointAction::discrete(act[0], act[1])).map_err(|source| TrainError::Env {
                    lane: e,
                    episode_seed: lane.episode_seed,
                    step,
                    source,
                })?;
                self.env_steps += 1;
                stats.iteration_env_steps += 1;
                lane.history.push([act[0] as u8, act[1] as u8]);
                let mut rew = [res.reward_gripper, res.reward_cauter];
                if shared {
                    rew = [rew[0] + rew[1]; 2];
                }
                for k in 0..2 {
                    r.rewards[k].push(rew[k]);
                    lane.returns[k] += lane.discount * rew[k];
                    lane.prev[k] = Some(act[k]);
                }
                lane.discount *= gamma;
                r.terminals.push(res.done && !res.truncated);
                r.truncations.push(res.truncated);
                let next_obs = res.observation.to_tensor_data();
                if res.truncated {
                    for k in 0..2 {
                        let out = nets[k].step(&next_obs, &[Some(act[k])], &lane.state[k])?;
                        r.truncation_values[k][t * n_envs + e] = f64::from(out.values[0]);
                    }
                }
                if res.done {
                    let outcome = res.outcome.unwrap_or(Outcome::RanOutOfTime);
                    stats.episodes += 1;
                    stats.outcome_counts[outcome.index()] += 1;
                    for k in 0..2 {
                        returns[k].push(lane.returns[k]);
                    }
                    lane.episode_seed = lane.rng.gen();
                    lane.obs = lane.env.reset(lane.episode_seed).to_tensor_data();
                    lane.history.clear();
                    lane.state = [nets[0].zero_state(1), nets[1].zero_state(1)];
                    lane.prev = [None, None];
                    lane.returns = [0.0; 2];
                    lane.discount = 1.0;
                } else {
                    lane.obs = next_obs;
                }
            }
        }
        let obs: Vec<f32> = self.lanes.iter().flat_map(|l| l.obs.iter().copied()).collect();
        for k in 0..2 {
            let prevs: Vec<Option<usize>> = self.lanes.iter().map(|l| l.prev[k]).collect();
            let out = nets[k].step(&obs, &prevs, &batch_states(&self.lanes, k))?;
            r.bootstrap[k] = out.values.iter().map(|&v| f64::from(v)).collect();
        }
        Ok(r)
    }

    /// Per-agent normalized advantages and value targets, time-major.
    fn advantages(&self, r: &Rollout, k: usize) -> Result<(Vec<f64>, Vec<f64>, [f64; 4]), TrainError> {
        let ppo = &self.config.ppo;
        let (n_envs, unroll) = (ppo.n_parallel_envs, ppo.unroll_length());
        let mut adv = vec![0.0; n_envs * unroll];
        let mut targets = vec![0.0; n_envs * unroll];
        for e in 0..n_envs {
            let idx: Vec<usize> = (0..unroll).map(|t| t * n_envs + e).collect();
            let seg = LaneSegment {
                rewards: idx.iter().map(|&i| r.rewards[k][i]).collect(),
                values: idx.iter().map(|&i| r.values[k][i]).collect(),
                terminals: idx.iter().map(|&i| r.terminals[i]).collect(),
                truncations: idx.iter().map(|&i| r.truncations[i]).collect(),
                truncation_values: idx.iter().map(|&i| r.truncation_values[k][i]).collect(),
                bootstrap_value: r.bootstrap[k][e],
            };
            let a = compute_gae(&seg, ppo.gamma, ppo.gae_lambda)?;
            let tg = value_targets(&a, &seg.values)?;
            for (j, &i) in idx.iter().enumerate() {
                adv[i] = a[j];
                targets[i] = tg[j];
            }
        }
        let (m, s) = normalize(&mut adv);
        let (nm, ns) = mean_std(&adv);
        Ok((adv, targets, [m, s, nm, ns]))
    }

    fn update(&mut self, r: &Rollout, stats: &mut TrainStats) -> Result<(), TrainError> {
        let ppo = self.config.ppo.clone();
        let (n_envs, unroll) = (ppo.n_parallel_envs, ppo.unroll_length());
        let obs_len = self.config.observation_len();
        let mut adv = Vec::with_capacity(2);
        let mut targets = Vec::with_capacity(2);
        for k in 0..2 {
            let (a, tg, s) = self.advantages(r, k)?;
            let st = &mut stats.agents[k];
            [st.advantage_mean, st.advantage_std, st.normalized_mean, st.normalized_std] = s;
            adv.push(a);
            targets.push(tg);
        }
        let per_mb = n_envs / ppo.minibatches_per_epoch;
        let mut lanes: Vec<usize> = (0..n_envs).collect();
        let mut sums = [[0.0f64; 4]; 2];
        let mut updates = 0u32;
        let mut norm_sum = 0.0;
        for epoch in 0..ppo.epochs_per_iteration {
            lanes.shuffle(&mut self.update_rng);
            for (mb, chunk) in lanes.chunks(per_mb).enumerate() {
                let rows: Vec<usize> = (0..unroll).flat_map(|t| chunk.iter().map(move |&e| t * n_envs + e)).collect();
                let mut grads: Vec<Gradients<f32>> = Vec::with_capacity(2);
                for k in 0..2 {
                    let learner = &self.learners[k];
                    let net = &learner.net;
                    let na = net.arch.n_actions;
                    let mut obs = Vec::with_capacity(rows.len() * obs_len);
                    for &i in &rows {
                        obs.extend_from_slice(&r.obs[i * obs_len..(i + 1) * obs_len]);
                    }
                    let prev: Vec<Option<usize>> = rows.iter().map(|&i| r.prev[k][i]).collect();
                    let keep: Vec<Vec<f32>> = (0..unroll).map(|t| chunk.iter().map(|&e| r.keep[t][e]).collect()).collect();
                    let init = r.initial[k].select(chunk);
                    let actions: Vec<usize> = rows.iter().map(|&i| r.actions[k][i]).collect();
                    let old: Vec<f64> = rows.iter().map(|&i| r.log_probs[k][i]).collect();
                    let a: Vec<f64> = rows.iter().map(|&i| adv[k][i]).collect();
                    let ret: Vec<f64> = rows.iter().map(|&i| targets[k][i]).collect();

                    let mut g = Graph::new(&net.params);
                    let obs_v = g.input(obs, rows.len(), obs_len);
                    let prev_v = g.input(one_hot(&prev, na)?, rows.len(), na);
                    let h0 = g.input(init.h, chunk.len(), net.arch.lstm);
                    let c0 = g.input(init.c, chunk.len(), net.arch.lstm);
                    let out = net.forward_sequence(&mut g, obs_v, prev_v, h0, c0, Some(&keep), unroll, chunk.len())?;
                    let targets = LossTargets { actions: &actions, old_log_probs: &old, advantages: &a, returns: &ret };
                    let lv = ppo_loss(&mut g, out.output, na, &targets, &ppo, ppo.agent_loss_weights[k])?;
                    let terms = [g.scalar(lv.total), g.scalar(lv.policy), g.scalar(lv.value), g.scalar(lv.entropy)];
                    if terms.iter().any(|v| !v.is_finite()) {
                        return Err(TrainError::NonFinite {
                            agent: AGENT_NAMES[k].into(),
                            epoch,
                            minibatch: mb,
                            detail: format!(
                                "total {} policy {} value {} entropy {}; lanes {chunk:?}; advantage range [{}, {}]",
                                terms[0],
                                terms[1],
                                terms[2],
                                terms[3],
                                a.iter().copied().fold(f64::INFINITY, f64::min),
                                a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                            ),
                        });
                    }
                    let s = &mut sums[k];
                    s[0] += f64::from(terms[1]);
                    s[1] += f64::from(terms[2]);
                    s[2] += f64::from(terms[3]);
                    s[3] += clip_fraction(g.value(lv.ratio), ppo.clip_ratio);
                    grads.push(g.backward(lv.total)?);
                }
                let (g0, g1) = grads.split_at_mut(1);
                let norm = clip_global_norm(&mut [&mut g0[0], &mut g1[0]], ppo.grad_clip_norm);
                let post = (g0[0].sum_squares() + g1[0].sum_squares()).sqrt();
                if !norm.is_finite() {
                    return Err(TrainError::NonFinite {
                        agent: "joint".into(),
                        epoch,
                        minibatch: mb,
                        detail: format!("gradient norm {norm}"),
                    });
                }
                norm_sum += norm;
                stats.grad_norm_max = stats.grad_norm_max.max(norm);
                stats.clipped_grad_norm_max = stats.clipped_grad_norm_max.max(post);
                for (k, gk) in grads.iter().enumerate() {
                    let l = &mut self.learners[k];
                    l.optimizer.update(&mut l.net.params, gk);
                }
                updates += 1;
            }
        }
        stats.updates = updates;
        if updates > 0 {
            let n = f64::from(updates);
            stats.grad_norm_mean = norm_sum / n;
            for k in 0..2 {
                let st = &mut stats.agents[k];
                st.policy_loss = sums[k][0] / n;
                st.value_loss = sums[k][1] / n;
                st.entropy = sums[k][2] / n;
                st.clip_fraction = sums[k][3] / n;
            }
        }
        Ok(())
    }

    /// Full trainer state: networks, optimizers, lane progress and RNG streams.
    pub fn checkpoint(&self) -> Checkpoint {
        let lanes = self
            .lanes
            .iter()
            .map(|l| LaneSnapshot {
                rng: l.rng.clone(),
                episode_seed: l.episode_seed,
                history: l.history.clone(),
                h: [l.state[0].h.clone(), l.state[1].h.clone()],
                c: [l.state[0].c.clone(), l.state[1].c.clone()],
                prev: l.prev,
                returns: l.returns,
                discount: l.discount,
            })
            .collect();
        let resume = ResumeState {
            config: self.config.clone(),
            iteration: self.iteration,
            env_steps: self.env_steps,
            update_rng: self.update_rng.clone(),
            lanes,
        };
        Checkpoint {
            config_hash: self.config.hash(),
            step: self.env_steps,
            agents: self.learners.iter().map(|l| AgentState { net: l.net.clone(), optimizer: Some(l.optimizer.clone()) }).collect(),
            metadata: serde_json::json!({ "trainer": serde_json::to_value(resume).expect("trainer state serializes") }),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(self.checkpoint().save(path)?)
    }

    /// Restores a trainer; episodes in flight are rebuilt by replaying their
    /// recorded actions in the deterministic environment.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let trainer = ckpt.metadata.get("trainer").ok_or_else(|| TrainError::Resume("checkpoint carries no trainer state".into()))?;
        let rs: ResumeState = serde_json::from_value(trainer.clone())?;
        if rs.config.hash() != ckpt.config_hash {
            return Err(TrainError::Resume(format!(
                "config hash {:016x} does not match checkpoint {:016x}",
                rs.config.hash(),
                ckpt.config_hash
            )));
        }
        let mut t = Self::new(rs.config)?;
        if rs.lanes.len() != t.lanes.len() {
            return Err(TrainError::Resume("lane count differs from configuration".into()));
        }
        for (k, name) in AGENT_NAMES.iter().enumerate() {
            let a = ckpt.agent(name).ok_or_else(|| TrainError::Resume(format!("missing agent {name}")))?;
            if a.net.arch != t.learners[k].net.arch {
                return Err(TrainError::Resume(format!("architecture of {name} differs from configuration")));
            }
            let optimizer = a.optimizer.clone().ok_or_else(|| TrainError::Resume(format!("missing optimizer state for {name}")))?;
            t.learners[k] = Learner { net: a.net.clone(), optimizer };
        }
        for (e, (lane, snap)) in t.lanes.iter_mut().zip(rs.lanes).enumerate() {
            lane.obs = lane.env.reset(snap.episode_seed).to_tensor_data();
            for a in &snap.history {
                let res = lane.env.step(&JointAction::discrete(usize::from(a[0]), usize::from(a[1])))?;
                if res.done {
                    return Err(TrainError::Resume(format!("replay of lane {e} ended early")));
                }
                lane.obs = res.observation.to_tensor_data();
            }
            lane.rng = snap.rng;
            lane.episode_seed = snap.episode_seed;
            lane.history = snap.history;
            lane.state = [
                RecurrentState { batch: 1, h: snap.h[0].clone(), c: snap.c[0].clone() },
                RecurrentState { batch: 1, h: snap.h[1].clone(), c: snap.c[1].clone() },
            ];
            lane.prev = snap.prev;
            lane.returns = snap.returns;
            lane.discount = snap.discount;
        }
        t.update_rng = rs.update_rng;
        t.iteration = rs.iteration;
        t.env_steps = rs.env_steps;
        Ok(t)
    }
}
