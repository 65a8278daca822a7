//! Soft Actor-Critic with a tanh-squashed Gaussian actor, twin critics and
//! Polyak-averaged targets, plus the replay buffer it learns from.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussfuse::DiagGaussian2;
use crate::neural::{Adam, AdamConfig, Head, Mlp, NeuralError};
use crate::rng;
use crate::simenv::OBS_DIM;

pub const ACTION_DIM: usize = 2;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error)]
pub enum SacError {
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    NotEnoughData { have: usize, need: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl SacError {
    fn from_neural(e: NeuralError) -> Self {
        match e {
            NeuralError::Divergence { layer } => SacError::Divergence(format!("non-finite gradient in layer {layer}")),
            other => SacError::Neural(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub alpha_entropy: f64,
    pub gamma: f64,
    pub polyak: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    pub updates_per_step: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![64, 64],
            alpha_entropy: 0.2,
            gamma: 0.99,
            polyak: 0.995,
            lr: 3e-4,
            batch_size: 128,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            updates_per_step: 1,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha_entropy > 0.0) {
            return Err("sac.alpha_entropy must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err("sac.gamma must be in (0, 1)".into());
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err("sac.polyak must be in (0, 1]".into());
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err("sac.lr, sac.batch_size and sac.buffer_capacity must be positive".into());
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return Err("sac.hidden sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Agent,
    Demo,
}

impl Source {
    fn index(self) -> usize {
        match self {
            Source::Agent => 0,
            Source::Demo => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: [f64; OBS_DIM],
    pub action: [f64; 2],
    pub reward: f64,
    pub next_obs: [f64; OBS_DIM],
    pub done: bool,
    pub source: Source,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
    counts: [usize; 2],
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, data: Vec::with_capacity(capacity.min(1 << 16)), next: 0, counts: [0, 0] }
    }

    pub fn push(&mut self, t: Transition) {
        self.counts[t.source.index()] += 1;
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            let old = std::mem::replace(&mut self.data[self.next], t);
            self.counts[old.source.index()] -= 1;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn count(&self, source: Source) -> usize {
        self.counts[source.index()]
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    /// Uniform sampling with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.data.len())).collect()
    }

    /// Half the batch from each source while both are present, uniform
    /// within each source. Falls back to uniform sampling otherwise.
    pub fn sample_stratified<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.count(Source::Agent) == 0 || self.count(Source::Demo) == 0 {
            return self.sample_indices(n, rng);
        }
        let demo_n = n / 2;
        let mut out = Vec::with_capacity(n);
        for (source, k) in [(Source::Demo, demo_n), (Source::Agent, n - demo_n)] {
            while out.len() < if source == Source::Demo { k } else { n } {
                let i = rng.gen_range(0..self.data.len());
                if self.data[i].source == source {
                    out.push(i);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Squashed-Gaussian sample and its log-density, per row.
struct Squashed {
    eps: Array2<f64>,
    std: Array2<f64>,
    action: Array2<f64>,
    log_prob: Array1<f64>,
}

fn squash<R: Rng + ?Sized>(head: &Array2<f64>, rng: &mut R) -> Squashed {
    let b = head.nrows();
    let mu = head.slice(s![.., ..ACTION_DIM]);
    let ls = head.slice(s![.., ACTION_DIM..]);
    let eps = Array2::from_shape_fn((b, ACTION_DIM), |_| rng.sample::<f64, _>(StandardNormal));
    let std = ls.mapv(f64::exp);
    let u = &mu + &(&std * &eps);
    let action = u.mapv(f64::tanh);
    let mut log_prob = Array1::zeros(b);
    for r in 0..b {
        let mut lp = 0.0;
        for d in 0..ACTION_DIM {
            let uu = u[[r, d]];
            lp += -0.5 * eps[[r, d]] * eps[[r, d]] - ls[[r, d]] - 0.5 * LN_2PI;
            // log(1 - tanh(u)^2), in a form that stays finite for large |u|.
            lp -= 2.0 * (std::f64::consts::LN_2 - uu - softplus(-2.0 * uu));
        }
        log_prob[r] = lp;
    }
    Squashed { eps, std, action, log_prob }
}

fn concat(obs: &Array2<f64>, act: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[obs.view(), act.view()]).expect("matching batch sizes")
}

impl SacAgent {
    pub fn new(config: SacConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, "sac.init");
        let actor = Mlp::new(&sizes(OBS_DIM, &config.hidden, 2 * ACTION_DIM), Head::Gaussian { action_dim: ACTION_DIM }, &mut r);
        let q1 = Mlp::new(&sizes(OBS_DIM + ACTION_DIM, &config.hidden, 1), Head::Linear, &mut r);
        let q2 = Mlp::new(&sizes(OBS_DIM + ACTION_DIM, &config.hidden, 1), Head::Linear, &mut r);
        let adam = AdamConfig { learning_rate: config.lr, ..AdamConfig::default() };
        SacAgent {
            actor_opt: Adam::new(&actor, adam),
            q1_opt: Adam::new(&q1, adam),
            q2_opt: Adam::new(&q2, adam),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            config,
        }
    }

    /// `(tanh(mean), exp(log_std)^2)` per action dimension.
    pub fn policy_distribution(&self, obs: &[f64; OBS_DIM]) -> DiagGaussian2 {
        actor_distribution(&self.actor, obs)
    }

    pub fn q_values(&self, obs: &[f64; OBS_DIM], action: [f64; 2]) -> (f64, f64) {
        let mut x = obs.to_vec();
        x.extend_from_slice(&action);
        let a = self.q1.predict_one(&x).expect("critic input size");
        let b = self.q2.predict_one(&x).expect("critic input size");
        (a[0], b[0])
    }

    /// One SAC step on a minibatch drawn from `indices`.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, indices: &[usize], rng: &mut R) -> Result<LossReport, SacError> {
        let b = indices.len();
        if b == 0 || buffer.len() < 1 {
            return Err(SacError::NotEnoughData { have: buffer.len(), need: self.config.batch_size });
        }
        let bf = b as f64;
        let mut obs = Array2::zeros((b, OBS_DIM));
        let mut next = Array2::zeros((b, OBS_DIM));
        let mut act = Array2::zeros((b, ACTION_DIM));
        let mut rew = Array1::zeros(b);
        let mut not_done = Array1::zeros(b);
        for (row, &i) in indices.iter().enumerate() {
            let t = buffer.get(i);
            obs.row_mut(row).assign(&ndarray::ArrayView1::from(&t.obs[..]));
            next.row_mut(row).assign(&ndarray::ArrayView1::from(&t.next_obs[..]));
            act.row_mut(row).assign(&ndarray::ArrayView1::from(&t.action[..]));
            rew[row] = t.reward;
            not_done[row] = if t.done { 0.0 } else { 1.0 };
        }
        let alpha = self.config.alpha_entropy;
        let gamma = self.config.gamma;

        // Critic targets from the current policy at s'.
        let next_head = self.actor.predict(next.view())?;
        let next_s = squash(&next_head, rng);
        let next_in = concat(&next, &next_s.action);
        let t1 = self.q1_target.predict(next_in.view())?;
        let t2 = self.q2_target.predict(next_in.view())?;
        let mut y = Array1::zeros(b);
        for r in 0..b {
            let soft = t1[[r, 0]].min(t2[[r, 0]]) - alpha * next_s.log_prob[r];
            y[r] = rew[r] + gamma * not_done[r] * soft;
        }

        let sa = concat(&obs, &act);
        let mut q_losses = [0.0; 2];
        for (k, (net, opt)) in [(&mut self.q1, &mut self.q1_opt), (&mut self.q2, &mut self.q2_opt)].into_iter().enumerate() {
            let (q, tape) = net.forward(sa.view())?;
            let mut up = Array2::zeros((b, 1));
            let mut loss = 0.0;
            for r in 0..b {
                let e = q[[r, 0]] - y[r];
                loss += e * e;
                up[[r, 0]] = 2.0 * e / bf;
            }
            q_losses[k] = loss / bf;
            let (g, _) = net.backward(&tape, up.view())?;
            opt.step(net, &g).map_err(SacError::from_neural)?;
        }

        // Actor: minimize E[alpha * log pi(a|s) - min Q(s, a)], a reparameterized.
        let (head, actor_tape) = self.actor.forward(obs.view())?;
        let cur = squash(&head, rng);
        let pi_in = concat(&obs, &cur.action);
        let (q1v, tape1) = self.q1.forward(pi_in.view())?;
        let (q2v, tape2) = self.q2.forward(pi_in.view())?;
        let mut up1 = Array2::zeros((b, 1));
        let mut up2 = Array2::zeros((b, 1));
        let mut actor_loss = 0.0;
        for r in 0..b {
            let (a, c) = (q1v[[r, 0]], q2v[[r, 0]]);
            if a <= c {
                up1[[r, 0]] = -1.0 / bf;
            } else {
                up2[[r, 0]] = -1.0 / bf;
            }
            actor_loss += alpha * cur.log_prob[r] - a.min(c);
        }
        actor_loss /= bf;
        let (_, gx1) = self.q1.backward(&tape1, up1.view())?;
        let (_, gx2) = self.q2.backward(&tape2, up2.view())?;
        let mut head_up = Array2::zeros((b, 2 * ACTION_DIM));
        for r in 0..b {
            for d in 0..ACTION_DIM {
                let a = cur.action[[r, d]];
                let dq_da = gx1[[r, OBS_DIM + d]] + gx2[[r, OBS_DIM + d]];
                // d log pi / du = 2 tanh(u); da/du = 1 - tanh(u)^2.
                let du = alpha * 2.0 * a / bf + dq_da * (1.0 - a * a);
                head_up[[r, d]] = du;
                head_up[[r, ACTION_DIM + d]] = du * cur.std[[r, d]] * cur.eps[[r, d]] - alpha / bf;
            }
        }
        let (g, _) = self.actor.backward(&actor_tape, head_up.view())?;
        self.actor_opt.step(&mut self.actor, &g).map_err(SacError::from_neural)?;

        let tau = self.config.polyak;
        self.q1_target.polyak_from(&self.q1, tau);
        self.q2_target.polyak_from(&self.q2, tau);

        let entropy = -cur.log_prob.sum() / bf;
        let report = LossReport { q1_loss: q_losses[0], q2_loss: q_losses[1], actor_loss, entropy };
        if [report.q1_loss, report.q2_loss, report.actor_loss, report.entropy].iter().any(|v| !v.is_finite()) {
            return Err(SacError::Divergence(format!("non-finite loss {report:?}")));
        }
        Ok(report)
    }
}

/// Action distribution of a gaussian-head actor network.
pub fn actor_distribution(actor: &Mlp, obs: &[f64; OBS_DIM]) -> DiagGaussian2 {
    let out = actor.predict_one(obs).expect("actor input size is OBS_DIM");
    let mean = [out[0].tanh(), out[1].tanh()];
    let var = [(2.0 * out[2]).exp(), (2.0 * out[3]).exp()];
    DiagGaussian2::from_arrays(mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs_with(k: usize, v: f64) -> [f64; OBS_DIM] {
        let mut o = [0.0; OBS_DIM];
        o[k] = v;
        o
    }

    fn t(obs: [f64; OBS_DIM], action: [f64; 2], reward: f64, done: bool, source: Source) -> Transition {
        Transition { obs, action, reward, next_obs: obs, done, source }
    }

    #[test]
    fn zero_actor_has_zero_mean() {
        let mut agent = SacAgent::new(SacConfig::default(), 0);
        agent.actor = agent.actor.zeroed();
        let d = agent.policy_distribution(&[0.3; OBS_DIM]);
        assert_eq!(d.mean(), [0.0, 0.0]);
        assert_eq!(d.var(), [1.0, 1.0]);
        assert_eq!(d, agent.policy_distribution(&[0.3; OBS_DIM]));
    }

    #[test]
    fn clamped_log_std_bounds_variance() {
        let mut agent = SacAgent::new(SacConfig::default(), 0);
        let last = agent.actor.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b[2] = 100.0;
        last.b[3] = -100.0;
        let d = agent.policy_distribution(&[0.1; OBS_DIM]);
        assert_eq!(d.v.var, 4f64.exp());
        assert_eq!(d.w.var, (-40f64).exp());
    }

    #[test]
    fn fifo_eviction_and_counts() {
        let mut buf = ReplayBuffer::new(3);
        for k in 0..5 {
            let src = if k < 2 { Source::Demo } else { Source::Agent };
            buf.push(t(obs_with(0, k as f64), [0.0; 2], 0.0, false, src));
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.count(Source::Demo), 0);
        assert_eq!(buf.count(Source::Agent), 3);
        let kept: Vec<f64> = (0..3).map(|i| buf.get(i).obs[0]).collect();
        assert_eq!(kept, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn stratified_batch_is_half_demo() {
        let mut buf = ReplayBuffer::new(1000);
        for k in 0..100 {
            buf.push(t(obs_with(0, k as f64), [0.0; 2], 0.0, false, Source::Agent));
        }
        for k in 0..40 {
            buf.push(t(obs_with(0, k as f64), [0.0; 2], 0.0, false, Source::Demo));
        }
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let idx = buf.sample_stratified(64, &mut r);
        let demo = idx.iter().filter(|i| buf.get(**i).source == Source::Demo).count();
        assert_eq!(idx.len(), 64);
        assert_eq!(demo, 32);
    }

    #[test]
    fn replay_sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for k in 0..10 {
            buf.push(t(obs_with(0, k as f64), [0.0; 2], 0.0, false, Source::Agent));
        }
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let mut counts = [0usize; 10];
        for i in buf.sample_indices(n, &mut r) {
            counts[i] += 1;
        }
        let e = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
        // 99th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn polyak_one_freezes_targets() {
        let cfg = SacConfig { polyak: 1.0, batch_size: 16, ..SacConfig::default() };
        let mut agent = SacAgent::new(cfg, 3);
        let before = (agent.q1_target.clone(), agent.q2_target.clone());
        let mut buf = ReplayBuffer::new(100);
        for k in 0..32 {
            buf.push(t(obs_with(1, k as f64 / 32.0), [0.2, -0.1], (k % 2) as f64, k % 3 == 0, Source::Agent));
        }
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let idx = buf.sample_indices(16, &mut r);
            agent.update(&buf, &idx, &mut r).unwrap();
        }
        assert_eq!(agent.q1_target, before.0);
        assert_eq!(agent.q2_target, before.1);
        assert_ne!(agent.q1, before.0);
    }

    #[test]
    fn terminal_zero_reward_critics_converge_to_zero() {
        let cfg = SacConfig { batch_size: 32, lr: 1e-3, ..SacConfig::default() };
        let mut agent = SacAgent::new(cfg, 5);
        let mut buf = ReplayBuffer::new(100);
        for _ in 0..64 {
            buf.push(t([0.0; OBS_DIM], [0.0, 0.0], 0.0, true, Source::Agent));
        }
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let first = agent.update(&buf, &buf.sample_indices(32, &mut r), &mut r).unwrap();
        let mut last = first;
        for _ in 0..100 {
            last = agent.update(&buf, &buf.sample_indices(32, &mut r), &mut r).unwrap();
        }
        assert!(last.q1_loss < first.q1_loss && last.q2_loss < first.q2_loss, "{first:?} -> {last:?}");
        let (a, b) = agent.q_values(&[0.0; OBS_DIM], [0.0, 0.0]);
        assert!(a.abs() < 0.1 && b.abs() < 0.1, "{a} {b}");
    }
}
