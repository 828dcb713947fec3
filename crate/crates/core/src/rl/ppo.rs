//! Clipped-surrogate policy optimization over car-following episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{ActionMode, Network, PolicyController, PolicyParams, Trace, LAYOUT, LOG_STD_RANGE};
use super::RlError;
use crate::env::{features, reset, rollout_with, step, Action, A_MAX, A_MIN};
use crate::rewarddsl::RewardProgram;
use crate::trajdata::Dataset;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub epochs_per_batch: usize,
    pub steps_per_batch: usize,
    pub total_steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub n_seeds: usize,
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Per-tower global gradient-norm cap.
    pub max_grad_norm: f64,
    /// Leading training events used to score checkpoints and pick the best seed.
    pub probe_events: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            epochs_per_batch: 10,
            steps_per_batch: 4096,
            total_steps: 200_000,
            learning_rate: 3e-4,
            seed: 0,
            n_seeds: 5,
            minibatch_size: 64,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            probe_events: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if self.epochs_per_batch == 0 || self.steps_per_batch == 0 || self.minibatch_size == 0 {
            return bad("epochs, steps per batch and minibatch size must be positive");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1");
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 || self.max_grad_norm <= 0.0 {
            return bad("loss coefficients must be non-negative and the gradient cap positive");
        }
        if self.probe_events == 0 {
            return bad("probe_events must be at least 1");
        }
        Ok(())
    }

    pub fn n_batches(&self) -> usize {
        self.total_steps.div_ceil(self.steps_per_batch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Probe return of the final policy.
    pub probe_return: f64,
    /// Probe return after each batch, starting with the untrained policy at step 0.
    pub curve: Vec<(usize, f64)>,
    /// Batches in which every action sat at an actuator bound.
    pub diverged_batches: Vec<usize>,
    pub collisions: usize,
}

impl SeedRun {
    pub fn improved(&self) -> bool {
        match (self.curve.first(), self.curve.last()) {
            (Some(a), Some(b)) => b.1 > a.1,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainResult {
    #[serde(skip)]
    pub best_policy: PolicyParams,
    pub best_seed: usize,
    pub per_seed_returns: Vec<f64>,
    /// Mean over seeds of the probe return at each checkpoint.
    pub learning_curve: Vec<(usize, f64)>,
    pub runs: Vec<SeedRun>,
}

impl TrainResult {
    pub fn diverged(&self) -> bool {
        self.runs[self.best_seed].diverged_batches.len() == self.runs[self.best_seed].curve.len() - 1
    }
}

/// Log-density of `a` under N(mean, exp(log_std)²).
pub fn log_prob(a: f64, mean: f64, log_std: f64) -> f64 {
    let z = (a - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - HALF_LN_2PI
}

/// Clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)` for one sample, with
/// its gradient wrt the mean and the log-std.
pub fn surrogate(a: f64, mean: f64, log_std: f64, logp_old: f64, adv: f64, eps: f64) -> (f64, f64, f64) {
    let logp = log_prob(a, mean, log_std);
    let ratio = (logp - logp_old).exp();
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        let inv_var = (-2.0 * log_std).exp();
        let d = a - mean;
        let dlogp_dmean = d * inv_var;
        let dlogp_dlogstd = d * d * inv_var - 1.0;
        (unclipped, unclipped * dlogp_dmean, unclipped * dlogp_dlogstd)
    } else {
        (clipped, 0.0, 0.0)
    }
}

/// Scales advantages to zero mean and unit (population) std.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { 0.0 };
    }
}

/// Generalized advantage estimates and value targets for one trajectory
/// segment. `last_value` bootstraps a truncated segment; pass 0 after a
/// terminal state.
pub fn gae(rewards: &[f64], values: &[f64], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_v - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Welford running moments.
#[derive(Debug, Clone)]
struct RunningStat {
    n: f64,
    mean: f64,
    m2: f64,
}

impl RunningStat {
    fn new() -> Self {
        Self { n: 0.0, mean: 0.0, m2: 0.0 }
    }

    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2.0 {
            1.0
        } else {
            (self.m2 / self.n).sqrt().max(1e-4)
        }
    }
}

struct Sample {
    obs: [f64; super::policy::INPUT_DIM],
    action: f64,
    logp: f64,
    adv: f64,
    ret: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

fn clip_tower(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Loss gradient of one minibatch, averaged, accumulated into `grad`.
fn minibatch_grad(net: &Network, batch: &[&Sample], cfg: &TrainConfig, grad: &mut [f64]) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let log_std = net.log_std();
    let inv = 1.0 / batch.len() as f64;
    let mut d_log_std_total = 0.0;
    for s in batch {
        let t: Trace = net.forward(&s.obs);
        let (_, d_mean, d_ls) = surrogate(s.action, t.mean, log_std, s.logp, s.adv, cfg.clip_ratio);
        // loss = -surrogate + c_v * (V - R)^2 - c_e * entropy
        let d_value = cfg.value_coef * 2.0 * (t.value - s.ret);
        net.backward(&t, -d_mean * inv, d_value * inv, 0.0, grad);
        d_log_std_total += -d_ls * inv;
    }
    // entropy of a Gaussian is log_std + const
    grad[LAYOUT.log_std] += d_log_std_total - cfg.entropy_coef;
}

fn update(net: &mut Network, adam: &mut Adam, samples: &[Sample], cfg: &TrainConfig, rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut grad = vec![0.0; net.params.len()];
    let split = LAYOUT.v_w1;
    for _ in 0..cfg.epochs_per_batch {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            minibatch_grad(net, &batch, cfg, &mut grad);
            // policy tower plus log-std, then value tower
            let ls = grad[LAYOUT.log_std];
            let mut policy_part: Vec<f64> = grad[..split].to_vec();
            policy_part.push(ls);
            clip_tower(&mut policy_part, cfg.max_grad_norm);
            grad[..split].copy_from_slice(&policy_part[..split]);
            grad[LAYOUT.log_std] = policy_part[split];
            clip_tower(&mut grad[split..LAYOUT.log_std], cfg.max_grad_norm);
            adam.step(&mut net.params, &grad);
            let l = &mut net.params[LAYOUT.log_std];
            *l = l.clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
        }
    }
}

struct Collected {
    samples: Vec<Sample>,
    saturated: bool,
    collisions: usize,
}

fn collect(
    net: &Network,
    reward: &RewardProgram,
    data: &Dataset,
    cfg: &TrainConfig,
    scale: &mut RunningStat,
    rng: &mut ChaCha8Rng,
) -> Result<Collected, RlError> {
    let mut samples = Vec::with_capacity(cfg.steps_per_batch);
    let mut at_bound = 0usize;
    let mut collisions = 0usize;
    let std = net.log_std().exp();
    while samples.len() < cfg.steps_per_batch {
        let event = &data.events[rng.random_range(0..data.events.len())];
        if event.frames.len() < 2 {
            continue;
        }
        let mut state = reset(event);
        let mut rewards = Vec::new();
        let mut values = Vec::new();
        let start = samples.len();
        let mut discounted = 0.0;
        let last_value = loop {
            let obs = net.scales.observe(&state);
            let t = net.forward(&obs);
            let raw = t.mean + std * rng.sample::<f64, _>(StandardNormal);
            let applied = Action::clamped(raw);
            if applied.accel <= A_MIN || applied.accel >= A_MAX {
                at_bound += 1;
            }
            let (next, done) = step(&state, applied, event, event.dt)?;
            let r = reward.eval(&features(&state, applied.accel, &next, event.dt));
            if !r.is_finite() {
                return Err(RlError::NonFiniteReward(format!("event `{}` step {}", event.event_id, next.t_index)));
            }
            discounted = discounted * cfg.gamma + r;
            scale.push(discounted);
            rewards.push((r / scale.std()).clamp(-10.0, 10.0));
            values.push(t.value);
            samples.push(Sample { obs, action: raw, logp: log_prob(raw, t.mean, net.log_std()), adv: 0.0, ret: 0.0 });
            state = next;
            if next.gap <= 0.0 {
                collisions += 1;
                break 0.0;
            }
            if done || samples.len() >= cfg.steps_per_batch {
                break net.value_of(&state);
            }
        };
        let (adv, ret) = gae(&rewards, &values, last_value, cfg.gamma, cfg.gae_lambda);
        for (k, s) in samples[start..].iter_mut().enumerate() {
            s.adv = adv[k];
            s.ret = ret[k];
        }
    }
    let mut adv: Vec<f64> = samples.iter().map(|s| s.adv).collect();
    normalize_advantages(&mut adv);
    for (s, a) in samples.iter_mut().zip(adv) {
        s.adv = a;
    }
    let saturated = at_bound == samples.len();
    Ok(Collected { samples, saturated, collisions })
}

/// Mean-mode discounted return averaged over `events`.
pub fn evaluate_return(policy: &PolicyParams, reward: &RewardProgram, events: &Dataset, gamma: f64) -> Result<f64, RlError> {
    if events.is_empty() {
        return Err(RlError::EmptyDataset);
    }
    let mut total = 0.0;
    for e in &events.events {
        let mut ctl = PolicyController::new(policy, ActionMode::Mean, 0);
        total += rollout_with(&mut ctl, reward, e)?.discounted_return(gamma);
    }
    Ok(total / events.len() as f64)
}

fn train_one(reward: &RewardProgram, data: &Dataset, probe: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<(PolicyParams, SeedRun), RlError> {
    let mut net = Network::init(seed);
    let mut adam = Adam::new(net.params.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed0_f9e0);
    let mut scale = RunningStat::new();
    let mut curve = vec![(0, evaluate_return(&net.to_params(), reward, probe, cfg.gamma)?)];
    let mut diverged_batches = Vec::new();
    let mut collisions = 0;
    let mut steps = 0;
    for batch in 0..cfg.n_batches() {
        let c = collect(&net, reward, data, cfg, &mut scale, &mut rng)?;
        steps += c.samples.len();
        collisions += c.collisions;
        if c.saturated {
            diverged_batches.push(batch);
        }
        update(&mut net, &mut adam, &c.samples, cfg, &mut rng);
        curve.push((steps, evaluate_return(&net.to_params(), reward, probe, cfg.gamma)?));
    }
    let params = net.to_params();
    let probe_return = curve.last().map(|c| c.1).unwrap_or(f64::NEG_INFINITY);
    Ok((params, SeedRun { seed, probe_return, curve, diverged_batches, collisions }))
}

/// Trains `cfg.n_seeds` independent policies (seeds `cfg.seed + i`) and keeps
/// the one with the highest probe return.
pub fn ppo_train(reward: &RewardProgram, train_data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult, RlError> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(RlError::EmptyDataset);
    }
    let probe = train_data.head(cfg.probe_events);
    let runs: Vec<(PolicyParams, SeedRun)> = (0..cfg.n_seeds as u64)
        .into_par_iter()
        .map(|i| train_one(reward, train_data, &probe, cfg, cfg.seed.wrapping_add(i)))
        .collect::<Result<_, _>>()?;
    let best_seed = runs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.probe_return.total_cmp(&b.1 .1.probe_return).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let n_points = runs[0].1.curve.len();
    let learning_curve = (0..n_points)
        .map(|k| {
            let step = runs[0].1.curve[k].0;
            let mean = runs.iter().map(|r| r.1.curve[k].1).sum::<f64>() / runs.len() as f64;
            (step, mean)
        })
        .collect();
    let per_seed_returns = runs.iter().map(|r| r.1.probe_return).collect();
    let best_policy = runs[best_seed].0.clone();
    Ok(TrainResult {
        best_policy,
        best_seed,
        per_seed_returns,
        learning_curve,
        runs: runs.into_iter().map(|r| r.1).collect(),
    })
}

/// Outcome of a finite-difference check on the toy policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub points: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

/// Checks the analytic surrogate gradient of a two-parameter policy
/// `mean = theta0 * x`, `log_std = theta1` against central differences.
pub fn toy_gradient_check(points: usize, h: f64, tol: f64, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let mut failures = 0;
    let mut checked = 0;
    while checked < points {
        let x: f64 = rng.random_range(-2.0..2.0);
        let th = [rng.random_range(-1.5..1.5), rng.random_range(-1.0..0.5)];
        let a: f64 = rng.random_range(-3.0..3.0);
        let adv: f64 = rng.random_range(-2.0..2.0);
        // old policy close to the current one so both clip regimes appear
        let logp_old = log_prob(a, th[0] * x, th[1]) + rng.random_range(-0.3..0.3);
        let eps = 0.2;
        let f = |t: [f64; 2]| surrogate(a, t[0] * x, t[1], logp_old, adv, eps).0;
        let (_, d_mean, d_ls) = surrogate(a, th[0] * x, th[1], logp_old, adv, eps);
        let analytic = [d_mean * x, d_ls];
        // skip points within reach of the clip kink, where the objective is not differentiable
        let ratio = (log_prob(a, th[0] * x, th[1]) - logp_old).exp();
        if ((ratio - (1.0 - eps)).abs() < 1e-3) || ((ratio - (1.0 + eps)).abs() < 1e-3) {
            continue;
        }
        checked += 1;
        let mut bad = false;
        for k in 0..2 {
            let (mut p, mut m) = (th, th);
            p[k] += h;
            m[k] -= h;
            let fd = (f(p) - f(m)) / (2.0 * h);
            let scale = analytic[k].abs().max(fd.abs());
            let err = (analytic[k] - fd).abs();
            if scale > 0.0 {
                max_rel = max_rel.max(err / scale);
            }
            if err > tol * scale + 1e-10 {
                bad = true;
            }
        }
        failures += bad as usize;
    }
    GradCheckReport { points, max_rel_error: max_rel, failures }
}
