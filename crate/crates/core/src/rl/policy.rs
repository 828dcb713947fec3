//! Gaussian acceleration policy with a value head, stored as flat weights.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::RlError;
use crate::env::{Action, Controller, EnvState, A_MAX, A_MIN};

pub const INPUT_DIM: usize = 5;
pub const HIDDEN: usize = 64;
pub const LOG_STD_RANGE: (f64, f64) = (-4.0, 1.0);
const OBS_CLAMP: f64 = 10.0;

/// Divisors applied to raw state components before the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScales {
    pub gap: f64,
    pub speed: f64,
    pub accel: f64,
}

impl Default for InputScales {
    fn default() -> Self {
        Self { gap: 50.0, speed: 30.0, accel: 3.0 }
    }
}

impl InputScales {
    pub fn observe(&self, s: &EnvState) -> [f64; INPUT_DIM] {
        [s.gap / self.gap, s.ego_v / self.speed, s.rel_v / self.speed, s.lead_v / self.speed, s.prev_accel / self.accel]
            .map(|v| v.clamp(-OBS_CLAMP, OBS_CLAMP))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Offsets of every tensor in the flat parameter vector. Two towers
/// (policy and value) of two tanh layers each; the log-std scalar comes last.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub pi_w1: usize,
    pub pi_b1: usize,
    pub pi_w2: usize,
    pub pi_b2: usize,
    pub mu_w: usize,
    pub mu_b: usize,
    pub v_w1: usize,
    pub v_b1: usize,
    pub v_w2: usize,
    pub v_b2: usize,
    pub val_w: usize,
    pub val_b: usize,
    pub log_std: usize,
    pub len: usize,
}

pub(crate) const LAYOUT: Layout = {
    let i = INPUT_DIM;
    let h = HIDDEN;
    let pi_w1 = 0;
    let pi_b1 = pi_w1 + h * i;
    let pi_w2 = pi_b1 + h;
    let pi_b2 = pi_w2 + h * h;
    let mu_w = pi_b2 + h;
    let mu_b = mu_w + h;
    let v_w1 = mu_b + 1;
    let v_b1 = v_w1 + h * i;
    let v_w2 = v_b1 + h;
    let v_b2 = v_w2 + h * h;
    let val_w = v_b2 + h;
    let val_b = val_w + h;
    let log_std = val_b + 1;
    Layout { pi_w1, pi_b1, pi_w2, pi_b2, mu_w, mu_b, v_w1, v_b1, v_w2, v_b2, val_w, val_b, log_std, len: log_std + 1 }
};

pub fn tensor_specs() -> Vec<TensorSpec> {
    let l = LAYOUT;
    let t = |name: &str, shape: &[usize], offset| TensorSpec { name: name.into(), shape: shape.to_vec(), offset };
    vec![
        t("policy.hidden1.weight", &[HIDDEN, INPUT_DIM], l.pi_w1),
        t("policy.hidden1.bias", &[HIDDEN], l.pi_b1),
        t("policy.hidden2.weight", &[HIDDEN, HIDDEN], l.pi_w2),
        t("policy.hidden2.bias", &[HIDDEN], l.pi_b2),
        t("policy.mean.weight", &[1, HIDDEN], l.mu_w),
        t("policy.mean.bias", &[1], l.mu_b),
        t("value.hidden1.weight", &[HIDDEN, INPUT_DIM], l.v_w1),
        t("value.hidden1.bias", &[HIDDEN], l.v_b1),
        t("value.hidden2.weight", &[HIDDEN, HIDDEN], l.v_w2),
        t("value.hidden2.bias", &[HIDDEN], l.v_b2),
        t("value.out.weight", &[1, HIDDEN], l.val_w),
        t("value.out.bias", &[1], l.val_b),
        t("log_std", &[1], l.log_std),
    ]
}

/// Activations kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub x: [f64; INPUT_DIM],
    pub ph1: [f64; HIDDEN],
    pub ph2: [f64; HIDDEN],
    pub vh1: [f64; HIDDEN],
    pub vh2: [f64; HIDDEN],
    pub mean: f64,
    pub value: f64,
}

/// Working network in f64; [`PolicyParams`] is the stored form.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) params: Vec<f64>,
    pub scales: InputScales,
}

fn dense_tanh<const IN: usize>(params: &[f64], w: usize, b: usize, x: &[f64; IN], out: &mut [f64; HIDDEN]) {
    for (j, o) in out.iter_mut().enumerate() {
        let row = &params[w + j * IN..w + (j + 1) * IN];
        let mut z = params[b + j];
        for (wi, xi) in row.iter().zip(x) {
            z += wi * xi;
        }
        *o = z.tanh();
    }
}

fn dot(params: &[f64], w: usize, h: &[f64; HIDDEN]) -> f64 {
    params[w..w + HIDDEN].iter().zip(h).map(|(a, b)| a * b).sum()
}

impl Network {
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = LAYOUT;
        let mut params = vec![0.0; l.len];
        for (w, rows, cols, gain) in [
            (l.pi_w1, HIDDEN, INPUT_DIM, 1.0),
            (l.pi_w2, HIDDEN, HIDDEN, 1.0),
            (l.mu_w, 1, HIDDEN, 0.01),
            (l.v_w1, HIDDEN, INPUT_DIM, 1.0),
            (l.v_w2, HIDDEN, HIDDEN, 1.0),
            (l.val_w, 1, HIDDEN, 1.0),
        ] {
            let m = orthogonal(rows, cols, gain, &mut rng);
            params[w..w + rows * cols].copy_from_slice(&m);
        }
        params[l.log_std] = 0.0;
        Self { params, scales: InputScales::default() }
    }

    pub fn log_std(&self) -> f64 {
        self.params[LAYOUT.log_std]
    }

    pub(crate) fn forward(&self, x: &[f64; INPUT_DIM]) -> Trace {
        let l = LAYOUT;
        let p = &self.params;
        let mut t = Trace {
            x: *x,
            ph1: [0.0; HIDDEN],
            ph2: [0.0; HIDDEN],
            vh1: [0.0; HIDDEN],
            vh2: [0.0; HIDDEN],
            mean: 0.0,
            value: 0.0,
        };
        dense_tanh(p, l.pi_w1, l.pi_b1, x, &mut t.ph1);
        dense_tanh(p, l.pi_w2, l.pi_b2, &t.ph1, &mut t.ph2);
        t.mean = p[l.mu_b] + dot(p, l.mu_w, &t.ph2);
        dense_tanh(p, l.v_w1, l.v_b1, x, &mut t.vh1);
        dense_tanh(p, l.v_w2, l.v_b2, &t.vh1, &mut t.vh2);
        t.value = p[l.val_b] + dot(p, l.val_w, &t.vh2);
        t
    }

    /// Mean action before clamping, and state value.
    pub fn evaluate(&self, state: &EnvState) -> (f64, f64) {
        let t = self.forward(&self.scales.observe(state));
        (t.mean, t.value)
    }

    pub fn value_of(&self, state: &EnvState) -> f64 {
        self.evaluate(state).1
    }

    /// Accumulates `d_mean`, `d_value`, `d_log_std` (loss gradients wrt the
    /// outputs) back into `grad`.
    pub(crate) fn backward(&self, t: &Trace, d_mean: f64, d_value: f64, d_log_std: f64, grad: &mut [f64]) {
        let l = LAYOUT;
        grad[l.log_std] += d_log_std;
        self.tower_backward(t, &t.ph1, &t.ph2, d_mean, [l.pi_w1, l.pi_b1, l.pi_w2, l.pi_b2, l.mu_w, l.mu_b], grad);
        self.tower_backward(t, &t.vh1, &t.vh2, d_value, [l.v_w1, l.v_b1, l.v_w2, l.v_b2, l.val_w, l.val_b], grad);
    }

    fn tower_backward(
        &self,
        t: &Trace,
        h1: &[f64; HIDDEN],
        h2: &[f64; HIDDEN],
        d_out: f64,
        [w1, b1, w2, b2, wo, bo]: [usize; 6],
        grad: &mut [f64],
    ) {
        if d_out == 0.0 {
            return;
        }
        let p = &self.params;
        grad[bo] += d_out;
        let mut dz2 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            grad[wo + j] += d_out * h2[j];
            dz2[j] = d_out * p[wo + j] * (1.0 - h2[j] * h2[j]);
        }
        let mut dh1 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            let g = dz2[j];
            grad[b2 + j] += g;
            let row = w2 + j * HIDDEN;
            for i in 0..HIDDEN {
                grad[row + i] += g * h1[i];
                dh1[i] += g * p[row + i];
            }
        }
        for j in 0..HIDDEN {
            let g = dh1[j] * (1.0 - h1[j] * h1[j]);
            grad[b1 + j] += g;
            let row = w1 + j * INPUT_DIM;
            for i in 0..INPUT_DIM {
                grad[row + i] += g * t.x[i];
            }
        }
    }

    pub fn to_params(&self) -> PolicyParams {
        let l = LAYOUT;
        PolicyParams {
            input_dim: INPUT_DIM,
            hidden: vec![HIDDEN, HIDDEN],
            weights: self.params[..l.log_std].iter().map(|&v| v as f32).collect(),
            log_std: self.params[l.log_std].clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1) as f32,
            scales: self.scales,
        }
    }
}

/// Orthogonal matrix (rows × cols, row-major) scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Gram-Schmidt over the longer dimension's vectors of the shorter length.
    let (n_vec, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while basis.len() < n_vec {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = gain * if rows >= cols { basis[c][r] } else { basis[r][c] };
        }
    }
    m
}

/// Stored policy: flat little-endian f32 weights plus a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(skip)]
    pub weights: Vec<f32>,
    pub log_std: f32,
    pub scales: InputScales,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    input_dim: usize,
    hidden: Vec<usize>,
    tensors: Vec<TensorSpec>,
    weight_count: usize,
    log_std: f32,
    scales: InputScales,
    action_bounds: (f64, f64),
}

const FORMAT: &str = "stylecraft-policy-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Stochastic,
    Mean,
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), RlError> {
        if self.input_dim != INPUT_DIM || self.hidden != [HIDDEN, HIDDEN] {
            return Err(RlError::Shape(format!(
                "expected input {INPUT_DIM} hidden [{HIDDEN}, {HIDDEN}], found input {} hidden {:?}",
                self.input_dim, self.hidden
            )));
        }
        if self.weights.len() != LAYOUT.log_std {
            return Err(RlError::Shape(format!(
                "expected {} weights, found {}",
                LAYOUT.log_std,
                self.weights.len()
            )));
        }
        if !(LOG_STD_RANGE.0..=LOG_STD_RANGE.1).contains(&(self.log_std as f64)) {
            return Err(RlError::Shape(format!("log_std {} outside {:?}", self.log_std, LOG_STD_RANGE)));
        }
        Ok(())
    }

    pub fn network(&self) -> Network {
        let mut params: Vec<f64> = self.weights.iter().map(|&w| w as f64).collect();
        params.push(self.log_std as f64);
        Network { params, scales: self.scales }
    }

    pub fn init(seed: u64) -> Self {
        init_policy(seed)
    }

    /// Writes `<base>.json` and `<base>.f32`.
    pub fn save(&self, base: impl AsRef<Path>) -> Result<(), RlError> {
        let base = base.as_ref();
        let (json, bin) = sidecar_paths(base);
        let side = Sidecar {
            format: FORMAT.into(),
            input_dim: self.input_dim,
            hidden: self.hidden.clone(),
            tensors: tensor_specs().into_iter().filter(|t| t.name != "log_std").collect(),
            weight_count: self.weights.len(),
            log_std: self.log_std,
            scales: self.scales,
            action_bounds: (A_MIN, A_MAX),
        };
        let bytes: Vec<u8> = self.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
        crate::fsutil::write_atomic(&bin, &bytes)?;
        crate::fsutil::write_atomic(&json, serde_json::to_string_pretty(&side)?.as_bytes())?;
        Ok(())
    }

    pub fn load(base: impl AsRef<Path>) -> Result<Self, RlError> {
        let (json, bin) = sidecar_paths(base.as_ref());
        let side: Sidecar = serde_json::from_slice(&fs::read(&json)?)?;
        if side.format != FORMAT {
            return Err(RlError::Shape(format!("unknown policy format `{}`", side.format)));
        }
        let raw = fs::read(&bin)?;
        if raw.len() != side.weight_count * 4 {
            return Err(RlError::Shape(format!(
                "{} holds {} bytes, expected {}",
                bin.display(),
                raw.len(),
                side.weight_count * 4
            )));
        }
        let weights = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let p = PolicyParams {
            input_dim: side.input_dim,
            hidden: side.hidden,
            weights,
            log_std: side.log_std,
            scales: side.scales,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Sidecar and weight file paths for a policy base path (extension ignored).
pub fn sidecar_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("f32"))
}

pub fn init_policy(seed: u64) -> PolicyParams {
    Network::init(seed).to_params()
}

/// Draws (or takes the mean) action and clamps it to the actuator bounds.
pub fn sample_action<R: Rng + ?Sized>(policy: &PolicyParams, state: &EnvState, mode: ActionMode, rng: &mut R) -> Action {
    let net = policy.network();
    let (mean, _) = net.evaluate(state);
    let a = match mode {
        ActionMode::Mean => mean,
        ActionMode::Stochastic => mean + net.log_std().exp() * rng.sample::<f64, _>(StandardNormal),
    };
    Action::clamped(a)
}

/// Drives the environment with a policy.
pub struct PolicyController {
    net: Network,
    mode: ActionMode,
    rng: ChaCha8Rng,
}

impl PolicyController {
    pub fn new(policy: &PolicyParams, mode: ActionMode, seed: u64) -> Self {
        Self { net: policy.network(), mode, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Controller for PolicyController {
    fn accel(&mut self, state: &EnvState) -> f64 {
        let (mean, _) = self.net.evaluate(state);
        match self.mode {
            ActionMode::Mean => mean,
            ActionMode::Stochastic => mean + self.net.log_std().exp() * self.rng.sample::<f64, _>(StandardNormal),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(gap: f64, v: f64, lead: f64) -> EnvState {
        EnvState { gap, ego_v: v, lead_v: lead, rel_v: lead - v, prev_accel: 0.0, t_index: 0, ego_x: 0.0, lead_x: gap + 4.5 }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        assert_eq!(init_policy(3), init_policy(3));
        assert_ne!(init_policy(3).weights, init_policy(4).weights);
    }

    #[test]
    fn initial_mean_is_near_zero() {
        let p = init_policy(11);
        let net = p.network();
        for s in [state(20.0, 10.0, 10.0), state(60.0, 30.0, 25.0), state(5.0, 0.0, 3.0)] {
            assert!(net.evaluate(&s).0.abs() < 0.1);
        }
    }

    #[test]
    fn orthogonal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = orthogonal(64, 5, 1.0, &mut rng);
        for a in 0..5 {
            for b in 0..5 {
                let d: f64 = (0..64).map(|r| m[r * 5 + a] * m[r * 5 + b]).sum();
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mean_mode_is_deterministic_and_clamped() {
        let p = init_policy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state(20.0, 10.0, 10.0);
        assert_eq!(sample_action(&p, &s, ActionMode::Mean, &mut rng), sample_action(&p, &s, ActionMode::Mean, &mut rng));
        let extreme = state(1e9, 1e6, -1e6);
        for _ in 0..100 {
            let a = sample_action(&p, &extreme, ActionMode::Stochastic, &mut rng).accel;
            assert!((A_MIN..=A_MAX).contains(&a));
        }
    }

    #[test]
    fn low_log_std_samples_stay_near_the_mean() {
        let mut p = init_policy(5);
        p.log_std = -4.0;
        let s = state(25.0, 15.0, 14.0);
        let mean = p.network().evaluate(&s).0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let close = (0..n)
            .filter(|_| (sample_action(&p, &s, ActionMode::Stochastic, &mut rng).accel - mean).abs() < 0.1)
            .count();
        assert!(close as f64 / n as f64 >= 0.997);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = init_policy(8);
        p.save(dir.path().join("pol")).unwrap();
        let back = PolicyParams::load(dir.path().join("pol")).unwrap();
        assert_eq!(back, p);
        let raw = fs::read(dir.path().join("pol.f32")).unwrap();
        assert_eq!(raw.len(), p.weights.len() * 4);
        assert_eq!(f32::from_le_bytes(raw[..4].try_into().unwrap()), p.weights[0]);
    }

    #[test]
    fn truncated_weight_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        init_policy(8).save(dir.path().join("pol")).unwrap();
        let bin = dir.path().join("pol.f32");
        let raw = fs::read(&bin).unwrap();
        fs::write(&bin, &raw[..raw.len() - 4]).unwrap();
        assert!(PolicyParams::load(dir.path().join("pol")).is_err());
    }
}
