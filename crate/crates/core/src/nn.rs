//! Small dense policy/value network with hand-derived gradients.
//!
//! Architecture: `input -> tanh(hidden) -> tanh(hidden)`, then a linear
//! policy head (softmax over actions, optionally masked) and a linear scalar
//! value head sharing the trunk. All parameters live in one flat vector so
//! the optimizer and checkpointing treat them uniformly.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("observation has length {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gradient has length {got}, network has {expected} parameters")]
    GradientShape { expected: usize, got: usize },
    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),
    #[error("action mask leaves no valid action")]
    EmptyMask,
    #[error("checkpoint version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl NetShape {
    fn offsets(&self) -> Offsets {
        let NetShape { input, hidden, actions } = *self;
        let w1 = 0;
        let b1 = w1 + hidden * input;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden * hidden;
        let wp = b2 + hidden;
        let bp = wp + actions * hidden;
        let wv = bp + actions;
        let bv = wv + hidden;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            wp,
            bp,
            wv,
            bv,
            total: bv + 1,
        }
    }

    pub fn num_params(&self) -> usize {
        self.offsets().total
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wp: usize,
    bp: usize,
    wv: usize,
    bv: usize,
    total: usize,
}

/// Shared-trunk actor-critic network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub shape: NetShape,
    pub params: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub value: f64,
}

impl PolicyNet {
    /// All-zero parameters.
    pub fn zeros(shape: NetShape) -> Self {
        Self {
            shape,
            params: vec![0.0; shape.num_params()],
        }
    }

    /// Orthogonal initialisation: gain sqrt(2) on the trunk, 0.01 on the
    /// policy head, 1 on the value head; biases zero.
    pub fn new<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        let mut net = Self::zeros(shape);
        let o = shape.offsets();
        let NetShape { input, hidden, actions } = shape;
        let gain = std::f64::consts::SQRT_2;
        net.params[o.w1..o.b1].copy_from_slice(&orthogonal(hidden, input, gain, rng));
        net.params[o.w2..o.b2].copy_from_slice(&orthogonal(hidden, hidden, gain, rng));
        net.params[o.wp..o.bp].copy_from_slice(&orthogonal(actions, hidden, 0.01, rng));
        net.params[o.wv..o.bv].copy_from_slice(&orthogonal(1, hidden, 1.0, rng));
        net
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Action probabilities (strictly positive) and state value.
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, f64), NnError> {
        let mut cache = ForwardCache::default();
        self.forward_cached(obs, None, &mut cache)?;
        Ok((cache.probs, cache.value))
    }

    /// Forward pass; masked-out actions get probability exactly 0.
    pub fn forward_cached(&self, obs: &[f64], mask: Option<&[bool]>, cache: &mut ForwardCache) -> Result<(), NnError> {
        let NetShape { input, hidden, actions } = self.shape;
        if obs.len() != input {
            return Err(NnError::DimensionMismatch {
                expected: input,
                got: obs.len(),
            });
        }
        let o = self.shape.offsets();
        let p = &self.params;
        cache.input.clear();
        cache.input.extend_from_slice(obs);

        cache.h1.resize(hidden, 0.0);
        for (j, h) in cache.h1.iter_mut().enumerate() {
            let w = &p[o.w1 + j * input..o.w1 + (j + 1) * input];
            *h = (p[o.b1 + j] + dot(w, obs)).tanh();
        }
        cache.h2.resize(hidden, 0.0);
        for j in 0..hidden {
            let w = &p[o.w2 + j * hidden..o.w2 + (j + 1) * hidden];
            cache.h2[j] = (p[o.b2 + j] + dot(w, &cache.h1)).tanh();
        }
        cache.logits.resize(actions, 0.0);
        for a in 0..actions {
            let w = &p[o.wp + a * hidden..o.wp + (a + 1) * hidden];
            cache.logits[a] = p[o.bp + a] + dot(w, &cache.h2);
        }
        cache.value = p[o.bv] + dot(&p[o.wv..o.bv], &cache.h2);

        let valid = |a: usize| mask.is_none_or(|m| m[a]);
        let max = (0..actions)
            .filter(|&a| valid(a))
            .map(|a| cache.logits[a])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(NnError::EmptyMask);
        }
        let log_z = max
            + (0..actions)
                .filter(|&a| valid(a))
                .map(|a| (cache.logits[a] - max).exp())
                .sum::<f64>()
                .ln();
        cache.log_probs.resize(actions, 0.0);
        cache.probs.resize(actions, 0.0);
        for a in 0..actions {
            if valid(a) {
                cache.log_probs[a] = cache.logits[a] - log_z;
                cache.probs[a] = cache.log_probs[a].exp();
            } else {
                cache.log_probs[a] = f64::NEG_INFINITY;
                cache.probs[a] = 0.0;
            }
        }
        Ok(())
    }

    /// Accumulate parameter gradients into `grad` given the loss gradients
    /// with respect to the logits and the value output.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &[f64], d_value: f64, grad: &mut [f64]) {
        let NetShape { input, hidden, actions } = self.shape;
        let o = self.shape.offsets();
        let p = &self.params;
        debug_assert_eq!(grad.len(), o.total);

        let mut d_h2 = vec![0.0; hidden];
        for a in 0..actions {
            let g = d_logits[a];
            if g == 0.0 {
                continue;
            }
            grad[o.bp + a] += g;
            let row = o.wp + a * hidden;
            for j in 0..hidden {
                grad[row + j] += g * cache.h2[j];
                d_h2[j] += g * p[row + j];
            }
        }
        grad[o.bv] += d_value;
        for j in 0..hidden {
            grad[o.wv + j] += d_value * cache.h2[j];
            d_h2[j] += d_value * p[o.wv + j];
        }

        let mut d_h1 = vec![0.0; hidden];
        for j in 0..hidden {
            let dz = d_h2[j] * (1.0 - cache.h2[j] * cache.h2[j]);
            if dz == 0.0 {
                continue;
            }
            grad[o.b2 + j] += dz;
            let row = o.w2 + j * hidden;
            for i in 0..hidden {
                grad[row + i] += dz * cache.h1[i];
                d_h1[i] += dz * p[row + i];
            }
        }
        for j in 0..hidden {
            let dz = d_h1[j] * (1.0 - cache.h1[j] * cache.h1[j]);
            if dz == 0.0 {
                continue;
            }
            grad[o.b1 + j] += dz;
            let row = o.w1 + j * input;
            for i in 0..input {
                grad[row + i] += dz * cache.input[i];
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major `rows x cols` matrix with orthonormal rows (or columns, when
/// `rows > cols`), scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (k, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    while vecs.len() < k {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let proj = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        vecs.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows <= cols { vecs[r][c] } else { vecs[c][r] };
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &AdamConfig) -> Result<(), NnError> {
        if grad.len() != params.len() || self.m.len() != params.len() {
            return Err(NnError::GradientShape {
                expected: params.len(),
                got: grad.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(i));
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

/// Network weights plus optimizer state: the unit that is checkpointed,
/// cloned for fine-tuning, and composed into joint policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub version: u32,
    pub net: PolicyNet,
    pub optimizer: Adam,
    /// Multiplier applied to environment rewards during training.
    pub reward_scale: f64,
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(shape: NetShape, reward_scale: f64, rng: &mut R) -> Self {
        let net = PolicyNet::new(shape, rng);
        let optimizer = Adam::new(net.num_params());
        Self {
            version: CHECKPOINT_VERSION,
            net,
            optimizer,
            reward_scale,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let params: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if params.version != CHECKPOINT_VERSION {
            return Err(NnError::UnsupportedVersion(params.version));
        }
        Ok(params)
    }
}

/// One optimizer update of `params` with `grad`.
pub fn optimizer_step(params: &mut PolicyParams, grad: &[f64], hyper: &AdamConfig) -> Result<(), NnError> {
    let PolicyParams { net, optimizer, .. } = params;
    optimizer.step(&mut net.params, grad, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> NetShape {
        NetShape {
            input: 6,
            hidden: 16,
            actions: 4,
        }
    }

    #[test]
    fn zero_weights_give_uniform_policy() {
        let mut net = PolicyNet::zeros(shape());
        let o = shape().offsets();
        net.params[o.bv] = 0.75;
        let (p, v) = net.forward(&[0.3; 6]).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
        assert_eq!(v, 0.75);
    }

    #[test]
    fn dimension_mismatch() {
        let net = PolicyNet::zeros(shape());
        assert!(matches!(net.forward(&[0.0; 5]), Err(NnError::DimensionMismatch { expected: 6, got: 5 })));
    }

    #[test]
    fn probabilities_form_a_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PolicyNet::new(
            NetShape {
                input: 6,
                hidden: 64,
                actions: 4,
            },
            &mut rng,
        );
        for _ in 0..1000 {
            let obs: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (p, v) = net.forward(&obs).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|x| *x > 0.0));
            assert!(v.is_finite());
        }
    }

    #[test]
    fn masked_actions_get_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = PolicyNet::new(shape(), &mut rng);
        let mut cache = ForwardCache::default();
        net.forward_cached(&[0.1; 6], Some(&[true, false, true, false]), &mut cache).unwrap();
        assert_eq!(cache.probs[1], 0.0);
        assert_eq!(cache.probs[3], 0.0);
        assert!((cache.probs[0] + cache.probs[2] - 1.0).abs() < 1e-12);
        assert!(matches!(
            net.forward_cached(&[0.1; 6], Some(&[false; 4]), &mut cache),
            Err(NnError::EmptyMask)
        ));
    }

    #[test]
    fn init_rows_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = orthogonal(4, 10, 1.0, &mut rng);
        for a in 0..4 {
            for b in 0..4 {
                let d = dot(&w[a * 10..(a + 1) * 10], &w[b * 10..(b + 1) * 10]);
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_first_step_matches_hand_evaluation() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut opt = Adam::new(1);
        let mut p = [2.0];
        opt.step(&mut p, &[-0.5], &cfg).unwrap();
        // m_hat = g, v_hat = g^2  =>  step = -lr * g / (|g| + eps)
        let expected = 2.0 - 0.1 * (-0.5) / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_from_rest_is_noop() {
        let mut opt = Adam::new(3);
        let mut p = [1.0, -2.0, 3.0];
        opt.step(&mut p, &[0.0; 3], &AdamConfig::default()).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(opt.m, vec![0.0; 3]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut opt = Adam::new(2);
        let mut p = [0.0, 0.0];
        assert!(matches!(
            opt.step(&mut p, &[0.0, f64::NAN], &AdamConfig::default()),
            Err(NnError::NonFiniteGradient(1))
        ));
        assert!(opt.step(&mut p, &[0.0], &AdamConfig::default()).is_err());
    }

    #[test]
    fn adam_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let run = || {
            let mut opt = Adam::new(50);
            let mut p = vec![0.5; 50];
            for _ in 0..5 {
                opt.step(&mut p, &g, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = PolicyParams::new(shape(), 0.01, &mut rng);
        let g: Vec<f64> = (0..params.net.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        optimizer_step(&mut params, &g, &AdamConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        params.save(&path).unwrap();
        let loaded = PolicyParams::load(&path).unwrap();
        assert_eq!(loaded, params);
        let obs = [0.2, 0.9, 0.4, 0.5, 0.5, 0.5];
        let (p1, v1) = params.net.forward(&obs).unwrap();
        let (p2, v2) = loaded.net.forward(&obs).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
