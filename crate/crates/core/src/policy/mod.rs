//! Autoregressive softmax policy over caption tokens.
//!
//! At step `t` the state is the sample's feature vector concatenated with a
//! one-hot of the previous token (`<bos>` at the first step), and
//!
//! ```text
//! logits_t = W · state_t + b,    pi(a | state_t) = softmax(logits_t)[a]
//! ```
//!
//! Because the feature part of the state is the same at every step, the
//! feature block of a sequence gradient is a single outer product of the
//! summed per-step coefficients with the features; only the one-hot column
//! differs per step.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("token {token} outside vocabulary of {vocab_size}")]
    TokenOutOfVocab { token: u32, vocab_size: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in parameter block `{block}` at index {index}")]
    NonFinite { block: &'static str, index: usize },
    #[error("invalid learning rate {0}")]
    LearningRate(f64),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub caption_length: usize,
    pub bos: u32,
    /// Row-major `[vocab_size × state_dim]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gradient with the same layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(model: &PolicyModel) -> Self {
        Self {
            w: vec![0.0; model.w.len()],
            b: vec![0.0; model.b.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += scale * b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.w.iter_mut().chain(self.b.iter_mut()).for_each(|x| *x *= s);
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().chain(&self.b).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.w.iter().chain(&self.b).all(|&x| x == 0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(&self.b)
    }
}

/// One sampled caption with its per-token log-probabilities under the
/// sampling policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<u32>,
    pub logprobs_old: Vec<f64>,
}

fn log_softmax_at(logits: &[f64], a: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits[a] - lse
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

impl PolicyModel {
    /// All-zero parameters: the uniform policy.
    pub fn zeros(vocab_size: usize, feature_dim: usize, caption_length: usize, bos: u32) -> Self {
        let state_dim = feature_dim + vocab_size;
        Self {
            vocab_size,
            feature_dim,
            caption_length,
            bos,
            w: vec![0.0; vocab_size * state_dim],
            b: vec![0.0; vocab_size],
        }
    }

    pub fn for_dataset(header: &crate::corpus::DatasetHeader) -> Self {
        Self::zeros(
            header.vocab_size(),
            header.feature_dim,
            header.caption_length,
            header.special.bos,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.feature_dim + self.vocab_size
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Flat view `[w..., b...]`.
    pub fn params(&self) -> Vec<f64> {
        self.w.iter().chain(&self.b).copied().collect()
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        if i < self.w.len() {
            self.w[i] = v;
        } else {
            self.b[i - self.w.len()] = v;
        }
    }

    pub fn param(&self, i: usize) -> f64 {
        if i < self.w.len() {
            self.w[i]
        } else {
            self.b[i - self.w.len()]
        }
    }

    fn check_features(&self, features: &[f64]) -> Result<(), PolicyError> {
        if features.len() != self.feature_dim {
            return Err(PolicyError::LengthMismatch {
                what: "features",
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), PolicyError> {
        if tokens.len() != self.caption_length {
            return Err(PolicyError::LengthMismatch {
                what: "tokens",
                expected: self.caption_length,
                got: tokens.len(),
            });
        }
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(PolicyError::TokenOutOfVocab {
                token,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }

    /// `W_features · x + b`, shared by every step of a sequence.
    fn base_logits(&self, features: &[f64]) -> Vec<f64> {
        let s = self.state_dim();
        (0..self.vocab_size)
            .map(|v| {
                let row = &self.w[v * s..v * s + self.feature_dim];
                row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.b[v]
            })
            .collect()
    }

    fn step_logits(&self, base: &[f64], prev: u32, out: &mut [f64]) {
        let s = self.state_dim();
        let col = self.feature_dim + prev as usize;
        for (v, o) in out.iter_mut().enumerate() {
            *o = base[v] + self.w[v * s + col];
        }
    }

    /// Softmax distribution at the step following `prev`.
    pub fn next_token_probs(&self, features: &[f64], prev: u32) -> Vec<f64> {
        let base = self.base_logits(features);
        let mut logits = vec![0.0; self.vocab_size];
        self.step_logits(&base, prev, &mut logits);
        let mut p = vec![0.0; self.vocab_size];
        softmax_into(&logits, &mut p);
        p
    }

    /// Adds `coef_t ⊗ state_t` for every step into `grad`, where the states
    /// follow the teacher-forced prefix of `tokens`.
    fn accumulate(&self, features: &[f64], tokens: &[u32], coefs: &[Vec<f64>], grad: &mut Gradient) {
        let s = self.state_dim();
        let d = self.feature_dim;
        let mut summed = vec![0.0; self.vocab_size];
        let mut prev = self.bos;
        for (t, c) in coefs.iter().enumerate() {
            let col = d + prev as usize;
            for (v, &cv) in c.iter().enumerate() {
                if cv != 0.0 {
                    summed[v] += cv;
                    grad.w[v * s + col] += cv;
                    grad.b[v] += cv;
                }
            }
            prev = tokens[t];
        }
        for (v, &cv) in summed.iter().enumerate() {
            if cv != 0.0 {
                let row = &mut grad.w[v * s..v * s + d];
                for (g, x) in row.iter_mut().zip(features) {
                    *g += cv * x;
                }
            }
        }
    }
}

/// Total and per-token log-probability of `tokens` under teacher forcing.
pub fn logprob(
    model: &PolicyModel,
    features: &[f64],
    tokens: &[u32],
) -> Result<(f64, Vec<f64>), PolicyError> {
    model.check_features(features)?;
    model.check_tokens(tokens)?;
    let base = model.base_logits(features);
    let mut logits = vec![0.0; model.vocab_size];
    let mut per_token = Vec::with_capacity(tokens.len());
    let mut prev = model.bos;
    for &a in tokens {
        model.step_logits(&base, prev, &mut logits);
        per_token.push(log_softmax_at(&logits, a as usize));
        prev = a;
    }
    Ok((per_token.iter().sum(), per_token))
}

/// Negative log-likelihood of a caption.
pub fn nll(model: &PolicyModel, features: &[f64], tokens: &[u32]) -> Result<f64, PolicyError> {
    Ok(-logprob(model, features, tokens)?.0)
}

/// Draws `g` independent captions.
pub fn sample_group<R: Rng + ?Sized>(
    model: &PolicyModel,
    features: &[f64],
    g: usize,
    rng: &mut R,
) -> Result<Vec<Rollout>, PolicyError> {
    model.check_features(features)?;
    let base = model.base_logits(features);
    let mut logits = vec![0.0; model.vocab_size];
    let mut probs = vec![0.0; model.vocab_size];
    let mut out = Vec::with_capacity(g);
    for _ in 0..g {
        let mut tokens = Vec::with_capacity(model.caption_length);
        let mut logprobs_old = Vec::with_capacity(model.caption_length);
        let mut prev = model.bos;
        for _ in 0..model.caption_length {
            model.step_logits(&base, prev, &mut logits);
            softmax_into(&logits, &mut probs);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut a = model.vocab_size - 1;
            for (v, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    a = v;
                    break;
                }
            }
            logprobs_old.push(log_softmax_at(&logits, a));
            tokens.push(a as u32);
            prev = a as u32;
        }
        out.push(Rollout {
            tokens,
            logprobs_old,
        });
    }
    Ok(out)
}

/// Gradient of `-sum_t log pi(g_t | s_t)` with teacher forcing.
pub fn grad_nll(
    model: &PolicyModel,
    features: &[f64],
    ground_truth: &[u32],
) -> Result<Gradient, PolicyError> {
    model.check_features(features)?;
    model.check_tokens(ground_truth)?;
    let base = model.base_logits(features);
    let mut logits = vec![0.0; model.vocab_size];
    let mut coefs = Vec::with_capacity(ground_truth.len());
    let mut prev = model.bos;
    for &a in ground_truth {
        model.step_logits(&base, prev, &mut logits);
        let mut p = vec![0.0; model.vocab_size];
        softmax_into(&logits, &mut p);
        p[a as usize] -= 1.0;
        coefs.push(p);
        prev = a;
    }
    let mut grad = Gradient::zeros_like(model);
    model.accumulate(features, ground_truth, &coefs, &mut grad);
    Ok(grad)
}

/// Value and gradient of the clipped group surrogate.
#[derive(Clone, Debug)]
pub struct SurrogateEval {
    pub objective: f64,
    pub gradient: Gradient,
    /// Tokens whose clipped branch was active (zero gradient).
    pub clipped_tokens: usize,
}

/// Clipped surrogate averaged over the group and over each caption's length,
/// without a reference-policy penalty. The returned gradient is for ascent.
pub fn grad_grpo(
    model: &PolicyModel,
    features: &[f64],
    rollouts: &[Rollout],
    advantages: &[f64],
    clip_eps: f64,
) -> Result<SurrogateEval, PolicyError> {
    if advantages.len() != rollouts.len() {
        return Err(PolicyError::LengthMismatch {
            what: "advantages",
            expected: rollouts.len(),
            got: advantages.len(),
        });
    }
    model.check_features(features)?;
    let g = rollouts.len() as f64;
    let base = model.base_logits(features);
    let mut logits = vec![0.0; model.vocab_size];
    let mut grad = Gradient::zeros_like(model);
    let mut objective = 0.0;
    let mut clipped_tokens = 0;

    for (ro, &adv) in rollouts.iter().zip(advantages) {
        model.check_tokens(&ro.tokens)?;
        if ro.logprobs_old.len() != ro.tokens.len() {
            return Err(PolicyError::LengthMismatch {
                what: "logprobs_old",
                expected: ro.tokens.len(),
                got: ro.logprobs_old.len(),
            });
        }
        if adv == 0.0 {
            continue;
        }
        let len = ro.tokens.len() as f64;
        let mut coefs = Vec::with_capacity(ro.tokens.len());
        let mut prev = model.bos;
        let mut seq_value = 0.0;
        for (&a, &lp_old) in ro.tokens.iter().zip(&ro.logprobs_old) {
            model.step_logits(&base, prev, &mut logits);
            let mut p = vec![0.0; model.vocab_size];
            softmax_into(&logits, &mut p);
            let lp = log_softmax_at(&logits, a as usize);
            let ratio = (lp - lp_old).exp();
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
            if unclipped <= clipped {
                seq_value += unclipped;
                // d ratio = ratio * d log pi, d log pi = onehot - probs
                let c = adv * ratio / (g * len);
                p.iter_mut().for_each(|x| *x *= -c);
                p[a as usize] += c;
            } else {
                seq_value += clipped;
                clipped_tokens += 1;
                p.iter_mut().for_each(|x| *x = 0.0);
            }
            coefs.push(p);
            prev = a;
        }
        objective += seq_value / len;
        model.accumulate(features, &ro.tokens, &coefs, &mut grad);
    }
    Ok(SurrogateEval {
        objective: objective / g,
        gradient: grad,
        clipped_tokens,
    })
}

/// `θ ← θ − lr · gradient`. The model is left untouched if any updated
/// parameter would be non-finite.
pub fn sgd_step(model: &mut PolicyModel, gradient: &Gradient, lr: f64) -> Result<(), PolicyError> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(PolicyError::LearningRate(lr));
    }
    let new_w: Vec<f64> = model.w.iter().zip(&gradient.w).map(|(p, g)| p - lr * g).collect();
    if let Some(index) = new_w.iter().position(|x| !x.is_finite()) {
        return Err(PolicyError::NonFinite { block: "w", index });
    }
    let new_b: Vec<f64> = model.b.iter().zip(&gradient.b).map(|(p, g)| p - lr * g).collect();
    if let Some(index) = new_b.iter().position(|x| !x.is_finite()) {
        return Err(PolicyError::NonFinite { block: "b", index });
    }
    model.w = new_w;
    model.b = new_b;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, vocab: usize, d: usize, len: usize) -> PolicyModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = PolicyModel::zeros(vocab, d, len, 0);
        for i in 0..m.n_params() {
            m.set_param(i, rng.random_range(-1.0..1.0));
        }
        m
    }

    #[test]
    fn uniform_policy_logprob() {
        let m = PolicyModel::zeros(4, 3, 2, 0);
        let (total, per) = logprob(&m, &[0.1, 0.2, 0.3], &[1, 3]).unwrap();
        assert!((total + 2.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(per.len(), 2);
    }

    #[test]
    fn next_token_distribution_normalizes() {
        let m = random_model(1, 7, 3, 4);
        let x = [0.5, -1.0, 2.0];
        for prev in 0..7 {
            let p = m.next_token_probs(&x, prev);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // matches exp(logprob) of single-token continuations
            let mut one = PolicyModel { caption_length: 1, ..m.clone() };
            one.bos = prev;
            for (a, pa) in p.iter().enumerate() {
                let (lp, _) = logprob(&one, &x, &[a as u32]).unwrap();
                assert!((lp.exp() - pa).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_vocab_token_is_rejected() {
        let m = PolicyModel::zeros(4, 2, 2, 0);
        assert!(matches!(
            logprob(&m, &[0.0, 0.0], &[1, 4]),
            Err(PolicyError::TokenOutOfVocab { token: 4, .. })
        ));
    }

    #[test]
    fn sampling_is_seeded_and_shaped() {
        let m = random_model(2, 6, 3, 5);
        let x = [0.3, 0.1, -0.2];
        let a = sample_group(&m, &x, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_group(&m, &x, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for r in &a {
            assert_eq!(r.tokens.len(), 5);
            assert_eq!(r.logprobs_old.len(), 5);
            assert!(r.logprobs_old.iter().all(|&l| l.is_finite() && l <= 0.0));
            let (_, per) = logprob(&m, &x, &r.tokens).unwrap();
            for (p, q) in per.iter().zip(&r.logprobs_old) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_bias_gradient_closed_form() {
        let m = PolicyModel::zeros(4, 3, 1, 0);
        let g = grad_nll(&m, &[0.0, 0.0, 0.0], &[2]).unwrap();
        assert_eq!(g.b, vec![0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn confident_model_has_vanishing_gradient() {
        let mut m = PolicyModel::zeros(4, 2, 3, 0);
        let gt = [1u32, 2, 3];
        // prev-token column drives each next token with a huge margin
        let s = m.state_dim();
        let mut prev = 0usize;
        for &a in &gt {
            m.w[a as usize * s + 2 + prev] = 40.0;
            prev = a as usize;
        }
        let g = grad_nll(&m, &[0.0, 0.0], &gt).unwrap();
        assert!(g.norm() < 1e-6, "{}", g.norm());
    }

    #[test]
    fn zero_advantages_give_exact_zero_gradient() {
        let m = random_model(3, 5, 2, 4);
        let x = [0.4, -0.3];
        let ro = sample_group(&m, &x, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let e = grad_grpo(&m, &x, &ro, &[0.0; 4], 0.2).unwrap();
        assert!(e.gradient.is_zero());
        assert_eq!(e.objective, 0.0);
    }

    #[test]
    fn advantage_length_mismatch() {
        let m = random_model(3, 5, 2, 4);
        let x = [0.4, -0.3];
        let ro = sample_group(&m, &x, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(
            grad_grpo(&m, &x, &ro, &[1.0, -1.0], 0.2),
            Err(PolicyError::LengthMismatch { what: "advantages", .. })
        ));
    }

    #[test]
    fn ratio_one_objective_is_mean_advantage() {
        let m = random_model(4, 5, 2, 3);
        let x = [1.0, 0.5];
        let ro = sample_group(&m, &x, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let adv = [1.2, -0.4, -1.0, 0.2];
        let e = grad_grpo(&m, &x, &ro, &adv, 0.2).unwrap();
        let mean = adv.iter().sum::<f64>() / 4.0;
        assert!((e.objective - mean).abs() < 1e-12);
        assert_eq!(e.clipped_tokens, 0);
    }

    #[test]
    fn sgd_zero_gradient_and_zero_lr_are_no_ops() {
        let mut m = random_model(5, 4, 2, 2);
        let before = m.clone();
        sgd_step(&mut m, &Gradient::zeros_like(&before), 0.1).unwrap();
        assert_eq!(m, before);
        let g = grad_nll(&m, &[1.0, 1.0], &[1, 2]).unwrap();
        sgd_step(&mut m, &g, 0.0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn sgd_step_decreases_nll() {
        let mut m = random_model(6, 6, 3, 4);
        let x = [0.2, -0.7, 1.1];
        let gt = [3u32, 1, 4, 1];
        let before = nll(&m, &x, &gt).unwrap();
        let g = grad_nll(&m, &x, &gt).unwrap();
        sgd_step(&mut m, &g, 1e-2).unwrap();
        assert!(nll(&m, &x, &gt).unwrap() < before);
    }

    #[test]
    fn non_finite_update_is_refused() {
        let mut m = random_model(7, 4, 2, 2);
        let before = m.clone();
        let mut g = Gradient::zeros_like(&m);
        g.b[2] = f64::INFINITY;
        match sgd_step(&mut m, &g, 0.1) {
            Err(PolicyError::NonFinite { block, index }) => {
                assert_eq!(block, "b");
                assert_eq!(index, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(m, before);
    }
}
