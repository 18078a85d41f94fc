//! Analytic policy gradients against central finite differences, plus
//! sampling and normalization checks against naive recomputation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsrs_core::policy::{
    grad_grpo, grad_nll, logprob, nll, sample_group, Gradient, PolicyModel, Rollout,
};

const H: f64 = 1e-5;

fn random_model(rng: &mut ChaCha8Rng, vocab: usize, d: usize, len: usize, scale: f64) -> PolicyModel {
    let mut m = PolicyModel::zeros(vocab, d, len, 0);
    for i in 0..m.n_params() {
        m.set_param(i, rng.random_range(-scale..scale));
    }
    m
}

fn random_features(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Largest entrywise `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps
/// near-zero entries from amplifying round-off.
fn max_rel_error(analytic: &Gradient, numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn central_difference(model: &PolicyModel, f: impl Fn(&PolicyModel) -> f64) -> Vec<f64> {
    let mut m = model.clone();
    (0..model.n_params())
        .map(|i| {
            let x = model.param(i);
            m.set_param(i, x + H);
            let up = f(&m);
            m.set_param(i, x - H);
            let down = f(&m);
            m.set_param(i, x);
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Clipped surrogate recomputed from per-token log-probabilities.
fn surrogate(model: &PolicyModel, x: &[f64], rollouts: &[Rollout], adv: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for (r, &a) in rollouts.iter().zip(adv) {
        let (_, lp) = logprob(model, x, &r.tokens).unwrap();
        let mut seq = 0.0;
        for (new, old) in lp.iter().zip(&r.logprobs_old) {
            let rho = (new - old).exp();
            seq += (rho * a).min(rho.clamp(1.0 - eps, 1.0 + eps) * a);
        }
        total += seq / r.tokens.len() as f64;
    }
    total / rollouts.len() as f64
}

fn naive_logprob(model: &PolicyModel, x: &[f64], tokens: &[u32]) -> f64 {
    let s = model.state_dim();
    let mut prev = model.bos as usize;
    let mut total = 0.0;
    for &a in tokens {
        let mut state = x.to_vec();
        state.extend((0..model.vocab_size).map(|v| if v == prev { 1.0 } else { 0.0 }));
        let logits: Vec<f64> = (0..model.vocab_size)
            .map(|v| (0..s).map(|k| model.w[v * s + k] * state[k]).sum::<f64>() + model.b[v])
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        total += (logits[a as usize].exp() / z).ln();
        prev = a as usize;
    }
    total
}

#[test]
fn nll_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let m = random_model(&mut rng, 4, 3, 3, 1.0);
        let x = random_features(&mut rng, 3);
        let gt: Vec<u32> = (0..3).map(|_| rng.random_range(0..4)).collect();
        let analytic = grad_nll(&m, &x, &gt).unwrap();
        let numeric = central_difference(&m, |p| nll(p, &x, &gt).unwrap());
        worst = worst.max(max_rel_error(&analytic, &numeric));
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn grpo_gradient_matches_finite_differences_away_from_kinks() {
    let eps = 0.2;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    let mut saw_clipped = 0;
    let mut worst: f64 = 0.0;
    while checked < 25 {
        let old = random_model(&mut rng, 4, 3, 3, 1.0);
        let x = random_features(&mut rng, 3);
        let rollouts = sample_group(&old, &x, 4, &mut rng).unwrap();
        let adv: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut m = old.clone();
        for i in 0..m.n_params() {
            m.set_param(i, m.param(i) + rng.random_range(-0.3..0.3));
        }
        // skip instances where a ratio sits within reach of a clip boundary
        let near_kink = rollouts.iter().any(|r| {
            let (_, lp) = logprob(&m, &x, &r.tokens).unwrap();
            lp.iter().zip(&r.logprobs_old).any(|(n, o)| {
                let rho = (n - o).exp();
                (rho - (1.0 + eps)).abs() < 1e-3 || (rho - (1.0 - eps)).abs() < 1e-3
            })
        });
        if near_kink {
            continue;
        }
        let eval = grad_grpo(&m, &x, &rollouts, &adv, eps).unwrap();
        let j = surrogate(&m, &x, &rollouts, &adv, eps);
        assert!((eval.objective - j).abs() < 1e-12);
        let numeric = central_difference(&m, |p| surrogate(p, &x, &rollouts, &adv, eps));
        worst = worst.max(max_rel_error(&eval.gradient, &numeric));
        saw_clipped += usize::from(eval.clipped_tokens > 0);
        checked += 1;
    }
    assert!(saw_clipped > 0, "no instance exercised the clipped branch");
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn surrogate_gradient_at_old_policy_is_reinforce() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let m = random_model(&mut rng, 5, 3, 4, 1.0);
        let x = random_features(&mut rng, 3);
        let rollouts = sample_group(&m, &x, 4, &mut rng).unwrap();
        let adv: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let eval = grad_grpo(&m, &x, &rollouts, &adv, 0.2).unwrap();
        assert_eq!(eval.clipped_tokens, 0);
        assert!((eval.objective - adv.iter().sum::<f64>() / 4.0).abs() < 1e-12);

        // (1/G) sum_j A_j (1/L) grad log pi(o_j), with grad log pi = -grad nll
        let mut reinforce = Gradient::zeros_like(&m);
        for (r, a) in rollouts.iter().zip(&adv) {
            let g = grad_nll(&m, &x, &r.tokens).unwrap();
            reinforce.add_scaled(&g, -a / (4.0 * 4.0));
        }
        let diff = eval
            .gradient
            .iter()
            .zip(reinforce.iter())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff:e}");
    }
}

#[test]
fn stable_logprob_matches_naive_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let m = random_model(&mut rng, 6, 4, 5, 2.0);
        let x = random_features(&mut rng, 4);
        let tokens: Vec<u32> = (0..5).map(|_| rng.random_range(0..6)).collect();
        let (total, per) = logprob(&m, &x, &tokens).unwrap();
        assert!((total - naive_logprob(&m, &x, &tokens)).abs() < 1e-9);
        assert!((per.iter().sum::<f64>() - total).abs() < 1e-12);
    }
}

#[test]
fn normalization_at_every_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let m = random_model(&mut rng, 7, 3, 2, 3.0);
    let x = random_features(&mut rng, 3);
    for prev in 0..7 {
        let p = m.next_token_probs(&x, prev);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn uniform_sampling_frequencies_within_three_sigma() {
    let m = PolicyModel::zeros(4, 2, 1, 0);
    let n = 100_000;
    let rollouts = sample_group(&m, &[0.0, 0.0], n, &mut ChaCha8Rng::seed_from_u64(16)).unwrap();
    let mut counts = [0usize; 4];
    for r in &rollouts {
        counts[r.tokens[0] as usize] += 1;
    }
    let sigma = (n as f64 * 0.25 * 0.75).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * 0.25).abs() < 3.0 * sigma, "{counts:?}");
    }
}
