use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_crl::envs::garnet;
use robust_crl::gradient::{b_term, finite_diff_gradient, smoothed_gradient, smoothed_gradient_with_b};
use robust_crl::mdp::{Kernel, Signal, SoftmaxPolicy, TabularCMDP};
use robust_crl::robust::{smoothed_robust_value, ContaminationSet, SmoothingParam};

fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let diff = got.iter().zip(want).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}

fn random_logits(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * (2.0 * rng.gen::<f64>() - 1.0)).collect()
}

#[test]
fn garnet_5_3_matches_finite_differences() {
    let m = garnet(5, 3, 0).unwrap();
    let set = ContaminationSet::new(0.2).unwrap();
    let sigma = SmoothingParam::new(-10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pi = SoftmaxPolicy::from_logits(5, 3, random_logits(&mut rng, 15, 1.0)).unwrap();
    for signal in [Signal::Reward, Signal::Utility(0)] {
        let g = smoothed_gradient(&m, &set, &pi, sigma, signal).unwrap();
        let fd = finite_diff_gradient(&m, &set, &pi, sigma, signal, 1e-5).unwrap();
        let err = max_rel_err(&g.grad_theta, &fd);
        assert!(err <= 1e-4, "{signal:?}: relative error {err:e}");
    }
}

#[test]
fn twenty_seeded_triples() {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let sn = 2 + (seed as usize % 5);
        let an = 2 + (seed as usize % 3);
        let m = garnet(sn, an, seed).unwrap().with_gamma(0.9).unwrap();
        let delta = 0.05 + 0.45 * rng.gen::<f64>();
        let set = ContaminationSet::new(delta).unwrap();
        let sigma = SmoothingParam::new(-5.0 - 45.0 * rng.gen::<f64>()).unwrap();
        let pi = SoftmaxPolicy::from_logits(sn, an, random_logits(&mut rng, sn * an, 2.0)).unwrap();
        let g = smoothed_gradient(&m, &set, &pi, sigma, Signal::Reward).unwrap();
        let fd = finite_diff_gradient(&m, &set, &pi, sigma, Signal::Reward, 1e-5).unwrap();
        worst = worst.max(max_rel_err(&g.grad_theta, &fd));
    }
    assert!(worst <= 1e-3, "worst relative error {worst:e}");
}

#[test]
fn gradient_rows_sum_to_zero() {
    // V depends on θ only through π, so each logit row's gradient is orthogonal to 1
    let m = garnet(6, 4, 3).unwrap();
    let set = ContaminationSet::new(0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let theta = random_logits(&mut rng, 24, 1.5);
    let pi = SoftmaxPolicy::from_logits(6, 4, theta.clone()).unwrap();
    let sigma = SmoothingParam::new(-20.0).unwrap();
    let g = smoothed_gradient(&m, &set, &pi, sigma, Signal::Reward).unwrap();
    for row in g.grad_theta.chunks_exact(4) {
        assert!(row.iter().sum::<f64>().abs() < 1e-12);
    }
    let shifted: Vec<f64> = theta.iter().enumerate().map(|(i, t)| t + (i / 4) as f64 * 3.0).collect();
    let pi2 = SoftmaxPolicy::from_logits(6, 4, shifted).unwrap();
    let v1 = smoothed_robust_value(&set, &m, &pi.probs(), sigma, Signal::Reward).unwrap();
    let v2 = smoothed_robust_value(&set, &m, &pi2.probs(), sigma, Signal::Reward).unwrap();
    assert!(v1.v.iter().zip(&v2.v).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn extreme_parameters_stay_finite() {
    let m = garnet(6, 3, 1).unwrap();
    let set = ContaminationSet::new(0.5).unwrap();
    let theta: Vec<f64> = (0..18).map(|i| if i % 2 == 0 { 30.0 } else { -30.0 }).collect();
    let pi = SoftmaxPolicy::from_logits(6, 3, theta).unwrap();
    let g = smoothed_gradient(&m, &set, &pi, SmoothingParam::new(-1e3).unwrap(), Signal::Reward).unwrap();
    assert!(g.grad_theta.iter().all(|x| x.is_finite()));
    assert!(g.value_rho.is_finite());
}

#[test]
fn per_state_b_assembles_the_gradient() {
    let m = garnet(4, 3, 12).unwrap();
    let set = ContaminationSet::new(0.25).unwrap();
    let sigma = SmoothingParam::new(-8.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pi = SoftmaxPolicy::from_logits(4, 3, random_logits(&mut rng, 12, 1.0)).unwrap();
    let g = smoothed_gradient_with_b(&m, &set, &pi, sigma, Signal::Reward).unwrap();
    let b = g.per_state_b.unwrap();
    let values = smoothed_robust_value(&set, &m, &pi.probs(), sigma, Signal::Reward).unwrap();
    // ∇V(ρ) = Σ_s ρ(s) B(s) + γδ/(1−γ) Σ_s w(s) B(s)
    let w = robust_crl::robust::lse_weights(sigma.get(), &values.v);
    let coef = m.gamma() * 0.25 / (1.0 - m.gamma());
    let mut assembled = vec![0.0; 12];
    for s in 0..4 {
        let bs = &b[s * 12..(s + 1) * 12];
        assert_eq!(bs, b_term(&m, &set, &pi, &values, s).unwrap().as_slice());
        for i in 0..12 {
            assembled[i] += (m.rho()[s] + coef * w[s]) * bs[i];
        }
    }
    assert!(max_rel_err(&assembled, &g.grad_theta) < 1e-10);
}

/// Likelihood-ratio Monte-Carlo estimate of ∇V(ρ) for δ = 0 on a 2-state MDP.
#[test]
fn nominal_case_matches_monte_carlo() {
    let k = Kernel::new(2, 2, vec![0.7, 0.3, 0.1, 0.9, 0.4, 0.6, 0.8, 0.2]).unwrap();
    let reward = vec![1.0, 0.0, 0.2, 0.6];
    let gamma = 0.5;
    let m = TabularCMDP::new(k.clone(), reward.clone(), vec![vec![0.0; 4]], gamma, vec![0.6, 0.4], vec![0.0])
        .unwrap();
    let theta = vec![0.4, -0.3, -0.2, 0.5];
    let pi = SoftmaxPolicy::from_logits(2, 2, theta).unwrap();
    let set = ContaminationSet::new(0.0).unwrap();
    let g = smoothed_gradient(&m, &set, &pi, SmoothingParam::new(-10.0).unwrap(), Signal::Reward).unwrap();

    let probs = pi.probs();
    let horizon = 40;
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sum = [0.0; 4];
    let mut sum_sq = [0.0; 4];
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let draw = |rng: &mut ChaCha8Rng, p: &[f64]| -> usize {
        let u: f64 = rng.gen();
        if u < p[0] { 0 } else { 1 }
    };
    for _ in 0..n {
        states.clear();
        actions.clear();
        rewards.clear();
        let mut s = draw(&mut rng, &[0.6, 0.4]);
        for _ in 0..horizon {
            let a = draw(&mut rng, probs.row(s));
            states.push(s);
            actions.push(a);
            rewards.push(reward[s * 2 + a]);
            s = draw(&mut rng, k.row(s, a));
        }
        // Σ_t γ^t G_t ∇log π(a_t|s_t), G_t the discounted return from t
        let mut est = [0.0; 4];
        let mut ret = 0.0;
        for t in (0..horizon).rev() {
            ret = rewards[t] + gamma * ret;
            let disc = gamma.powi(t as i32);
            let (st, at) = (states[t], actions[t]);
            for b in 0..2 {
                let score = f64::from(u8::from(b == at)) - probs.row(st)[b];
                est[st * 2 + b] += disc * ret * score;
            }
        }
        for i in 0..4 {
            sum[i] += est[i];
            sum_sq[i] += est[i] * est[i];
        }
    }
    for i in 0..4 {
        let mean = sum[i] / n as f64;
        let var = sum_sq[i] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - g.grad_theta[i]).abs() <= 3.0 * se + 1e-12, "coordinate {i}: mc {mean} ± {se}, exact {}", g.grad_theta[i]);
    }
}
