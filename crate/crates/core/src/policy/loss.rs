//! Actor-critic losses over one rewriting trajectory.

use super::PolicyError;

/// Discounted returns `G_t = Σ_{t'≥t} γ^{t'-t} r_{t'}`.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub region: f64,
    pub rule: f64,
    pub total: f64,
}

/// Loss values of a trajectory given per-step rewards, critic values
/// `Q(s_t, ω_t)` and `log π_u(u_t | s_t[ω_t])`.
///
/// `L_ω = mean_t (G_t − Q_t)²`, `L_u = −Σ_t Δ_t log π_u` with the
/// advantage `Δ_t = G_t − Q_t` held constant, `L = L_u + α L_ω`.
pub fn losses(rewards: &[f64], q: &[f64], log_pi: &[f64], gamma: f64, alpha: f64) -> Result<Losses, PolicyError> {
    if rewards.is_empty() {
        return Err(PolicyError::EmptyTrajectory);
    }
    assert!(rewards.len() == q.len() && q.len() == log_pi.len());
    let g = returns(rewards, gamma);
    let t = rewards.len() as f64;
    let region = g.iter().zip(q).map(|(g, q)| (g - q).powi(2)).sum::<f64>() / t;
    let rule = -g.iter().zip(q).zip(log_pi).map(|((g, q), lp)| (g - q) * lp).sum::<f64>();
    let total = rule + alpha * region;
    if !total.is_finite() {
        return Err(PolicyError::NonFinite);
    }
    Ok(Losses { region, rule, total })
}

/// `∂L/∂Q_t` for the critic term, scaled by `alpha`.
pub fn critic_grad(g: f64, q: f64, horizon: usize, alpha: f64) -> f64 {
    alpha * 2.0 * (q - g) / horizon as f64
}

/// `∂L_u/∂logit_k` for the chosen rule `chosen` with advantage `adv`.
pub fn actor_grad(probs: &[f64], chosen: usize, adv: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| -adv * (if k == chosen { 1.0 } else { 0.0 } - p))
        .collect()
}
