//! Returns, losses and their gradients w.r.t. network outputs.

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `sum_{k<m} gamma^k r[t+k] + gamma^m V(s[t+m])` with `m = min(n, len - t)`.
/// `values` holds `V(s_0..s_len)` (length `len + 1`); the bootstrap term is
/// dropped when it would land on the terminal state.
pub fn n_step_return(rewards: &[f64], values: &[f64], terminal: bool, t: usize, n: usize, gamma: f64) -> f64 {
    assert!(t < rewards.len(), "t outside the trajectory");
    let m = n.min(rewards.len() - t);
    let mut g = 0.0;
    let mut discount = 1.0;
    for k in 0..m {
        g += discount * rewards[t + k];
        discount *= gamma;
    }
    let end = t + m;
    if !(terminal && end == rewards.len()) {
        g += discount * values[end];
    }
    g
}

/// `sum (v - g)^2` and its gradient w.r.t. `v`.
pub fn value_loss(values: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let loss = values.iter().zip(targets).map(|(v, g)| (v - g) * (v - g)).sum();
    let grad = values.iter().zip(targets).map(|(v, g)| 2.0 * (v - g)).collect();
    (loss, grad)
}

/// `psi_i = exp(A_i / eta) / sum_j exp(A_j / eta)`, shifted by the max.
pub fn psi_weights(advantages: &[f64], eta: f64) -> Vec<f64> {
    assert!(eta > 0.0, "temperature must be positive");
    let scaled: Vec<f64> = advantages.iter().map(|a| a / eta).collect();
    softmax(&scaled)
}

/// `-sum psi_i log pi(a_i | s_i)` and its gradient w.r.t. each row of
/// logits (the weights are constants).
pub fn policy_loss(logits: &[Vec<f64>], actions: &[usize], psi: &[f64]) -> (f64, Vec<Vec<f64>>) {
    let mut loss = 0.0;
    let grads = logits
        .iter()
        .zip(actions)
        .zip(psi)
        .map(|((l, &a), &w)| {
            let logp = log_softmax(l);
            loss -= w * logp[a];
            logp.iter().enumerate().map(|(j, lp)| w * (lp.exp() - if j == a { 1.0 } else { 0.0 })).collect()
        })
        .collect();
    (loss, grads)
}

pub fn entropy(logits: &[f64]) -> f64 {
    log_softmax(logits).iter().map(|lp| -lp.exp() * lp).sum()
}

/// Advantage actor-critic policy term
/// `-(1/N) sum (A_i log pi(a_i) + beta H(pi_i))`, with gradient w.r.t. logits.
pub fn a2c_policy_loss(
    logits: &[Vec<f64>],
    actions: &[usize],
    advantages: &[f64],
    entropy_coef: f64,
) -> (f64, Vec<Vec<f64>>) {
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grads = logits
        .iter()
        .zip(actions)
        .zip(advantages)
        .map(|((l, &a), &adv)| {
            let logp = log_softmax(l);
            let h: f64 = logp.iter().map(|lp| -lp.exp() * lp).sum();
            loss -= (adv * logp[a] + entropy_coef * h) / n;
            logp.iter()
                .enumerate()
                .map(|(j, lp)| {
                    let pi = lp.exp();
                    let pg = adv * (pi - if j == a { 1.0 } else { 0.0 });
                    // dH/dl_j = -pi_j (log pi_j + H)
                    let dh = -pi * (lp + h);
                    (pg - entropy_coef * dh) / n
                })
                .collect()
        })
        .collect();
    (loss, grads)
}
