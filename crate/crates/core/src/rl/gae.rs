/// Generalized advantage estimates and value targets.
///
/// `next_values[t]` is `V(s_{t+1})` for the transition's own successor
/// (so truncated episodes bootstrap correctly); `terminated[t]` zeroes the
/// bootstrap and `done[t]` (terminated or truncated) stops the recursion.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminated: &[bool],
    done: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_len = rewards.len();
    assert!(
        values.len() == t_len && next_values.len() == t_len && terminated.len() == t_len && done.len() == t_len,
        "rollout arrays must have equal length"
    );
    let mut adv = vec![0.0; t_len];
    let mut running = 0.0;
    for t in (0..t_len).rev() {
        let bootstrap = if terminated[t] { 0.0 } else { gamma * next_values[t] };
        let delta = rewards[t] + bootstrap - values[t];
        let carry = if done[t] { 0.0 } else { gamma * lambda * running };
        running = delta + carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PiperRng;

    /// Direct double sum `Σ_l (γλ)^l δ_{t+l}` up to the episode end.
    fn brute_force(
        rewards: &[f64],
        values: &[f64],
        next_values: &[f64],
        terminated: &[bool],
        done: &[bool],
        gamma: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let delta: Vec<f64> = (0..rewards.len())
            .map(|t| rewards[t] + if terminated[t] { 0.0 } else { gamma * next_values[t] } - values[t])
            .collect();
        (0..rewards.len())
            .map(|t| {
                let mut sum = 0.0;
                let mut w = 1.0;
                for k in t..rewards.len() {
                    sum += w * delta[k];
                    if done[k] {
                        break;
                    }
                    w *= gamma * lambda;
                }
                sum
            })
            .collect()
    }

    #[test]
    fn zero_gamma_is_one_step() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4];
        let (adv, _) = gae_advantages(&r, &v, &[9.0; 3], &[false; 3], &[false; 3], 0.0, 0.95);
        for t in 0..3 {
            assert_eq!(adv[t], r[t] - v[t]);
        }
    }

    #[test]
    fn constant_rewards_give_remaining_horizon() {
        let n = 6;
        let mut done = vec![false; n];
        done[n - 1] = true;
        let mut term = vec![false; n];
        term[n - 1] = true;
        let (adv, ret) = gae_advantages(&vec![1.0; n], &vec![0.0; n], &vec![0.0; n], &term, &done, 1.0, 1.0);
        for t in 0..n {
            assert_eq!(adv[t], (n - t) as f64);
            assert_eq!(ret[t], adv[t]);
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = PiperRng::new(4);
        let n = 200;
        let r: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let nv: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let done: Vec<bool> = (0..n).map(|t| t % 37 == 36 || t == n - 1).collect();
        let term: Vec<bool> = (0..n).map(|t| t % 74 == 73).collect();
        let (adv, ret) = gae_advantages(&r, &v, &nv, &term, &done, 0.99, 0.95);
        let expected = brute_force(&r, &v, &nv, &term, &done, 0.99, 0.95);
        for t in 0..n {
            assert!((adv[t] - expected[t]).abs() <= 1e-12);
            assert!((ret[t] - adv[t] - v[t]).abs() <= 1e-12);
        }
    }
}
