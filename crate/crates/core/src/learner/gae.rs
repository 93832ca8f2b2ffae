/// Generalized advantage estimation.
///
/// `values[t]` is the critic estimate for the state at step t. A `true` in
/// `dones[t]` marks step t as the last of its episode, so nothing is
/// bootstrapped across it. The trailing step bootstraps from
/// `last_value` unless it is terminal.
pub fn gae_with_bootstrap(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(
        values.len() == n && dones.len() == n,
        "gae inputs must have equal length"
    );
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 == n {
            (last_value, 0.0)
        } else {
            (values[t + 1], running)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// [`gae_with_bootstrap`] with a zero bootstrap after the final step.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    gae_with_bootstrap(rewards, values, dones, 0.0, gamma, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let (a, r) = gae(&[1.0], &[0.0], &[true], 1.0, 1.0);
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn lambda_zero_is_td() {
        let rewards = [0.5, -0.2, 1.0];
        let values = [0.1, 0.3, -0.4];
        let (a, _) = gae(&rewards, &values, &[false, false, true], 0.9, 0.0);
        assert_eq!(a[0], rewards[0] + 0.9 * values[1] - values[0]);
        assert_eq!(a[1], rewards[1] + 0.9 * values[2] - values[1]);
        assert_eq!(a[2], rewards[2] - values[2]);
    }

    #[test]
    fn no_leak_across_episodes() {
        let (a, _) = gae(&[0.0, 100.0], &[0.0, 0.0], &[true, true], 0.99, 0.95);
        assert_eq!(a[0], 0.0);
    }
}
