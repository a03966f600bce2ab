/// Generalized advantage estimation.
///
/// `values` has one more entry than `rewards`: the bootstrap value of the
/// state after the last transition. A `done` flag cuts both the bootstrap and
/// the advantage recursion. Returns `(advantages, returns)` with
/// `returns = advantages + values[..n]`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n + 1, "values must include the bootstrap value");
    assert_eq!(dones.len(), n, "one done flag per reward");
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * not_done - values[t];
        running = delta + gamma * lambda * not_done * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Shifts and scales to zero mean and unit variance (population); a constant
/// vector becomes all zeros.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let (adv, ret) = gae(&[1.0], &[0.0, 0.0], &[true], 1.0, 1.0);
        assert_eq!(adv, vec![1.0]);
        assert_eq!(ret, vec![1.0]);
    }

    #[test]
    fn two_step_hand_recursion() {
        let (_, ret) = gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], &[false, true], 0.5, 1.0);
        assert_eq!(ret, vec![1.5, 1.0]);
    }

    #[test]
    fn exact_values_give_zero_advantage() {
        let gamma = 0.9;
        let rewards = [1.0, 2.0, -1.0, 0.5];
        let mut values = vec![0.0; 5];
        for t in (0..4).rev() {
            values[t] = rewards[t] + gamma * values[t + 1];
        }
        let (adv, _) = gae(&rewards, &values, &[false, false, false, true], gamma, 0.95);
        assert!(adv.iter().all(|a| a.abs() < 1e-12));
    }

    #[test]
    fn done_cuts_bootstrap() {
        let (adv, _) = gae(&[0.0, 0.0], &[0.0, 0.0, 100.0], &[false, true], 0.99, 0.95);
        assert_eq!(adv, vec![0.0, 0.0]);
        let (adv, _) = gae(&[0.0], &[0.0, 100.0], &[false], 0.5, 0.95);
        assert_eq!(adv, vec![50.0]);
    }

    #[test]
    fn normalization() {
        let mut xs = vec![1.0, 2.0, 3.0, 4.0];
        normalize(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
        let mut c = vec![2.0; 3];
        normalize(&mut c);
        assert_eq!(c, vec![0.0; 3]);
    }
}
