/// Iteration count and learning rate guaranteeing an average regret of at most
/// `epsilon`: `K = ceil(2 ln A / ((1 - gamma)^2 eps^2))`, `eta = (1 - gamma) sqrt(2 ln A / K)`.
///
/// The linear and general variants of the algorithm share this schedule.
pub fn theorem_schedule(n_actions: usize, gamma: f64, epsilon: f64) -> (usize, f64) {
    schedule_from_log_actions((n_actions as f64).ln(), gamma, epsilon)
}

pub fn theorem1_schedule(n_actions: usize, gamma: f64, epsilon: f64) -> (usize, f64) {
    theorem_schedule(n_actions, gamma, epsilon)
}

pub fn theorem2_schedule(n_actions: usize, gamma: f64, epsilon: f64) -> (usize, f64) {
    theorem_schedule(n_actions, gamma, epsilon)
}

/// Same formulas with `ln A` supplied directly.
pub fn schedule_from_log_actions(log_a: f64, gamma: f64, epsilon: f64) -> (usize, f64) {
    let horizon = 1.0 - gamma;
    let k = (2.0 * log_a / (horizon * horizon * epsilon * epsilon)).ceil().max(1.0) as usize;
    let eta = horizon * (2.0 * log_a / k as f64).sqrt();
    (k, eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_actions_no_discount() {
        let (k, eta) = theorem1_schedule(2, 0.0, 1.0);
        assert_eq!(k, 2);
        assert!((eta - 2f64.ln().sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn log_a_of_two() {
        let (k, eta) = schedule_from_log_actions(2.0, 0.5, 0.5);
        assert_eq!(k, 64);
        assert!((eta - 0.125).abs() <= 1e-15);
    }

    #[test]
    fn desk_scale_schedule() {
        let (k, eta) = theorem1_schedule(20, 0.9, 0.25);
        assert_eq!(k, 9587);
        assert!((eta - 0.1 * (2.0 * 20f64.ln() / 9587.0).sqrt()).abs() < 1e-15);
        let (k, eta) = theorem1_schedule(20, 0.9, 1.0);
        assert_eq!(k, 600);
        assert!((eta - 0.01).abs() < 1e-4);
    }

    #[test]
    fn halving_epsilon_quadruples_k() {
        for &(a, g, e) in &[(2, 0.0, 1.0), (20, 0.9, 0.25), (7, 0.5, 0.1), (1000, 0.99, 0.3)] {
            let (k1, _) = theorem1_schedule(a, g, e);
            let (k2, _) = theorem1_schedule(a, g, e / 2.0);
            assert!(k2 >= 4 * k1 - 3 && k2 <= 4 * k1, "{k1} {k2}");
        }
        assert_eq!(theorem1_schedule(9, 0.3, 0.2), theorem2_schedule(9, 0.3, 0.2));
    }
}
