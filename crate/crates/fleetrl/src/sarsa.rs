//! Centralized SARSA with a per-pair adaptive learning rate.
//!
//! Each state-action pair keeps exponential moving averages of its
//! temporal-difference gradient (`f`) and squared gradient (`g`); the
//! learning rate is `alpha = f^2 / g`, clamped to `[0, 1]`. Pairs without a
//! fresh observation are left untouched (`rho = 0`), so the rate never
//! decays during quiet periods and rises again when the environment moves.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::CellId;
use crate::qtable::{QIndexMap, QTable};

pub const DEFAULT_ZETA: f64 = 0.2;
/// Floor applied to `g` before dividing; hitting it flags an underflow.
pub const G_FLOOR: f64 = 1e-12;

/// One completed trip observed by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct SarsaUpdateEvent {
    /// Cell the customer was picked up in.
    pub state: CellId,
    /// Destination cell of the committed action.
    pub action: usize,
    /// Cell the agent ended up in (the action's destination).
    pub successor: CellId,
    /// Action already chosen at the successor, if any; otherwise the
    /// best available action there is used.
    pub successor_action: Option<usize>,
    /// Realized reward of the trip.
    pub reward: f64,
}

impl SarsaUpdateEvent {
    pub fn validate(&self, map: &QIndexMap) -> Result<()> {
        map.pair(self.state, self.action)?;
        if self.action != self.successor.0 {
            return Err(Error::Model(format!(
                "successor cell {} disagrees with action destination {}",
                self.successor.0, self.action
            )));
        }
        if let Some(a) = self.successor_action {
            map.pair(self.successor, a)?;
        }
        Ok(())
    }
}

/// Moving-average state behind the adaptive rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveRateState {
    f: Vec<f64>,
    g: Vec<f64>,
    zeta: f64,
    /// Set when some `g` entry fell to the floor and alpha was forced to 0.
    pub g_underflow: bool,
}

impl AdaptiveRateState {
    /// Fresh state with `f = g = 1` for every pair.
    pub fn new(map: &QIndexMap, zeta: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::Config(format!(
                "zeta must lie in (0, 1), got {zeta}"
            )));
        }
        Ok(AdaptiveRateState {
            f: vec![1.0; map.len()],
            g: vec![1.0; map.len()],
            zeta,
            g_underflow: false,
        })
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn f(&self, pair: usize) -> f64 {
        self.f[pair]
    }

    pub fn g(&self, pair: usize) -> f64 {
        self.g[pair]
    }

    /// Current rate for a pair without folding in a new observation.
    pub fn alpha(&self, pair: usize) -> f64 {
        clamp_alpha(self.f[pair], self.g[pair]).0
    }

    /// Running estimate of the gradient variance of a pair, `g - f^2`.
    /// A diagnostic for how stationary the pair's update noise is.
    pub fn gradient_variance(&self, pair: usize) -> f64 {
        (self.g[pair] - self.f[pair] * self.f[pair]).max(0.0)
    }
}

pub(crate) fn clamp_alpha(f: f64, g: f64) -> (f64, bool) {
    if g < G_FLOOR {
        return (0.0, true);
    }
    ((f * f / g).clamp(0.0, 1.0), false)
}

/// Temporal-difference gradient of the sample loss at the event:
/// `Q(i, a) - reward - gamma * Q(j, pi[j])`.
pub fn loss_gradient(q: &QTable, ev: &SarsaUpdateEvent, gamma: f64) -> Result<f64> {
    loss_gradient_raw(q.map(), q.values(), ev, gamma)
}

/// Same gradient over a raw value slice sharing the index map.
pub fn loss_gradient_raw(
    map: &QIndexMap,
    values: &[f64],
    ev: &SarsaUpdateEvent,
    gamma: f64,
) -> Result<f64> {
    let idx = map.pair(ev.state, ev.action)?;
    let successor_q = match ev.successor_action {
        Some(a) => values[map.pair(ev.successor, a)?],
        None => {
            let block = map.block(ev.successor);
            if block.is_empty() {
                return Err(Error::UnknownPair {
                    cell: ev.successor.0,
                    dest: 0,
                });
            }
            values[block]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        }
    };
    Ok(values[idx] - ev.reward - gamma * successor_q)
}

/// Fold a gradient observation into a pair's moving averages and return the
/// resulting rate. With `rho = 0` nothing changes.
pub fn update_rate(rs: &mut AdaptiveRateState, pair: usize, grad: f64, rho: u8) -> f64 {
    if rho == 0 {
        return rs.alpha(pair);
    }
    let zeta = rs.zeta;
    rs.f[pair] += zeta * (grad - rs.f[pair]);
    rs.g[pair] += zeta * (grad * grad - rs.g[pair]);
    let (alpha, underflow) = clamp_alpha(rs.f[pair], rs.g[pair]);
    if underflow {
        rs.g_underflow = true;
    }
    alpha
}

/// One centralized SARSA update: refresh the pair's rate from the observed
/// gradient, then move exactly that Q entry toward the sample target.
pub fn sarsa_step(
    q: &mut QTable,
    rs: &mut AdaptiveRateState,
    ev: &SarsaUpdateEvent,
    gamma: f64,
) -> Result<f64> {
    ev.validate(q.map())?;
    let grad = loss_gradient(q, ev, gamma)?;
    let pair = q.map().pair(ev.state, ev.action)?;
    let alpha = update_rate(rs, pair, grad, 1);
    q.values_mut()[pair] -= alpha * grad;
    Ok(alpha)
}

/// Centralized learner bundling the table and its rate state.
#[derive(Debug, Clone)]
pub struct CentralLearner {
    pub q: QTable,
    pub rates: AdaptiveRateState,
    pub gamma: f64,
}

impl CentralLearner {
    pub fn new(warm_start: QTable, gamma: f64, zeta: f64) -> Result<Self> {
        let rates = AdaptiveRateState::new(warm_start.map(), zeta)?;
        Ok(CentralLearner {
            q: warm_start,
            rates,
            gamma,
        })
    }

    pub fn map(&self) -> &Arc<QIndexMap> {
        self.q.map()
    }

    pub fn step(&mut self, ev: &SarsaUpdateEvent) -> Result<f64> {
        sarsa_step(&mut self.q, &mut self.rates, ev, self.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn event(
        state: usize,
        action: usize,
        succ_action: Option<usize>,
        reward: f64,
    ) -> SarsaUpdateEvent {
        SarsaUpdateEvent {
            state: CellId(state),
            action,
            successor: CellId(action),
            successor_action: succ_action,
            reward,
        }
    }

    fn setup(n_q: usize) -> (QTable, AdaptiveRateState) {
        let map = Arc::new(QIndexMap::dense(n_q));
        let rs = AdaptiveRateState::new(&map, 0.2).unwrap();
        (QTable::zeros(map), rs)
    }

    #[test]
    fn gradient_of_converged_pair_is_zero() {
        let (mut q, _) = setup(2);
        q.set(CellId(0), 1, 5.0).unwrap();
        // successor value zero via an explicit successor action
        let ev = event(0, 1, Some(0), 5.0);
        assert_eq!(loss_gradient(&q, &ev, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn gradient_hand_arithmetic() {
        let (mut q, _) = setup(2);
        q.set(CellId(0), 1, 2.0).unwrap();
        q.set(CellId(1), 0, 2.0).unwrap();
        let ev = event(0, 1, Some(0), 1.0);
        // 2 - 1 - 0.5 * 2 = 0
        assert_eq!(loss_gradient(&q, &ev, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn gradient_none_successor_uses_best_action() {
        let (mut q, _) = setup(2);
        q.set(CellId(0), 1, 1.0).unwrap();
        q.set(CellId(1), 0, 3.0).unwrap();
        q.set(CellId(1), 1, 7.0).unwrap();
        let ev = event(0, 1, None, 0.0);
        // 1 - 0 - 0.5 * max(3, 7)
        assert!((loss_gradient(&q, &ev, 0.5).unwrap() - (1.0 - 3.5)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_difference_of_sample_loss() {
        // sample loss 0.5 (Q - v)^2 with v = reward + gamma * Q(j, pi[j])
        let (mut q, _) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in q.values_mut() {
            *v = rng.gen_range(-5.0..5.0);
        }
        let gamma = 0.8;
        let ev = event(1, 2, Some(0), 3.7);
        let grad = loss_gradient(&q, &ev, gamma).unwrap();
        let pair = q.map().pair(ev.state, ev.action).unwrap();
        let v_target = ev.reward + gamma * q.get(ev.successor, 0).unwrap();
        let h = 1e-6;
        let base = q.values()[pair];
        let loss = |x: f64| 0.5 * (x - v_target) * (x - v_target);
        let fd = (loss(base + h) - loss(base - h)) / (2.0 * h);
        assert!(
            (grad - fd).abs() <= 1e-6 * fd.abs().max(1.0),
            "grad {grad} fd {fd}"
        );
    }

    #[test]
    fn gradient_unknown_pair_errors() {
        let (q, _) = setup(2);
        let bad = SarsaUpdateEvent {
            state: CellId(0),
            action: 5,
            successor: CellId(5),
            successor_action: None,
            reward: 0.0,
        };
        assert!(loss_gradient(&q, &bad, 0.5).is_err());
    }

    #[test]
    fn rate_rho_zero_changes_nothing() {
        let (q, mut rs) = setup(2);
        let pair = q.map().pair(CellId(0), 1).unwrap();
        let before = rs.clone();
        let alpha = update_rate(&mut rs, pair, 3.0, 0);
        assert_eq!(rs, before);
        assert_eq!(alpha, 1.0);
    }

    #[test]
    fn rate_initial_alpha_is_one() {
        let (_, rs) = setup(2);
        for pair in 0..4 {
            assert_eq!(rs.alpha(pair), 1.0);
        }
    }

    #[test]
    fn rate_constant_gradient_drives_alpha_to_one() {
        let (_, mut rs) = setup(2);
        let c = 4.0;
        let mut alpha = 0.0;
        for _ in 0..500 {
            alpha = update_rate(&mut rs, 0, c, 1);
        }
        assert!((rs.f(0) - c).abs() < 1e-9);
        assert!((rs.g(0) - c * c).abs() < 1e-6);
        assert!((alpha - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rate_alpha_stays_clamped_under_noise() {
        let (_, mut rs) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5_000 {
            let grad = rng.gen_range(-50.0..50.0);
            let alpha = update_rate(&mut rs, 1, grad, 1);
            assert!((0.0..=1.0).contains(&alpha));
        }
    }

    #[test]
    fn rate_g_underflow_forces_zero() {
        let (_, mut rs) = setup(2);
        // drive g toward zero with a long run of zero gradients
        for _ in 0..500 {
            update_rate(&mut rs, 0, 0.0, 1);
        }
        let alpha = update_rate(&mut rs, 0, 0.0, 1);
        assert_eq!(alpha, 0.0);
        assert!(rs.g_underflow);
    }

    #[test]
    fn step_full_replacement_at_alpha_one() {
        let (mut q, _) = setup(2);
        // fresh rate state has alpha = 1 after one constant fold only when
        // f^2 = g; force it by an explicit alpha = 1 path: first event on a
        // fresh pair with f = g = 1 keeps alpha = 1 only if grad keeps
        // f^2 = g, so instead verify the algebra directly at alpha = 1.
        q.set(CellId(1), 0, 2.0).unwrap();
        let ev = event(0, 1, Some(0), 3.0);
        let gamma = 0.5;
        let grad = loss_gradient(&q, &ev, gamma).unwrap();
        let target = ev.reward + gamma * q.get(CellId(1), 0).unwrap();
        // alpha = 1 replacement: Q - grad == target
        let pair = q.map().pair(CellId(0), 1).unwrap();
        assert!((q.values()[pair] - grad - target).abs() < 1e-12);
    }

    #[test]
    fn step_touches_exactly_one_entry() {
        let (mut q, mut rs) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for v in q.values_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let before = q.values().to_vec();
        let ev = event(2, 0, Some(1), 1.5);
        sarsa_step(&mut q, &mut rs, &ev, 0.8).unwrap();
        let pair = q.map().pair(CellId(2), 0).unwrap();
        for (idx, (a, b)) in before.iter().zip(q.values()).enumerate() {
            if idx == pair {
                assert_ne!(a, b);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn step_converges_to_mean_target() {
        // i.i.d. samples with mean q_star: tail average of Q approaches it
        let (mut q, mut rs) = setup(2);
        let q_star = 5.0;
        let sigma = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tail = Vec::new();
        let n = 20_000;
        for t in 0..n {
            let noise: f64 = rng.gen_range(-1.0..1.0) * sigma * 3.0_f64.sqrt();
            let ev = event(0, 1, Some(0), q_star + noise);
            // successor column pinned at zero so the target mean is q_star
            q.set(CellId(1), 0, 0.0).unwrap();
            sarsa_step(&mut q, &mut rs, &ev, 0.8).unwrap();
            if t >= n / 2 {
                tail.push(q.get(CellId(0), 1).unwrap());
            }
        }
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let bound = 2.0 * sigma / (tail.len() as f64).sqrt() + 0.05;
        assert!((mean - q_star).abs() < bound.max(0.1), "tail mean {mean}");
    }

    #[test]
    fn alpha_rises_after_reward_step_change() {
        // converge on mean 1.0, then step the mean to 6.0: alpha must rise
        // strictly within ceil(1/zeta) = 5 post-step updates
        let (mut q, mut rs) = setup(2);
        let zeta = rs.zeta();
        for _ in 0..2_000 {
            let ev = event(0, 1, Some(0), 1.0);
            q.set(CellId(1), 0, 0.0).unwrap();
            sarsa_step(&mut q, &mut rs, &ev, 0.8).unwrap();
        }
        let pair = q.map().pair(CellId(0), 1).unwrap();
        let alpha_before = rs.alpha(pair);
        let budget = (1.0 / zeta).ceil() as usize;
        let mut alphas = Vec::new();
        for _ in 0..budget {
            let ev = event(0, 1, Some(0), 6.0);
            q.set(CellId(1), 0, 0.0).unwrap();
            let alpha = sarsa_step(&mut q, &mut rs, &ev, 0.8).unwrap();
            alphas.push(alpha);
        }
        assert!(
            alphas.iter().any(|&a| a > alpha_before),
            "alpha never rose: before {alpha_before}, after {alphas:?}"
        );
        // the very first post-step observation already lifts the rate
        assert!(
            alphas[0] > alpha_before,
            "before {alpha_before}, alphas {alphas:?}"
        );
    }
}
