//! Ground-truth benchmark dynamics: mountain car and cart-pole balancing.
//!
//! Both systems integrate a continuous ODE with a classical fourth-order
//! Runge-Kutta step per control interval and expose absorbing goal/failure
//! semantics: once the mountain car reaches the hilltop its position is
//! fixed and every further reward is 0; once the cart-pole leaves its
//! limits it remains in the failure state with reward -1.

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Absorbed {
    None,
    Goal,
    Failure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub values: Vec<f64>,
    pub absorbed: Absorbed,
}

impl EnvState {
    pub fn new(values: Vec<f64>) -> Self {
        EnvState {
            values,
            absorbed: Absorbed::None,
        }
    }
}

/// One classical RK4 step (k1..k4 weighted 1/6, 1/3, 1/3, 1/6).
pub fn rk4_integrate(deriv: impl Fn(&[f64]) -> Vec<f64>, s: &[f64], dt: f64) -> Vec<f64> {
    assert!(dt > 0.0);
    let n = s.len();
    let shift = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        (0..n).map(|i| base[i] + h * k[i]).collect()
    };
    let k1 = deriv(s);
    let k2 = deriv(&shift(s, &k1, dt / 2.0));
    let k3 = deriv(&shift(s, &k2, dt / 2.0));
    let k4 = deriv(&shift(s, &k3, dt));
    (0..n)
        .map(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Shared step contract for real dynamics and learned models: a pure map
/// from (state vector, action vector) to (next state vector, reward).
pub trait StepModel: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn step_vec(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64);
}

pub trait Env: StepModel {
    fn name(&self) -> &'static str;
    fn action_low(&self) -> Vec<f64>;
    fn action_high(&self) -> Vec<f64>;
    fn step(&self, s: &EnvState, a: &[f64]) -> (EnvState, f64);
    fn sample_start(&self, rng: &mut dyn rand::RngCore) -> EnvState;
}

pub fn sample_starts(env: &dyn Env, n: usize, rng: &mut dyn rand::RngCore) -> Vec<EnvState> {
    assert!(n >= 1);
    (0..n).map(|_| env.sample_start(rng)).collect()
}

pub fn env_by_name(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "mc" => Ok(Box::new(MountainCar::default())),
        "cpb" => Ok(Box::new(CartPole::default())),
        other => Err(Error::Usage(format!(
            "unknown environment {other:?} (expected \"mc\" or \"cpb\")"
        ))),
    }
}

/// Mountain car on the track rho in [-1.2, 0.6] with goal rho >= 0.6.
///
/// Continuous dynamics rho_ddot = accel * a - gravity * cos(3 rho),
/// integrated with RK4 over one control interval of `dt` seconds. The
/// engine is underpowered (accel < gravity), so from the valley the car
/// must swing back and forth to build momentum; applying the force along
/// the direction of travel is sufficient. The left wall is inelastic.
#[derive(Clone, Debug)]
pub struct MountainCar {
    pub accel: f64,
    pub gravity: f64,
    pub dt: f64,
    pub v_max: f64,
    pub pos_min: f64,
    pub goal: f64,
}

impl Default for MountainCar {
    fn default() -> Self {
        MountainCar {
            accel: 1.0,
            gravity: 2.5,
            dt: 0.1,
            v_max: 4.0,
            pos_min: -1.2,
            goal: 0.6,
        }
    }
}

impl MountainCar {
    fn at_goal(&self, values: &[f64]) -> bool {
        values[0] >= self.goal
    }
}

impl StepModel for MountainCar {
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn step_vec(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
        if self.at_goal(s) {
            return (s.to_vec(), 0.0);
        }
        let force = a[0].clamp(-1.0, 1.0);
        let next = rk4_integrate(
            |x| vec![x[1], self.accel * force - self.gravity * (3.0 * x[0]).cos()],
            s,
            self.dt,
        );
        let mut rho = next[0];
        let mut v = next[1].clamp(-self.v_max, self.v_max);
        if rho < self.pos_min {
            rho = self.pos_min;
            v = 0.0;
        }
        if rho >= self.goal {
            rho = self.goal;
            return (vec![rho, v], 0.0);
        }
        (vec![rho, v], -1.0)
    }
}

impl Env for MountainCar {
    fn name(&self) -> &'static str {
        "mc"
    }
    fn action_low(&self) -> Vec<f64> {
        vec![-1.0]
    }
    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn step(&self, s: &EnvState, a: &[f64]) -> (EnvState, f64) {
        let (values, r) = self.step_vec(&s.values, a);
        let absorbed = if self.at_goal(&values) {
            Absorbed::Goal
        } else {
            Absorbed::None
        };
        (EnvState { values, absorbed }, r)
    }
    fn sample_start(&self, rng: &mut dyn rand::RngCore) -> EnvState {
        let rho = rng.random_range(self.pos_min..self.goal);
        EnvState::new(vec![rho, 0.0])
    }
}

/// Cart-pole balancing: state (theta, theta_dot, rho, rho_dot), force
/// actions in [-10, 10] N applied in 0.025 s intervals.
#[derive(Clone, Debug)]
pub struct CartPole {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_max: f64,
    pub dt: f64,
    pub theta_limit: f64,
    pub pos_limit: f64,
    pub theta_goal: f64,
    pub pos_goal: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_max: 10.0,
            dt: 0.025,
            theta_limit: 0.7,
            pos_limit: 2.4,
            theta_goal: 0.25,
            pos_goal: 0.5,
        }
    }
}

impl CartPole {
    fn failed(&self, values: &[f64]) -> bool {
        values[0].abs() > self.theta_limit || values[2].abs() > self.pos_limit
    }

    fn deriv(&self, s: &[f64], force: f64) -> Vec<f64> {
        let (theta, theta_dot, _rho, rho_dot) = (s[0], s[1], s[2], s[3]);
        let total_mass = self.cart_mass + self.pole_mass;
        let ml = self.pole_mass * self.pole_half_length;
        let sin = theta.sin();
        let cos = theta.cos();
        let tmp = (force + ml * theta_dot * theta_dot * sin) / total_mass;
        let theta_dd = (self.gravity * sin - cos * tmp)
            / (self.pole_half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let rho_dd = tmp - ml * theta_dd * cos / total_mass;
        vec![theta_dot, theta_dd, rho_dot, rho_dd]
    }

    fn reward(&self, values: &[f64]) -> f64 {
        if self.failed(values) {
            -1.0
        } else if values[0].abs() < self.theta_goal && values[2].abs() < self.pos_goal {
            0.0
        } else {
            -0.1
        }
    }
}

impl StepModel for CartPole {
    fn state_dim(&self) -> usize {
        4
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn step_vec(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
        if self.failed(s) {
            return (s.to_vec(), -1.0);
        }
        let force = a[0].clamp(-self.force_max, self.force_max);
        let next = rk4_integrate(|x| self.deriv(x, force), s, self.dt);
        let r = self.reward(&next);
        (next, r)
    }
}

impl Env for CartPole {
    fn name(&self) -> &'static str {
        "cpb"
    }
    fn action_low(&self) -> Vec<f64> {
        vec![-self.force_max]
    }
    fn action_high(&self) -> Vec<f64> {
        vec![self.force_max]
    }
    fn step(&self, s: &EnvState, a: &[f64]) -> (EnvState, f64) {
        let (values, r) = self.step_vec(&s.values, a);
        let absorbed = if self.failed(&values) {
            Absorbed::Failure
        } else {
            Absorbed::None
        };
        (EnvState { values, absorbed }, r)
    }
    fn sample_start(&self, rng: &mut dyn rand::RngCore) -> EnvState {
        let theta = rng.random_range(-self.theta_limit..=self.theta_limit);
        let rho = rng.random_range(-self.pos_limit..=self.pos_limit);
        EnvState::new(vec![theta, 0.0, rho, 0.0])
    }
}

/// Concatenates the last `h + 1` observations, oldest first, into one flat
/// vector. State approximation for partially observable systems.
pub fn history_window(observations: &[Vec<f64>], h: usize) -> Result<Vec<f64>> {
    if observations.len() < h + 1 {
        return Err(Error::Usage(format!(
            "history window needs {} observations, got {}",
            h + 1,
            observations.len()
        )));
    }
    let tail = &observations[observations.len() - (h + 1)..];
    Ok(tail.iter().flatten().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rk4_zero_derivative_keeps_state() {
        let s = vec![1.0, -2.0];
        assert_eq!(rk4_integrate(|x| vec![0.0; x.len()], &s, 0.5), s);
    }

    #[test]
    fn rk4_exponential_accuracy() {
        let out = rk4_integrate(|x| vec![x[0]], &[1.0], 0.1);
        assert!((out[0] - 0.1f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_harmonic_oscillator_energy_drift() {
        // x'' = -x; energy E = (x^2 + v^2) / 2 is conserved analytically.
        let mut s = vec![1.0, 0.0];
        let e0 = 0.5 * (s[0] * s[0] + s[1] * s[1]);
        for _ in 0..1000 {
            s = rk4_integrate(|x| vec![x[1], -x[0]], &s, 0.01);
        }
        let e1 = 0.5 * (s[0] * s[0] + s[1] * s[1]);
        assert!(((e1 - e0) / e0).abs() < 1e-4);
    }

    #[test]
    fn mc_goal_is_absorbing_with_zero_reward() {
        let mc = MountainCar::default();
        let s = EnvState {
            values: vec![0.6, 1.3],
            absorbed: Absorbed::Goal,
        };
        for a in [-1.0, 0.0, 1.0] {
            let (next, r) = mc.step(&s, &[a]);
            assert_eq!(next.values, s.values);
            assert_eq!(next.absorbed, Absorbed::Goal);
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn mc_reaches_goal_from_near_top() {
        let mc = MountainCar::default();
        let (next, r) = mc.step(&EnvState::new(vec![0.59, 3.0]), &[1.0]);
        assert_eq!(next.values[0], 0.6);
        assert_eq!(next.absorbed, Absorbed::Goal);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn mc_reward_is_minus_one_away_from_goal() {
        let mc = MountainCar::default();
        let (next, r) = mc.step(&EnvState::new(vec![-0.5, 0.0]), &[0.0]);
        assert_eq!(r, -1.0);
        assert_eq!(next.absorbed, Absorbed::None);
    }

    #[test]
    fn mc_action_is_clamped() {
        let mc = MountainCar::default();
        let s = EnvState::new(vec![-0.5, 0.2]);
        assert_eq!(mc.step(&s, &[5.0]), mc.step(&s, &[1.0]));
    }

    #[test]
    fn mc_left_wall_is_inelastic() {
        let mc = MountainCar::default();
        let (next, _) = mc.step(&EnvState::new(vec![-1.19, -2.0]), &[-1.0]);
        assert_eq!(next.values, vec![-1.2, 0.0]);
    }

    #[test]
    fn mc_velocity_policy_solves_from_all_starts() {
        let mc = MountainCar::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut reached = 0;
        for _ in 0..100 {
            let mut s = mc.sample_start(&mut rng);
            for _ in 0..200 {
                let a = s.values[1];
                let (next, _) = mc.step(&s, &[a]);
                s = next;
                if s.absorbed == Absorbed::Goal {
                    break;
                }
            }
            if s.absorbed == Absorbed::Goal {
                reached += 1;
            }
        }
        assert_eq!(reached, 100);
    }

    #[test]
    fn mc_is_underpowered() {
        // Full throttle from the valley bottom must not reach the goal
        // directly; momentum has to be built first.
        let mc = MountainCar::default();
        let mut s = EnvState::new(vec![-0.5, 0.0]);
        for _ in 0..40 {
            let (next, _) = mc.step(&s, &[1.0]);
            s = next;
        }
        assert!(s.values[0] < mc.goal);
    }

    #[test]
    fn cpb_equilibrium_is_fixed_point() {
        let cp = CartPole::default();
        let (next, r) = cp.step(&EnvState::new(vec![0.0; 4]), &[0.0]);
        assert_eq!(next.values, vec![0.0; 4]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn cpb_failure_is_absorbing() {
        let cp = CartPole::default();
        let (next, r) = cp.step(&EnvState::new(vec![0.71, 0.0, 0.0, 0.0]), &[0.0]);
        assert_eq!(r, -1.0);
        assert_eq!(next.absorbed, Absorbed::Failure);
        let (next2, r2) = cp.step(&next, &[5.0]);
        assert_eq!(next2, next);
        assert_eq!(r2, -1.0);
    }

    #[test]
    fn cpb_otherwise_reward_branch() {
        let cp = CartPole::default();
        let (_, r) = cp.step(&EnvState::new(vec![0.3, 0.0, 1.0, 0.0]), &[0.0]);
        assert_eq!(r, -0.1);
    }

    #[test]
    fn cpb_rewards_take_enumerated_values() {
        let cp = CartPole::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mut s = cp.sample_start(&mut rng);
            for _ in 0..50 {
                let a = rng.random_range(-10.0..10.0);
                let (next, r) = cp.step(&s, &[a]);
                assert!(r == 0.0 || r == -0.1 || r == -1.0, "reward {r}");
                s = next;
            }
        }
    }

    #[test]
    fn start_samplers_respect_bounds() {
        let mc = MountainCar::default();
        let cp = CartPole::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mean = 0.0;
        let n = 10_000;
        for s in sample_starts(&mc, n, &mut rng) {
            assert!(s.values[0] >= -1.2 && s.values[0] <= 0.6);
            assert_eq!(s.values[1], 0.0);
            mean += s.values[0];
        }
        mean /= n as f64;
        assert!((mean + 0.3).abs() < 0.02, "mean {mean}");
        for s in sample_starts(&cp, n, &mut rng) {
            assert!(s.values[0].abs() <= 0.7);
            assert!(s.values[2].abs() <= 2.4);
            assert_eq!(s.values[1], 0.0);
            assert_eq!(s.values[3], 0.0);
        }
    }

    #[test]
    fn history_window_shapes() {
        let obs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64; 6]).collect();
        assert_eq!(history_window(&obs, 0).unwrap(), vec![39.0; 6]);
        assert_eq!(history_window(&obs, 2).unwrap().len(), 18);
        assert_eq!(history_window(&obs, 30).unwrap().len(), 186);
        assert!(history_window(&obs[..2], 5).is_err());
    }

    #[test]
    fn history_window_constant_stream() {
        let obs = vec![vec![1.0, 2.0]; 5];
        assert_eq!(
            history_window(&obs, 2).unwrap(),
            vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]
        );
    }
}
