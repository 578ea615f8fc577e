//! Cart-pole balancing as a three-fidelity policy-search problem.
//!
//! Dynamics follow the classic cart-pole equations of motion integrated with
//! explicit Euler steps. A deterministic linear policy maps the (scaled)
//! four-dimensional state to two action scores and pushes right when the
//! second score is strictly larger. The reward of an episode is the number
//! of steps taken before the pole falls or the cart leaves the track.
//!
//! Fidelities share one fixed set of 100 initial states:
//!
//! | task | initial states | steps × dt    | cost |
//! |------|----------------|---------------|------|
//! | 0    | 100            | 500 × 0.02 s  | 10   |
//! | 1    | first 40       | 250 × 0.04 s  | 2    |
//! | 2    | first 10       | 500 × 0.02 s  | 1    |
//!
//! Task-1 rewards are multiplied by 500/250 so every task reports on the
//! `[0, 500]` scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KnownOptimum, MisProblem};
use crate::acquisition::CostModel;
use crate::domain::Domain;
use crate::error::{invalid, Result};

/// Number of policy parameters: a 4×2 weight matrix and two biases.
pub const POLICY_PARAMS: usize = 10;

const NUM_INITIAL_STATES: usize = 100;
const FULL_STEPS: usize = 500;
const FINE_DT: f64 = 0.02;
const COARSE_DT: f64 = 0.04;

/// Physical constants and fidelity settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartpoleConfig {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub position_threshold: f64,
    pub angle_threshold_deg: f64,
    /// Policy inputs are `state_i / state_scale_i`.
    pub state_scale: [f64; 4],
    /// Run task 1 for 500 coarse steps (twice the horizon) instead of 250.
    pub coarse_full_steps: bool,
    /// Half-width of the cube from which initial states are drawn.
    pub init_range: f64,
}

impl Default for CartpoleConfig {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            position_threshold: 2.4,
            angle_threshold_deg: 12.0,
            state_scale: [1.0, 1.0, 0.1, 0.5],
            coarse_full_steps: false,
            init_range: 0.05,
        }
    }
}

impl CartpoleConfig {
    fn angle_threshold(&self) -> f64 {
        self.angle_threshold_deg.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartpoleState {
    pub position: f64,
    pub velocity: f64,
    pub angle: f64,
    pub angular_velocity: f64,
}

impl CartpoleState {
    fn as_array(&self) -> [f64; 4] {
        [self.position, self.velocity, self.angle, self.angular_velocity]
    }

    pub fn is_terminal(&self, config: &CartpoleConfig) -> bool {
        let limit = config.angle_threshold();
        !self.position.is_finite()
            || !self.angle.is_finite()
            || self.position.abs() > config.position_threshold
            || self.angle.abs() > limit
    }
}

/// One explicit-Euler step. Action 1 pushes right, action 0 pushes left.
pub fn cartpole_step(state: CartpoleState, action: u8, dt: f64, config: &CartpoleConfig) -> CartpoleState {
    let force = if action == 1 { config.force_mag } else { -config.force_mag };
    let total_mass = config.cart_mass + config.pole_mass;
    let pole_moment = config.pole_mass * config.half_length;
    let (sin, cos) = state.angle.sin_cos();
    let temp = (force + pole_moment * state.angular_velocity.powi(2) * sin) / total_mass;
    let angular_acc = (config.gravity * sin - cos * temp)
        / (config.half_length * (4.0 / 3.0 - config.pole_mass * cos * cos / total_mass));
    let acc = temp - pole_moment * angular_acc * cos / total_mass;
    CartpoleState {
        position: state.position + dt * state.velocity,
        velocity: state.velocity + dt * acc,
        angle: state.angle + dt * state.angular_velocity,
        angular_velocity: state.angular_velocity + dt * angular_acc,
    }
}

/// Deterministic linear policy with two output scores.
///
/// Parameter layout: `params[2*j + a]` is the weight from scaled state
/// component `j` to action `a`; `params[8 + a]` is the bias of action `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    params: [f64; POLICY_PARAMS],
}

impl LinearPolicy {
    pub fn new(params: &[f64]) -> Result<Self> {
        let params: [f64; POLICY_PARAMS] = params.try_into().map_err(|_| {
            invalid(format!(
                "policy needs exactly {POLICY_PARAMS} parameters, got {}",
                params.len()
            ))
        })?;
        Ok(Self { params })
    }

    /// Index of the larger score; ties go to action 0.
    pub fn action(&self, state: &CartpoleState, scale: &[f64; 4]) -> u8 {
        let s = state.as_array();
        let mut score = [self.params[8], self.params[9]];
        for j in 0..4 {
            let v = s[j] / scale[j];
            score[0] += self.params[2 * j] * v;
            score[1] += self.params[2 * j + 1] * v;
        }
        u8::from(score[1] > score[0])
    }
}

/// Three-fidelity cart-pole policy search (objective = negative mean reward).
#[derive(Debug, Clone)]
pub struct Cartpole {
    config: CartpoleConfig,
    initial_states: Vec<CartpoleState>,
    domain: Domain,
    costs: CostModel,
}

impl Cartpole {
    pub fn new(seed: u64) -> Self {
        Self::with_config(seed, CartpoleConfig::default())
    }

    pub fn with_config(seed: u64, config: CartpoleConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = config.init_range;
        let initial_states = (0..NUM_INITIAL_STATES)
            .map(|_| CartpoleState {
                position: rng.random_range(-r..=r),
                velocity: rng.random_range(-r..=r),
                angle: rng.random_range(-r..=r),
                angular_velocity: rng.random_range(-r..=r),
            })
            .collect();
        Self {
            config,
            initial_states,
            domain: Domain::cube(POLICY_PARAMS, -1.0, 1.0).expect("valid cube"),
            costs: CostModel::new(&[10.0, 2.0, 1.0]).expect("positive costs"),
        }
    }

    pub fn config(&self) -> &CartpoleConfig {
        &self.config
    }

    /// Initial states used by `task`; lower fidelities use prefixes of the
    /// primary set.
    pub fn initial_states(&self, task: usize) -> Result<&[CartpoleState]> {
        let n = match task {
            0 => NUM_INITIAL_STATES,
            1 => 40,
            2 => 10,
            _ => return Err(invalid(format!("cartpole has tasks 0, 1 and 2, got {task}"))),
        };
        Ok(&self.initial_states[..n])
    }

    /// Steps survived from `start`, at most `max_steps`.
    pub fn episode(&self, policy: &LinearPolicy, start: CartpoleState, dt: f64, max_steps: usize) -> usize {
        let mut state = start;
        for step in 1..=max_steps {
            let action = policy.action(&state, &self.config.state_scale);
            state = cartpole_step(state, action, dt, &self.config);
            if state.is_terminal(&self.config) {
                return step;
            }
        }
        max_steps
    }

    /// Mean episode reward of `params` on fidelity `task`, on the `[0, 500]` scale.
    pub fn reward(&self, params: &[f64], task: usize) -> Result<f64> {
        let policy = LinearPolicy::new(params)?;
        let states = self.initial_states(task)?;
        let (dt, steps) = match task {
            1 if self.config.coarse_full_steps => (COARSE_DT, FULL_STEPS),
            1 => (COARSE_DT, FULL_STEPS / 2),
            _ => (FINE_DT, FULL_STEPS),
        };
        let rescale = FULL_STEPS as f64 / steps as f64;
        let total: usize = states.iter().map(|s| self.episode(&policy, *s, dt, steps)).sum();
        Ok(rescale * total as f64 / states.len() as f64)
    }
}

/// Mean reward of the policy `params` on fidelity `task` for the problem
/// instance whose initial states are drawn with `seed`.
pub fn cartpole_reward(params: &[f64], task: usize, seed: u64) -> Result<f64> {
    Cartpole::new(seed).reward(params, task)
}

impl MisProblem for Cartpole {
    fn name(&self) -> &str {
        "cartpole"
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn costs(&self) -> &CostModel {
        &self.costs
    }

    fn evaluate(&self, x: &[f64], task: usize) -> Result<f64> {
        self.domain.check(x)?;
        Ok(-self.reward(x, task)?)
    }

    fn optimum(&self) -> Option<KnownOptimum> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_euler(s: [f64; 4], action: u8, tau: f64) -> [f64; 4] {
        // constants written out independently of CartpoleConfig
        let (g, mc, mp, l, fmag) = (9.8, 1.0, 0.1, 0.5, 10.0);
        let [x, xd, th, thd] = s;
        let f = if action == 1 { fmag } else { -fmag };
        let m = mc + mp;
        let ml = mp * l;
        let temp = (f + ml * thd * thd * th.sin()) / m;
        let thacc = (g * th.sin() - th.cos() * temp) / (l * (4.0 / 3.0 - mp * th.cos() * th.cos() / m));
        let xacc = temp - ml * thacc * th.cos() / m;
        [x + tau * xd, xd + tau * xacc, th + tau * thd, thd + tau * thacc]
    }

    #[test]
    fn push_right_accelerates_right() {
        let s = cartpole_step(CartpoleState::default(), 1, 0.02, &CartpoleConfig::default());
        assert!(s.velocity > 0.0);
    }

    #[test]
    fn upright_equilibrium_is_unstable() {
        let cfg = CartpoleConfig::default();
        let mut s = CartpoleState {
            angle: 1e-3,
            ..Default::default()
        };
        // alternate pushes so the net force is zero
        for i in 0..50 {
            s = cartpole_step(s, (i % 2) as u8, 0.02, &cfg);
        }
        assert!(s.angle > 1e-2, "angle {}", s.angle);
    }

    #[test]
    fn euler_step_matches_oracle() {
        let cfg = CartpoleConfig::default();
        let s = CartpoleState {
            position: 0.3,
            velocity: -0.2,
            angle: 0.05,
            angular_velocity: 0.4,
        };
        for action in [0u8, 1] {
            let a = cartpole_step(s, action, 0.04, &cfg);
            let o = oracle_euler([0.3, -0.2, 0.05, 0.4], action, 0.04);
            for (u, v) in a.as_array().iter().zip(o) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fidelity_state_sets_are_nested() {
        let p = Cartpole::new(3);
        let s0 = p.initial_states(0).unwrap();
        let s1 = p.initial_states(1).unwrap();
        let s2 = p.initial_states(2).unwrap();
        assert_eq!(&s0[..40], s1);
        assert_eq!(&s1[..10], s2);
        assert!(p.initial_states(3).is_err());
    }

    #[test]
    fn zero_policy_fails_quickly_and_deterministically() {
        let zero = [0.0; POLICY_PARAMS];
        let r1 = cartpole_reward(&zero, 0, 5).unwrap();
        let r2 = cartpole_reward(&zero, 0, 5).unwrap();
        assert_eq!(r1.to_bits(), r2.to_bits());
        assert!(r1 < 50.0, "reward {r1}");
        assert!(r1 >= 1.0);
    }

    #[test]
    fn balancing_policy_reaches_full_reward() {
        // push towards the side the pole leans to
        let mut p = [0.0; POLICY_PARAMS];
        p[5] = 1.0; // angle -> action 1
        p[7] = 1.0; // angular velocity -> action 1
        p[3] = 0.1; // velocity -> action 1
        p[1] = 0.05;
        let prob = Cartpole::new(0);
        for task in 0..3 {
            assert!(prob.reward(&p, task).unwrap() > 400.0);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let prob = Cartpole::new(0);
        assert!(prob.reward(&[0.0; 9], 0).is_err());
        assert!(prob.reward(&[0.0; 10], 3).is_err());
        assert!(prob.evaluate(&[2.0; 10], 0).is_err());
    }
}
