use super::{EnvError, Environment, StepResult};
use crate::rng::SeededRng;

/// Physical constants of the classic pole-balancing task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force: f64,
    pub tau: f64,
    pub x_limit: f64,
    pub theta_limit: f64,
    pub horizon: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            tau: 0.02,
            x_limit: 2.4,
            theta_limit: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            horizon: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }
}

/// Action 0 pushes left, action 1 pushes right. Reward is +1 per step,
/// including the terminating one.
#[derive(Debug, Clone, Default)]
pub struct CartPole {
    pub params: CartPoleParams,
    state: CartPoleState,
    steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    /// Places the system in an arbitrary state and starts a fresh episode.
    pub fn set_state(&mut self, state: CartPoleState) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }

    /// One explicit Euler step of the dynamics, without any episode logic.
    pub fn dynamics(p: &CartPoleParams, s: CartPoleState, action: usize) -> CartPoleState {
        let force = if action == 1 { p.force } else { -p.force };
        let total_mass = p.cart_mass + p.pole_mass;
        let pml = p.pole_mass * p.half_length;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + pml * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pml * theta_acc * cos / total_mass;
        CartPoleState {
            x: s.x + p.tau * s.x_dot,
            x_dot: s.x_dot + p.tau * x_acc,
            theta: s.theta + p.tau * s.theta_dot,
            theta_dot: s.theta_dot + p.tau * theta_acc,
        }
    }

    fn out_of_bounds(&self) -> bool {
        self.state.x.abs() > self.params.x_limit || self.state.theta.abs() > self.params.theta_limit
    }
}

impl Environment for CartPole {
    fn observation_dim(&self) -> usize {
        4
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        let mut u = || rng.uniform_range(-0.05, 0.05);
        let state = CartPoleState {
            x: u(),
            x_dot: u(),
            theta: u(),
            theta_dot: u(),
        };
        self.set_state(state);
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if action >= 2 {
            return Err(EnvError::InvalidAction {
                action,
                num_actions: 2,
            });
        }
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        self.state = Self::dynamics(&self.params, self.state, action);
        self.steps += 1;
        let terminated = self.out_of_bounds();
        let truncated = !terminated && self.steps >= self.params.horizon;
        self.done = terminated || truncated;
        Ok(StepResult {
            observation: self.observation(),
            reward: 1.0,
            terminated,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn elapsed(&self) -> usize {
        self.steps
    }
}
