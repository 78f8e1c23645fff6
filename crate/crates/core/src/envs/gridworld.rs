use std::collections::VecDeque;

use super::{EnvError, Environment, StepResult};

/// Layout of a square gridworld. Cells are `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub size: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    /// Impassable cells.
    pub walls: Vec<(usize, usize)>,
    pub horizon: usize,
    pub goal_reward: f64,
    pub step_penalty: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 8,
            start: (0, 0),
            goal: (7, 7),
            walls: Vec::new(),
            horizon: 200,
            goal_reward: 1.0,
            step_penalty: -0.01,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let inside = |(r, c): (usize, usize)| r < self.size && c < self.size;
        if self.size == 0 || !inside(self.start) || !inside(self.goal) {
            return Err(EnvError::InvalidConfig("start or goal outside the grid".into()));
        }
        if self.walls.contains(&self.start) || self.walls.contains(&self.goal) {
            return Err(EnvError::InvalidConfig("start or goal is a wall".into()));
        }
        if self.horizon == 0 {
            return Err(EnvError::InvalidConfig("horizon must be positive".into()));
        }
        Ok(())
    }

    fn blocked(&self, cell: (usize, usize)) -> bool {
        self.walls.contains(&cell)
    }

    /// Moves: 0 up, 1 right, 2 down, 3 left. Walls and edges leave the agent
    /// in place.
    pub fn next_cell(&self, (r, c): (usize, usize), action: usize) -> (usize, usize) {
        let target = match action {
            0 if r > 0 => (r - 1, c),
            1 if c + 1 < self.size => (r, c + 1),
            2 if r + 1 < self.size => (r + 1, c),
            3 if c > 0 => (r, c - 1),
            _ => (r, c),
        };
        if self.blocked(target) {
            (r, c)
        } else {
            target
        }
    }
}

/// Shortest number of moves from start to goal, if reachable.
pub fn bfs_distance(cfg: &GridConfig) -> Option<usize> {
    let n = cfg.size;
    let mut dist = vec![usize::MAX; n * n];
    let mut queue = VecDeque::from([cfg.start]);
    dist[cfg.start.0 * n + cfg.start.1] = 0;
    while let Some(cell) = queue.pop_front() {
        let d = dist[cell.0 * n + cell.1];
        if cell == cfg.goal {
            return Some(d);
        }
        for a in 0..4 {
            let next = cfg.next_cell(cell, a);
            let idx = next.0 * n + next.1;
            if dist[idx] == usize::MAX {
                dist[idx] = d + 1;
                queue.push_back(next);
            }
        }
    }
    None
}

/// Best achievable undiscounted episode return. Unreachable goals (or goals
/// beyond the horizon) give a full horizon of step penalties.
pub fn optimal_return(cfg: &GridConfig) -> f64 {
    match bfs_distance(cfg) {
        Some(0) => 0.0,
        Some(d) if d <= cfg.horizon => cfg.goal_reward + (d - 1) as f64 * cfg.step_penalty,
        _ => cfg.horizon as f64 * cfg.step_penalty,
    }
}

/// One-hot observation of the agent cell, flattened row-major.
#[derive(Debug, Clone)]
pub struct Gridworld {
    pub config: GridConfig,
    agent: (usize, usize),
    steps: usize,
    done: bool,
}

impl Default for Gridworld {
    fn default() -> Self {
        Self::new(GridConfig::default()).expect("default layout is valid")
    }
}

impl Gridworld {
    pub fn new(config: GridConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            agent: config.start,
            config,
            steps: 0,
            done: false,
        })
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }
}

impl Environment for Gridworld {
    fn observation_dim(&self) -> usize {
        self.config.size * self.config.size
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.agent = self.config.start;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if action >= 4 {
            return Err(EnvError::InvalidAction {
                action,
                num_actions: 4,
            });
        }
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        self.agent = self.config.next_cell(self.agent, action);
        self.steps += 1;
        let terminated = self.agent == self.config.goal;
        let truncated = !terminated && self.steps >= self.config.horizon;
        self.done = terminated || truncated;
        let reward = if terminated {
            self.config.goal_reward
        } else {
            self.config.step_penalty
        };
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminated,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.observation_dim()];
        obs[self.agent.0 * self.config.size + self.agent.1] = 1.0;
        obs
    }

    fn elapsed(&self) -> usize {
        self.steps
    }
}
