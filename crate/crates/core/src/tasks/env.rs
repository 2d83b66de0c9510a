//! Point-mass environments on a square arena.
//!
//! Every environment shares the kinematics `pos ← clip(pos + Δt·a)` starting
//! from the origin; the realized velocity is `(pos' − pos) / Δt`. They differ
//! only in their reward and in what the agent observes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    FourCorners,
    FourCornersPenalized,
    SixCircles,
    Navigation2d,
    ForwardBackward,
    GoalVelocity,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::FourCorners => "four_corners",
            EnvKind::FourCornersPenalized => "four_corners_penalized",
            EnvKind::SixCircles => "six_circles",
            EnvKind::Navigation2d => "navigation2d",
            EnvKind::ForwardBackward => "forward_backward",
            EnvKind::GoalVelocity => "goal_velocity",
        }
    }

    /// Whether the observation includes the realized velocity.
    pub fn has_velocity(self) -> bool {
        matches!(self, EnvKind::ForwardBackward | EnvKind::GoalVelocity)
    }

    pub fn obs_dim(self) -> usize {
        if self.has_velocity() {
            4
        } else {
            2
        }
    }

    pub const ACT_DIM: usize = 2;

    /// Size of the task universe for finite families.
    pub fn universe_size(self) -> Option<usize> {
        match self {
            EnvKind::FourCorners | EnvKind::FourCornersPenalized => Some(4),
            EnvKind::SixCircles => Some(1),
            EnvKind::ForwardBackward => Some(2),
            EnvKind::Navigation2d | EnvKind::GoalVelocity => None,
        }
    }
}

/// Geometry and reward constants. All overridable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub dt: f64,
    /// Arena is `[−half_width, half_width]²`.
    pub half_width: f64,
    /// Visibility radius around the goal corner.
    pub r_on: f64,
    /// Per-step penalty near a wrong corner (penalized variant).
    pub penalty: f64,
    pub circle_radius: f64,
    pub deactivation_radius: f64,
    /// Navigation targets are uniform in `[−range, range]²`.
    pub nav_target_range: f64,
    /// Goal velocities are uniform in `[−max, max]`.
    pub goal_velocity_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            half_width: 2.0,
            r_on: 1.0,
            penalty: 10.0,
            circle_radius: 1.5,
            deactivation_radius: 0.3,
            nav_target_range: 0.5,
            goal_velocity_max: 1.0,
        }
    }
}

/// Task parameters: enough to fully determine the reward function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskParams {
    Corner(usize),
    Circles,
    Target([f64; 2]),
    Direction(f64),
    GoalVelocity(f64),
    Sine { amplitude: f64, phase: f64 },
}

impl TaskParams {
    pub fn label(&self) -> String {
        match self {
            TaskParams::Corner(i) => format!("corner{i}"),
            TaskParams::Circles => "circles".into(),
            TaskParams::Target([x, y]) => format!("target({x:.4},{y:.4})"),
            TaskParams::Direction(d) => if *d > 0.0 { "forward".into() } else { "backward".into() },
            TaskParams::GoalVelocity(v) => format!("goal_velocity({v:.4})"),
            TaskParams::Sine { amplitude, phase } => format!("sine(A={amplitude:.4},phi={phase:.4})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    /// Six-circles targets still active (bit i = target i).
    pub active: u8,
}

impl State {
    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(&self.vel).all(|x| x.is_finite())
    }
}

const ALL_TARGETS: u8 = 0b11_1111;

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub kind: EnvKind,
    pub config: EnvConfig,
    pub task: TaskParams,
}

impl Environment {
    pub fn new(kind: EnvKind, config: EnvConfig, task: TaskParams) -> Self {
        Self { kind, config, task }
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn initial_state(&self) -> State {
        State {
            pos: [0.0, 0.0],
            vel: [0.0, 0.0],
            active: if self.kind == EnvKind::SixCircles { ALL_TARGETS } else { 0 },
        }
    }

    pub fn observe(&self, s: &State, out: &mut [f64]) {
        out[0] = s.pos[0];
        out[1] = s.pos[1];
        if self.kind.has_velocity() {
            out[2] = s.vel[0];
            out[3] = s.vel[1];
        }
    }

    /// Corner `i` counter-clockwise from `(+L, +L)`.
    pub fn corner(&self, i: usize) -> [f64; 2] {
        let l = self.config.half_width;
        match i % 4 {
            0 => [l, l],
            1 => [-l, l],
            2 => [-l, -l],
            _ => [l, -l],
        }
    }

    pub fn circle_target(&self, i: usize) -> [f64; 2] {
        let angle = i as f64 * PI / 3.0;
        let r = self.config.circle_radius;
        [r * angle.cos(), r * angle.sin()]
    }

    /// Advances one step; returns the next state and the step reward.
    pub fn step(&self, s: &State, action: &[f64]) -> (State, f64) {
        let c = &self.config;
        let l = c.half_width;
        let mut next = *s;
        for (k, a) in action.iter().take(2).enumerate() {
            next.pos[k] = (s.pos[k] + c.dt * a).clamp(-l, l);
            next.vel[k] = (next.pos[k] - s.pos[k]) / c.dt;
        }
        let reward = match (self.kind, self.task) {
            (EnvKind::FourCorners | EnvKind::FourCornersPenalized, TaskParams::Corner(goal)) => {
                let d = dist(next.pos, self.corner(goal));
                let mut r = if d < c.r_on { c.r_on - d } else { 0.0 };
                if self.kind == EnvKind::FourCornersPenalized {
                    for other in (0..4).filter(|&i| i != goal) {
                        if dist(next.pos, self.corner(other)) < c.r_on {
                            r -= c.penalty;
                        }
                    }
                }
                r
            }
            (EnvKind::SixCircles, _) => {
                for i in 0..6 {
                    if next.active & (1 << i) != 0 && dist(next.pos, self.circle_target(i)) < c.deactivation_radius {
                        next.active &= !(1 << i);
                    }
                }
                -(next.active.count_ones() as f64)
            }
            (EnvKind::Navigation2d, TaskParams::Target(t)) => -dist(next.pos, t),
            (EnvKind::ForwardBackward, TaskParams::Direction(d)) => d * next.vel[0],
            (EnvKind::GoalVelocity, TaskParams::GoalVelocity(v)) => -(next.vel[0] - v).abs(),
            (kind, task) => unreachable!("task {task:?} does not belong to {kind:?}"),
        };
        (next, reward)
    }

    /// Six-circles targets deactivated in `s`.
    pub fn deactivated(&self, s: &State) -> u32 {
        if self.kind == EnvKind::SixCircles {
            6 - s.active.count_ones()
        } else {
            0
        }
    }
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
