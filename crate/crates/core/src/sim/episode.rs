use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::object::{JointType, ObjectSpec, Sign};
use super::{
    SimError, BASE_STEP_PER_COMMAND, GRASP_BOUND, GRASP_TOLERANCE, HANDLE_TRAVEL_LIMIT,
    SAFETY_CURRENT_MAX, SPRING_RELAXATION,
};

/// Half-width, relative to the success opening, of the apparent-openness ramp.
pub const APPARENT_OPENNESS_WIDTH: f64 = 0.5;

/// Constrained mobile-manipulation primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Primitive {
    /// Arm mask `(0, 0, v_z, v_yaw, 0, 0, 0, 0, 0)`.
    Unlock,
    /// Arm mask `(0, 0, 0, v_yaw, 0, 0, 0, 0, 0)`.
    Rotate,
    /// Base mask `(0, 0, 0, 0, 0, 0, V_x, 0, 0)`.
    Open,
}

impl Primitive {
    pub const ALL: [Primitive; 3] = [Primitive::Unlock, Primitive::Rotate, Primitive::Open];

    pub fn index(self) -> usize {
        match self {
            Primitive::Unlock => 0,
            Primitive::Rotate => 1,
            Primitive::Open => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Primitive> {
        Primitive::ALL.get(i).copied()
    }

    /// 9-dim control vector `(v_x, v_y, v_z, v_yaw, v_pitch, v_roll, V_x, V_y, V_w)`
    /// for command `c`.
    pub fn control(self, c: f64) -> ControlVector {
        let mut v = [0.0; 9];
        match self {
            Primitive::Unlock => {
                v[2] = c;
                v[3] = c;
            }
            Primitive::Rotate => v[3] = c,
            Primitive::Open => v[6] = c,
        }
        ControlVector(v)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Primitive::Unlock => "unlock",
            Primitive::Rotate => "rotate",
            Primitive::Open => "open",
        })
    }
}

impl FromStr for Primitive {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unlock" => Ok(Primitive::Unlock),
            "rotate" => Ok(Primitive::Rotate),
            "open" => Ok(Primitive::Open),
            other => Err(SimError::Parse(format!("unknown primitive `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlVector(pub [f64; 9]);

impl ControlVector {
    pub fn v_z(&self) -> f64 {
        self.0[2]
    }
    pub fn v_yaw(&self) -> f64 {
        self.0[3]
    }
    pub fn base_x(&self) -> f64 {
        self.0[6]
    }
}

/// Planar base pose `(x m, y m, theta rad)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Se2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Half-widths of the uniform base perturbation applied on reset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationRange {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for PerturbationRange {
    fn default() -> Self {
        PerturbationRange {
            x: 0.02,
            y: 0.02,
            theta: 3f64.to_radians(),
        }
    }
}

impl PerturbationRange {
    pub fn zero() -> Self {
        PerturbationRange {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub current: f64,
    pub safety_violated: bool,
}

/// Mutable state of one object interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub spec: ObjectSpec,
    pub handle_pos: f64,
    pub joint_pos: f64,
    pub latched: bool,
    pub grasped: bool,
    pub base_pose: Se2,
    pub base_pose_initial: Se2,
    pub perturbation: Se2,
    pub safety_violated: bool,
    pub step_index: usize,
}

fn sample_sym<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

impl EpisodeState {
    pub fn spawn(spec: ObjectSpec) -> Self {
        let latched = spec.latched_at_spawn();
        EpisodeState {
            spec,
            handle_pos: 0.0,
            joint_pos: 0.0,
            latched,
            grasped: false,
            base_pose: Se2::default(),
            base_pose_initial: Se2::default(),
            perturbation: Se2::default(),
            safety_violated: false,
            step_index: 0,
        }
    }

    pub fn joint_type(&self) -> JointType {
        self.spec.joint_type()
    }

    /// Door openness in `[0, 1]`.
    pub fn openness(&self) -> f64 {
        (self.joint_pos / self.joint_type().limit()).clamp(0.0, 1.0)
    }

    /// How open the door looks, in `[-1, 1]`: -1 (shut) up to half the
    /// success opening, +1 from one and a half times it, linear in between.
    /// Zero is exactly the success opening.
    pub fn apparent_openness(&self) -> f64 {
        let t = self.joint_type().success_threshold();
        ((self.joint_pos / t - 1.0) / APPARENT_OPENNESS_WIDTH).clamp(-1.0, 1.0)
    }

    /// Grasp target: true handle offset shifted by the lateral base perturbation.
    ///
    /// The door plane contains the lateral (y) and vertical (z) axes, so only the
    /// y component of the base displacement moves the handle relative to the arm.
    pub fn grasp_target(&self) -> [f64; 3] {
        let o = self.spec.handle_offset;
        [o[0], o[1] + self.perturbation.y, o[2]]
    }

    pub fn exec_grasp(&mut self, g: [f64; 3]) -> Result<(), SimError> {
        if self.safety_violated {
            return Err(SimError::SafetyLatched);
        }
        if self.step_index != 0 {
            return Err(SimError::GraspOutOfOrder(self.step_index));
        }
        if g.iter().any(|v| !v.is_finite() || v.abs() > GRASP_BOUND) {
            return Err(SimError::GraspOutOfBounds(g));
        }
        let target = self.grasp_target();
        let dist = g
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        self.grasped = dist <= GRASP_TOLERANCE;
        self.step_index += 1;
        Ok(())
    }

    /// Whether a handle primitive actuates this object's handle.
    fn actuates_handle(&self, tag: Primitive) -> bool {
        use super::object::Category;
        matches!(
            (tag, self.spec.category),
            (Primitive::Unlock, Category::A | Category::B) | (Primitive::Rotate, Category::B)
        )
    }

    /// Stand-in for motor current: `|c|` when the commanded motion is blocked.
    pub fn joint_current_proxy(&self, tag: Primitive, c: f64) -> f64 {
        if !self.grasped {
            return 0.0;
        }
        let blocked = match tag {
            Primitive::Unlock | Primitive::Rotate => {
                self.actuates_handle(tag) && (self.handle_pos + c).abs() > HANDLE_TRAVEL_LIMIT
            }
            Primitive::Open => {
                let push = c * self.spec.open_dir.value();
                self.latched
                    || (push < 0.0)
                    || (push > 0.0 && self.joint_pos >= self.joint_type().limit())
            }
        };
        if blocked {
            c.abs()
        } else {
            0.0
        }
    }

    pub fn exec_primitive(&mut self, tag: Primitive, c: f64) -> Result<StepOutcome, SimError> {
        if self.safety_violated {
            return Err(SimError::SafetyLatched);
        }
        if !c.is_finite() || c.abs() > 1.0 {
            return Err(SimError::CommandOutOfRange(c));
        }
        let current = self.joint_current_proxy(tag, c);
        self.step_index += 1;
        if current > SAFETY_CURRENT_MAX {
            self.safety_violated = true;
            return Ok(StepOutcome {
                current,
                safety_violated: true,
            });
        }
        let control = tag.control(c);
        if !self.grasped {
            if tag == Primitive::Open {
                let d = control.base_x() * BASE_STEP_PER_COMMAND;
                self.base_pose.x += d * self.base_pose.theta.cos();
                self.base_pose.y += d * self.base_pose.theta.sin();
            }
            return Ok(StepOutcome {
                current,
                safety_violated: false,
            });
        }
        if current > 0.0 {
            // Blocked but below the current limit: nothing moves.
            return Ok(StepOutcome {
                current,
                safety_violated: false,
            });
        }
        match tag {
            Primitive::Unlock | Primitive::Rotate if self.actuates_handle(tag) => {
                let drive = match self.spec.category {
                    super::object::Category::A => control.v_z(),
                    _ => control.v_yaw(),
                };
                self.handle_pos += drive;
                let dir = self.spec.unlock_dir;
                if self.latched
                    && Sign::of(c) == Some(dir)
                    && self.handle_pos * dir.value() >= self.spec.unlock_threshold
                {
                    self.latched = false;
                }
            }
            Primitive::Unlock | Primitive::Rotate => {}
            Primitive::Open => {
                let jt = self.joint_type();
                let push = control.base_x() * self.spec.open_dir.value();
                let gain = self.spec.open_efficiency() * jt.open_gain();
                self.joint_pos = (self.joint_pos + push * gain).clamp(0.0, jt.limit());
                if self.spec.spring_loaded {
                    self.joint_pos *= SPRING_RELAXATION;
                }
            }
        }
        Ok(StepOutcome {
            current,
            safety_violated: false,
        })
    }

    pub fn oracle_success(&self) -> bool {
        self.joint_pos >= self.joint_type().success_threshold()
    }

    /// End-of-episode routine: release, return to the odometry origin, close and
    /// re-latch the door, then perturb the base.
    pub fn reset<R: Rng + ?Sized>(&mut self, range: PerturbationRange, rng: &mut R) {
        self.grasped = false;
        self.joint_pos = 0.0;
        self.latched = self.spec.latched_at_spawn();
        self.handle_pos = 0.0;
        self.safety_violated = false;
        self.step_index = 0;
        let p = Se2 {
            x: sample_sym(rng, range.x),
            y: sample_sym(rng, range.y),
            theta: sample_sym(rng, range.theta),
        };
        self.perturbation = p;
        self.base_pose = Se2 {
            x: self.base_pose_initial.x + p.x,
            y: self.base_pose_initial.y + p.y,
            theta: self.base_pose_initial.theta + p.theta,
        };
    }
}
