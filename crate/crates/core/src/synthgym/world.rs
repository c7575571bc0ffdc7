//! Kinematic world and its step function.

use super::Scenario;

pub const STATE_DIM: usize = 10;
pub const ACTION_DIM: usize = 7;
/// Largest translation per step along each axis.
pub const MAX_DELTA: f64 = 0.05;
/// Gripper openness change per step.
pub const GRIPPER_RATE: f64 = 0.34;
pub const GRASP_RADIUS: f64 = 0.03;
pub const TABLE_Z: f64 = 0.03;

pub(crate) const HANDLE_X: f64 = 0.75;
const HANDLE_HALF_WIDTH: f64 = 0.05;
const HANDLE_MAX_Z: f64 = 0.16;
const FRONT_CLOSED_Y: f64 = 0.35;
const FRONT_TRAVEL: f64 = 0.25;
const CAVITY_DEPTH: f64 = 0.12;
const CAVITY_RADIUS: f64 = 0.06;
const CAVITY_MAX_Z: f64 = 0.2;
const IN_DRAWER_Z: f64 = 0.05;
pub(crate) const DRAWER_PLACE_MIN: f64 = 0.8;
pub(crate) const DRAWER_CLOSED_MAX: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub ee: [f64; 3],
    /// 1 is fully open.
    pub gripper: f64,
    pub objects: Vec<[f64; 3]>,
    pub in_drawer: Vec<bool>,
    /// 1 is fully open; always 0 in scenes without a drawer.
    pub drawer: f64,
    pub held: Option<usize>,
    /// Object position relative to the end effector while held.
    pub grip_offset: [f64; 3],
}

/// y coordinate of the drawer front for a given openness.
pub fn drawer_front(openness: f64) -> f64 {
    FRONT_CLOSED_Y - FRONT_TRAVEL * openness
}

/// Centre of the drawer cavity in the xy plane.
pub fn cavity(openness: f64) -> [f64; 2] {
    [HANDLE_X, drawer_front(openness) + CAVITY_DEPTH]
}

impl WorldState {
    pub fn new(scenario: Scenario, ee: [f64; 3], objects: Vec<[f64; 3]>) -> Self {
        let n = objects.len();
        Self {
            ee,
            gripper: 1.0,
            objects,
            in_drawer: vec![false; n],
            drawer: if scenario.has_drawer() { 1.0 } else { 0.0 },
            held: None,
            grip_offset: [0.0; 3],
        }
    }

    /// `[ee(3), object(3), drawer, held, gripper, height]`.
    pub fn observe(&self) -> Vec<f64> {
        let o = self.objects[0];
        vec![
            self.ee[0],
            self.ee[1],
            self.ee[2],
            o[0],
            o[1],
            o[2],
            self.drawer,
            if self.held.is_some() { 1.0 } else { 0.0 },
            self.gripper,
            self.ee[2],
        ]
    }

    pub fn within_bounds(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        self.ee.iter().all(|v| unit(*v))
            && self.objects.iter().flatten().all(|v| unit(*v))
            && unit(self.gripper)
            && unit(self.drawer)
    }

    pub fn drawer_closed(&self) -> bool {
        self.drawer <= DRAWER_CLOSED_MAX
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Advances the world by one action `[dx, dy, dz, rx, ry, rz, gripper]`.
///
/// Translations are clamped to [`MAX_DELTA`], rotations are ignored, and the
/// gripper command is binary by sign: positive opens, negative closes, zero
/// holds. An action with a non-finite entry is treated as the zero action.
pub fn step(scenario: Scenario, w: &WorldState, action: &[f64]) -> WorldState {
    let mut a = [0.0; ACTION_DIM];
    if action.len() == ACTION_DIM && action.iter().all(|v| v.is_finite()) {
        a.copy_from_slice(action);
    }
    let mut n = w.clone();
    for k in 0..3 {
        n.ee[k] = clamp01(w.ee[k] + a[k].clamp(-MAX_DELTA, MAX_DELTA));
    }
    if a[6] > 0.0 {
        n.gripper = (w.gripper + GRIPPER_RATE).min(1.0);
    } else if a[6] < 0.0 {
        n.gripper = (w.gripper - GRIPPER_RATE).max(0.0);
    }

    if scenario.has_drawer() {
        let front = drawer_front(w.drawer);
        let aligned = (n.ee[0] - HANDLE_X).abs() <= HANDLE_HALF_WIDTH && n.ee[2] <= HANDLE_MAX_Z;
        if aligned && w.ee[1] <= front + 0.005 && n.ee[1] > front {
            let new_front = n.ee[1].min(FRONT_CLOSED_Y);
            n.drawer = clamp01((FRONT_CLOSED_Y - new_front) / FRONT_TRAVEL);
        }
    }

    let closing = w.gripper >= 0.5 && n.gripper < 0.5;
    let opening = w.gripper < 0.5 && n.gripper >= 0.5;
    match n.held {
        Some(i) if opening => {
            n.held = None;
            let c = cavity(n.drawer);
            let dx = n.ee[0] - c[0];
            let dy = n.ee[1] - c[1];
            let over_cavity = (dx * dx + dy * dy).sqrt() <= CAVITY_RADIUS && n.ee[2] <= CAVITY_MAX_Z;
            if scenario.has_drawer() && n.drawer >= DRAWER_PLACE_MIN && over_cavity {
                n.in_drawer[i] = true;
                n.objects[i] = [c[0], c[1], IN_DRAWER_Z];
            } else {
                let p = sub(n.ee, n.grip_offset);
                n.objects[i] = [clamp01(p[0]), clamp01(p[1]), TABLE_Z];
            }
        }
        Some(i) if n.ee != w.ee => {
            let p = sub(n.ee, n.grip_offset);
            n.objects[i] = [clamp01(p[0]), clamp01(p[1]), clamp01(p[2])];
        }
        None if closing => {
            let grasp = (0..n.objects.len())
                .filter(|&i| !n.in_drawer[i])
                .flat_map(|i| scenario.grasp_offsets().iter().map(move |off| (i, *off)))
                .map(|(i, off)| {
                    let o = n.objects[i];
                    let point = [o[0] + off[0], o[1] + off[1], o[2] + off[2]];
                    (norm(sub(n.ee, point)), i)
                })
                .filter(|(d, _)| *d <= GRASP_RADIUS)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, i)) = grasp {
                n.held = Some(i);
                n.grip_offset = sub(n.ee, n.objects[i]);
            }
        }
        _ => {}
    }

    if scenario.has_drawer() {
        let c = cavity(n.drawer);
        for i in 0..n.objects.len() {
            if n.in_drawer[i] {
                n.objects[i][1] = c[1];
            }
        }
    }
    n
}
