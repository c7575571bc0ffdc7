//! Waypoint demonstrators and their error-injected variants.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::world::{self, step, WorldState, ACTION_DIM, TABLE_Z};
use super::{ErrorKind, Scenario};
use crate::{Error, Result};

const START_EE: [f64; 3] = [0.5, 0.55, 0.35];
const LIFT_Z: f64 = 0.35;
const DRAWER_OBJECT: [f64; 2] = [0.3, 0.6];
const POT: [f64; 2] = [0.35, 0.55];
const TARGET: [f64; 2] = [0.7, 0.35];
const CAVITY_RELEASE_Z: f64 = 0.12;
const TABLE_RELEASE_Z: f64 = 0.06;
const CLEAR_Z: f64 = 0.2;
const HANDLE_APPROACH_Y: f64 = 0.06;
const PUSH_Z: f64 = 0.1;
const PUSH_END_Y: f64 = 0.38;
const DETOUR_Z: f64 = 0.1;

const SPEED: f64 = 0.04;
const TOLERANCE: f64 = 0.005;
const MAX_PHASE_STEPS: usize = 60;
const GRIPPER_STEPS: usize = 3;
const JITTER: f64 = 0.01;
const GRASP_JITTER: f64 = 0.005;
const NOISE_MEMORY: f64 = 0.8;

/// Which reserved channel crosses its threshold to end the current subtask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Event {
    Height,
    Gripper,
}

/// Parts of a wrong-path demonstration: moving away from the usual route,
/// then returning to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Window {
    Deviation,
    Recovery,
}

#[derive(Debug, Clone, Copy)]
enum Motion {
    To([f64; 3]),
    Hold(usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Phase {
    motion: Motion,
    grip: f64,
    event: Option<Event>,
    window: Option<Window>,
}

fn to(target: [f64; 3], grip: f64) -> Phase {
    Phase {
        motion: Motion::To(target),
        grip,
        event: None,
        window: None,
    }
}

fn hold(grip: f64) -> Phase {
    Phase {
        motion: Motion::Hold(GRIPPER_STEPS),
        grip,
        event: None,
        window: None,
    }
}

impl Phase {
    fn ends_with(mut self, e: Event) -> Self {
        self.event = Some(e);
        self
    }

    fn in_window(mut self, w: Window) -> Self {
        self.window = Some(w);
        self
    }
}

/// Zero-mean Gaussian clipped at two standard deviations.
fn jitter(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let x: f64 = StandardNormal.sample(rng);
    sigma * x.clamp(-2.0, 2.0)
}

pub(crate) fn sample_initial(scenario: Scenario, rng: &mut ChaCha8Rng) -> WorldState {
    let ee = [
        START_EE[0] + jitter(rng, JITTER),
        START_EE[1] + jitter(rng, JITTER),
        START_EE[2],
    ];
    let base = if scenario.has_drawer() { DRAWER_OBJECT } else { POT };
    let obj = [base[0] + jitter(rng, JITTER), base[1] + jitter(rng, JITTER), TABLE_Z];
    WorldState::new(scenario, ee, vec![obj])
}

/// Phases for one demonstration. `mode` picks the grasp point.
pub(crate) fn plan(
    scenario: Scenario,
    w: &WorldState,
    mode: usize,
    error: Option<(ErrorKind, f64)>,
    rng: &mut ChaCha8Rng,
) -> Vec<Phase> {
    let offsets = scenario.grasp_offsets();
    let off = offsets[mode % offsets.len()];
    let o = w.objects[0];
    let g = [
        o[0] + off[0] + jitter(rng, GRASP_JITTER),
        o[1] + off[1] + jitter(rng, GRASP_JITTER),
        o[2] + off[2] + jitter(rng, GRASP_JITTER),
    ];
    let lift = LIFT_Z + jitter(rng, JITTER);
    let (kind, mag) = match error {
        Some((k, m)) => (Some(k), m),
        None => (None, 0.0),
    };

    let mut phases = Vec::new();
    // Pick.
    if kind == Some(ErrorKind::CorruptSubtask(1)) {
        // Wanders sideways off the approach, pauses, then goes for the grasp.
        let (dx, dy) = (g[0] - w.ee[0], g[1] - w.ee[1]);
        let len = (dx * dx + dy * dy).sqrt();
        let side = [
            0.5 * (g[0] + w.ee[0]) + dy / len * mag,
            0.5 * (g[1] + w.ee[1]) - dx / len * mag,
            DETOUR_Z,
        ];
        phases.push(to(side.map(|v| v.clamp(0.05, 0.95)), 1.0));
        phases.push(hold(1.0));
    } else {
        phases.push(to([g[0], g[1], lift], 1.0));
    }
    phases.push(to(g, 1.0));
    phases.push(hold(-1.0));
    phases.push(to([g[0], g[1], lift], -1.0).ends_with(Event::Height));

    // Place.
    let (mut px, mut py, release_z) = if scenario.has_drawer() {
        let c = world::cavity(w.drawer);
        (c[0] + jitter(rng, JITTER), c[1] + jitter(rng, JITTER), CAVITY_RELEASE_Z)
    } else {
        (TARGET[0] + off[0] + jitter(rng, JITTER), TARGET[1] + off[1] + jitter(rng, JITTER), TABLE_RELEASE_Z)
    };
    let release_z = release_z + jitter(rng, JITTER);
    let shift = |px: f64, py: f64| if scenario.has_drawer() { (px - mag, py) } else { (px, py + mag) };
    if kind == Some(ErrorKind::WrongGoal) {
        (px, py) = shift(px, py);
    }
    if kind == Some(ErrorKind::CorruptSubtask(2)) {
        // Lowers the object at the wrong spot, hesitates, then carries it
        // over below the height threshold and places it properly.
        let (wx, wy) = shift(px, py);
        phases.push(to([wx, wy, lift], -1.0));
        phases.push(to([wx, wy, release_z], -1.0));
        phases.push(hold(-1.0));
        phases.push(to([wx, wy, CLEAR_Z], -1.0));
        phases.push(to([px, py, CLEAR_Z], -1.0));
    }
    if kind == Some(ErrorKind::WrongPath) {
        let (dx, dy) = (px - g[0], py - g[1]);
        let len = (dx * dx + dy * dy).sqrt();
        let mid = [
            0.5 * (px + g[0]) - dy / len * mag,
            0.5 * (py + g[1]) + dx / len * mag,
            lift,
        ];
        phases.push(to(mid, -1.0).in_window(Window::Deviation));
        phases.push(to([px, py, lift], -1.0).in_window(Window::Recovery));
    } else if kind != Some(ErrorKind::CorruptSubtask(2)) {
        phases.push(to([px, py, lift], -1.0));
    }
    phases.push(to([px, py, release_z], -1.0));
    if scenario.has_drawer() {
        phases.push(hold(1.0).ends_with(Event::Gripper));
        // Close.
        phases.push(to([px, py, CLEAR_Z + jitter(rng, JITTER)], 1.0));
        let mut hx = world::HANDLE_X + jitter(rng, JITTER);
        if kind == Some(ErrorKind::CorruptSubtask(3)) {
            hx -= mag;
        }
        let hy = HANDLE_APPROACH_Y + jitter(rng, JITTER);
        let pz = PUSH_Z + jitter(rng, JITTER);
        phases.push(to([hx, hy, CLEAR_Z], 1.0));
        phases.push(to([hx, hy, pz], 1.0));
        phases.push(to([hx, PUSH_END_Y, pz], 1.0));
    } else {
        phases.push(hold(1.0));
        phases.push(to([px, py, CLEAR_Z + jitter(rng, JITTER)], 1.0));
    }
    phases
}

/// Smooth (first-order autoregressive) translation noise with stationary
/// standard deviation `sigma` per axis.
pub(crate) struct SmoothNoise {
    sigma: f64,
    state: [f64; 3],
}

impl SmoothNoise {
    pub(crate) fn new(sigma: f64) -> Self {
        Self { sigma, state: [0.0; 3] }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let innovation = (1.0 - NOISE_MEMORY * NOISE_MEMORY).sqrt() * self.sigma;
        for s in &mut self.state {
            let x: f64 = StandardNormal.sample(rng);
            *s = NOISE_MEMORY * *s + innovation * x;
        }
        self.state
    }
}

/// Success bookkeeping along a rollout.
#[derive(Debug, Clone, Default)]
pub(crate) struct Progress {
    grasped: bool,
    placed: bool,
}

impl Progress {
    pub(crate) fn update(&mut self, w: &WorldState) {
        self.grasped |= w.held.is_some();
        self.placed |= w.in_drawer.iter().any(|b| *b);
    }

    /// Per-subtask success and full-task success for the final world.
    pub(crate) fn outcome(&self, scenario: Scenario, w: &WorldState) -> (Vec<bool>, bool) {
        if scenario.has_drawer() {
            let closed = w.drawer_closed();
            let subs = vec![self.grasped, self.placed, closed];
            (subs, self.grasped && w.in_drawer[0] && closed)
        } else {
            let o = w.objects[0];
            let (dx, dy) = (o[0] - TARGET[0], o[1] - TARGET[1]);
            let at_target = w.held.is_none() && o[2] <= TABLE_Z + 1e-9 && (dx * dx + dy * dy).sqrt() <= 0.06;
            (vec![self.grasped, at_target], self.grasped && at_target)
        }
    }
}

pub(crate) struct Recording {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub boundaries: Vec<usize>,
    pub windows: Vec<(Window, Range<usize>)>,
    pub last: WorldState,
    pub progress: Progress,
}

fn crossing(states: &[Vec<f64>], from: usize, event: Event) -> Option<usize> {
    let (channel, threshold) = match event {
        Event::Height => (world::STATE_DIM - 1, 0.3),
        Event::Gripper => (world::STATE_DIM - 2, 0.5),
    };
    (from.max(1)..states.len()).find(|&i| states[i - 1][channel] < threshold && states[i][channel] >= threshold)
}

/// Runs the phases from `w`, recording the state before each action.
pub(crate) fn execute(
    scenario: Scenario,
    mut w: WorldState,
    phases: &[Phase],
    noise: &mut [SmoothNoise],
    rng: &mut ChaCha8Rng,
) -> Result<Recording> {
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut events = Vec::new();
    let mut windows = Vec::new();
    let mut progress = Progress::default();
    progress.update(&w);
    let mut record = |w: &mut WorldState, a: Vec<f64>, states: &mut Vec<Vec<f64>>, actions: &mut Vec<Vec<f64>>| {
        states.push(w.observe());
        *w = step(scenario, w, &a);
        progress.update(w);
        actions.push(a);
    };
    for phase in phases {
        let start = actions.len();
        match phase.motion {
            Motion::Hold(n) => {
                for _ in 0..n {
                    let mut a = vec![0.0; ACTION_DIM];
                    a[6] = phase.grip;
                    record(&mut w, a, &mut states, &mut actions);
                }
            }
            Motion::To(target) => {
                for _ in 0..MAX_PHASE_STEPS {
                    let d = [target[0] - w.ee[0], target[1] - w.ee[1], target[2] - w.ee[2]];
                    let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    if dist < TOLERANCE {
                        break;
                    }
                    let scale = (SPEED / dist).min(1.0);
                    let mut a = vec![0.0; ACTION_DIM];
                    for k in 0..3 {
                        a[k] = d[k] * scale;
                    }
                    for n in noise.iter_mut() {
                        let e = n.next(rng);
                        for k in 0..3 {
                            a[k] += e[k];
                        }
                    }
                    a[6] = phase.grip;
                    record(&mut w, a, &mut states, &mut actions);
                }
            }
        }
        if let Some(e) = phase.event {
            events.push((start, e));
        }
        if let Some(win) = phase.window {
            windows.push((win, start..actions.len()));
        }
    }
    let boundaries = events
        .iter()
        .map(|&(from, e)| {
            crossing(&states, from, e).ok_or_else(|| Error::numeric("scripted subtask event did not occur"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Recording {
        states,
        actions,
        boundaries,
        windows,
        last: w,
        progress,
    })
}

/// One rollout of the scripted demonstrator from a sampled start.
pub(crate) fn demonstrate(
    scenario: Scenario,
    mode: usize,
    error: Option<(ErrorKind, f64)>,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Recording> {
    let w = sample_initial(scenario, rng);
    let phases = plan(scenario, &w, mode, error, rng);
    let mut noise = vec![SmoothNoise::new(noise_scale)];
    if let Some((ErrorKind::ActionNoise, mag)) = error {
        noise.push(SmoothNoise::new(mag));
    }
    execute(scenario, w, &phases, &mut noise, rng)
}

/// Uniform draw used when a policy has several equally valid modes.
pub(crate) fn pick_mode(scenario: Scenario, rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(0..scenario.grasp_offsets().len())
}
