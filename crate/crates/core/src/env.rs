//! Joint truck-and-drone delivery environment.
//!
//! One truck and one drone start docked at the depot and must clear every
//! customer demand, ending docked at the depot. Time advances event-wise:
//! both agents commit to target nodes, the smallest remaining travel time
//! elapses, and agents whose action completes arrive (serving a customer or
//! docking). Reward is the negative elapsed time, so episode return is the
//! negative completion time.
//!
//! Invariants the transition maintains:
//! - a docked drone (`drone_busy == false`) is always at the truck's node;
//! - an agent mid-action continues to its pending target;
//! - a flying drone returns to the truck's node as of its decision epoch,
//!   re-targeting at later epochs if the truck has moved on;
//! - after docking, the drone may not relaunch until the truck next serves
//!   a customer (a dock that coincides with a truck service counts).
//!
//! `step` accepts any action that respects the physical rules above,
//! including deliberate waits (an agent targeting its own node). The policy
//! masks from [`action_masks`] are stricter: they keep the truck moving
//! toward unmet customers unless the drone is away, which rules out the
//! degenerate wait-wait livelocks that `step` reports as errors.

use std::fmt;

use crate::instance::{Agent, Instance};

#[derive(Debug)]
pub enum EnvError {
    /// Action violates a hard feasibility rule (served customer, wrong
    /// rendezvous node, abandoned pending action, blocked relaunch).
    Feasibility(String),
    /// No agent can make progress but demands remain unmet.
    Livelock { clock: f64, unmet: usize },
    /// Inconsistent state or trajectory (e.g. cost of a non-terminal run).
    State(String),
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::Feasibility(m) => write!(f, "infeasible action: {m}"),
            EnvError::Livelock { clock, unmet } => {
                write!(f, "livelock at clock {clock}: no agent can act, {unmet} demands unmet")
            }
            EnvError::State(m) => write!(f, "invalid state: {m}"),
        }
    }
}

impl std::error::Error for EnvError {}

/// An in-flight commitment: target node and remaining travel time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pending {
    pub target: usize,
    pub remaining: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// true = demand still unmet. The depot entry is always false.
    pub demands: Vec<bool>,
    pub truck_loc: usize,
    pub truck_pending: Option<Pending>,
    pub drone_loc: usize,
    /// Drone is away from the truck (launched and not yet docked).
    pub drone_busy: bool,
    /// Mirrors `drone_busy` transitions for observers: set at launch,
    /// cleared when the drone docks.
    pub drone_unreturned: bool,
    /// Launch leg in progress; service happens only when it completes.
    pub drone_outbound: bool,
    pub drone_pending: Option<Pending>,
    /// Set when the drone docks; cleared when the truck serves a customer.
    /// While set, the drone may only ride along.
    pub relaunch_hold: bool,
    pub clock: f64,
}

impl State {
    pub fn unmet_count(&self) -> usize {
        self.demands.iter().filter(|&&d| d).count()
    }

    pub fn drone_away(&self) -> bool {
        self.drone_busy || self.drone_pending.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointAction {
    pub truck: usize,
    pub drone: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Truck,
    Drone,
}

/// Per-node availability bits for one agent's decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMask(pub Vec<bool>);

impl NodeMask {
    pub fn allows(&self, node: usize) -> bool {
        self.0.get(node).copied().unwrap_or(false)
    }

    pub fn allowed(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i]).collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: State,
    pub dt: f64,
}

pub fn reset(inst: &Instance) -> (State, NodeMask) {
    let mut demands = vec![true; inst.n()];
    demands[inst.depot] = false;
    let state = State {
        demands,
        truck_loc: inst.depot,
        truck_pending: None,
        drone_loc: inst.depot,
        drone_busy: false,
        drone_unreturned: false,
        drone_outbound: false,
        drone_pending: None,
        relaunch_hold: false,
        clock: 0.0,
    };
    let mask = action_masks(&state, inst, Phase::Truck, None)
        .expect("fresh state always has a truck mask");
    (state, mask)
}

pub fn is_terminal(state: &State, inst: &Instance) -> bool {
    state.unmet_count() == 0
        && state.truck_loc == inst.depot
        && state.drone_loc == inst.depot
        && !state.drone_busy
        && state.truck_pending.is_none()
        && state.drone_pending.is_none()
}

/// Node the flying drone must head for: the truck's committed destination if
/// it is mid-action, otherwise the truck's current node.
pub fn rendezvous_node(state: &State) -> usize {
    match state.truck_pending {
        Some(p) => p.target,
        None => state.truck_loc,
    }
}

/// Availability mask for one decision phase. The drone phase needs the
/// truck's already-chosen target so the two never split a fresh customer.
pub fn action_masks(
    state: &State,
    inst: &Instance,
    phase: Phase,
    truck_choice: Option<usize>,
) -> Result<NodeMask, EnvError> {
    let n = inst.n();
    if state.demands.len() != n {
        return Err(EnvError::State(format!(
            "state has {} demand bits for {} nodes",
            state.demands.len(),
            n
        )));
    }
    if state.demands[inst.depot] {
        return Err(EnvError::State("depot carries a demand".into()));
    }
    let mut bits = vec![false; n];
    match phase {
        Phase::Truck => {
            if let Some(p) = state.truck_pending {
                bits[p.target] = true;
            } else if state.unmet_count() > 0 {
                for i in 0..n {
                    if state.demands[i] {
                        bits[i] = true;
                    }
                }
                // The depot doubles as a rendezvous point while the drone
                // is away; otherwise the truck keeps serving.
                if state.drone_away() {
                    bits[inst.depot] = true;
                }
            } else {
                bits[inst.depot] = true;
            }
        }
        Phase::Drone => {
            let truck_choice = truck_choice.ok_or_else(|| {
                EnvError::State("drone phase requires the truck's choice".into())
            })?;
            if truck_choice >= n {
                return Err(EnvError::State(format!("truck choice {truck_choice} out of range")));
            }
            if let Some(p) = state.drone_pending {
                bits[p.target] = true;
            } else if state.drone_busy {
                bits[rendezvous_node(state)] = true;
            } else if state.relaunch_hold {
                // Docked and not yet released: ride the truck.
                bits[state.drone_loc] = true;
            } else if state.unmet_count() == 0 {
                bits[inst.depot] = true;
            } else {
                for i in 0..n {
                    if state.demands[i] && i != truck_choice {
                        bits[i] = true;
                    }
                }
                // Riding along is always an option for a docked drone.
                bits[state.drone_loc] = true;
            }
        }
    }
    let mask = NodeMask(bits);
    if mask.count() == 0 {
        return Err(EnvError::State("empty action mask".into()));
    }
    Ok(mask)
}

enum Mode {
    /// Moving toward a target with some remaining time.
    Active { target: usize, remaining: f64 },
    /// Deliberate no-op (own node) or docked drone riding the truck.
    Idle,
}

fn is_served_customer(state: &State, inst: &Instance, node: usize) -> bool {
    node != inst.depot && !state.demands[node]
}

/// Advances the world by the smallest remaining travel time among both
/// agents' commitments. Returns the successor state and the elapsed time
/// (reward is its negation). On a terminal state the depot no-op yields
/// `dt == 0` and leaves the state unchanged.
pub fn step(state: &State, act: JointAction, inst: &Instance) -> Result<Transition, EnvError> {
    let n = inst.n();
    if act.truck >= n || act.drone >= n {
        return Err(EnvError::Feasibility(format!(
            "action ({}, {}) out of range for {n} nodes",
            act.truck, act.drone
        )));
    }

    // Truck commitment.
    let truck_mode = match state.truck_pending {
        Some(p) => {
            if act.truck != p.target {
                return Err(EnvError::Feasibility(format!(
                    "truck must continue to pending node {}, got {}",
                    p.target, act.truck
                )));
            }
            Mode::Active { target: p.target, remaining: p.remaining }
        }
        None if act.truck == state.truck_loc => Mode::Idle,
        None => {
            if is_served_customer(state, inst, act.truck) {
                return Err(EnvError::Feasibility(format!(
                    "truck targets served customer {}",
                    act.truck
                )));
            }
            let d = inst.distance_between(state.truck_loc, act.truck);
            Mode::Active { target: act.truck, remaining: d / inst.speed(Agent::Truck) }
        }
    };

    // Drone commitment. A docked drone moving off its node is a launch.
    let mut launch = false;
    let drone_mode = match state.drone_pending {
        Some(p) => {
            if act.drone != p.target {
                return Err(EnvError::Feasibility(format!(
                    "drone must continue to pending node {}, got {}",
                    p.target, act.drone
                )));
            }
            Mode::Active { target: p.target, remaining: p.remaining }
        }
        None if state.drone_busy => {
            let meet = rendezvous_node(state);
            if act.drone != meet {
                return Err(EnvError::Feasibility(format!(
                    "flying drone must return to the truck at node {meet}, got {}",
                    act.drone
                )));
            }
            if act.drone == state.drone_loc {
                Mode::Idle
            } else {
                let d = inst.distance_between(state.drone_loc, act.drone);
                Mode::Active { target: act.drone, remaining: d / inst.speed(Agent::Drone) }
            }
        }
        None if act.drone == state.drone_loc => Mode::Idle,
        None => {
            if is_served_customer(state, inst, act.drone) {
                return Err(EnvError::Feasibility(format!(
                    "drone targets served customer {}",
                    act.drone
                )));
            }
            if state.relaunch_hold {
                return Err(EnvError::Feasibility(
                    "drone cannot relaunch before the truck serves a customer".into(),
                ));
            }
            launch = true;
            let d = inst.distance_between(state.drone_loc, act.drone);
            Mode::Active { target: act.drone, remaining: d / inst.speed(Agent::Drone) }
        }
    };

    // Elapsed time: the smallest remaining commitment. Zero-length hops
    // (coincident nodes) still count as arrivals.
    let mut dt = f64::INFINITY;
    if let Mode::Active { remaining, .. } = truck_mode {
        dt = dt.min(remaining);
    }
    if let Mode::Active { remaining, .. } = drone_mode {
        dt = dt.min(remaining);
    }
    if !dt.is_finite() {
        if is_terminal(state, inst) {
            return Ok(Transition { state: state.clone(), dt: 0.0 });
        }
        return Err(EnvError::Livelock { clock: state.clock, unmet: state.unmet_count() });
    }

    let mut next = state.clone();
    if launch {
        next.drone_busy = true;
        next.drone_unreturned = true;
        next.drone_outbound = true;
    }

    let mut truck_served = false;
    match truck_mode {
        Mode::Active { target, remaining, .. } => {
            if remaining - dt <= 0.0 {
                next.truck_loc = target;
                next.truck_pending = None;
                if next.demands[target] {
                    next.demands[target] = false;
                    truck_served = true;
                }
            } else {
                next.truck_pending = Some(Pending { target, remaining: remaining - dt });
            }
        }
        Mode::Idle => next.truck_pending = None,
    }

    match drone_mode {
        Mode::Active { target, remaining, .. } => {
            if remaining - dt <= 0.0 {
                next.drone_loc = target;
                next.drone_pending = None;
                if next.drone_outbound {
                    next.drone_outbound = false;
                    if next.demands[target] {
                        next.demands[target] = false;
                    }
                }
            } else {
                next.drone_pending = Some(Pending { target, remaining: remaining - dt });
            }
        }
        Mode::Idle => next.drone_pending = None,
    }

    // Dock when both agents are settled on the same node. The dock arms the
    // relaunch hold; a truck service in the same transition releases it.
    if next.drone_busy
        && next.drone_pending.is_none()
        && next.truck_pending.is_none()
        && next.drone_loc == next.truck_loc
    {
        next.drone_busy = false;
        next.drone_unreturned = false;
        next.drone_outbound = false;
        next.relaunch_hold = true;
    }
    if truck_served {
        next.relaunch_hold = false;
    }

    // A docked drone rides the truck.
    if !next.drone_busy {
        next.drone_loc = next.truck_loc;
    }

    next.clock += dt;
    Ok(Transition { state: next, dt })
}

/// One decision epoch as recorded during a rollout. `state` is the state the
/// action was taken in; log-probabilities are zero for forced choices.
#[derive(Debug, Clone)]
pub struct TrajStep {
    pub state: State,
    pub action: JointAction,
    pub dt: f64,
    pub logp_truck: f64,
    pub logp_drone: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    pub final_state: State,
    pub depot: usize,
}

/// Completed movement of one agent, for rendering and replay checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Movement {
    pub step: usize,
    pub agent: Agent,
    pub from: usize,
    pub to: usize,
    pub depart: f64,
    pub arrive: f64,
}

impl Trajectory {
    pub fn cost(&self) -> f64 {
        self.steps.iter().map(|s| s.dt).sum()
    }

    pub fn sum_logp(&self) -> f64 {
        self.steps.iter().map(|s| s.logp_truck + s.logp_drone).sum()
    }

    fn is_terminal_record(&self) -> bool {
        let s = &self.final_state;
        s.unmet_count() == 0
            && s.truck_loc == self.depot
            && s.drone_loc == self.depot
            && !s.drone_busy
            && s.truck_pending.is_none()
            && s.drone_pending.is_none()
    }

    /// Physical legs flown/driven, reconstructed from the recorded states.
    /// A docked drone riding the truck produces no drone movement.
    pub fn movements(&self) -> Vec<Movement> {
        let mut moves = Vec::new();
        let mut truck_leg: Option<(usize, usize, f64, usize)> = None;
        let mut drone_leg: Option<(usize, usize, f64, usize)> = None;
        for (i, step) in self.steps.iter().enumerate() {
            let before = &step.state;
            let after = if i + 1 < self.steps.len() {
                &self.steps[i + 1].state
            } else {
                &self.final_state
            };
            if truck_leg.is_none()
                && before.truck_pending.is_none()
                && step.action.truck != before.truck_loc
            {
                truck_leg = Some((before.truck_loc, step.action.truck, before.clock, i));
            }
            // A docked drone whose node changes only because the truck
            // moved is riding, not flying; that case targets its own node
            // and starts no leg.
            if drone_leg.is_none()
                && before.drone_pending.is_none()
                && step.action.drone != before.drone_loc
            {
                drone_leg = Some((before.drone_loc, step.action.drone, before.clock, i));
            }
            if let Some((from, to, depart, step_idx)) = truck_leg {
                if after.truck_loc == to && after.truck_pending.is_none() {
                    moves.push(Movement {
                        step: step_idx,
                        agent: Agent::Truck,
                        from,
                        to,
                        depart,
                        arrive: after.clock,
                    });
                    truck_leg = None;
                }
            }
            if let Some((from, to, depart, step_idx)) = drone_leg {
                if after.drone_loc == to && after.drone_pending.is_none() {
                    moves.push(Movement {
                        step: step_idx,
                        agent: Agent::Drone,
                        from,
                        to,
                        depart,
                        arrive: after.clock,
                    });
                    drone_leg = None;
                }
            }
        }
        let rank = |a: Agent| match a {
            Agent::Truck => 0u8,
            Agent::Drone => 1u8,
        };
        moves.sort_by(|a, b| {
            a.depart
                .partial_cmp(&b.depart)
                .unwrap()
                .then(a.step.cmp(&b.step))
                .then(rank(a.agent).cmp(&rank(b.agent)))
        });
        moves
    }

    /// Latest arrival time per agent, from the reconstructed movements.
    pub fn completion_times(&self) -> (f64, f64) {
        let mut truck = 0.0f64;
        let mut drone = 0.0f64;
        for m in self.movements() {
            match m.agent {
                Agent::Truck => truck = truck.max(m.arrive),
                Agent::Drone => drone = drone.max(m.arrive),
            }
        }
        (truck, drone)
    }

    /// Text dump: one line per movement, `t agent from to depart arrive`,
    /// then `cost <value>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for m in self.movements() {
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                m.step, m.agent, m.from, m.to, m.depart, m.arrive
            ));
        }
        out.push_str(&format!("cost {}\n", self.cost()));
        out
    }
}

/// Total completion time of a finished episode.
pub fn episode_cost(traj: &Trajectory) -> Result<f64, EnvError> {
    if !traj.is_terminal_record() {
        return Err(EnvError::State(format!(
            "trajectory is not terminal: {} demands unmet, truck at {}, drone at {}",
            traj.final_state.unmet_count(),
            traj.final_state.truck_loc,
            traj.final_state.drone_loc
        )));
    }
    let total = traj.cost();
    if (total - traj.final_state.clock).abs() > 1e-9 {
        return Err(EnvError::State(format!(
            "step times sum to {total} but the clock reads {}",
            traj.final_state.clock
        )));
    }
    Ok(total)
}
