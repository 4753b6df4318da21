//! Exhaustive closed-loop verification of the no-collision requirement over
//! the quantized state space.
//!
//! The certified invariant is the braking cone
//!
//! ```text
//! I = { v = 0 } ∪ { (gap, v) : 1 <= v <= v_max  and  B(v) + 1 <= gap <= range }
//! ```
//!
//! where `B(v)` is the exact worst-case braking distance from speed `v`
//! (sustained `a_min` command, actuator error at `+delta`, plant rounding
//! included). Inductive closure reduces to inequalities over speed alone:
//!
//! * braking step: `B(v') + travel <= B(v)` — the one-tick unfolding of the
//!   braking recursion, for both actuator corners;
//! * cruise step: the controller cruises only when the reading certifies
//!   `stopping_distance(v) <= gap - margin` (plus `epsilon` for readings
//!   that do not max out the sensor error), so
//!   `B(v') + travel + 1 <= stopping_distance(v) + margin + (epsilon - err)`
//!   puts every cruise successor back inside the cone;
//! * cap: successors never exceed the grid's speed bound.
//!
//! These conditions are gap-independent, so checking every integer speed up
//! to the grid bound covers every state in the cone exactly — no abstraction
//! slack beyond the conservative plant rounding itself. The certificate
//! payload renders the cone as a per-distance-cell maximum-speed table.
//!
//! Failed closure is reported as not-provable-at-this-grid, and a bounded
//! breadth-first adversarial search over disturbance corners either produces
//! a concrete replayable counterexample or leaves the verdict open. A
//! not-provable verdict never masquerades as a proof.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use thiserror::Error;

use crate::certificate::{params_digest, Certificate, CERT_VERSION};
use crate::scenario::{
    closed_loop_step, collision, controller, plant_step, stopping_distance_mm, ControllerMode,
    Disturbance, ScenarioParams, SensorReading, StepError, VehicleState,
};

/// Quantization of the state space for certificate payloads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    /// distance extent, mm
    pub d_max: i64,
    /// distance cell size, mm
    pub d_step: i64,
    /// speed extent, mm/s
    pub v_max: i64,
    /// speed cell size, mm/s
    pub v_step: i64,
}

impl Grid {
    pub fn new(d_max: i64, d_step: i64, v_max: i64, v_step: i64) -> Result<Grid, VerifyError> {
        let g = Grid { d_max, d_step, v_max, v_step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        if self.d_step <= 0 || self.v_step <= 0 {
            return Err(VerifyError::InvalidGrid("steps must be positive".to_string()));
        }
        if self.d_max <= 0 || self.v_max <= 0 {
            return Err(VerifyError::InvalidGrid("extents must be positive".to_string()));
        }
        if self.d_max % self.d_step != 0 || self.v_max % self.v_step != 0 {
            return Err(VerifyError::InvalidGrid("steps must divide extents".to_string()));
        }
        Ok(())
    }

    /// Default quantization for a parameter set: distance cells cover the
    /// sensor range, the speed bound sits one drift allowance above the
    /// cruise set speed.
    pub fn default_for(p: &ScenarioParams, d_step: i64, v_step: i64) -> Result<Grid, VerifyError> {
        if d_step <= 0 || v_step <= 0 {
            return Err(VerifyError::InvalidGrid("steps must be positive".to_string()));
        }
        let d_max = round_up_multiple(p.range, d_step);
        let v_cap = p.v_target_floor() + p.delta + 1;
        let v_max = round_up_multiple(v_cap.max(v_step), v_step);
        Grid::new(d_max, d_step, v_max, v_step)
    }

    pub fn cell_count(&self) -> usize {
        (self.d_max / self.d_step) as usize
    }

    /// Index of the cell containing `gap`, clamped into range.
    pub fn cell_index(&self, gap: i64) -> usize {
        let raw = gap.max(0) / self.d_step;
        (raw as usize).min(self.cell_count() - 1)
    }

    pub fn cell_low(&self, index: usize) -> i64 {
        index as i64 * self.d_step
    }

    pub fn canonical_lines(&self) -> Vec<String> {
        vec![
            format!("d_max = {} mm", self.d_max),
            format!("d_step = {} mm", self.d_step),
            format!("v_max = {} mm/s", self.v_max),
            format!("v_step = {} mm/s", self.v_step),
        ]
    }
}

fn round_up_multiple(value: i64, step: i64) -> i64 {
    ((value + step - 1) / step) * step
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid distance extent {0} mm is smaller than the sensor range {1} mm")]
    GridBelowRange(i64, i64),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// Per-distance-cell maximum certified-safe speed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafeEnvelope {
    pub grid: Grid,
    pub params_digest: String,
    /// cell index -> max safe speed in mm/s (0 means standstill only)
    pub max_safe: Vec<i64>,
}

/// Worst-case braking distances indexed by speed in mm/s.
///
/// `table[v]` is the exact distance to standstill when every tick commands
/// `a_min` and the actuator errs at `+delta` throughout, including the
/// conservative integer rounding of the plant.
pub struct BrakingTable {
    table: Vec<i64>,
}

impl BrakingTable {
    pub fn build(p: &ScenarioParams, v_max: i64) -> BrakingTable {
        let (tn, td) = (p.t_num as i128, p.t_den as i128);
        let a = (p.a_min + p.delta) as i128;
        let mut table = vec![0i64; (v_max + 1) as usize];
        for v in 1..=v_max {
            let vq = (v as i128) * td + a * tn;
            let v_next = if vq <= 0 { 0 } else { (vq + td - 1) / td };
            let travel = ((v as i128 + v_next) * tn + 2 * td - 1) / (2 * td);
            table[v as usize] = table[v_next as usize] + travel as i64;
        }
        BrakingTable { table }
    }

    pub fn distance(&self, v: i64) -> i64 {
        self.table[v as usize]
    }

    pub fn v_max(&self) -> i64 {
        self.table.len() as i64 - 1
    }
}

/// The quasi-static safe envelope: per distance cell, the largest grid speed
/// whose worst-case stopping distance fits into the cell's lower-bounded
/// available distance (gap minus margin).
pub fn compute_safe_envelope(p: &ScenarioParams, g: &Grid) -> Result<SafeEnvelope, VerifyError> {
    g.validate()?;
    let cells = g.cell_count();
    let max_safe: Vec<i64> = (0..cells)
        .into_par_iter()
        .map(|j| {
            let avail = (g.cell_low(j) - p.margin).max(0);
            if g.cell_low(j) < p.margin {
                return 0;
            }
            let mut best = 0;
            let mut v = g.v_step;
            while v <= g.v_max {
                if stopping_distance_mm(v, p) <= avail {
                    best = v;
                } else {
                    break;
                }
                v += g.v_step;
            }
            best
        })
        .collect();
    Ok(SafeEnvelope { grid: g.clone(), params_digest: params_digest(p, g), max_safe })
}

/// The certified envelope: quantized rendering of the braking cone.
fn certified_envelope(g: &Grid, braking: &BrakingTable) -> Vec<i64> {
    (0..g.cell_count())
        .into_par_iter()
        .map(|j| {
            let low = g.cell_low(j);
            let mut best = 0;
            let mut v = g.v_step;
            while v <= g.v_max {
                if braking.distance(v) + 1 <= low {
                    best = v;
                } else {
                    break;
                }
                v += g.v_step;
            }
            best
        })
        .collect()
}

/// A replayable disturbance trace driving the loop into a collision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub initial: VehicleState,
    pub disturbances: Vec<Disturbance>,
    /// index of the step after which the collision predicate first holds
    pub collision_step: usize,
    /// vehicle speed at the collision state, mm/s
    pub impact_speed: i64,
    pub mode: ControllerMode,
}

/// Diagnosis attached to verdicts that are not proofs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotProvableReport {
    pub reasons: Vec<String>,
}

#[derive(Debug)]
pub enum VerifyOutcome {
    Certified(Certificate),
    Falsified(Counterexample),
    NotProvable(NotProvableReport),
}

/// Closure violations found by the inductive scan. Speeds are integer mm/s.
fn closure_violations(
    p: &ScenarioParams,
    g: &Grid,
    braking: &BrakingTable,
    mode: ControllerMode,
) -> Vec<String> {
    let mut reasons: Vec<String> = (0..=g.v_max)
        .into_par_iter()
        .flat_map_iter(|v| {
            let mut local = Vec::new();
            for act_err in [-p.delta, p.delta] {
                // Braking branch: one-tick unfolding of the cone.
                let state = VehicleState::new(0, v, i64::MAX / 4, false);
                let dist = Disturbance { sensor_err: 0, act_err, ped_enters: false };
                let next = plant_step(&state, p.a_min, &dist, p).expect("brake step in bounds");
                let travel = next.x;
                if next.v > g.v_max {
                    local.push(format!(
                        "brake from v={v} act_err={act_err} exceeds grid speed cap ({})",
                        next.v
                    ));
                    continue;
                }
                if braking.distance(next.v) + travel > braking.distance(v) {
                    local.push(format!(
                        "brake step not closed at v={v} act_err={act_err}: \
                         B({}) + {} > B({v})",
                        next.v, travel
                    ));
                }

                // Cruise branch: only reachable when a consistent reading
                // certifies the stopping predicate.
                for err in [0, p.epsilon] {
                    let slack = match mode {
                        ControllerMode::Nominal | ControllerMode::PassAttempt => {
                            p.margin + p.epsilon - err
                        }
                        ControllerMode::EpsilonIgnoring => p.margin - err,
                    };
                    let gap_min = stopping_distance_mm(v, p).saturating_add(slack);
                    if gap_min > p.range {
                        continue; // cruise unreachable within detection range
                    }
                    let state = VehicleState::new(0, v, gap_min, false);
                    let reading =
                        SensorReading::from_truth(&state, err, p).expect("bounded error");
                    let areq = controller(&reading, v, 0, p, mode);
                    let next = plant_step(&state, areq, &dist, p).expect("cruise step in bounds");
                    if next.v > g.v_max {
                        local.push(format!(
                            "cruise from v={v} err={err} act_err={act_err} exceeds grid \
                             speed cap ({})",
                            next.v
                        ));
                        continue;
                    }
                    if next.v > 0 && braking.distance(next.v) + next.x + 1 > gap_min {
                        local.push(format!(
                            "cruise step not closed at v={v} err={err} act_err={act_err}: \
                             B({}) + {} + 1 > {}",
                            next.v, next.x, gap_min
                        ));
                    }
                }
            }
            local
        })
        .collect();
    reasons.sort();
    reasons
}

/// Verify the closed loop and produce a certificate, a counterexample, or an
/// honest "not provable at this grid".
pub fn verify_closed_loop(
    p: &ScenarioParams,
    g: &Grid,
    mode: ControllerMode,
) -> Result<VerifyOutcome, VerifyError> {
    g.validate()?;
    if g.d_max < p.range {
        return Err(VerifyError::GridBelowRange(g.d_max, p.range));
    }

    let mut reasons = Vec::new();
    let certifiable = mode == ControllerMode::Nominal && !p.allow_pass;
    if p.allow_pass {
        reasons.push("pass maneuver enabled; certificates exclude it".to_string());
    }
    if mode != ControllerMode::Nominal {
        reasons.push(format!("controller mode {mode:?} is not the certified baseline"));
    }

    let braking = BrakingTable::build(p, g.v_max);
    reasons.extend(closure_violations(p, g, &braking, mode));

    let v_init = p.v_target_floor();
    if v_init > g.v_max {
        reasons.push(format!(
            "grid speed cap {} mm/s below cruise set speed {} mm/s",
            g.v_max, v_init
        ));
    } else if braking.distance(v_init) + 1 > p.range {
        reasons.push(format!(
            "initial state not inside invariant: B({}) = {} but detection range is {}",
            v_init,
            braking.distance(v_init),
            p.range
        ));
    }

    if certifiable && reasons.is_empty() {
        let payload = certified_envelope(g, &braking);
        debug_assert!(payload.windows(2).all(|w| w[0] <= w[1]));
        let init_cell = g.cell_index(p.range);
        if payload[init_cell] < v_init {
            reasons.push(format!(
                "envelope at detection range admits only {} mm/s, need {}",
                payload[init_cell], v_init
            ));
        } else {
            let cert = Certificate {
                version: CERT_VERSION,
                producer: format!("safecase-verifier {}", env!("CARGO_PKG_VERSION")),
                params: p.clone(),
                grid: g.clone(),
                payload,
                digest: params_digest(p, g),
            };
            return Ok(VerifyOutcome::Certified(cert));
        }
    }

    // Closure or inclusion failed (or the mode is uncertifiable): hunt for a
    // concrete counterexample before conceding an open verdict.
    match falsify(p, g, mode, FALSIFY_HORIZON) {
        Some(cx) => Ok(VerifyOutcome::Falsified(cx)),
        None => {
            reasons.push(format!(
                "no collision found by adversarial search within {FALSIFY_HORIZON} steps"
            ));
            Ok(VerifyOutcome::NotProvable(NotProvableReport { reasons }))
        }
    }
}

/// Bounded falsification horizon: 60 s of closed-loop time at the fixture
/// period.
pub const FALSIFY_HORIZON: usize = 600;

/// Bounded adversarial search for a minimal-depth collision trace.
///
/// Searching raw disturbance corners breadth-first is infeasible here: the
/// reachable concrete state set grows into the millions within two seconds
/// of closed-loop time. Instead the search enumerates, breadth-first in
/// trace depth, a two-phase adversary policy family that contains the
/// damaging schedules: the sensor always reads at the permissive extreme
/// (`+epsilon`), the actuator errs gently (either corner) during the
/// approach, and from a commit tick onward errs at `+delta` — riding the
/// controller's final cruise tick across the braking boundary and degrading
/// every braking tick after it. All initial grid speeds up to the cruise
/// target, both approach corners, and every commit tick inside the horizon
/// are tried; the minimal collision depth wins, ties resolved by seed order.
/// Every returned trace replays through the scenario operations.
pub fn falsify(
    p: &ScenarioParams,
    g: &Grid,
    mode: ControllerMode,
    horizon: usize,
) -> Option<Counterexample> {
    // The pedestrian is adversarially present from the first tick; presence
    // does not influence the motion dynamics.
    let commit = Disturbance { sensor_err: p.epsilon, act_err: p.delta, ped_enters: true };

    let mut seeds: Vec<i64> = Vec::new();
    let mut v0 = 0;
    let v_top = p.v_target_floor();
    while v0 <= v_top {
        seeds.push(v0);
        v0 += g.v_step;
    }
    if seeds.last() != Some(&v_top) {
        seeds.push(v_top);
    }

    let mut best: Option<Counterexample> = None;
    for &seed in &seeds {
        for approach_err in [-p.delta, p.delta] {
            let approach = Disturbance {
                sensor_err: p.epsilon,
                act_err: approach_err,
                ped_enters: true,
            };
            let initial = VehicleState::new(0, seed, p.range, false);
            let mut prefix_state = initial;
            let mut prefix: Vec<Disturbance> = Vec::new();

            for commit_tick in 0..horizon {
                // Committed suffix from this prefix.
                let mut s = prefix_state;
                let mut depth = commit_tick;
                while depth < horizon {
                    s = match closed_loop_step(&s, &commit, p, mode) {
                        Ok(s) => s,
                        Err(_) => break,
                    };
                    depth += 1;
                    if collision(&s) {
                        let step = depth - 1;
                        if best.as_ref().map_or(true, |b| step < b.collision_step) {
                            let mut trace = prefix.clone();
                            trace.extend(std::iter::repeat(commit).take(depth - commit_tick));
                            best = Some(Counterexample {
                                initial,
                                disturbances: trace,
                                collision_step: step,
                                impact_speed: s.v,
                                mode,
                            });
                        }
                        break;
                    }
                    if s.v == 0 {
                        break; // standstill: the committed descent is over
                    }
                }

                // Grow the approach prefix by one tick.
                prefix_state = match closed_loop_step(&prefix_state, &approach, p, mode) {
                    Ok(s) => s,
                    Err(_) => break,
                };
                prefix.push(approach);
                if collision(&prefix_state) {
                    let step = prefix.len() - 1;
                    if best.as_ref().map_or(true, |b| step < b.collision_step) {
                        best = Some(Counterexample {
                            initial,
                            disturbances: prefix.clone(),
                            collision_step: step,
                            impact_speed: prefix_state.v,
                            mode,
                        });
                    }
                    break;
                }
            }
        }
    }
    best.map(|mut cx| {
        cx.disturbances.truncate(cx.collision_step + 1);
        cx
    })
}

/// Outcome of replaying a trace step by step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub first_collision: Option<usize>,
    pub impact_speed: i64,
    pub final_state: VehicleState,
}

/// Re-simulate a counterexample through the scenario operations alone.
///
/// Disturbances outside the declared bounds reject the trace. Returns true
/// iff the first collision happens at exactly the recorded step index.
pub fn replay(c: &Counterexample, p: &ScenarioParams) -> Result<bool, StepError> {
    let report = replay_trace(&c.initial, &c.disturbances, p, c.mode)?;
    Ok(report.first_collision == Some(c.collision_step))
}

/// Replay arbitrary traces; used by simulation oracles as well.
pub fn replay_trace(
    initial: &VehicleState,
    disturbances: &[Disturbance],
    p: &ScenarioParams,
    mode: ControllerMode,
) -> Result<ReplayReport, StepError> {
    let mut state = *initial;
    let mut first_collision = None;
    let mut impact_speed = 0;
    for (i, dist) in disturbances.iter().enumerate() {
        state = closed_loop_step(&state, dist, p, mode)?;
        if first_collision.is_none() && collision(&state) {
            first_collision = Some(i);
            impact_speed = state.v;
        }
    }
    Ok(ReplayReport { first_collision, impact_speed, final_state: state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::desk_params;
    use crate::units::Rat;
    use num_traits::Zero;

    fn desk_grid(p: &ScenarioParams) -> Grid {
        Grid::default_for(p, 500, 250).unwrap()
    }

    #[test]
    fn default_grid_shape() {
        let p = desk_params();
        let g = desk_grid(&p);
        assert_eq!(g.d_max, 100_000);
        assert_eq!(g.v_max, 20_000);
        assert_eq!(g.cell_count(), 200);
        assert_eq!(g.cell_index(100_000), 199);
        assert_eq!(g.cell_index(0), 0);
        assert_eq!(g.cell_index(-5), 0);
    }

    #[test]
    fn grid_rejects_non_dividing_steps() {
        assert!(Grid::new(1000, 300, 1000, 250).is_err());
        assert!(Grid::new(1000, 0, 1000, 250).is_err());
    }

    #[test]
    fn braking_table_matches_direct_simulation() {
        let p = desk_params();
        let braking = BrakingTable::build(&p, 20_000);
        for v in [0i64, 1, 250, 544, 17_694, 19_444, 20_000] {
            let mut state = VehicleState::new(0, v, i64::MAX / 4, false);
            let dist = Disturbance { sensor_err: 0, act_err: p.delta, ped_enters: false };
            while state.v > 0 {
                state = plant_step(&state, p.a_min, &dist, &p).unwrap();
            }
            assert_eq!(braking.distance(v), state.x, "B({v})");
        }
    }

    #[test]
    fn envelope_is_monotone_and_zero_near_margin() {
        let p = desk_params();
        let g = desk_grid(&p);
        let env = compute_safe_envelope(&p, &g).unwrap();
        assert!(env.max_safe.windows(2).all(|w| w[0] <= w[1]));
        // The cell holding the margin distance certifies standstill only.
        assert_eq!(env.max_safe[g.cell_index(p.margin)], 0);
    }

    #[test]
    fn envelope_closed_form_example() {
        // Reaction disabled, b_eff = 5 m/s^2, no margin: 10 m of available
        // distance admits exactly 10 m/s.
        let p = ScenarioParams::from_raw_parts(
            -5000,
            2000,
            0,
            500,
            100_000,
            Rat::zero(),
            0,
            1,
            0,
            Rat::zero(),
        );
        let g = Grid::new(100_000, 500, 20_000, 250).unwrap();
        let env = compute_safe_envelope(&p, &g).unwrap();
        assert_eq!(env.max_safe[20], 10_000);
    }

    #[test]
    fn fixture_certifies() {
        let p = desk_params();
        let g = desk_grid(&p);
        match verify_closed_loop(&p, &g, ControllerMode::Nominal).unwrap() {
            VerifyOutcome::Certified(cert) => {
                assert_eq!(cert.payload.len(), g.cell_count());
                let init = cert.payload[g.cell_index(p.range)];
                assert!(init >= p.v_target_floor());
            }
            other => panic!("expected certificate, got {other:?}"),
        }
    }

    #[test]
    fn zero_target_certifies() {
        let mut p = desk_params();
        p.v_target = Rat::zero();
        let g = desk_grid(&p);
        match verify_closed_loop(&p, &g, ControllerMode::Nominal).unwrap() {
            VerifyOutcome::Certified(_) => {}
            other => panic!("expected certificate, got {other:?}"),
        }
    }

    #[test]
    fn small_speed_cap_is_not_provable_not_falsified() {
        let p = desk_params();
        // The loop genuinely exceeds 10 m/s, so this grid cannot hold the
        // invariant; but the system is safe, so no counterexample exists.
        let g = Grid::new(100_000, 500, 10_000, 250).unwrap();
        match verify_closed_loop(&p, &g, ControllerMode::Nominal).unwrap() {
            VerifyOutcome::NotProvable(report) => {
                assert!(report.reasons.iter().any(|r| r.contains("speed cap")));
            }
            other => panic!("expected not-provable, got {other:?}"),
        }
    }

    #[test]
    fn broken_controller_is_falsified() {
        let p = desk_params();
        let g = desk_grid(&p);
        match verify_closed_loop(&p, &g, ControllerMode::EpsilonIgnoring).unwrap() {
            VerifyOutcome::Falsified(cx) => {
                assert!(cx.impact_speed > 0);
                assert!(replay(&cx, &p).unwrap());
                // The nominal controller survives the same disturbances.
                let nominal = Counterexample { mode: ControllerMode::Nominal, ..cx };
                assert!(!replay(&nominal, &p).unwrap());
            }
            other => panic!("expected counterexample, got {other:?}"),
        }
    }

    #[test]
    fn replay_rejects_out_of_bounds_disturbances() {
        let p = desk_params();
        let cx = Counterexample {
            initial: VehicleState::new(0, 1000, p.range, false),
            disturbances: vec![Disturbance { sensor_err: p.epsilon + 1, act_err: 0, ped_enters: true }],
            collision_step: 0,
            impact_speed: 1,
            mode: ControllerMode::Nominal,
        };
        assert!(replay(&cx, &p).is_err());
    }

    #[test]
    fn truncated_counterexample_does_not_replay() {
        let p = desk_params();
        let g = desk_grid(&p);
        let cx = match verify_closed_loop(&p, &g, ControllerMode::EpsilonIgnoring).unwrap() {
            VerifyOutcome::Falsified(cx) => cx,
            other => panic!("expected counterexample, got {other:?}"),
        };
        let mut truncated = cx.clone();
        truncated.disturbances.pop();
        assert!(!replay(&truncated, &p).unwrap());
    }

    #[test]
    fn successor_monotone_in_actuator_error() {
        // Corner checking is justified by per-step monotonicity: larger
        // act_err never yields less speed or less travel.
        let p = desk_params();
        for v in (0..=20_000).step_by(137) {
            for areq in [p.a_min, 0, p.a_max] {
                let s = VehicleState::new(0, v, i64::MAX / 4, false);
                let mut prev: Option<VehicleState> = None;
                for act_err in [-p.delta, 0, p.delta] {
                    let next = plant_step(
                        &s,
                        areq,
                        &Disturbance { sensor_err: 0, act_err, ped_enters: false },
                        &p,
                    )
                    .unwrap();
                    if let Some(prev) = prev {
                        assert!(next.v >= prev.v);
                        assert!(next.x >= prev.x);
                    }
                    prev = Some(next);
                }
            }
        }
    }
}
