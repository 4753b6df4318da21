//! Formal model of the pedestrian scenario feedback loop.
//!
//! The loop couples four pieces: an environment bound (vehicle speed is
//! nonnegative, pedestrian lateral speed is bounded), a sensor contract
//! (position overestimation bounded by `epsilon` inside detection range,
//! and a detected pedestrian ahead is never estimated behind), a
//! decision-and-control rule (brake at `a_min` whenever guaranteed stopping
//! is no longer certain), and an actuator contract (tracking error within
//! `delta` of the requested acceleration).
//!
//! State is held in integer millimeters and millimeters per second with
//! direction-aware rounding: distances the vehicle needs round up, speeds
//! round up, so every rounding error is on the conservative side. This
//! makes traces and certificates bit-exact across platforms.

use std::fmt;

use num_traits::Zero;
use thiserror::Error;

use crate::units::{parse_quantity, rat_to_i64_exact, Dimension, Rat, UnitError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("missing parameter {0}")]
    MissingParam(&'static str),
    #[error("parameter invariant violated: {0}")]
    Param(String),
    #[error(transparent)]
    Unit(#[from] UnitError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("requested acceleration {0} mm/s^2 outside [a_min, a_max]")]
    AccelOutOfRange(i64),
    #[error("actuator error {0} mm/s^2 exceeds tolerance")]
    ActuatorOutOfBounds(i64),
    #[error("sensor error {0} mm exceeds tolerance")]
    SensorOutOfBounds(i64),
}

/// Scenario parameters in canonical fixed-point units.
///
/// Distances are integer millimeters, accelerations integer mm/s². The
/// control period and the cruise set speed are exact rationals (a speed
/// given in km/h is generally not an integer in mm/s).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioParams {
    /// strongest braking command, mm/s² (negative)
    pub a_min: i64,
    /// strongest forward acceleration command, mm/s² (positive)
    pub a_max: i64,
    /// actuator tracking tolerance, mm/s² (nonnegative)
    pub delta: i64,
    /// sensor position tolerance, mm (nonnegative)
    pub epsilon: i64,
    /// sensor detection range, mm (positive)
    pub range: i64,
    /// pedestrian lateral speed bound, mm/s
    pub vp_max: Rat,
    /// control period in seconds, exact rational `t_num / t_den`
    pub t_num: i64,
    pub t_den: i64,
    /// standstill safety margin, mm (nonnegative)
    pub margin: i64,
    /// cruise set speed, mm/s (exact rational)
    pub v_target: Rat,
    /// permit the pass maneuver branch in the controller (never certified)
    pub allow_pass: bool,
}

impl ScenarioParams {
    /// Validate all parameter invariants.
    pub fn new(
        a_min: i64,
        a_max: i64,
        delta: i64,
        epsilon: i64,
        range: i64,
        vp_max: Rat,
        t_num: i64,
        t_den: i64,
        margin: i64,
        v_target: Rat,
        allow_pass: bool,
    ) -> Result<ScenarioParams, ScenarioError> {
        let p = ScenarioParams {
            a_min,
            a_max,
            delta,
            epsilon,
            range,
            vp_max,
            t_num,
            t_den,
            margin,
            v_target,
            allow_pass,
        };
        p.validate()?;
        Ok(p)
    }

    /// Build without invariant checks. For analysing degenerate corners
    /// (e.g. a zero control period) in tests and oracles only.
    pub fn from_raw_parts(
        a_min: i64,
        a_max: i64,
        delta: i64,
        epsilon: i64,
        range: i64,
        vp_max: Rat,
        t_num: i64,
        t_den: i64,
        margin: i64,
        v_target: Rat,
    ) -> ScenarioParams {
        ScenarioParams {
            a_min,
            a_max,
            delta,
            epsilon,
            range,
            vp_max,
            t_num,
            t_den,
            margin,
            v_target,
            allow_pass: false,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError::Param(m));
        if !(self.a_min < 0 && self.a_max > 0) {
            return fail(format!("need a_min < 0 < a_max, got {} and {}", self.a_min, self.a_max));
        }
        if self.delta < 0 {
            return fail("delta must be nonnegative".to_string());
        }
        if -self.a_min <= self.delta {
            return fail(format!(
                "|a_min| = {} must exceed delta = {} (no guaranteed braking otherwise)",
                -self.a_min, self.delta
            ));
        }
        if self.epsilon < 0 || self.margin < 0 {
            return fail("epsilon and margin must be nonnegative".to_string());
        }
        if self.t_num <= 0 || self.t_den <= 0 {
            return fail("control period must be positive".to_string());
        }
        if self.range <= self.margin {
            return fail(format!(
                "range = {} mm must exceed margin = {} mm",
                self.range, self.margin
            ));
        }
        if self.vp_max < Rat::zero() {
            return fail("vp_max must be nonnegative".to_string());
        }
        if self.v_target < Rat::zero() {
            return fail("v_target must be nonnegative".to_string());
        }
        // Quantized braking progress: each braking tick must shed at least
        // 1 mm/s, otherwise the fixed-point loop cannot make progress.
        let b = self.effective_deceleration();
        if (b as i128) * (self.t_num as i128) < self.t_den as i128 {
            return fail(format!(
                "effective braking {} mm/s^2 sheds less than 1 mm/s per period",
                b
            ));
        }
        Ok(())
    }

    /// Guaranteed worst-case braking magnitude `|a_min| - delta` in mm/s².
    ///
    /// The actuator bound is one sided, so a braking request at `a_min` is
    /// only guaranteed to achieve `a_min + delta`.
    pub fn effective_deceleration(&self) -> i64 {
        -self.a_min - self.delta
    }

    /// Largest integer speed not exceeding the cruise set speed.
    pub fn v_target_floor(&self) -> i64 {
        rat_floor_i64(&self.v_target)
    }

    /// Canonical textual encoding of the parameters, used for digests and
    /// certificate headers. Stable across platforms.
    pub fn canonical_lines(&self) -> Vec<String> {
        fn rat_str(r: &Rat) -> String {
            if r.is_integer() {
                format!("{}", r.numer())
            } else {
                format!("{}/{}", r.numer(), r.denom())
            }
        }
        vec![
            format!("a_min = {} mm/s^2", self.a_min),
            format!("a_max = {} mm/s^2", self.a_max),
            format!("delta = {} mm/s^2", self.delta),
            format!("epsilon = {} mm", self.epsilon),
            format!("range = {} mm", self.range),
            format!("vp_max = {} mm/s", rat_str(&self.vp_max)),
            format!("T = {}/{} s", self.t_num, self.t_den),
            format!("margin = {} mm", self.margin),
            format!("v_target = {} mm/s", rat_str(&self.v_target)),
        ]
    }
}

fn rat_floor_i64(r: &Rat) -> i64 {
    let f = r.floor();
    i64::try_from(f.to_integer()).expect("speed fits i64")
}

/// Parse a scenario configuration file. One `key = value` pair per line,
/// `#` comments, explicit unit suffix on every numeric value.
pub fn parse_scenario_config(text: &str) -> Result<ScenarioParams, ScenarioError> {
    let mut a_min = None;
    let mut a_max = None;
    let mut delta = None;
    let mut epsilon = None;
    let mut range = None;
    let mut vp_max = None;
    let mut t = None;
    let mut margin = None;
    let mut v_target = None;
    let mut allow_pass = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with('[') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ScenarioError::Config {
            line: line_no,
            message: "expected key = value".to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let q = |dim: Dimension| -> Result<Rat, ScenarioError> {
            parse_quantity(value, dim).map_err(|e| ScenarioError::Config {
                line: line_no,
                message: e.to_string(),
            })
        };
        match key {
            "a_min" => a_min = Some(q(Dimension::Acceleration)?),
            "a_max" => a_max = Some(q(Dimension::Acceleration)?),
            "delta" => delta = Some(q(Dimension::Acceleration)?),
            "epsilon" => epsilon = Some(q(Dimension::Distance)?),
            "range" => range = Some(q(Dimension::Distance)?),
            "vp_max" => vp_max = Some(q(Dimension::Speed)?),
            "T" => t = Some(q(Dimension::Time)?),
            "margin" => margin = Some(q(Dimension::Distance)?),
            "v_target" => v_target = Some(q(Dimension::Speed)?),
            "allow_pass" => {
                allow_pass = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(ScenarioError::Config {
                            line: line_no,
                            message: format!("allow_pass must be true or false, got {other:?}"),
                        })
                    }
                }
            }
            other => {
                return Err(ScenarioError::Config {
                    line: line_no,
                    message: format!("unknown parameter {other:?}"),
                })
            }
        }
    }

    let need = |v: Option<Rat>, name: &'static str| v.ok_or(ScenarioError::MissingParam(name));
    let t = need(t, "T")?;
    // The control period must land on whole milliseconds so plant arithmetic
    // stays in small integers.
    let t_ms = rat_to_i64_exact(t * Rat::new(1000, 1), "milliseconds")?;
    if t_ms <= 0 {
        return Err(ScenarioError::Param("control period must be positive".to_string()));
    }
    let g = num_integer::gcd(t_ms, 1000);
    let (t_num, t_den) = (t_ms / g, 1000 / g);

    ScenarioParams::new(
        rat_to_i64_exact(need(a_min, "a_min")?, "mm/s^2")?,
        rat_to_i64_exact(need(a_max, "a_max")?, "mm/s^2")?,
        rat_to_i64_exact(need(delta, "delta")?, "mm/s^2")?,
        rat_to_i64_exact(need(epsilon, "epsilon")?, "mm")?,
        rat_to_i64_exact(need(range, "range")?, "mm")?,
        need(vp_max, "vp_max")?,
        t_num,
        t_den,
        rat_to_i64_exact(need(margin, "margin")?, "mm")?,
        need(v_target, "v_target")?,
        allow_pass,
    )
}

/// Closed-loop state. Positions in mm, speed in mm/s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VehicleState {
    pub x: i64,
    pub v: i64,
    pub xp: i64,
    pub in_path: bool,
}

impl VehicleState {
    pub fn new(x: i64, v: i64, xp: i64, in_path: bool) -> VehicleState {
        VehicleState { x, v, xp, in_path }
    }

    /// Remaining gap to the pedestrian position.
    pub fn gap(&self) -> i64 {
        self.xp - self.x
    }
}

impl fmt::Display for VehicleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "x={}mm v={}mm/s xp={}mm in_path={}",
            self.x, self.v, self.xp, self.in_path
        )
    }
}

/// Estimated pedestrian position and lateral speed. `vp_hat` has no error
/// bound in the sensor contract and is carried but unused by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorReading {
    pub xp_hat: i64,
    pub vp_hat: i64,
}

impl SensorReading {
    /// Produce a reading from ground truth under a bounded position error.
    ///
    /// Enforces both sensor contract clauses: overestimation is at most
    /// `epsilon` (the caller's `sensor_err` is clamped-checked), and a
    /// pedestrian at or ahead of the vehicle is never estimated behind it.
    pub fn from_truth(
        state: &VehicleState,
        sensor_err: i64,
        p: &ScenarioParams,
    ) -> Result<SensorReading, StepError> {
        if sensor_err.abs() > p.epsilon {
            return Err(StepError::SensorOutOfBounds(sensor_err));
        }
        let mut xp_hat = state.xp + sensor_err;
        if state.xp >= state.x {
            xp_hat = xp_hat.max(state.x);
        }
        Ok(SensorReading { xp_hat, vp_hat: 0 })
    }
}

/// One tick of adversarial freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Disturbance {
    /// sensor position error in mm, within `[-epsilon, epsilon]`
    pub sensor_err: i64,
    /// actuator tracking error in mm/s², within `[-delta, delta]`
    pub act_err: i64,
    /// the pedestrian steps into the driving path this tick
    pub ped_enters: bool,
}

impl Disturbance {
    pub fn none() -> Disturbance {
        Disturbance { sensor_err: 0, act_err: 0, ped_enters: false }
    }

    pub fn check(&self, p: &ScenarioParams) -> Result<(), StepError> {
        if self.sensor_err.abs() > p.epsilon {
            return Err(StepError::SensorOutOfBounds(self.sensor_err));
        }
        if self.act_err.abs() > p.delta {
            return Err(StepError::ActuatorOutOfBounds(self.act_err));
        }
        Ok(())
    }
}

/// Which decision rule drives the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// Brake at `a_min` whenever guaranteed stopping is not certain,
    /// compensating the sensor tolerance. The verified baseline.
    Nominal,
    /// Faulty variant that trusts the raw position estimate without
    /// subtracting `epsilon`. Exists to be falsified.
    EpsilonIgnoring,
    /// Commits to passing in front of the pedestrian when stopping looks
    /// infeasible, assuming a symmetric actuator tolerance it does not
    /// actually have. Never certified; gated by `allow_pass`.
    PassAttempt,
}

fn ceil_div(n: i128, d: i128) -> i128 {
    debug_assert!(d > 0);
    if n > 0 {
        (n + d - 1) / d
    } else {
        n / d
    }
}

fn isqrt_floor(n: i128) -> i128 {
    if n <= 0 {
        return 0;
    }
    let mut x = n;
    let mut y = (x + 1) / 2;
    while y < x {
        x = y;
        y = (x + n / x) / 2;
    }
    x
}

fn isqrt_ceil(n: i128) -> i128 {
    let r = isqrt_floor(n);
    if r * r < n {
        r + 1
    } else {
        r
    }
}

/// Worst-case distance to standstill from speed `v`: one reaction period at
/// `a_max`, then sustained braking at the effective deceleration. Rounded up
/// to whole millimeters.
pub fn stopping_distance_mm(v: i64, p: &ScenarioParams) -> i64 {
    debug_assert!(v >= 0);
    let (tn, td) = (p.t_num as i128, p.t_den as i128);
    let b = p.effective_deceleration() as i128;
    let v = v as i128;
    let a_max = p.a_max as i128;
    let vr_num = (v * td + a_max * tn).max(0);
    let numer = 2 * v * tn * td * b + a_max * tn * tn * b + vr_num * vr_num;
    let denom = 2 * td * td * b;
    i64::try_from(ceil_div(numer, denom)).expect("stopping distance fits i64")
}

/// Speed at which the vehicle reaches a pedestrian `d` millimeters ahead,
/// zero when it can stop first. Conservative: rounded up.
pub fn impact_speed_mms(v: i64, d: i64, p: &ScenarioParams) -> i64 {
    debug_assert!(v >= 0 && d >= 0);
    if stopping_distance_mm(v, p) <= d {
        return 0;
    }
    let (tn, td) = (p.t_num as i128, p.t_den as i128);
    let b = p.effective_deceleration() as i128;
    let (v, d, a_max) = (v as i128, d as i128, p.a_max as i128);
    // Distance still available after the reaction period, over 2*td^2.
    let d_r_num = 2 * td * td * d - (2 * v * tn * td + a_max * tn * tn);
    if d_r_num <= 0 {
        // Impact happens during the reaction period while accelerating.
        let vsq = v * v + 2 * a_max * d;
        return i64::try_from(isqrt_ceil(vsq)).expect("impact speed fits i64");
    }
    let vr_num = (v * td + a_max * tn).max(0);
    let n = vr_num * vr_num - b * d_r_num;
    if n <= 0 {
        return 0;
    }
    i64::try_from(ceil_div(isqrt_ceil(n), td)).expect("impact speed fits i64")
}

/// Can the vehicle still guarantee standstill before the earliest pedestrian
/// position consistent with the reading, with the safety margin kept?
///
/// `xp_hat - epsilon` is a sound lower bound on the true position because
/// the sensor contract bounds only overestimation. Inclusive comparison:
/// exactly enough distance counts as safe. Monotone: once false, it stays
/// false as speed grows or distance shrinks.
pub fn safe_predicate(r: &SensorReading, v: i64, x: i64, p: &ScenarioParams) -> bool {
    let d_avail = (r.xp_hat - p.epsilon) - x - p.margin;
    stopping_distance_mm(v, p) <= d_avail
}

/// The decision rule: brake hard when not provably safe, otherwise track the
/// cruise set speed with unit feedback gain, clamped to the command range.
pub fn controller(r: &SensorReading, v: i64, x: i64, p: &ScenarioParams, mode: ControllerMode) -> i64 {
    let safe = match mode {
        ControllerMode::Nominal | ControllerMode::PassAttempt => safe_predicate(r, v, x, p),
        ControllerMode::EpsilonIgnoring => {
            let d_avail = r.xp_hat - x - p.margin;
            stopping_distance_mm(v, p) <= d_avail
        }
    };
    if safe {
        return cruise_accel(v, p);
    }
    if mode == ControllerMode::PassAttempt {
        // Commit to clearing the crossing point within one period. Unsound:
        // the actuator only guarantees an upper acceleration bound, so the
        // assumed progress may not materialize.
        let (tn, td) = (p.t_num as i128, p.t_den as i128);
        let clear = (r.xp_hat + p.epsilon - x) as i128;
        if (v as i128) * tn >= clear * td {
            return p.a_max;
        }
    }
    p.a_min
}

/// Cruise acceleration request: `clamp(v_target - v, a_min, a_max)` with a
/// fixed unit gain per second.
fn cruise_accel(v: i64, p: &ScenarioParams) -> i64 {
    let err = &p.v_target - Rat::new(v as i128, 1);
    let raw = rat_floor_i64(&err);
    raw.clamp(p.a_min, p.a_max)
}

/// Advance the plant one control period.
///
/// `v' = max(0, v + a*T)` rounded up, `x' = x + ((v + v')/2)*T` rounded up;
/// the pedestrian position is static and `in_path` latches once entered.
pub fn plant_step(
    s: &VehicleState,
    areq: i64,
    dist: &Disturbance,
    p: &ScenarioParams,
) -> Result<VehicleState, StepError> {
    if areq < p.a_min || areq > p.a_max {
        return Err(StepError::AccelOutOfRange(areq));
    }
    if dist.act_err.abs() > p.delta {
        return Err(StepError::ActuatorOutOfBounds(dist.act_err));
    }
    let (tn, td) = (p.t_num as i128, p.t_den as i128);
    let a = (areq + dist.act_err) as i128;
    let vq = (s.v as i128) * td + a * tn;
    let v_next = if vq <= 0 { 0 } else { ceil_div(vq, td) };
    let travel = ceil_div((s.v as i128 + v_next) * tn, 2 * td);
    Ok(VehicleState {
        x: s.x + i64::try_from(travel).expect("travel fits i64"),
        v: i64::try_from(v_next).expect("speed fits i64"),
        xp: s.xp,
        in_path: s.in_path || dist.ped_enters,
    })
}

/// Collision predicate: the vehicle is at or past the pedestrian position
/// while still moving and the pedestrian occupies the path.
pub fn collision(s: &VehicleState) -> bool {
    s.in_path && s.x >= s.xp && s.v > 0
}

/// One full closed-loop tick: sense, decide, actuate.
pub fn closed_loop_step(
    s: &VehicleState,
    dist: &Disturbance,
    p: &ScenarioParams,
    mode: ControllerMode,
) -> Result<VehicleState, StepError> {
    dist.check(p)?;
    let reading = SensorReading::from_truth(s, dist.sensor_err, p)?;
    let areq = controller(&reading, s.v, s.x, p, mode);
    plant_step(s, areq, dist, p)
}

/// Fixture parameter set used across tests and documentation examples.
pub fn desk_params() -> ScenarioParams {
    ScenarioParams::new(
        -6000,
        2000,
        500,
        500,
        100_000,
        Rat::new(25_000, 9), // 10 km/h
        1,
        10,
        500,
        Rat::new(175_000, 9), // 70 km/h
        false,
    )
    .expect("fixture parameters are valid")
}
