//! Proof certificates: serialization and independent re-checking.
//!
//! A certificate records the scenario parameters, the grid, and the
//! certified per-cell speed envelope. The checker re-derives every
//! obligation from the plant and controller primitives alone — it shares no
//! code path with the verifier that produced the certificate, so a bug in
//! the producer cannot silently validate its own output.
//!
//! The file format is line-oriented UTF-8, fixed field order, LF line
//! separators, payload as fixed-width decimal integers. Encoding the same
//! certificate twice yields identical bytes on every platform.

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scenario::{
    controller, plant_step, stopping_distance_mm, ControllerMode, Disturbance, ScenarioParams,
    SensorReading, VehicleState,
};
use crate::units::Rat;
use crate::verifier::Grid;

pub const CERT_VERSION: u32 = 1;
const HEADER: &str = "safecase certificate v";
const PAYLOAD_WIDTH: usize = 8;

/// A machine-checkable stopping-safety certificate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub version: u32,
    pub producer: String,
    pub params: ScenarioParams,
    pub grid: Grid,
    /// per distance cell, maximum certified-safe speed in mm/s
    pub payload: Vec<i64>,
    /// hex SHA-256 over the canonical params+grid encoding
    pub digest: String,
}

/// SHA-256 over the canonical parameter and grid lines.
pub fn params_digest(p: &ScenarioParams, g: &Grid) -> String {
    let mut hasher = Sha256::new();
    for line in p.canonical_lines() {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    for line in g.canonical_lines() {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Serialize to the stable text format.
pub fn encode(c: &Certificate) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!("{HEADER}{}\n", c.version));
    out.push_str(&format!("producer: {}\n", c.producer));
    out.push_str(&format!("digest: sha256:{}\n", c.digest));
    for line in c.params.canonical_lines() {
        out.push_str(&format!("param {line}\n"));
    }
    for line in c.grid.canonical_lines() {
        out.push_str(&format!("grid {line}\n"));
    }
    out.push_str(&format!("payload {}\n", c.payload.len()));
    for v in &c.payload {
        out.push_str(&format!("{v:0PAYLOAD_WIDTH$}\n"));
    }
    out.into_bytes()
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed certificate at byte {offset}: {message}")]
pub struct DecodeError {
    pub offset: usize,
    pub message: String,
}

struct LineReader<'a> {
    rest: &'a [u8],
    offset: usize,
}

impl<'a> LineReader<'a> {
    fn new(bytes: &'a [u8]) -> LineReader<'a> {
        LineReader { rest: bytes, offset: 0 }
    }

    /// Next line (without terminator) and its starting byte offset.
    fn next_line(&mut self) -> Option<(usize, &'a [u8])> {
        if self.rest.is_empty() {
            return None;
        }
        let start = self.offset;
        match self.rest.iter().position(|&b| b == b'\n') {
            Some(pos) => {
                let line = &self.rest[..pos];
                self.rest = &self.rest[pos + 1..];
                self.offset += pos + 1;
                Some((start, line))
            }
            None => {
                let line = self.rest;
                self.offset += line.len();
                self.rest = &[];
                Some((start, line))
            }
        }
    }
}

fn utf8_line<'a>(offset: usize, line: &'a [u8]) -> Result<&'a str, DecodeError> {
    std::str::from_utf8(line).map_err(|_| DecodeError {
        offset,
        message: "line is not valid UTF-8".to_string(),
    })
}

fn parse_cert_rat(s: &str, offset: usize) -> Result<Rat, DecodeError> {
    let err = || DecodeError { offset, message: format!("bad rational {s:?}") };
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.parse().map_err(|_| err())?;
        let d: i128 = d.parse().map_err(|_| err())?;
        if d == 0 {
            return Err(err());
        }
        Ok(Rat::new(n, d))
    } else {
        let n: i128 = s.parse().map_err(|_| err())?;
        Ok(Rat::new(n, 1))
    }
}

fn parse_i64_field(s: &str, offset: usize) -> Result<i64, DecodeError> {
    s.parse().map_err(|_| DecodeError { offset, message: format!("bad integer {s:?}") })
}

/// Expect `prefix key = value unit` and return the value token.
fn field<'a>(
    offset: usize,
    line: &'a str,
    prefix: &str,
    key: &str,
) -> Result<&'a str, DecodeError> {
    let err = |m: String| DecodeError { offset, message: m };
    let rest = line
        .strip_prefix(prefix)
        .ok_or_else(|| err(format!("expected {prefix:?} line, got {line:?}")))?;
    let (k, v) = rest
        .split_once('=')
        .ok_or_else(|| err(format!("expected {key} = value, got {line:?}")))?;
    if k.trim() != key {
        return Err(err(format!("expected field {key:?}, got {:?}", k.trim())));
    }
    // Drop the trailing unit token; the canonical format fixes the units.
    let v = v.trim();
    Ok(v.split_whitespace().next().unwrap_or(""))
}

/// Parse certificate bytes. Reports the first malformed line with its byte
/// offset; never panics on arbitrary input.
pub fn decode(bytes: &[u8]) -> Result<Certificate, DecodeError> {
    let mut reader = LineReader::new(bytes);
    let mut line = |what: &str| -> Result<(usize, String), DecodeError> {
        let (off, raw) = reader.next_line().ok_or(DecodeError {
            offset: bytes.len(),
            message: format!("unexpected end of input, expected {what}"),
        })?;
        Ok((off, utf8_line(off, raw)?.to_string()))
    };

    let (off, header) = line("header")?;
    let version: u32 = header
        .strip_prefix(HEADER)
        .and_then(|v| v.parse().ok())
        .ok_or(DecodeError { offset: off, message: format!("bad header {header:?}") })?;

    let (off, producer_line) = line("producer")?;
    let producer = producer_line
        .strip_prefix("producer: ")
        .ok_or(DecodeError { offset: off, message: "expected producer line".to_string() })?
        .to_string();

    let (off, digest_line) = line("digest")?;
    let digest = digest_line
        .strip_prefix("digest: sha256:")
        .ok_or(DecodeError { offset: off, message: "expected digest: sha256:<hex>".to_string() })?
        .to_string();

    let (off, l) = line("param a_min")?;
    let a_min = parse_i64_field(field(off, &l, "param ", "a_min")?, off)?;
    let (off, l) = line("param a_max")?;
    let a_max = parse_i64_field(field(off, &l, "param ", "a_max")?, off)?;
    let (off, l) = line("param delta")?;
    let delta = parse_i64_field(field(off, &l, "param ", "delta")?, off)?;
    let (off, l) = line("param epsilon")?;
    let epsilon = parse_i64_field(field(off, &l, "param ", "epsilon")?, off)?;
    let (off, l) = line("param range")?;
    let range = parse_i64_field(field(off, &l, "param ", "range")?, off)?;
    let (off, l) = line("param vp_max")?;
    let vp_max = parse_cert_rat(field(off, &l, "param ", "vp_max")?, off)?;
    let (off, l) = line("param T")?;
    let t = parse_cert_rat(field(off, &l, "param ", "T")?, off)?;
    let (off, l) = line("param margin")?;
    let margin = parse_i64_field(field(off, &l, "param ", "margin")?, off)?;
    let (off, l) = line("param v_target")?;
    let v_target = parse_cert_rat(field(off, &l, "param ", "v_target")?, off)?;

    let t_num = i64::try_from(*t.numer())
        .map_err(|_| DecodeError { offset: off, message: "control period overflow".to_string() })?;
    let t_den = i64::try_from(*t.denom())
        .map_err(|_| DecodeError { offset: off, message: "control period overflow".to_string() })?;

    let params = ScenarioParams {
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
    };

    let (off, l) = line("grid d_max")?;
    let d_max = parse_i64_field(field(off, &l, "grid ", "d_max")?, off)?;
    let (off, l) = line("grid d_step")?;
    let d_step = parse_i64_field(field(off, &l, "grid ", "d_step")?, off)?;
    let (off, l) = line("grid v_max")?;
    let v_max = parse_i64_field(field(off, &l, "grid ", "v_max")?, off)?;
    let (off, l) = line("grid v_step")?;
    let v_step = parse_i64_field(field(off, &l, "grid ", "v_step")?, off)?;
    let grid = Grid { d_max, d_step, v_max, v_step };

    let (off, l) = line("payload count")?;
    let count: usize = l
        .strip_prefix("payload ")
        .and_then(|v| v.parse().ok())
        .ok_or(DecodeError { offset: off, message: "expected payload <count>".to_string() })?;
    if count > 100_000_000 {
        return Err(DecodeError { offset: off, message: "payload count out of range".to_string() });
    }

    let mut payload = Vec::with_capacity(count);
    for _ in 0..count {
        let (off, l) = line("payload entry")?;
        if l.len() != PAYLOAD_WIDTH || !l.bytes().all(|b| b.is_ascii_digit()) {
            return Err(DecodeError {
                offset: off,
                message: format!("payload entry must be {PAYLOAD_WIDTH} decimal digits"),
            });
        }
        payload.push(parse_i64_field(&l, off)?);
    }

    Ok(Certificate { version, producer, params, grid, payload, digest })
}

/// Reasons a certificate fails the independent check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvalidReason {
    VersionMismatch { found: u32 },
    DigestMismatch,
    ParamsMismatch,
    ParamsInvalid(String),
    GridInvalid(String),
    PayloadLength { expected: usize, found: usize },
    ClosureFail { cell: Option<usize>, detail: String },
    Collision { cell: usize },
    InitialFail(String),
}

impl InvalidReason {
    pub fn code(&self) -> &'static str {
        match self {
            InvalidReason::VersionMismatch { .. } => "VERSION_MISMATCH",
            InvalidReason::DigestMismatch => "DIGEST_MISMATCH",
            InvalidReason::ParamsMismatch => "PARAMS_MISMATCH",
            InvalidReason::ParamsInvalid(_) => "PARAMS_INVALID",
            InvalidReason::GridInvalid(_) => "GRID_INVALID",
            InvalidReason::PayloadLength { .. } => "PAYLOAD_LENGTH",
            InvalidReason::ClosureFail { .. } => "CLOSURE_FAIL",
            InvalidReason::Collision { .. } => "COLLISION",
            InvalidReason::InitialFail(_) => "INITIAL_FAIL",
        }
    }
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidReason::VersionMismatch { found } => {
                write!(f, "{}: format version {found}", self.code())
            }
            InvalidReason::DigestMismatch => write!(f, "{}", self.code()),
            InvalidReason::ParamsMismatch => write!(f, "{}", self.code()),
            InvalidReason::ParamsInvalid(d) | InvalidReason::GridInvalid(d) => {
                write!(f, "{}: {d}", self.code())
            }
            InvalidReason::PayloadLength { expected, found } => {
                write!(f, "{}: expected {expected} cells, found {found}", self.code())
            }
            InvalidReason::ClosureFail { cell: Some(c), detail } => {
                write!(f, "{} at cell {c}: {detail}", self.code())
            }
            InvalidReason::ClosureFail { cell: None, detail } => {
                write!(f, "{}: {detail}", self.code())
            }
            InvalidReason::Collision { cell } => write!(f, "{} at cell {cell}", self.code()),
            InvalidReason::InitialFail(d) => write!(f, "{}: {d}", self.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckVerdict {
    Valid,
    Invalid(InvalidReason),
}

impl CheckVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, CheckVerdict::Valid)
    }
}

/// Worst-case braking distance table derived one plant step at a time.
///
/// Deliberately rebuilt here from the plant primitive instead of reusing
/// the verifier's table: the checker trusts only the scenario operations.
fn braking_distances(p: &ScenarioParams, v_max: i64) -> Vec<i64> {
    let mut table = vec![0i64; (v_max + 1) as usize];
    let dist = Disturbance { sensor_err: 0, act_err: p.delta, ped_enters: false };
    let far = i64::MAX / 4;
    for v in 1..=v_max {
        let state = VehicleState::new(0, v, far, false);
        let next = plant_step(&state, p.a_min, &dist, p).expect("braking command in range");
        debug_assert!(next.v < v, "braking sheds speed every tick");
        table[v as usize] = table[next.v as usize] + next.x;
    }
    table
}

/// Independently re-verify a certificate against supplied parameters.
///
/// Checks, in order: format version; digest over the canonical params+grid
/// encoding; agreement with the supplied parameters; parameter and grid
/// sanity; payload length and shape; per-cell consistency of the payload
/// with the braking cone (a cell admitting a speed that cannot stop inside
/// its own lower distance bound would allow a crossing); inductive closure
/// of the cone under both controller branches at all disturbance corners;
/// and inclusion of the initial states. Never accepts on error.
pub fn check_certificate(c: &Certificate, p: &ScenarioParams) -> CheckVerdict {
    use CheckVerdict::Invalid;

    if c.version != CERT_VERSION {
        return Invalid(InvalidReason::VersionMismatch { found: c.version });
    }
    if c.digest != params_digest(&c.params, &c.grid) {
        return Invalid(InvalidReason::DigestMismatch);
    }
    if c.params != *p {
        return Invalid(InvalidReason::ParamsMismatch);
    }
    if p.allow_pass {
        return Invalid(InvalidReason::ParamsInvalid(
            "pass maneuver is excluded from certificates".to_string(),
        ));
    }
    if let Err(e) = ScenarioParams::new(
        p.a_min, p.a_max, p.delta, p.epsilon, p.range, p.vp_max.clone(), p.t_num, p.t_den,
        p.margin, p.v_target.clone(), p.allow_pass,
    ) {
        return Invalid(InvalidReason::ParamsInvalid(e.to_string()));
    }
    if let Err(e) = c.grid.validate() {
        return Invalid(InvalidReason::GridInvalid(e.to_string()));
    }
    if c.grid.d_max < p.range {
        return Invalid(InvalidReason::GridInvalid(format!(
            "grid covers {} mm but the sensor range is {} mm",
            c.grid.d_max, p.range
        )));
    }

    let cells = c.grid.cell_count();
    if c.payload.len() != cells {
        return Invalid(InvalidReason::PayloadLength { expected: cells, found: c.payload.len() });
    }

    let braking = braking_distances(p, c.grid.v_max);

    // Payload shape and cone consistency, cheapest first per cell.
    for (j, &speed) in c.payload.iter().enumerate() {
        if speed < 0 || speed > c.grid.v_max || speed % c.grid.v_step != 0 {
            return Invalid(InvalidReason::ClosureFail {
                cell: Some(j),
                detail: format!("payload speed {speed} outside the grid lattice"),
            });
        }
        if j > 0 && c.payload[j - 1] > speed {
            return Invalid(InvalidReason::ClosureFail {
                cell: Some(j),
                detail: "envelope must be nondecreasing in distance".to_string(),
            });
        }
        if speed > 0 && braking[speed as usize] + 1 > c.grid.cell_low(j) {
            // Braking from the cell's lower distance bound sweeps to or past
            // the pedestrian position while still moving.
            return Invalid(InvalidReason::Collision { cell: j });
        }
    }

    // Inductive closure of the braking cone, per integer speed and corner.
    let far = i64::MAX / 4;
    for v in 0..=c.grid.v_max {
        for act_err in [-p.delta, p.delta] {
            let dist = Disturbance { sensor_err: 0, act_err, ped_enters: false };

            let state = VehicleState::new(0, v, far, false);
            let next = plant_step(&state, p.a_min, &dist, p).expect("braking command in range");
            if next.v > c.grid.v_max {
                return Invalid(InvalidReason::ClosureFail {
                    cell: None,
                    detail: format!("braking from v={v} leaves the speed lattice"),
                });
            }
            if braking[next.v as usize] + next.x > braking[v as usize] {
                return Invalid(InvalidReason::ClosureFail {
                    cell: None,
                    detail: format!("braking step from v={v}, act_err={act_err} not closed"),
                });
            }

            for err in [0, p.epsilon] {
                let slack = p.margin + p.epsilon - err;
                let gap_min = stopping_distance_mm(v, p).saturating_add(slack);
                if gap_min > p.range {
                    continue;
                }
                let boundary = VehicleState::new(0, v, gap_min, false);
                let reading =
                    SensorReading::from_truth(&boundary, err, p).expect("error within bounds");
                let areq = controller(&reading, v, 0, p, ControllerMode::Nominal);
                let next = plant_step(&boundary, areq, &dist, p).expect("command in range");
                if next.v > c.grid.v_max {
                    return Invalid(InvalidReason::ClosureFail {
                        cell: None,
                        detail: format!("cruise from v={v} exceeds the grid speed cap"),
                    });
                }
                if next.v > 0 && braking[next.v as usize] + next.x + 1 > gap_min {
                    return Invalid(InvalidReason::ClosureFail {
                        cell: None,
                        detail: format!(
                            "cruise step from v={v}, err={err}, act_err={act_err} not closed"
                        ),
                    });
                }
            }
        }
    }

    // Initial states: detection at sensor range, any speed up to the target.
    let v_init = p.v_target_floor();
    if v_init > c.grid.v_max {
        return Invalid(InvalidReason::InitialFail(format!(
            "cruise set speed {v_init} mm/s above grid speed cap"
        )));
    }
    if v_init > 0 && braking[v_init as usize] + 1 > p.range {
        return Invalid(InvalidReason::InitialFail(
            "initial speed cannot stop within the detection range".to_string(),
        ));
    }
    if c.payload[c.grid.cell_index(p.range)] < v_init {
        return Invalid(InvalidReason::InitialFail(format!(
            "envelope at the detection range admits less than {v_init} mm/s"
        )));
    }

    CheckVerdict::Valid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::desk_params;
    use crate::verifier::{verify_closed_loop, VerifyOutcome};

    fn fixture_cert() -> Certificate {
        let p = desk_params();
        let g = Grid::default_for(&p, 500, 250).unwrap();
        match verify_closed_loop(&p, &g, ControllerMode::Nominal).unwrap() {
            VerifyOutcome::Certified(c) => c,
            other => panic!("fixture must certify, got {other:?}"),
        }
    }

    #[test]
    fn pipeline_certificate_checks_valid() {
        let cert = fixture_cert();
        assert_eq!(check_certificate(&cert, &desk_params()), CheckVerdict::Valid);
    }

    #[test]
    fn encode_decode_round_trip() {
        let cert = fixture_cert();
        let bytes = encode(&cert);
        let back = decode(&bytes).unwrap();
        assert_eq!(cert, back);
        // Determinism: encoding twice yields identical bytes.
        assert_eq!(bytes, encode(&back));
    }

    #[test]
    fn decode_rejects_empty_input_at_offset_zero() {
        let err = decode(b"").unwrap_err();
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn decode_reports_offset_of_bad_line() {
        let cert = fixture_cert();
        let mut text = String::from_utf8(encode(&cert)).unwrap();
        // Corrupt the producer line.
        text = text.replace("producer: ", "producro: ");
        let err = decode(text.as_bytes()).unwrap_err();
        let expected_offset = text.find("producro").unwrap();
        assert_eq!(err.offset, expected_offset);
    }

    #[test]
    fn tampered_cell_is_rejected() {
        let p = desk_params();
        let mut cert = fixture_cert();
        // Raise a mid-envelope cell by one speed step.
        let j = cert.payload.iter().position(|&v| v > 0 && v < cert.grid.v_max).unwrap();
        cert.payload[j] += cert.grid.v_step;
        match check_certificate(&cert, &p) {
            CheckVerdict::Invalid(reason) => {
                assert!(matches!(reason.code(), "COLLISION" | "CLOSURE_FAIL"), "{reason}");
            }
            CheckVerdict::Valid => panic!("tampered certificate accepted"),
        }
    }

    #[test]
    fn params_mismatch_is_rejected() {
        let cert = fixture_cert();
        let mut other = desk_params();
        other.epsilon = 250;
        assert_eq!(
            check_certificate(&cert, &other),
            CheckVerdict::Invalid(InvalidReason::ParamsMismatch)
        );
    }

    #[test]
    fn digest_tamper_is_rejected() {
        let p = desk_params();
        let mut cert = fixture_cert();
        cert.params.margin += 1; // header params no longer match the digest
        let verdict = check_certificate(&cert, &p);
        assert_eq!(verdict, CheckVerdict::Invalid(InvalidReason::DigestMismatch));
    }

    #[test]
    fn version_mismatch_is_reported_not_accepted() {
        let p = desk_params();
        let mut cert = fixture_cert();
        cert.version = 99;
        match check_certificate(&cert, &p) {
            CheckVerdict::Invalid(InvalidReason::VersionMismatch { found: 99 }) => {}
            other => panic!("unexpected verdict {other:?}"),
        }
    }
}
