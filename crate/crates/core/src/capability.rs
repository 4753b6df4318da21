//! Impact-speed capability assessment.
//!
//! Given a declared incident model (a weighted grid of detection distances
//! and an entry-timing assumption), computes the exact probability of each
//! impact-speed band per incident for a set of initial speeds. The result
//! feeds the risk-norm admissibility check.
//!
//! Exhaustive weighted enumeration with rational weights, not Monte Carlo:
//! the tables are exact and deterministic. The incident model is input
//! data; nothing here estimates it from fleet observations.

use std::collections::BTreeMap;

use num_traits::Zero;
use thiserror::Error;

use crate::qrn::{CapabilityTable, QrnError, RiskNormTable, SpeedBand};
use crate::scenario::{impact_speed_mms, ScenarioParams};
use crate::units::{parse_quantity, parse_rat, rat_to_i64_exact, Dimension, Rat};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CapabilityError {
    #[error("incident weights must be nonnegative and sum to exactly 1 (got {0})")]
    BadWeights(String),
    #[error("detection distance {0} mm is negative")]
    NegativeDistance(i64),
    #[error("initial speed must be nonnegative")]
    NegativeSpeed,
    #[error("impact speed {0} mm/s not covered by the band table")]
    BandCoverage(i64),
    #[error("lateral offset {0} mm is negative")]
    NegativeOffset(i64),
    #[error("entry-timing offsets need a positive pedestrian speed bound")]
    ZeroPedestrianSpeed,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Qrn(#[from] QrnError),
}

/// When does the pedestrian enter the driving path?
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryTiming {
    /// Adversarial: in the path from the start of every incident.
    WorstCase,
    /// Weighted lateral offsets; the pedestrian walks in at the bound
    /// `vp_max` and an impact only counts when it can reach the path before
    /// the vehicle reaches the crossing point (tick-resolution comparison,
    /// erring toward counting the impact).
    OffsetGrid(Vec<(i64, Rat)>),
}

/// Declared distribution of incidents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidentModel {
    /// (detection distance mm, weight); weights sum to exactly 1
    pub detections: Vec<(i64, Rat)>,
    pub entry: EntryTiming,
}

impl IncidentModel {
    pub fn new(detections: Vec<(i64, Rat)>, entry: EntryTiming) -> Result<IncidentModel, CapabilityError> {
        let mut sum = Rat::zero();
        for (d, w) in &detections {
            if *d < 0 {
                return Err(CapabilityError::NegativeDistance(*d));
            }
            if *w < Rat::zero() {
                return Err(CapabilityError::BadWeights(format!("{w}")));
            }
            sum += w;
        }
        if sum != Rat::new(1, 1) {
            return Err(CapabilityError::BadWeights(format!("{sum}")));
        }
        if let EntryTiming::OffsetGrid(offsets) = &entry {
            let mut osum = Rat::zero();
            for (o, w) in offsets {
                if *o < 0 {
                    return Err(CapabilityError::NegativeOffset(*o));
                }
                if *w < Rat::zero() {
                    return Err(CapabilityError::BadWeights(format!("{w}")));
                }
                osum += w;
            }
            if osum != Rat::new(1, 1) {
                return Err(CapabilityError::BadWeights(format!("{osum}")));
            }
        }
        Ok(IncidentModel { detections, entry })
    }

    /// `n` equally weighted detection distances `lo, lo+step, ...` with
    /// `step = (hi - lo) / n`; the step must land on whole millimeters.
    pub fn uniform_grid(n: usize, lo: i64, hi: i64) -> Result<IncidentModel, CapabilityError> {
        if n == 0 || hi <= lo || (hi - lo) % n as i64 != 0 {
            return Err(CapabilityError::BadWeights(format!(
                "cannot place {n} uniform points on [{lo}, {hi}] mm"
            )));
        }
        let step = (hi - lo) / n as i64;
        let w = Rat::new(1, n as i128);
        let detections = (0..n).map(|i| (lo + i as i64 * step, w.clone())).collect();
        IncidentModel::new(detections, EntryTiming::WorstCase)
    }
}

/// Initial speed in km/h converted to mm/s, rounded up (worse severity).
pub fn initial_speed_mms(v0_kmh: &Rat) -> Result<i64, CapabilityError> {
    if *v0_kmh < Rat::zero() {
        return Err(CapabilityError::NegativeSpeed);
    }
    let mms = v0_kmh * Rat::new(2500, 9);
    Ok(i64::try_from(mms.ceil().to_integer()).expect("speed fits i64"))
}

/// Does the pedestrian reach the path in time to be struck? Tick-resolution
/// upper bound on the vehicle's time to reach the crossing point.
fn entry_reaches_in_time(offset: i64, d: i64, v0: i64, p: &ScenarioParams) -> Result<bool, CapabilityError> {
    if offset == 0 {
        return Ok(true);
    }
    if p.vp_max.is_zero() {
        return Err(CapabilityError::ZeroPedestrianSpeed);
    }
    // Worst-case motion profile: one reaction tick at a_max, then braking.
    // Count ticks until cumulative travel reaches d.
    let b = p.effective_deceleration();
    let (tn, td) = (p.t_num as i128, p.t_den as i128);
    let mut v = v0 as i128;
    let mut x: i128 = 0;
    let mut ticks: i128 = 0;
    let mut first = true;
    while x < d as i128 {
        let a = if first { p.a_max as i128 } else { -(b as i128) };
        first = false;
        let vq = v * td + a * tn;
        let v_next = if vq <= 0 { 0 } else { (vq + td - 1) / td };
        x += ((v + v_next) * tn + 2 * td - 1) / (2 * td);
        v = v_next;
        ticks += 1;
        if v == 0 && x < d as i128 {
            return Ok(false); // vehicle stops short; no crossing at all
        }
    }
    // offset / vp_max <= ticks * T, compared exactly.
    let lhs = Rat::new(offset as i128, 1) / &p.vp_max;
    let rhs = Rat::new(ticks * tn, td);
    Ok(lhs <= rhs)
}

/// Probability of each impact-speed band per incident for initial speed
/// `v0_kmh`; mass not assigned to any band is the no-impact probability.
pub fn impact_distribution(
    p: &ScenarioParams,
    v0_kmh: &Rat,
    m: &IncidentModel,
    bands: &RiskNormTable,
) -> Result<BTreeMap<SpeedBand, Rat>, CapabilityError> {
    let v0 = initial_speed_mms(v0_kmh)?;
    let mut out: BTreeMap<SpeedBand, Rat> = BTreeMap::new();
    let offsets: Vec<(i64, Rat)> = match &m.entry {
        EntryTiming::WorstCase => vec![(0, Rat::new(1, 1))],
        EntryTiming::OffsetGrid(list) => list.clone(),
    };
    for (d, w) in &m.detections {
        let s = impact_speed_mms(v0, *d, p);
        if s == 0 {
            continue;
        }
        let band_idx = bands
            .band_of_mms(s)
            .ok_or(CapabilityError::BandCoverage(s))?;
        let band = bands.bands()[band_idx].0.clone();
        for (offset, ow) in &offsets {
            if entry_reaches_in_time(*offset, *d, v0, p)? {
                *out.entry(band.clone()).or_insert_with(Rat::zero) += w * ow;
            }
        }
    }
    Ok(out)
}

/// Capability table over a list of initial speeds, suitable as input to the
/// admissibility check.
pub fn capability_table(
    p: &ScenarioParams,
    speeds_kmh: &[Rat],
    m: &IncidentModel,
    bands: &RiskNormTable,
) -> Result<CapabilityTable, CapabilityError> {
    let mut table = CapabilityTable::default();
    for v0 in speeds_kmh {
        let dist = impact_distribution(p, v0, m, bands)?;
        if dist.is_empty() {
            // Keep the speed present with an explicit zero mass in the
            // lowest band so admissibility still reports on it.
            table.insert(v0.clone(), bands.bands()[0].0.clone(), Rat::zero())?;
            continue;
        }
        for (band, prob) in dist {
            table.insert(v0.clone(), band, prob)?;
        }
    }
    Ok(table)
}

/// Load an incident model. Rows: `DISTANCE = WEIGHT`, e.g. `12.5 m = 1/200`.
pub fn load_incident_model(text: &str) -> Result<IncidentModel, CapabilityError> {
    let mut detections = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with('[') {
            continue;
        }
        let (d_text, w_text) = line.split_once('=').ok_or(CapabilityError::Parse {
            line: line_no,
            message: "row must look like DISTANCE = WEIGHT".to_string(),
        })?;
        let d = parse_quantity(d_text.trim(), Dimension::Distance)
            .and_then(|r| rat_to_i64_exact(r, "mm"))
            .map_err(|e| CapabilityError::Parse { line: line_no, message: e.to_string() })?;
        let w = parse_rat(w_text)
            .map_err(|e| CapabilityError::Parse { line: line_no, message: e.to_string() })?;
        detections.push((d, w));
    }
    IncidentModel::new(detections, EntryTiming::WorstCase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrn::load_risk_norms;
    use crate::scenario::{desk_params, stopping_distance_mm};

    fn norms() -> RiskNormTable {
        load_risk_norms(
            "0..10 = 100000 h\n10..20 = 1000000 h\n20..30 = 10000000 h\n\
             30..40 = 100000000 h\n40.. = 1000000000 h\n",
        )
        .unwrap()
    }

    #[test]
    fn far_detections_never_impact() {
        let p = desk_params();
        let v0 = Rat::new(50, 1);
        let v0_mms = initial_speed_mms(&v0).unwrap();
        let d = stopping_distance_mm(v0_mms, &p);
        let m = IncidentModel::new(
            vec![(d, Rat::new(1, 2)), (d + 10_000, Rat::new(1, 2))],
            EntryTiming::WorstCase,
        )
        .unwrap();
        let dist = impact_distribution(&p, &v0, &m, &norms()).unwrap();
        assert!(dist.is_empty());
    }

    #[test]
    fn point_mass_at_zero_distance_hits_at_initial_speed() {
        let p = desk_params();
        let m = IncidentModel::new(vec![(0, Rat::new(1, 1))], EntryTiming::WorstCase).unwrap();
        let v0 = Rat::new(60, 1); // km/h, lands in the 40.. band at zero distance?
        let dist = impact_distribution(&p, &v0, &m, &norms()).unwrap();
        assert_eq!(dist.len(), 1);
        let (band, prob) = dist.iter().next().unwrap();
        assert_eq!(prob, &Rat::new(1, 1));
        // At d = 0 the impact happens immediately at (just above) v0, which
        // lies in the unbounded top band.
        assert_eq!(band.lower_kmh, Rat::new(40, 1));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let bad = IncidentModel::new(vec![(0, Rat::new(1, 2))], EntryTiming::WorstCase);
        assert!(matches!(bad, Err(CapabilityError::BadWeights(_))));
    }

    #[test]
    fn uniform_grid_covers_range() {
        let m = IncidentModel::uniform_grid(200, 0, 100_000).unwrap();
        assert_eq!(m.detections.len(), 200);
        assert_eq!(m.detections[0].0, 0);
        assert_eq!(m.detections[199].0, 99_500);
        let sum: Rat = m.detections.iter().map(|(_, w)| w.clone()).sum();
        assert_eq!(sum, Rat::new(1, 1));
    }

    #[test]
    fn masses_sum_to_one_with_no_impact_remainder() {
        let p = desk_params();
        let m = IncidentModel::uniform_grid(200, 0, 100_000).unwrap();
        for v0 in [Rat::new(30, 1), Rat::new(50, 1), Rat::new(70, 1)] {
            let dist = impact_distribution(&p, &v0, &m, &norms()).unwrap();
            let mass: Rat = dist.values().cloned().sum();
            assert!(mass <= Rat::new(1, 1));
            // The remainder is exactly the weight of non-impacting incidents.
            let v0_mms = initial_speed_mms(&v0).unwrap();
            let no_impact: Rat = m
                .detections
                .iter()
                .filter(|(d, _)| impact_speed_mms(v0_mms, *d, &p) == 0)
                .map(|(_, w)| w.clone())
                .sum();
            assert_eq!(mass + no_impact, Rat::new(1, 1));
        }
    }

    #[test]
    fn tail_mass_grows_with_initial_speed() {
        let p = desk_params();
        let m = IncidentModel::uniform_grid(200, 0, 100_000).unwrap();
        let nt = norms();
        let tail = |v0: &Rat, threshold: &Rat| -> Rat {
            impact_distribution(&p, v0, &m, &nt)
                .unwrap()
                .iter()
                .filter(|(band, _)| band.lower_kmh >= *threshold)
                .map(|(_, p)| p.clone())
                .sum()
        };
        for threshold in [Rat::new(0, 1), Rat::new(10, 1), Rat::new(20, 1), Rat::new(40, 1)] {
            let t30 = tail(&Rat::new(30, 1), &threshold);
            let t50 = tail(&Rat::new(50, 1), &threshold);
            let t70 = tail(&Rat::new(70, 1), &threshold);
            assert!(t30 <= t50 && t50 <= t70, "tail at {threshold:?}");
        }
    }

    #[test]
    fn offset_grid_excludes_unreachable_entries() {
        let p = desk_params();
        // Pedestrian 100 m to the side cannot reach the path while the
        // vehicle covers 10 m.
        let m = IncidentModel::new(
            vec![(10_000, Rat::new(1, 1))],
            EntryTiming::OffsetGrid(vec![(100_000, Rat::new(1, 2)), (0, Rat::new(1, 2))]),
        )
        .unwrap();
        let dist = impact_distribution(&p, &Rat::new(70, 1), &m, &norms()).unwrap();
        let mass: Rat = dist.values().cloned().sum();
        assert_eq!(mass, Rat::new(1, 2));
    }

    #[test]
    fn incident_model_loader() {
        let m = load_incident_model("# demo\n0 m = 0.5\n50 m = 1/2\n").unwrap();
        assert_eq!(m.detections, vec![(0, Rat::new(1, 2)), (50_000, Rat::new(1, 2))]);
    }
}
