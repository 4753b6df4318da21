//! Quantitative risk norm calculus.
//!
//! Budgets derive from the ratio of incident exposure to a risk norm, the
//! budget is split into named component allocations whose sum may not exceed
//! it, and per-speed admissibility compares the mean time between impacts in
//! each severity band against that band's norm.
//!
//! All arithmetic here is exact rational. Verdicts at boundaries (sum equal
//! to budget, mean time equal to norm) are bit-exact and platform
//! independent; floating point is never involved.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Zero;
use thiserror::Error;

use crate::units::{parse_quantity, parse_rat, rat_to_decimal_string, Dimension, Rat};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QrnError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(String),
    #[error("risk-norm bands must be contiguous and ascending from 0: {0}")]
    BadBands(String),
    #[error("duplicate table row for {0}")]
    DuplicateRow(String),
    #[error("no table row for {0}")]
    MissingRow(String),
    #[error("capability row for speed {0} km/h has no band matching {1}")]
    BandMismatch(String, String),
    #[error("per-speed band probabilities exceed 1 for speed {0} km/h")]
    MassExceedsOne(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// An impact-speed band in km/h; `upper` of `None` means unbounded above.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeedBand {
    pub lower_kmh: Rat,
    pub upper_kmh: Option<Rat>,
}

impl SpeedBand {
    pub fn new(lower: Rat, upper: Option<Rat>) -> SpeedBand {
        SpeedBand { lower_kmh: lower, upper_kmh: upper }
    }

    /// Does a speed in mm/s fall inside this band? Exact comparison via
    /// cross-multiplication: `v mm/s` is in km/h units `v * 9 / 2500`.
    pub fn contains_mms(&self, v_mms: i64) -> bool {
        let v_kmh = Rat::new(v_mms as i128 * 9, 2500);
        if v_kmh < self.lower_kmh {
            return false;
        }
        match &self.upper_kmh {
            Some(u) => v_kmh < *u,
            None => true,
        }
    }
}

impl fmt::Display for SpeedBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.upper_kmh {
            Some(u) => write!(
                f,
                "{}..{}",
                rat_to_decimal_string(&self.lower_kmh),
                rat_to_decimal_string(u)
            ),
            None => write!(f, "{}..", rat_to_decimal_string(&self.lower_kmh)),
        }
    }
}

/// Minimum allowed mean time between accidents per impact-speed band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiskNormTable {
    bands: Vec<(SpeedBand, Rat)>,
}

impl RiskNormTable {
    /// Bands must be contiguous, non-overlapping, ascending from 0; the last
    /// band must be unbounded so every impact speed is covered. Norms are
    /// strictly positive hours.
    pub fn new(bands: Vec<(SpeedBand, Rat)>) -> Result<RiskNormTable, QrnError> {
        if bands.is_empty() {
            return Err(QrnError::BadBands("empty table".to_string()));
        }
        let mut expected_lower = Rat::zero();
        for (i, (band, norm)) in bands.iter().enumerate() {
            if *norm <= Rat::zero() {
                return Err(QrnError::NonPositive("risk norm"));
            }
            if band.lower_kmh != expected_lower {
                return Err(QrnError::BadBands(format!(
                    "band {band} does not start at {}",
                    rat_to_decimal_string(&expected_lower)
                )));
            }
            match &band.upper_kmh {
                Some(u) => {
                    if *u <= band.lower_kmh {
                        return Err(QrnError::BadBands(format!("band {band} is empty")));
                    }
                    expected_lower = u.clone();
                }
                None => {
                    if i + 1 != bands.len() {
                        return Err(QrnError::BadBands(
                            "only the last band may be unbounded".to_string(),
                        ));
                    }
                }
            }
        }
        if bands.last().unwrap().0.upper_kmh.is_some() {
            return Err(QrnError::BadBands("last band must be unbounded".to_string()));
        }
        Ok(RiskNormTable { bands })
    }

    pub fn bands(&self) -> &[(SpeedBand, Rat)] {
        &self.bands
    }

    pub fn norm_for(&self, band: &SpeedBand) -> Option<&Rat> {
        self.bands.iter().find(|(b, _)| b == band).map(|(_, n)| n)
    }

    /// Index of the band containing an impact speed in mm/s.
    pub fn band_of_mms(&self, v_mms: i64) -> Option<usize> {
        self.bands.iter().position(|(b, _)| b.contains_mms(v_mms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoadType {
    Urban,
    Highway,
}

impl RoadType {
    pub fn as_str(self) -> &'static str {
        match self {
            RoadType::Urban => "urban",
            RoadType::Highway => "highway",
        }
    }

    pub fn from_str(s: &str) -> Option<RoadType> {
        match s {
            "urban" => Some(RoadType::Urban),
            "highway" => Some(RoadType::Highway),
            _ => None,
        }
    }
}

/// Mean time between incidents per (road type, road speed) combination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureTable {
    rows: BTreeMap<(RoadType, Rat), Rat>,
}

impl ExposureTable {
    pub fn new(rows: Vec<(RoadType, Rat, Rat)>) -> Result<ExposureTable, QrnError> {
        let mut map = BTreeMap::new();
        for (road, speed, exposure) in rows {
            if exposure <= Rat::zero() {
                return Err(QrnError::NonPositive("exposure"));
            }
            let key = (road, speed);
            if map.insert(key.clone(), exposure).is_some() {
                return Err(QrnError::DuplicateRow(format!(
                    "{}:{}",
                    key.0.as_str(),
                    rat_to_decimal_string(&key.1)
                )));
            }
        }
        Ok(ExposureTable { rows: map })
    }

    pub fn exposure_hours(&self, road: RoadType, speed_kmh: &Rat) -> Result<&Rat, QrnError> {
        self.rows
            .get(&(road, speed_kmh.clone()))
            .ok_or_else(|| {
                QrnError::MissingRow(format!("{}:{}", road.as_str(), rat_to_decimal_string(speed_kmh)))
            })
    }

    pub fn rows(&self) -> impl Iterator<Item = (&(RoadType, Rat), &Rat)> {
        self.rows.iter()
    }
}

/// Mean time between events; infinite when the event has probability zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MeanTime {
    Finite(Rat),
    Infinite,
}

impl MeanTime {
    pub fn at_least(&self, hours: &Rat) -> bool {
        match self {
            MeanTime::Infinite => true,
            MeanTime::Finite(h) => h >= hours,
        }
    }
}

impl fmt::Display for MeanTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanTime::Finite(h) => write!(f, "{} h", rat_to_decimal_string(h)),
            MeanTime::Infinite => write!(f, "inf"),
        }
    }
}

/// Maximum allowed impact probability per incident: `min(1, exposure/norm)`.
pub fn impact_budget(exposure_h: &Rat, risk_norm_h: &Rat) -> Result<Rat, QrnError> {
    if *exposure_h <= Rat::zero() {
        return Err(QrnError::NonPositive("exposure"));
    }
    if *risk_norm_h <= Rat::zero() {
        return Err(QrnError::NonPositive("risk norm"));
    }
    let ratio = exposure_h / risk_norm_h;
    Ok(if ratio > Rat::new(1, 1) { Rat::new(1, 1) } else { ratio })
}

/// Mean time between impacts given per-incident probability `p`.
pub fn mean_time_between(exposure_h: &Rat, p: &Rat) -> Result<MeanTime, QrnError> {
    if *exposure_h <= Rat::zero() {
        return Err(QrnError::NonPositive("exposure"));
    }
    if *p < Rat::zero() || *p > Rat::new(1, 1) {
        return Err(QrnError::BadProbability(rat_to_decimal_string(p)));
    }
    if p.is_zero() {
        Ok(MeanTime::Infinite)
    } else {
        Ok(MeanTime::Finite(exposure_h / p))
    }
}

/// A probability budget split into named component shares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub budget: Rat,
    pub parts: BTreeMap<String, Rat>,
}

impl Allocation {
    pub fn new(budget: Rat, parts: Vec<(String, Rat)>) -> Result<Allocation, QrnError> {
        let one = Rat::new(1, 1);
        if budget < Rat::zero() || budget > one {
            return Err(QrnError::BadProbability(rat_to_decimal_string(&budget)));
        }
        let mut map = BTreeMap::new();
        for (name, p) in parts {
            if p < Rat::zero() || p > one {
                return Err(QrnError::BadProbability(rat_to_decimal_string(&p)));
            }
            if map.insert(name.clone(), p).is_some() {
                return Err(QrnError::DuplicateRow(name));
            }
        }
        Ok(Allocation { budget, parts: map })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AllocationVerdict {
    Pass,
    Fail { excess: Rat },
}

/// Pass iff the exact sum of the parts does not exceed the budget.
pub fn check_allocation(a: &Allocation) -> AllocationVerdict {
    let sum: Rat = a.parts.values().cloned().sum();
    if sum <= a.budget {
        AllocationVerdict::Pass
    } else {
        AllocationVerdict::Fail { excess: sum - &a.budget }
    }
}

/// Impact-speed-band probabilities per initial speed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CapabilityTable {
    /// speed km/h -> band -> probability of an impact in that band, per incident
    pub entries: BTreeMap<Rat, BTreeMap<SpeedBand, Rat>>,
}

impl CapabilityTable {
    pub fn insert(&mut self, speed_kmh: Rat, band: SpeedBand, p: Rat) -> Result<(), QrnError> {
        if p < Rat::zero() || p > Rat::new(1, 1) {
            return Err(QrnError::BadProbability(rat_to_decimal_string(&p)));
        }
        let row = self.entries.entry(speed_kmh.clone()).or_default();
        if row.insert(band, p).is_some() {
            return Err(QrnError::DuplicateRow(rat_to_decimal_string(&speed_kmh)));
        }
        let mass: Rat = row.values().cloned().sum();
        if mass > Rat::new(1, 1) {
            return Err(QrnError::MassExceedsOne(rat_to_decimal_string(&speed_kmh)));
        }
        Ok(())
    }

    pub fn speeds(&self) -> impl Iterator<Item = &Rat> {
        self.entries.keys()
    }
}

/// Verdict for one candidate speed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeedVerdict {
    pub speed_kmh: Rat,
    pub admissible: bool,
    /// Bands whose mean time between impacts falls short, with the achieved
    /// mean time and the required norm.
    pub failures: Vec<(SpeedBand, MeanTime, Rat)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdmissibilityReport {
    pub verdicts: Vec<SpeedVerdict>,
    pub max_admissible_kmh: Option<Rat>,
}

/// A speed is admissible iff for every band the mean time between impacts in
/// that band is at least the band's norm. The comparison is inclusive: a
/// mean time exactly equal to the norm passes.
pub fn admissible_speeds(
    cap: &CapabilityTable,
    exposure_h: &Rat,
    norms: &RiskNormTable,
) -> Result<AdmissibilityReport, QrnError> {
    if *exposure_h <= Rat::zero() {
        return Err(QrnError::NonPositive("exposure"));
    }
    let mut verdicts = Vec::new();
    let mut max_admissible = None;
    for (speed, row) in &cap.entries {
        let mut failures = Vec::new();
        for (band, p) in row {
            let norm = norms.norm_for(band).ok_or_else(|| {
                QrnError::BandMismatch(rat_to_decimal_string(speed), band.to_string())
            })?;
            let mt = mean_time_between(exposure_h, p)?;
            if !mt.at_least(norm) {
                failures.push((band.clone(), mt, norm.clone()));
            }
        }
        let admissible = failures.is_empty();
        if admissible {
            let better = match &max_admissible {
                None => true,
                Some(current) => speed > current,
            };
            if better {
                max_admissible = Some(speed.clone());
            }
        }
        verdicts.push(SpeedVerdict { speed_kmh: speed.clone(), admissible, failures });
    }
    Ok(AdmissibilityReport { verdicts, max_admissible_kmh: max_admissible })
}

// ---------------------------------------------------------------------------
// Plain-text table formats
// ---------------------------------------------------------------------------

fn table_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with('[') {
            None
        } else {
            Some((i + 1, line))
        }
    })
}

fn parse_band(text: &str, line: usize) -> Result<SpeedBand, QrnError> {
    let (lo, hi) = text.split_once("..").ok_or(QrnError::Parse {
        line,
        message: format!("band {text:?} must look like LO..HI or LO.."),
    })?;
    let lower = parse_rat(lo).map_err(|e| QrnError::Parse { line, message: e.to_string() })?;
    let upper = if hi.trim().is_empty() {
        None
    } else {
        Some(parse_rat(hi).map_err(|e| QrnError::Parse { line, message: e.to_string() })?)
    };
    Ok(SpeedBand::new(lower, upper))
}

/// Load a risk-norm table. Rows: `LO..HI = NORM h` (km/h bands, hours).
pub fn load_risk_norms(text: &str) -> Result<RiskNormTable, QrnError> {
    let mut bands = Vec::new();
    for (line, content) in table_lines(text) {
        let (band_text, norm_text) = content.split_once('=').ok_or(QrnError::Parse {
            line,
            message: "row must look like LO..HI = NORM h".to_string(),
        })?;
        let band = parse_band(band_text.trim(), line)?;
        let norm = parse_quantity(norm_text.trim(), Dimension::Hours)
            .map_err(|e| QrnError::Parse { line, message: e.to_string() })?;
        bands.push((band, norm));
    }
    RiskNormTable::new(bands)
}

/// Load an exposure table. Rows: `ROAD:SPEED = EXPOSURE h`.
pub fn load_exposure(text: &str) -> Result<ExposureTable, QrnError> {
    let mut rows = Vec::new();
    for (line, content) in table_lines(text) {
        let (key, value) = content.split_once('=').ok_or(QrnError::Parse {
            line,
            message: "row must look like ROAD:SPEED = EXPOSURE h".to_string(),
        })?;
        let (road_text, speed_text) = key.trim().split_once(':').ok_or(QrnError::Parse {
            line,
            message: "row key must look like ROAD:SPEED".to_string(),
        })?;
        let road = RoadType::from_str(road_text.trim()).ok_or(QrnError::Parse {
            line,
            message: format!("unknown road type {road_text:?}"),
        })?;
        let speed = parse_rat(speed_text).map_err(|e| QrnError::Parse { line, message: e.to_string() })?;
        let exposure = parse_quantity(value.trim(), Dimension::Hours)
            .map_err(|e| QrnError::Parse { line, message: e.to_string() })?;
        rows.push((road, speed, exposure));
    }
    ExposureTable::new(rows)
}

/// Load a capability table. Rows: `SPEED : LO..HI = P`.
pub fn load_capability(text: &str) -> Result<CapabilityTable, QrnError> {
    let mut cap = CapabilityTable::default();
    for (line, content) in table_lines(text) {
        let (speed_text, rest) = content.split_once(':').ok_or(QrnError::Parse {
            line,
            message: "row must look like SPEED : LO..HI = P".to_string(),
        })?;
        let (band_text, p_text) = rest.split_once('=').ok_or(QrnError::Parse {
            line,
            message: "row must look like SPEED : LO..HI = P".to_string(),
        })?;
        let speed = parse_rat(speed_text).map_err(|e| QrnError::Parse { line, message: e.to_string() })?;
        let band = parse_band(band_text.trim(), line)?;
        let p = parse_rat(p_text).map_err(|e| QrnError::Parse { line, message: e.to_string() })?;
        cap.insert(speed, band, p)?;
    }
    Ok(cap)
}

/// Render a capability table in the same format `load_capability` reads.
pub fn render_capability(cap: &CapabilityTable) -> String {
    let mut out = String::from("[capability]\n");
    for (speed, row) in &cap.entries {
        for (band, p) in row {
            out.push_str(&format!(
                "{} : {} = {}\n",
                rat_to_decimal_string(speed),
                band,
                rat_to_decimal_string(p)
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i128, d: i128) -> Rat {
        Rat::new(n, d)
    }

    #[test]
    fn budget_ratio_is_exact() {
        assert_eq!(impact_budget(&r(1000, 1), &r(100_000, 1)).unwrap(), r(1, 100));
        assert_eq!(impact_budget(&r(100_000, 1), &r(100_000, 1)).unwrap(), r(1, 1));
        assert_eq!(impact_budget(&r(10, 1), &r(1_000_000_000, 1)).unwrap(), r(1, 100_000_000));
        assert!(impact_budget(&r(0, 1), &r(1, 1)).is_err());
        assert!(impact_budget(&r(1, 1), &r(-1, 1)).is_err());
    }

    #[test]
    fn mean_time_examples() {
        assert_eq!(
            mean_time_between(&r(10_000, 1), &r(1, 20)).unwrap(),
            MeanTime::Finite(r(200_000, 1))
        );
        assert_eq!(mean_time_between(&r(10_000, 1), &r(0, 1)).unwrap(), MeanTime::Infinite);
        assert_eq!(mean_time_between(&r(1000, 1), &r(1, 1)).unwrap(), MeanTime::Finite(r(1000, 1)));
        assert!(mean_time_between(&r(1000, 1), &r(2, 1)).is_err());
    }

    #[test]
    fn allocation_boundary_is_inclusive() {
        let a = Allocation::new(
            r(1, 100),
            vec![
                ("sense".to_string(), r(1, 200)),
                ("ctrl".to_string(), r(0, 1)),
                ("act".to_string(), r(1, 200)),
            ],
        )
        .unwrap();
        assert_eq!(check_allocation(&a), AllocationVerdict::Pass);

        let a = Allocation::new(
            r(1, 100),
            vec![
                ("sense".to_string(), r(6, 1000)),
                ("ctrl".to_string(), r(0, 1)),
                ("act".to_string(), r(5, 1000)),
            ],
        )
        .unwrap();
        assert_eq!(check_allocation(&a), AllocationVerdict::Fail { excess: r(1, 1000) });

        let empty = Allocation::new(r(1, 100), vec![]).unwrap();
        assert_eq!(check_allocation(&empty), AllocationVerdict::Pass);
    }

    fn pedestrian_norms() -> RiskNormTable {
        RiskNormTable::new(vec![
            (SpeedBand::new(r(0, 1), Some(r(10, 1))), r(100_000, 1)),
            (SpeedBand::new(r(10, 1), Some(r(20, 1))), r(1_000_000, 1)),
            (SpeedBand::new(r(20, 1), Some(r(30, 1))), r(10_000_000, 1)),
            (SpeedBand::new(r(30, 1), Some(r(40, 1))), r(100_000_000, 1)),
            (SpeedBand::new(r(40, 1), None), r(1_000_000_000, 1)),
        ])
        .unwrap()
    }

    #[test]
    fn norm_table_rejects_gaps() {
        let err = RiskNormTable::new(vec![
            (SpeedBand::new(r(0, 1), Some(r(10, 1))), r(1, 1)),
            (SpeedBand::new(r(15, 1), None), r(1, 1)),
        ]);
        assert!(matches!(err, Err(QrnError::BadBands(_))));
    }

    #[test]
    fn band_binning_in_mms() {
        let norms = pedestrian_norms();
        // 10 km/h = 2777.77.. mm/s
        assert_eq!(norms.band_of_mms(2777), Some(0));
        assert_eq!(norms.band_of_mms(2778), Some(1));
        assert_eq!(norms.band_of_mms(0), Some(0));
        assert_eq!(norms.band_of_mms(1_000_000), Some(4));
    }

    #[test]
    fn sixty_kmh_is_inadmissible_at_five_percent() {
        let mut cap = CapabilityTable::default();
        cap.insert(r(60, 1), SpeedBand::new(r(10, 1), Some(r(20, 1))), r(1, 20)).unwrap();
        let report = admissible_speeds(&cap, &r(10_000, 1), &pedestrian_norms()).unwrap();
        assert_eq!(report.verdicts.len(), 1);
        assert!(!report.verdicts[0].admissible);
        assert_eq!(report.max_admissible_kmh, None);
        let (_, mt, norm) = &report.verdicts[0].failures[0];
        assert_eq!(*mt, MeanTime::Finite(r(200_000, 1)));
        assert_eq!(*norm, r(1_000_000, 1));
    }

    #[test]
    fn zero_capability_is_admissible() {
        let mut cap = CapabilityTable::default();
        cap.insert(r(60, 1), SpeedBand::new(r(10, 1), Some(r(20, 1))), r(0, 1)).unwrap();
        let report = admissible_speeds(&cap, &r(10_000, 1), &pedestrian_norms()).unwrap();
        assert!(report.verdicts[0].admissible);
        assert_eq!(report.max_admissible_kmh, Some(r(60, 1)));
    }

    #[test]
    fn boundary_mean_time_is_admissible() {
        // Probability chosen so the mean time equals the norm exactly.
        let mut cap = CapabilityTable::default();
        cap.insert(r(50, 1), SpeedBand::new(r(10, 1), Some(r(20, 1))), r(1, 100)).unwrap();
        let report = admissible_speeds(&cap, &r(10_000, 1), &pedestrian_norms()).unwrap();
        assert!(report.verdicts[0].admissible, "inclusive comparison at the boundary");
    }

    #[test]
    fn table_loaders_round_trip() {
        let norms = load_risk_norms(
            "[risk_norms]\n0..10 = 100000 h\n10..20 = 1000000 h\n20..30 = 10000000 h\n\
             30..40 = 100000000 h\n40.. = 1000000000 h\n",
        )
        .unwrap();
        assert_eq!(norms, pedestrian_norms());

        let exposure = load_exposure("urban:50 = 1000 h\nhighway:100 = 10000000 h\n").unwrap();
        assert_eq!(
            exposure.exposure_hours(RoadType::Urban, &r(50, 1)).unwrap(),
            &r(1000, 1)
        );
        assert!(exposure.exposure_hours(RoadType::Urban, &r(100, 1)).is_err());

        let mut cap = CapabilityTable::default();
        cap.insert(r(60, 1), SpeedBand::new(r(10, 1), Some(r(20, 1))), r(1, 20)).unwrap();
        let text = render_capability(&cap);
        assert_eq!(load_capability(&text).unwrap(), cap);
    }
}
