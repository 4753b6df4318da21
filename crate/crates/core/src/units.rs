//! Exact scalar quantities with unit suffixes.
//!
//! All configuration and table files carry explicit units on every numeric
//! value. Values are parsed into exact rationals (no binary floating point
//! anywhere in the toolkit) and converted to canonical units: millimeters,
//! millimeters per second, millimeters per second squared, seconds, hours.

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use thiserror::Error;

/// Exact rational scalar used throughout the toolkit.
pub type Rat = Ratio<i128>;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum UnitError {
    #[error("malformed number {0:?}")]
    BadNumber(String),
    #[error("missing or unknown unit in {0:?} (expected one of: {1})")]
    BadUnit(String, &'static str),
    #[error("{0:?} does not land on an integer number of {1}")]
    NotRepresentable(String, &'static str),
    #[error("value {0:?} out of range")]
    OutOfRange(String),
}

/// Dimension of a parsed quantity, with its canonical unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    /// canonical: millimeters
    Distance,
    /// canonical: millimeters per second
    Speed,
    /// canonical: millimeters per second squared
    Acceleration,
    /// canonical: seconds
    Time,
    /// canonical: hours
    Hours,
    /// unitless rational (probabilities, weights)
    Scalar,
}

/// Parse a decimal or fraction literal into an exact rational.
///
/// Accepts `-6`, `0.05`, `1/20`, `-0.5`.
pub fn parse_rat(text: &str) -> Result<Rat, UnitError> {
    let s = text.trim();
    if s.is_empty() {
        return Err(UnitError::BadNumber(text.to_string()));
    }
    if let Some((num, den)) = s.split_once('/') {
        let n = parse_decimal(num).ok_or_else(|| UnitError::BadNumber(text.to_string()))?;
        let d = parse_decimal(den).ok_or_else(|| UnitError::BadNumber(text.to_string()))?;
        if d.is_zero() {
            return Err(UnitError::BadNumber(text.to_string()));
        }
        return Ok(n / d);
    }
    parse_decimal(s).ok_or_else(|| UnitError::BadNumber(text.to_string()))
}

fn parse_decimal(text: &str) -> Option<Rat> {
    let s = text.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if digits.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    // Underscores and exponents are intentionally not accepted.
    let mut value: i128 = 0;
    for c in int_part.chars().chain(frac_part.chars()) {
        value = value.checked_mul(10)?.checked_add((c as u8 - b'0') as i128)?;
    }
    let mut den: i128 = 1;
    for _ in 0..frac_part.len() {
        den = den.checked_mul(10)?;
    }
    let mut r = Rat::new(value, den);
    if neg {
        r = -r;
    }
    Some(r)
}

/// Parse `"<number> <unit>"` and convert into the canonical unit of `dim`.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<Rat, UnitError> {
    let s = text.trim();
    if dim == Dimension::Scalar {
        return parse_rat(s);
    }
    let split = s
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(|| UnitError::BadUnit(text.to_string(), expected_units(dim)))?;
    let (num, unit) = s.split_at(split);
    let value = parse_rat(num)?;
    let factor = unit_factor(unit.trim(), dim)
        .ok_or_else(|| UnitError::BadUnit(text.to_string(), expected_units(dim)))?;
    Ok(value * factor)
}

fn expected_units(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Distance => "mm, m, km",
        Dimension::Speed => "mm/s, m/s, km/h",
        Dimension::Acceleration => "mm/s^2, m/s^2",
        Dimension::Time => "ms, s",
        Dimension::Hours => "h",
        Dimension::Scalar => "",
    }
}

fn unit_factor(unit: &str, dim: Dimension) -> Option<Rat> {
    let r = |n, d| Rat::new(n, d);
    match dim {
        Dimension::Distance => match unit {
            "mm" => Some(r(1, 1)),
            "m" => Some(r(1000, 1)),
            "km" => Some(r(1_000_000, 1)),
            _ => None,
        },
        Dimension::Speed => match unit {
            "mm/s" => Some(r(1, 1)),
            "m/s" => Some(r(1000, 1)),
            // 1 km/h = 1_000_000 mm / 3600 s
            "km/h" => Some(r(2500, 9)),
            _ => None,
        },
        Dimension::Acceleration => match unit {
            "mm/s^2" | "mm/s2" => Some(r(1, 1)),
            "m/s^2" | "m/s2" => Some(r(1000, 1)),
            _ => None,
        },
        Dimension::Time => match unit {
            "s" => Some(r(1, 1)),
            "ms" => Some(r(1, 1000)),
            _ => None,
        },
        Dimension::Hours => match unit {
            "h" => Some(r(1, 1)),
            _ => None,
        },
        Dimension::Scalar => None,
    }
}

/// Convert an exact rational to `i64`, requiring it to be an integer.
pub fn rat_to_i64_exact(r: Rat, what: &'static str) -> Result<i64, UnitError> {
    if !r.is_integer() {
        return Err(UnitError::NotRepresentable(format!("{r}"), what));
    }
    i64::try_from(r.to_integer()).map_err(|_| UnitError::OutOfRange(format!("{r}")))
}

/// Render a rational as an exact decimal string when the reduced denominator
/// is of the form 2^a * 5^b, and as `p/q` otherwise.
pub fn rat_to_decimal_string(r: &Rat) -> String {
    if r.is_zero() {
        return "0".to_string();
    }
    let neg = r.is_negative();
    let abs = if neg { -r.clone() } else { r.clone() };
    let mut den = *abs.denom();
    let mut twos = 0u32;
    let mut fives = 0u32;
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return format!("{r}");
    }
    // Scale numerator so the denominator becomes a power of ten.
    let digits = twos.max(fives);
    let mut num = *abs.numer();
    for _ in 0..digits.saturating_sub(twos) {
        num *= 2;
    }
    for _ in 0..digits.saturating_sub(fives) {
        num *= 5;
    }
    let sign = if neg { "-" } else { "" };
    if digits == 0 {
        return format!("{sign}{num}");
    }
    let mut pow10: i128 = 1;
    for _ in 0..digits {
        pow10 *= 10;
    }
    let int = num / pow10;
    let frac = num % pow10;
    let frac_str = format!("{:0width$}", frac, width = digits as usize);
    let trimmed = frac_str.trim_end_matches('0');
    if trimmed.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{trimmed}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(parse_rat("0.05").unwrap(), Rat::new(1, 20));
        assert_eq!(parse_rat("-6").unwrap(), Rat::new(-6, 1));
        assert_eq!(parse_rat("1/20").unwrap(), Rat::new(1, 20));
        assert!(parse_rat("1e3").is_err());
        assert!(parse_rat("").is_err());
        assert!(parse_rat(".").is_err());
    }

    #[test]
    fn km_per_hour_is_exact() {
        let v = parse_quantity("70 km/h", Dimension::Speed).unwrap();
        assert_eq!(v, Rat::new(175_000_000, 9000));
        assert_eq!(v, Rat::new(175_000, 9));
    }

    #[test]
    fn distance_must_land_on_millimeters() {
        let d = parse_quantity("0.5 m", Dimension::Distance).unwrap();
        assert_eq!(rat_to_i64_exact(d, "mm").unwrap(), 500);
        let bad = parse_quantity("0.0005 m", Dimension::Distance).unwrap();
        assert!(rat_to_i64_exact(bad, "mm").is_err());
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(rat_to_decimal_string(&Rat::new(1, 100)), "0.01");
        assert_eq!(rat_to_decimal_string(&Rat::new(1, 1_000)), "0.001");
        assert_eq!(rat_to_decimal_string(&Rat::new(1, 100_000_000)), "0.00000001");
        assert_eq!(rat_to_decimal_string(&Rat::new(200_000, 1)), "200000");
        assert_eq!(rat_to_decimal_string(&Rat::new(1, 3)), "1/3");
        assert_eq!(rat_to_decimal_string(&Rat::new(-3, 4)), "-0.75");
    }
}
