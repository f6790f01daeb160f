use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

/// Sample-to-water proportion, e.g. `1:5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dilution {
    pub sample: u32,
    pub water: u32,
}

impl Dilution {
    pub const REQUIRED: Dilution = Dilution { sample: 1, water: 5 };

    /// Equal proportions; 2:10 is the same dilution as 1:5.
    pub fn same_ratio(&self, other: &Dilution) -> bool {
        self.sample > 0
            && self.water > 0
            && u64::from(self.sample) * u64::from(other.water)
                == u64::from(self.water) * u64::from(other.sample)
    }
}

impl fmt::Display for Dilution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.sample, self.water)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePrep {
    pub sieve_pass_fraction: Decimal,
    pub dilution_ratio: Dilution,
    pub extract_volume_ml: Decimal,
    pub incubation_s: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum PrepViolation {
    SieveFraction { value: Decimal },
    Dilution { value: Dilution },
    ExtractVolume { value: Decimal },
    Incubation { value: u64 },
}

impl fmt::Display for PrepViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrepViolation::SieveFraction { value } => {
                write!(f, "sieve pass fraction {value} outside [0.60, 0.70]")
            }
            PrepViolation::Dilution { value } => write!(f, "dilution {value} is not 1:5"),
            PrepViolation::ExtractVolume { value } => write!(f, "extract volume {value} ml is not 12 ml"),
            PrepViolation::Incubation { value } => write!(f, "incubation {value} s is under 300 s"),
        }
    }
}

pub const SIEVE_MIN: Decimal = Decimal::from_parts(60, 0, 0, false, 2);
pub const SIEVE_MAX: Decimal = Decimal::from_parts(70, 0, 0, false, 2);
pub const EXTRACT_ML: Decimal = Decimal::from_parts(12, 0, 0, false, 0);
pub const MIN_INCUBATION_S: u64 = 300;

/// All violations of the strip-test preparation protocol, empty when valid.
pub fn validate_prep(p: &SamplePrep) -> Vec<PrepViolation> {
    let mut out = Vec::new();
    if p.sieve_pass_fraction < SIEVE_MIN || p.sieve_pass_fraction > SIEVE_MAX {
        out.push(PrepViolation::SieveFraction { value: p.sieve_pass_fraction });
    }
    if !p.dilution_ratio.same_ratio(&Dilution::REQUIRED) {
        out.push(PrepViolation::Dilution { value: p.dilution_ratio });
    }
    if p.extract_volume_ml != EXTRACT_ML {
        out.push(PrepViolation::ExtractVolume { value: p.extract_volume_ml });
    }
    if p.incubation_s < MIN_INCUBATION_S {
        out.push(PrepViolation::Incubation { value: p.incubation_s });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    fn prep(sieve: &str, water: u32, ml: &str, secs: u64) -> SamplePrep {
        SamplePrep {
            sieve_pass_fraction: Decimal::from_str(sieve).unwrap(),
            dilution_ratio: Dilution { sample: 1, water },
            extract_volume_ml: Decimal::from_str(ml).unwrap(),
            incubation_s: secs,
        }
    }

    #[test]
    fn protocol_examples() {
        assert!(validate_prep(&prep("0.65", 5, "12", 300)).is_empty());
        assert_eq!(
            validate_prep(&prep("0.55", 5, "12", 300)),
            vec![PrepViolation::SieveFraction { value: Decimal::from_str("0.55").unwrap() }]
        );
        assert_eq!(validate_prep(&prep("0.65", 4, "12", 240)).len(), 2);
    }

    #[test]
    fn boundaries() {
        for (sieve, ok) in [("0.60", true), ("0.70", true), ("0.5999", false), ("0.7001", false)] {
            assert_eq!(validate_prep(&prep(sieve, 5, "12", 300)).is_empty(), ok, "{sieve}");
        }
        for (ml, ok) in [("12", true), ("12.000", true), ("11.99", false), ("12.01", false)] {
            assert_eq!(validate_prep(&prep("0.65", 5, ml, 300)).is_empty(), ok, "{ml}");
        }
        for (secs, ok) in [(299, false), (300, true), (301, true)] {
            assert_eq!(validate_prep(&prep("0.65", 5, "12", secs)).is_empty(), ok, "{secs}");
        }
        let scaled = SamplePrep { dilution_ratio: Dilution { sample: 2, water: 10 }, ..prep("0.65", 5, "12", 300) };
        assert!(validate_prep(&scaled).is_empty());
        let zero = SamplePrep { dilution_ratio: Dilution { sample: 0, water: 0 }, ..scaled };
        assert_eq!(validate_prep(&zero).len(), 1);
    }
}
