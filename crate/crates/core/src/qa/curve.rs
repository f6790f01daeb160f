use std::fmt;
use std::str::FromStr;

use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};

use super::QaError;

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
const CCITT_FALSE: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub const BARCODE_TAG: &str = "GQ1";

pub fn crc16(data: &[u8]) -> u16 {
    CCITT_FALSE.checksum(data)
}

/// Four-parameter logistic standard curve, `f(c) = d + (a − d) / (1 + (c/c0)^b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourPl {
    /// Response of a blank sample.
    pub a: f64,
    /// Saturation response.
    pub d: f64,
    /// Inflection concentration.
    pub c0: f64,
    /// Slope.
    pub b: f64,
}

/// Where a quantified reading fell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeFlag {
    InRange,
    /// At or beyond the blank response, or below the valid range.
    BelowRange,
    /// At or beyond saturation, or above the valid range.
    AboveRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantification {
    /// Concentration clamped to the lot's valid range.
    pub concentration: f64,
    /// Unclamped inverse; 0 or infinity when the response is off the curve.
    pub raw_concentration: f64,
    pub flag: RangeFlag,
}

impl FourPl {
    pub fn check(&self) -> Result<(), QaError> {
        let finite = [self.a, self.d, self.c0, self.b].iter().all(|v| v.is_finite());
        if !finite {
            return Err(QaError::BadCurve("parameters must be finite".into()));
        }
        if self.a == self.d {
            return Err(QaError::DegenerateCurve);
        }
        if self.b <= 0.0 || self.c0 <= 0.0 {
            return Err(QaError::BadCurve("b and c0 must be positive".into()));
        }
        Ok(())
    }

    /// Response at concentration `c ≥ 0`; `f(0) = a`.
    pub fn response(&self, c: f64) -> f64 {
        if c <= 0.0 {
            return self.a;
        }
        self.d + (self.a - self.d) / (1.0 + (c / self.c0).powf(self.b))
    }

    /// Closed-form inverse on the open response interval, without clamping.
    pub fn inverse(&self, y: f64) -> f64 {
        // (a − d)/(y − d) − 1 rewritten as (a − y)/(y − d) to avoid cancellation.
        self.c0 * ((self.a - y) / (y - self.d)).powf(1.0 / self.b)
    }

    pub fn quantify(&self, y: f64, valid: (f64, f64)) -> Result<Quantification, QaError> {
        if self.a == self.d {
            return Err(QaError::DegenerateCurve);
        }
        let rising = self.d > self.a;
        let toward_blank = if rising { y <= self.a } else { y >= self.a };
        let toward_saturation = if rising { y >= self.d } else { y <= self.d };
        let (c_min, c_max) = valid;
        let q = if toward_blank {
            Quantification { concentration: c_min, raw_concentration: 0.0, flag: RangeFlag::BelowRange }
        } else if toward_saturation {
            Quantification {
                concentration: c_max,
                raw_concentration: f64::INFINITY,
                flag: RangeFlag::AboveRange,
            }
        } else {
            let c = self.inverse(y);
            let (concentration, flag) = if c < c_min {
                (c_min, RangeFlag::BelowRange)
            } else if c > c_max {
                (c_max, RangeFlag::AboveRange)
            } else {
                (c, RangeFlag::InRange)
            };
            Quantification { concentration, raw_concentration: c, flag }
        };
        Ok(q)
    }
}

pub fn curve_response(curve: &FourPl, concentration: f64) -> f64 {
    curve.response(concentration)
}

/// Per-batch strip parameters, as printed on the strip's 2-D code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripLot {
    pub strip_lot_id: String,
    pub analyte: String,
    pub curve: FourPl,
    pub c_min: f64,
    pub c_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripReading {
    pub strip_lot_id: String,
    pub raw_response: f64,
    pub read_at: u64,
}

impl StripLot {
    pub fn check(&self) -> Result<(), QaError> {
        self.curve.check().map_err(|e| match e {
            QaError::DegenerateCurve => QaError::BadCurve("a equals d".into()),
            other => other,
        })?;
        if !(self.c_min.is_finite() && self.c_max.is_finite()) || self.c_min < 0.0 || self.c_min >= self.c_max {
            return Err(QaError::BadCurve("valid range must satisfy 0 <= c_min < c_max".into()));
        }
        for text in [&self.strip_lot_id, &self.analyte] {
            if text.is_empty() || text.contains('|') {
                return Err(QaError::BadFormat(format!("field {text:?} is empty or contains '|'")));
            }
        }
        Ok(())
    }

    pub fn valid_range(&self) -> (f64, f64) {
        (self.c_min, self.c_max)
    }

    pub fn quantify(&self, reading: &StripReading) -> Result<Quantification, QaError> {
        self.curve.quantify(reading.raw_response, self.valid_range())
    }

    pub fn encode(&self) -> Result<String, QaError> {
        self.check()?;
        let FourPl { a, d, c0, b } = self.curve;
        let payload = format!(
            "{BARCODE_TAG}|{}|{}|{a}|{d}|{c0}|{b}|{}|{}",
            self.strip_lot_id, self.analyte, self.c_min, self.c_max
        );
        let crc = crc16(payload.as_bytes());
        Ok(format!("{payload}|{crc:04x}"))
    }

    pub fn decode(s: &str) -> Result<Self, QaError> {
        decode_curve_barcode(s)
    }
}

impl fmt::Display for StripLot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.strip_lot_id, self.analyte)
    }
}

pub fn decode_curve_barcode(s: &str) -> Result<StripLot, QaError> {
    let (payload, crc_hex) =
        s.rsplit_once('|').ok_or_else(|| QaError::BadFormat("missing checksum field".into()))?;
    let well_formed_crc =
        crc_hex.len() == 4 && crc_hex.bytes().all(|c| c.is_ascii_digit() || (b'a'..=b'f').contains(&c));
    if !well_formed_crc {
        return Err(QaError::BadFormat(format!("checksum {crc_hex:?} is not 4 lowercase hex digits")));
    }
    let expected = u16::from_str_radix(crc_hex, 16).expect("checked hex");
    let actual = crc16(payload.as_bytes());
    if expected != actual {
        return Err(QaError::BadChecksum { expected, actual });
    }
    let fields: Vec<&str> = payload.split('|').collect();
    let [tag, lot, analyte, a, d, c0, b, c_min, c_max] = fields[..] else {
        return Err(QaError::BadFormat(format!("expected 9 payload fields, found {}", fields.len())));
    };
    if tag != BARCODE_TAG {
        return Err(QaError::BadFormat(format!("unknown tag {tag}")));
    }
    let num = |name: &str, v: &str| {
        f64::from_str(v).map_err(|_| QaError::BadFormat(format!("field {name} is not a number: {v:?}")))
    };
    let parsed = StripLot {
        strip_lot_id: lot.to_string(),
        analyte: analyte.to_string(),
        curve: FourPl { a: num("a", a)?, d: num("d", d)?, c0: num("c0", c0)?, b: num("b", b)? },
        c_min: num("cmin", c_min)?,
        c_max: num("cmax", c_max)?,
    };
    parsed.check().map_err(|e| match e {
        QaError::BadFormat(m) => QaError::BadFormat(m),
        QaError::BadCurve(m) => QaError::BadCurve(m),
        other => QaError::BadCurve(other.to_string()),
    })?;
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn demo_curve() -> FourPl {
        FourPl { a: 0.1, d: 2.0, c0: 1.0, b: 1.0 }
    }

    fn demo_lot() -> StripLot {
        StripLot {
            strip_lot_id: "SL-2024-07".into(),
            analyte: "GMO".into(),
            curve: FourPl { a: 0.05, d: 2.4, c0: 0.8, b: 1.7 },
            c_min: 0.01,
            c_max: 5.0,
        }
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16(b"123456789"), 0x29b1);
    }

    #[test]
    fn response_vectors() {
        let c = demo_curve();
        assert_eq!(c.response(0.0), 0.1);
        assert!((c.response(1.0) - 1.05).abs() < 1e-15);
        assert!((c.response(1e12) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_vectors() {
        let c = demo_curve();
        let q = c.quantify(1.05, (0.0, 10.0)).unwrap();
        assert!((q.concentration - 1.0).abs() < 1e-12);
        assert_eq!(q.flag, RangeFlag::InRange);
        let blank = c.quantify(0.1, (0.0, 10.0)).unwrap();
        assert_eq!(blank.flag, RangeFlag::BelowRange);
        assert_eq!(blank.raw_concentration, 0.0);
        let sat = c.quantify(2.5, (0.0, 10.0)).unwrap();
        assert_eq!(sat.flag, RangeFlag::AboveRange);
        assert_eq!(sat.concentration, 10.0);
        let clamped = c.quantify(c.response(20.0), (0.0, 10.0)).unwrap();
        assert_eq!((clamped.concentration, clamped.flag), (10.0, RangeFlag::AboveRange));
    }

    #[test]
    fn decreasing_curve() {
        let c = FourPl { a: 2.0, d: 0.1, c0: 3.0, b: 2.0 };
        let y = c.response(3.0);
        assert!((y - 1.05).abs() < 1e-15);
        assert!((c.quantify(y, (0.0, 100.0)).unwrap().concentration - 3.0).abs() < 1e-12);
        assert_eq!(c.quantify(2.1, (0.0, 100.0)).unwrap().flag, RangeFlag::BelowRange);
    }

    #[test]
    fn degenerate_curve() {
        let c = FourPl { a: 1.0, d: 1.0, c0: 1.0, b: 1.0 };
        assert_eq!(c.quantify(1.0, (0.0, 1.0)).unwrap_err(), QaError::DegenerateCurve);
    }

    #[test]
    fn barcode_round_trip_and_layout() {
        let lot = demo_lot();
        let s = lot.encode().unwrap();
        assert!(s.starts_with("GQ1|SL-2024-07|GMO|0.05|2.4|0.8|1.7|0.01|5|"));
        assert_eq!(decode_curve_barcode(&s).unwrap(), lot);
    }

    #[test]
    fn every_single_character_corruption_is_caught() {
        let s = demo_lot().encode().unwrap();
        for (i, ch) in s.char_indices() {
            for replacement in ['0', '7', 'x', 'f'] {
                if replacement == ch {
                    continue;
                }
                let mut t = s.clone();
                t.replace_range(i..i + 1, &replacement.to_string());
                let err = decode_curve_barcode(&t).unwrap_err();
                let crc_field = i >= s.len() - 5;
                assert!(
                    matches!(err, QaError::BadChecksum { .. })
                        || (crc_field && matches!(err, QaError::BadFormat(_))),
                    "position {i}: {err:?}"
                );
            }
        }
    }

    #[test]
    fn a_equals_d_is_bad_curve() {
        let payload = "GQ1|L1|GMO|1|1|1|1|0|5";
        let s = format!("{payload}|{:04x}", crc16(payload.as_bytes()));
        assert!(matches!(decode_curve_barcode(&s), Err(QaError::BadCurve(_))));
    }

    #[test]
    fn malformed_layouts() {
        let payload = "GQ1|L1|GMO|1|2|1";
        let s = format!("{payload}|{:04x}", crc16(payload.as_bytes()));
        assert!(matches!(decode_curve_barcode(&s), Err(QaError::BadFormat(_))));
        assert!(matches!(decode_curve_barcode("no pipes"), Err(QaError::BadFormat(_))));
        let upper = demo_lot().encode().unwrap().to_uppercase();
        assert!(decode_curve_barcode(&upper).is_err());
    }

    pub(crate) fn arb_lot() -> impl Strategy<Value = StripLot> {
        (
            "[A-Za-z0-9-]{1,12}",
            prop::sample::select(vec!["GMO", "aflatoxin", "fumonisin", "DON"]),
            -10.0f64..10.0,
            0.01f64..10.0,
            1e-3f64..1e3,
            0.2f64..5.0,
            0.0f64..1.0,
            1.0f64..1e4,
            any::<bool>(),
        )
            .prop_map(|(id, analyte, a, gap, c0, b, lo, span, rising)| StripLot {
                strip_lot_id: id,
                analyte: analyte.to_string(),
                curve: FourPl { a, d: if rising { a + gap } else { a - gap }, c0, b },
                c_min: lo,
                c_max: lo + span,
            })
    }

    proptest! {
        #[test]
        fn barcode_codec_identity(lot in arb_lot()) {
            let s = lot.encode().unwrap();
            prop_assert_eq!(decode_curve_barcode(&s).unwrap(), lot);
        }

        #[test]
        fn response_strictly_monotone(lot in arb_lot(), x in 1e-3f64..1e3, r in 1.001f64..2.0) {
            let c = lot.curve;
            let (y1, y2) = (c.response(x), c.response(x * r));
            if c.d > c.a { prop_assert!(y2 > y1) } else { prop_assert!(y2 < y1) }
        }
    }
}
