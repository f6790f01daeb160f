//! The grain exporters' business network: intake weigh tickets, quality
//! analyses, discounts, silo windows, outgoing lots, and provenance.

mod contract;
mod provenance;
mod receipt;
mod scenario;

use std::collections::BTreeMap;
use std::fmt;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use crate::contract::ContractAbort;
use crate::qa::MoistureReading;

pub use contract::{GrainContract, GRAIN, OPERATIONS};
pub use provenance::{trace_lot_provenance, IntakeNode, Linked, ProvenanceTree};
pub use receipt::{issue_ingest_receipt, IngestReceipt, ReceiptTxIds, SignedReceipt};
pub use scenario::{IntakeRow, LotDirective, Phase, Scenario, ScenarioError, Step};

pub mod registries {
    pub const EXTRINSIC: &str = "com.agritech.Extrinsic_Analysis";
    pub const INTRINSIC: &str = "com.agritech.Intrinsic_Analysis";
    pub const WEIGH_TICKET: &str = "com.agritech.WeighTicket";
    pub const INTAKE: &str = "com.agritech.IntakeCase";
    pub const SILO: &str = "com.agritech.Silo";
    pub const LOT: &str = "com.agritech.Lot";
    pub const CONFIG: &str = "com.agritech.Config";

    pub const ALL: &[&str] = &[EXTRINSIC, INTRINSIC, WEIGH_TICKET, INTAKE, SILO, LOT, CONFIG];

    /// Full state key of an asset.
    pub fn key(registry: &str, id: &str) -> String {
        format!("{registry}#{id}")
    }
}

pub const GMO: &str = "GMO";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrainError {
    #[error("DuplicateInvoice: {direction} weigh ticket for {invoice} already recorded")]
    DuplicateInvoice { invoice: String, direction: Direction },
    #[error("BadWeights: gross {gross} kg, tare {tare} kg leaves no positive net weight")]
    BadWeights { gross: Decimal, tare: Decimal },
    #[error("NoWeighTicket: no incoming weigh ticket for {0}")]
    NoWeighTicket(String),
    #[error("UnknownAnalyte: {0} is not configured")]
    UnknownAnalyte(String),
    #[error("IncompleteIntake: {invoice}: {missing}")]
    IncompleteIntake { invoice: String, missing: String },
    #[error("GrainMismatch: silo {silo} holds {silo_grain}, cargo {invoice} is {cargo_grain}")]
    GrainMismatch { silo: String, silo_grain: Grain, invoice: String, cargo_grain: Grain },
    #[error("AlreadyAssigned: {invoice} is already stored in silo {silo}")]
    AlreadyAssigned { invoice: String, silo: String },
    #[error("EmptySilo: silo {0} has no contributions in its current window")]
    EmptySilo(String),
    #[error("UncommittedTicket: no committed outgoing weigh ticket {0}")]
    UncommittedTicket(String),
    #[error("LotNotFound: {0}")]
    LotNotFound(String),
    #[error("AssetNotFound: {0}")]
    AssetNotFound(String),
    #[error("DuplicateAsset: {0}")]
    DuplicateAsset(String),
    #[error("OutOfRange: {field} = {value} is outside [{min}, {max}]")]
    OutOfRange { field: &'static str, value: Decimal, min: Decimal, max: Decimal },
    #[error("NegativeDiscount: verbatim discount for {invoice} evaluates to {value}")]
    NegativeDiscount { invoice: String, value: Decimal },
    #[error("BadConfig: {0}")]
    BadConfig(String),
}

impl GrainError {
    /// The error kind, as it prefixes the abort message.
    pub fn code(&self) -> &'static str {
        match self {
            GrainError::DuplicateInvoice { .. } => "DuplicateInvoice",
            GrainError::BadWeights { .. } => "BadWeights",
            GrainError::NoWeighTicket(_) => "NoWeighTicket",
            GrainError::UnknownAnalyte(_) => "UnknownAnalyte",
            GrainError::IncompleteIntake { .. } => "IncompleteIntake",
            GrainError::GrainMismatch { .. } => "GrainMismatch",
            GrainError::AlreadyAssigned { .. } => "AlreadyAssigned",
            GrainError::EmptySilo(_) => "EmptySilo",
            GrainError::UncommittedTicket(_) => "UncommittedTicket",
            GrainError::LotNotFound(_) => "LotNotFound",
            GrainError::AssetNotFound(_) => "AssetNotFound",
            GrainError::DuplicateAsset(_) => "DuplicateAsset",
            GrainError::OutOfRange { .. } => "OutOfRange",
            GrainError::NegativeDiscount { .. } => "NegativeDiscount",
            GrainError::BadConfig(_) => "BadConfig",
        }
    }
}

impl From<GrainError> for ContractAbort {
    fn from(e: GrainError) -> Self {
        ContractAbort(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Incoming,
    Outgoing,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Incoming => "incoming",
            Direction::Outgoing => "outgoing",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grain {
    #[default]
    Soy,
    Corn,
}

impl fmt::Display for Grain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grain::Soy => "soy",
            Grain::Corn => "corn",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscountMode {
    #[default]
    Corrected,
    Verbatim,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeighTicket {
    #[serde(rename = "Invoice_Number")]
    pub invoice_number: String,
    pub producer_id: String,
    pub truck_plate: String,
    pub gross_kg: Decimal,
    pub tare_kg: Decimal,
    pub net_kg: Decimal,
    pub direction: Direction,
    pub timestamp: u64,
    #[serde(default)]
    pub grain: Grain,
}

impl WeighTicket {
    pub fn asset_id(invoice: &str, direction: Direction) -> String {
        format!("{invoice}/{direction}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtrinsicAnalysis {
    #[serde(rename = "Invoice_Number")]
    pub invoice_number: String,
    pub operator: String,
    pub date: u64,
    #[serde(rename = "Sample_Number")]
    pub sample_number: String,
    #[serde(rename = "Moisture_Percent")]
    pub moisture_percent: Decimal,
    #[serde(rename = "Impurity_Percent")]
    pub impurity_percent: Decimal,
    #[serde(rename = "Broken_Percent")]
    pub broken_percent: Decimal,
    #[serde(rename = "Greenish_Percent")]
    pub greenish_percent: Decimal,
    #[serde(rename = "Damaged_Percent")]
    pub damaged_percent: Decimal,
    /// Null until a DiscountsTransaction has run.
    #[serde(rename = "Total_Discounts_KG")]
    pub total_discounts_kg: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moisture_device: Option<MoistureReading>,
}

impl ExtrinsicAnalysis {
    pub fn discount_inputs(&self) -> DiscountInputs {
        DiscountInputs {
            moisture: self.moisture_percent,
            impurity: self.impurity_percent,
            broken: self.broken_percent,
            damaged: self.damaged_percent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntrinsicAnalysis {
    #[serde(rename = "Invoice_Number")]
    pub invoice_number: String,
    #[serde(rename = "Sample_Number")]
    pub sample_number: String,
    pub analyte: String,
    pub concentration: Decimal,
    pub strip_lot_id: String,
    pub operator: String,
    pub date: u64,
    pub pass: bool,
}

impl IntrinsicAnalysis {
    pub fn asset_id(invoice: &str, analyte: &str) -> String {
        format!("{invoice}/{analyte}")
    }
}

/// Open from the incoming weigh-in until the cargo is stored in a silo.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntakeCase {
    #[serde(rename = "Invoice_Number")]
    pub invoice_number: String,
    pub producer_id: String,
    pub grain: Grain,
    pub net_kg: Decimal,
    pub opened_at: u64,
    pub silo_id: Option<String>,
    pub lot_window: Option<u64>,
    pub contribution_kg: Option<Decimal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    #[serde(rename = "Invoice_Number")]
    pub invoice_number: String,
    pub net_kg_after_discounts: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Silo {
    pub silo_id: String,
    pub grain: Grain,
    pub current_lot_window: u64,
    pub contributions: Vec<Contribution>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lot {
    pub lot_id: String,
    pub silo_id: String,
    pub lot_window: u64,
    pub outgoing_tickets: Vec<String>,
    pub contributions: Vec<Contribution>,
    pub gm_free_certified: bool,
    pub gm_free_threshold: Decimal,
    pub premium: Decimal,
    pub base_price_per_kg: Decimal,
    pub final_price_per_kg: Decimal,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitRule {
    /// Passes when the concentration is strictly below the limit.
    StrictlyBelow,
    /// Passes when the concentration does not exceed the limit.
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyteLimit {
    pub unit: String,
    pub limit: Decimal,
    pub rule: LimitRule,
}

impl AnalyteLimit {
    pub fn passes(&self, concentration: Decimal) -> bool {
        match self.rule {
            LimitRule::StrictlyBelow => concentration < self.limit,
            LimitRule::AtMost => concentration <= self.limit,
        }
    }
}

/// Network-wide grain parameters, stored on the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrainConfig {
    pub discount_mode: DiscountMode,
    pub gm_free_premium: Decimal,
    pub analytes: BTreeMap<String, AnalyteLimit>,
}

impl Default for GrainConfig {
    fn default() -> Self {
        let limit = |unit: &str, limit: Decimal, rule| AnalyteLimit { unit: unit.into(), limit, rule };
        let analytes = BTreeMap::from([
            (GMO.to_string(), limit("%", Decimal::new(9, 1), LimitRule::StrictlyBelow)),
            ("aflatoxin".to_string(), limit("ppb", Decimal::from(20), LimitRule::AtMost)),
            ("fumonisin".to_string(), limit("ppb", Decimal::from(4000), LimitRule::AtMost)),
            ("DON".to_string(), limit("ppb", Decimal::from(1000), LimitRule::AtMost)),
        ]);
        GrainConfig { discount_mode: DiscountMode::Corrected, gm_free_premium: Decimal::new(15, 2), analytes }
    }
}

impl GrainConfig {
    pub const ASSET_ID: &'static str = "grain";

    pub fn gm_free_threshold(&self) -> Decimal {
        self.analytes.get(GMO).map_or(Decimal::ZERO, |l| l.limit)
    }

    pub fn limit(&self, analyte: &str) -> Result<&AnalyteLimit, GrainError> {
        self.analytes.get(analyte).ok_or_else(|| GrainError::UnknownAnalyte(analyte.to_string()))
    }

    pub fn check(&self) -> Result<(), GrainError> {
        let gmo = self.limit(GMO).map_err(|_| GrainError::BadConfig("GMO limit missing".into()))?;
        if gmo.rule != LimitRule::StrictlyBelow {
            return Err(GrainError::BadConfig("GMO limit must be strictly_below".into()));
        }
        if self.gm_free_premium.is_sign_negative() {
            return Err(GrainError::BadConfig("premium must not be negative".into()));
        }
        if self.analytes.values().any(|l| l.limit.is_sign_negative()) {
            return Err(GrainError::BadConfig("limits must not be negative".into()));
        }
        Ok(())
    }
}

/// The four percentages the discount reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscountInputs {
    pub moisture: Decimal,
    pub impurity: Decimal,
    pub broken: Decimal,
    pub damaged: Decimal,
}

/// Unrounded discount `d` (percent of net weight).
///
/// Corrected mode charges each factor above its own threshold. Verbatim mode
/// keeps the legacy broken and damaged branches, which test Broken and
/// Damaged but charge on Moisture and Impurity.
pub fn discount(x: &DiscountInputs, mode: DiscountMode) -> Decimal {
    let (five, three, twelve) = (Decimal::from(5), Decimal::from(3), Decimal::from(12));
    let mut d = Decimal::ZERO;
    if x.moisture > twelve {
        d += (x.moisture - twelve) * Decimal::from(4);
    }
    if x.impurity > three {
        d += (x.impurity - three) * Decimal::new(25, 1);
    }
    let (broken_term, damaged_term) = match mode {
        DiscountMode::Corrected => (x.broken - five, x.damaged - three),
        DiscountMode::Verbatim => (x.moisture - five, x.impurity - three),
    };
    if x.broken > five {
        d += broken_term;
    }
    if x.damaged > three {
        d += damaged_term * Decimal::new(35, 1);
    }
    d
}

/// Half-even rounding to 4 fractional digits, applied at every write.
pub fn round4(x: Decimal) -> Decimal {
    x.round_dp_with_strategy(4, RoundingStrategy::MidpointNearestEven)
}

pub fn net_weight(gross: Decimal, tare: Decimal) -> Result<Decimal, GrainError> {
    let net = gross - tare;
    if tare.is_sign_negative() || net <= Decimal::ZERO {
        return Err(GrainError::BadWeights { gross, tare });
    }
    Ok(round4(net))
}

/// Kilograms credited to a silo: `net · (1 − d/100)`.
pub fn contribution_kg(net_kg: Decimal, d: Decimal) -> Decimal {
    round4(net_kg * (Decimal::ONE - d / Decimal::ONE_HUNDRED))
}

pub fn lot_price(base: Decimal, certified: bool, premium: Decimal) -> Decimal {
    if certified {
        round4(base * (Decimal::ONE + premium))
    } else {
        round4(base)
    }
}

pub(crate) fn check_percent(field: &'static str, value: Decimal) -> Result<(), GrainError> {
    if value.is_sign_negative() || value > Decimal::ONE_HUNDRED {
        return Err(GrainError::OutOfRange {
            field,
            value,
            min: Decimal::ZERO,
            max: Decimal::ONE_HUNDRED,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::str::FromStr;

    fn dec(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    fn inputs(m: &str, i: &str, b: &str, d: &str) -> DiscountInputs {
        DiscountInputs { moisture: dec(m), impurity: dec(i), broken: dec(b), damaged: dec(d) }
    }

    #[test]
    fn discount_vectors() {
        for mode in [DiscountMode::Corrected, DiscountMode::Verbatim] {
            assert_eq!(discount(&inputs("11", "2", "4", "2"), mode), Decimal::ZERO);
            assert_eq!(discount(&inputs("14", "3", "5", "3"), mode), dec("8.0"));
        }
        let x = inputs("13", "5", "8", "4");
        assert_eq!(discount(&x, DiscountMode::Corrected), dec("15.5"));
        assert_eq!(discount(&x, DiscountMode::Verbatim), dec("24.0"));
    }

    #[test]
    fn contribution_vectors() {
        assert_eq!(contribution_kg(dec("27000"), dec("8.0")), dec("24840"));
        assert_eq!(contribution_kg(dec("27000"), Decimal::ZERO), dec("27000"));
        assert_eq!(net_weight(dec("42000"), dec("15000")).unwrap(), dec("27000"));
        assert!(net_weight(dec("15000"), dec("15000")).is_err());
    }

    #[test]
    fn premium_pricing() {
        assert_eq!(lot_price(dec("1.00"), true, dec("0.15")), dec("1.15"));
        assert_eq!(lot_price(dec("1.00"), false, dec("0.15")), dec("1.00"));
        assert_eq!(lot_price(dec("0.33335"), false, dec("0.15")), dec("0.3334"));
        assert_eq!(lot_price(dec("0.33345"), false, dec("0.15")), dec("0.3334"));
    }

    #[test]
    fn default_limits() {
        let cfg = GrainConfig::default();
        assert!(cfg.limit(GMO).unwrap().passes(dec("0.3")));
        assert!(!cfg.limit(GMO).unwrap().passes(dec("0.9")));
        assert!(!cfg.limit("aflatoxin").unwrap().passes(dec("25")));
        assert!(cfg.limit("aflatoxin").unwrap().passes(dec("20")));
        assert_eq!(cfg.limit("zearalenone").unwrap_err().code(), "UnknownAnalyte");
        cfg.check().unwrap();
    }

    fn pct() -> impl Strategy<Value = Decimal> {
        (0u32..=4000).prop_map(|n| Decimal::new(n as i64, 2))
    }

    proptest! {
        #[test]
        fn corrected_is_zero_in_free_region(
            m in 0u32..=1200, i in 0u32..=300, b in 0u32..=500, d in 0u32..=300
        ) {
            let x = DiscountInputs {
                moisture: Decimal::new(m as i64, 2),
                impurity: Decimal::new(i as i64, 2),
                broken: Decimal::new(b as i64, 2),
                damaged: Decimal::new(d as i64, 2),
            };
            prop_assert_eq!(discount(&x, DiscountMode::Corrected), Decimal::ZERO);
        }

        #[test]
        fn corrected_monotone_in_each_field(
            m in pct(), i in pct(), b in pct(), d in pct(), bump in 1u32..500, field in 0usize..4
        ) {
            let x = DiscountInputs { moisture: m, impurity: i, broken: b, damaged: d };
            let mut y = x;
            let delta = Decimal::new(bump as i64, 2);
            match field {
                0 => y.moisture += delta,
                1 => y.impurity += delta,
                2 => y.broken += delta,
                _ => y.damaged += delta,
            }
            prop_assert!(discount(&y, DiscountMode::Corrected) >= discount(&x, DiscountMode::Corrected));
        }

        #[test]
        fn verbatim_ignores_broken_and_damaged_magnitudes(
            m in pct(), i in pct(), b1 in pct(), b2 in pct(), d1 in pct(), d2 in pct()
        ) {
            let (five, three) = (Decimal::from(5), Decimal::from(3));
            prop_assume!((b1 > five) == (b2 > five) && (d1 > three) == (d2 > three));
            let a = DiscountInputs { moisture: m, impurity: i, broken: b1, damaged: d1 };
            let c = DiscountInputs { moisture: m, impurity: i, broken: b2, damaged: d2 };
            prop_assert_eq!(discount(&a, DiscountMode::Verbatim), discount(&c, DiscountMode::Verbatim));
        }

        #[test]
        fn corrected_continuous_at_thresholds(i in pct(), b in pct(), d in pct()) {
            let at = DiscountInputs { moisture: Decimal::from(12), impurity: i, broken: b, damaged: d };
            let above = DiscountInputs { moisture: Decimal::new(120001, 4), ..at };
            let gap = discount(&above, DiscountMode::Corrected) - discount(&at, DiscountMode::Corrected);
            prop_assert_eq!(gap, Decimal::new(4, 4));
        }
    }
}
