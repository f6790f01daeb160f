use std::collections::BTreeSet;
use std::io::Read;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::GMO;
use crate::doc::Doc;
use crate::identity::Role;

pub const CSV_HEADER: [&str; 12] =
    ["invoice", "producer", "gross_kg", "tare_kg", "M", "I", "B", "G", "D", "analyte", "concentration", "silo"];

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("header must be {expected}, found {found}")]
    Header { expected: String, found: String },
    #[error("line {line}: column {column}: {message}")]
    Field { line: u64, column: &'static str, message: String },
}

/// One intake, as a scenario CSV row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntakeRow {
    pub invoice: String,
    pub producer: String,
    pub gross_kg: Decimal,
    pub tare_kg: Decimal,
    #[serde(rename = "M")]
    pub moisture: Decimal,
    #[serde(rename = "I")]
    pub impurity: Decimal,
    #[serde(rename = "B")]
    pub broken: Decimal,
    #[serde(rename = "G")]
    pub greenish: Decimal,
    #[serde(rename = "D")]
    pub damaged: Decimal,
    pub analyte: String,
    pub concentration: Decimal,
    pub silo: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotDirective {
    pub lot_id: String,
    pub silo: String,
    pub base_price_per_kg: Decimal,
    pub outgoing_invoice: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub intakes: Vec<IntakeRow>,
    pub lots: Vec<LotDirective>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Silos,
    WeighIn,
    Extrinsic,
    Discounts,
    Intrinsic,
    /// Contends on the silo asset; submit one at a time.
    Assign,
    Outgoing,
    /// Contends on the silo asset; submit one at a time.
    Lots,
}

impl Phase {
    pub fn is_serial(self) -> bool {
        matches!(self, Phase::Assign | Phase::Lots)
    }
}

/// One transaction of an expanded scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub phase: Phase,
    /// Index into `Scenario::intakes`, for intake steps.
    pub row: Option<usize>,
    /// Invoice, silo, or lot the step concerns.
    pub subject: String,
    pub role: Role,
    pub operation: &'static str,
    pub args: Doc,
}

fn field(line: u64, column: &'static str, raw: &str) -> Result<Decimal, ScenarioError> {
    Decimal::from_str(raw.trim()).map_err(|e| ScenarioError::Field { line, column, message: e.to_string() })
}

impl Scenario {
    /// Reads the CSV format; lots default to one per silo.
    pub fn from_csv<R: Read>(reader: R, seed: u64) -> Result<Self, ScenarioError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(ScenarioError::Header { expected: CSV_HEADER.join(","), found: header.join(",") });
        }
        let mut intakes = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let text = |i: usize| rec.get(i).unwrap_or("").to_string();
            let num = |i: usize| field(line, CSV_HEADER[i], rec.get(i).unwrap_or(""));
            intakes.push(IntakeRow {
                invoice: text(0),
                producer: text(1),
                gross_kg: num(2)?,
                tare_kg: num(3)?,
                moisture: num(4)?,
                impurity: num(5)?,
                broken: num(6)?,
                greenish: num(7)?,
                damaged: num(8)?,
                analyte: text(9),
                concentration: num(10)?,
                silo: text(11),
            });
        }
        Ok(Self::with_default_lots(seed, intakes))
    }

    pub fn with_default_lots(seed: u64, intakes: Vec<IntakeRow>) -> Self {
        let lots = silos_in_order(&intakes)
            .into_iter()
            .map(|silo| LotDirective {
                lot_id: format!("LOT-{silo}-1"),
                outgoing_invoice: format!("OUT-{silo}-1"),
                silo,
                base_price_per_kg: Decimal::ONE,
            })
            .collect();
        Scenario { seed, intakes, lots }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.intakes {
            w.write_record([
                r.invoice.clone(),
                r.producer.clone(),
                r.gross_kg.to_string(),
                r.tare_kg.to_string(),
                r.moisture.to_string(),
                r.impurity.to_string(),
                r.broken.to_string(),
                r.greenish.to_string(),
                r.damaged.to_string(),
                r.analyte.clone(),
                r.concentration.to_string(),
                r.silo.clone(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
    }

    /// Random but plausible intakes spread over `silos` silos.
    pub fn generate(seed: u64, intakes: usize, silos: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dec = |lo: i64, hi: i64, scale: u32| Decimal::new(rng.gen_range(lo..=hi), scale);
        let rows = (0..intakes)
            .map(|i| {
                let gmo = i % 5 != 4;
                IntakeRow {
                    invoice: format!("NF-{seed}-{i:05}"),
                    producer: format!("p-prod-{:03}", i % 7 + 1),
                    gross_kg: dec(35_000, 50_000, 0),
                    tare_kg: dec(12_000, 18_000, 0),
                    moisture: dec(100, 160, 1),
                    impurity: dec(10, 50, 1),
                    broken: dec(20, 90, 1),
                    greenish: dec(0, 40, 1),
                    damaged: dec(10, 50, 1),
                    analyte: if gmo { GMO.into() } else { "aflatoxin".into() },
                    concentration: if gmo { dec(0, 150, 2) } else { dec(0, 400, 1) },
                    silo: format!("S{}", i % silos.max(1) + 1),
                }
            })
            .collect();
        Self::with_default_lots(seed, rows)
    }

    /// Deterministic transaction sequence for the whole scenario, grouped by phase.
    pub fn expand(&self) -> Vec<Step> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut steps = Vec::new();
        let mut silos = silos_in_order(&self.intakes);
        for l in &self.lots {
            if !silos.contains(&l.silo) {
                silos.push(l.silo.clone());
            }
        }
        for s in &silos {
            steps.push(Step {
                phase: Phase::Silos,
                row: None,
                subject: s.clone(),
                role: Role::WarehouseOperator,
                operation: "register_silo",
                args: Doc::map().with("silo_id", s.as_str()).with("grain", "soy"),
            });
        }
        let plates: Vec<String> = self.intakes.iter().map(|_| plate(&mut rng)).collect();
        let intake = |phase, row: usize, role, operation, args| Step {
            phase,
            row: Some(row),
            subject: self.intakes[row].invoice.clone(),
            role,
            operation,
            args,
        };
        for (i, r) in self.intakes.iter().enumerate() {
            let args = Doc::map()
                .with("Invoice_Number", r.invoice.as_str())
                .with("producer_id", r.producer.as_str())
                .with("truck_plate", plates[i].as_str())
                .with("gross_kg", r.gross_kg)
                .with("tare_kg", r.tare_kg)
                .with("direction", "incoming")
                .with("grain", "soy");
            steps.push(intake(Phase::WeighIn, i, Role::WarehouseOperator, "record_weigh_in", args));
        }
        for (i, r) in self.intakes.iter().enumerate() {
            let args = Doc::map()
                .with("Invoice_Number", r.invoice.as_str())
                .with("Sample_Number", format!("S-{}", r.invoice))
                .with("Moisture_Percent", r.moisture)
                .with("Impurity_Percent", r.impurity)
                .with("Broken_Percent", r.broken)
                .with("Greenish_Percent", r.greenish)
                .with("Damaged_Percent", r.damaged);
            steps.push(intake(Phase::Extrinsic, i, Role::QaOperator, "record_extrinsic", args));
        }
        for (i, r) in self.intakes.iter().enumerate() {
            let args = Doc::map().with("Invoice_Number", r.invoice.as_str());
            steps.push(intake(Phase::Discounts, i, Role::QaOperator, "DiscountsTransaction", args));
        }
        for (i, r) in self.intakes.iter().enumerate() {
            let args = Doc::map()
                .with("Invoice_Number", r.invoice.as_str())
                .with("Sample_Number", format!("S-{}", r.invoice))
                .with("analyte", r.analyte.as_str())
                .with("concentration", r.concentration)
                .with("strip_lot_id", format!("SL-{}-{}", r.analyte, self.seed));
            steps.push(intake(Phase::Intrinsic, i, Role::QaOperator, "record_intrinsic", args));
        }
        for (i, r) in self.intakes.iter().enumerate() {
            let args = Doc::map().with("Invoice_Number", r.invoice.as_str()).with("silo_id", r.silo.as_str());
            steps.push(intake(Phase::Assign, i, Role::QaOperator, "assign_silo", args));
        }
        for l in &self.lots {
            let gross = Decimal::from(rng.gen_range(38_000i64..=46_000));
            let tare = Decimal::from(rng.gen_range(13_000i64..=16_000));
            let args = Doc::map()
                .with("Invoice_Number", l.outgoing_invoice.as_str())
                .with("producer_id", "export-buyer")
                .with("truck_plate", plate(&mut rng))
                .with("gross_kg", gross)
                .with("tare_kg", tare)
                .with("direction", "outgoing")
                .with("grain", "soy");
            steps.push(Step {
                phase: Phase::Outgoing,
                row: None,
                subject: l.outgoing_invoice.clone(),
                role: Role::WarehouseOperator,
                operation: "record_weigh_in",
                args,
            });
        }
        for l in &self.lots {
            let args = Doc::map()
                .with("lot_id", l.lot_id.as_str())
                .with("silo_id", l.silo.as_str())
                .with("outgoing_tickets", Doc::List(vec![Doc::from(l.outgoing_invoice.as_str())]))
                .with("base_price_per_kg", l.base_price_per_kg);
            steps.push(Step {
                phase: Phase::Lots,
                row: None,
                subject: l.lot_id.clone(),
                role: Role::WarehouseOperator,
                operation: "create_outgoing_lot",
                args,
            });
        }
        steps
    }
}

fn silos_in_order(rows: &[IntakeRow]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    rows.iter().filter(|r| seen.insert(r.silo.clone())).map(|r| r.silo.clone()).collect()
}

fn plate(rng: &mut ChaCha8Rng) -> String {
    let letters: String = (0..3).map(|_| rng.gen_range(b'A'..=b'Z') as char).collect();
    format!("{letters}-{:04}", rng.gen_range(0..10_000))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEMO: &str = "invoice,producer,gross_kg,tare_kg,M,I,B,G,D,analyte,concentration,silo
NF-1,p-prod-001,42000,15000,14,3,5,1,3,GMO,0.3,A
NF-2,p-prod-002,40000,14000,13,5,8,1,4,GMO,0.5,B
";

    #[test]
    fn parses_and_round_trips_csv() {
        let s = Scenario::from_csv(DEMO.as_bytes(), 7).unwrap();
        assert_eq!(s.intakes.len(), 2);
        assert_eq!(s.intakes[0].moisture, Decimal::from(14));
        assert_eq!(s.lots.iter().map(|l| l.silo.as_str()).collect::<Vec<_>>(), ["A", "B"]);
        let again = Scenario::from_csv(s.to_csv().as_bytes(), 7).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_bad_header_and_numbers() {
        let bad = DEMO.replacen("invoice", "inv", 1);
        assert!(matches!(Scenario::from_csv(bad.as_bytes(), 0), Err(ScenarioError::Header { .. })));
        let bad = DEMO.replacen("42000", "forty", 1);
        let err = Scenario::from_csv(bad.as_bytes(), 0).unwrap_err();
        assert!(matches!(err, ScenarioError::Field { line: 2, column: "gross_kg", .. }), "{err}");
    }

    #[test]
    fn expansion_is_deterministic() {
        let s = Scenario::generate(11, 30, 3);
        assert_eq!(s.expand(), s.expand());
        assert_eq!(Scenario::generate(11, 30, 3), s);
        assert_ne!(Scenario::generate(12, 30, 3).expand(), s.expand());
        let steps = s.expand();
        assert_eq!(steps.len(), 3 + 30 * 5 + 3 + 3);
        assert!(steps.windows(2).all(|w| w[0].phase <= w[1].phase));
    }
}
