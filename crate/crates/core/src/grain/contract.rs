use rust_decimal::Decimal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::registries::{CONFIG, EXTRINSIC, INTAKE, INTRINSIC, LOT, SILO, WEIGH_TICKET};
use super::*;
use crate::contract::{parse_args, to_doc, Contract, ContractAbort, TxContext};
use crate::doc::Doc;
use crate::qa::MoistureReading;

pub const GRAIN: &str = "grain";

pub const OPERATIONS: &[&str] = &[
    "record_weigh_in",
    "record_extrinsic",
    "DiscountsTransaction",
    "record_intrinsic",
    "register_silo",
    "assign_silo",
    "create_outgoing_lot",
    "configure",
];

/// The grain exporters' business contract.
#[derive(Debug, Clone, Copy, Default)]
pub struct GrainContract;

#[derive(Deserialize)]
struct WeighInArgs {
    #[serde(rename = "Invoice_Number")]
    invoice_number: String,
    producer_id: String,
    truck_plate: String,
    gross_kg: Decimal,
    tare_kg: Decimal,
    #[serde(default = "incoming")]
    direction: Direction,
    #[serde(default)]
    grain: Grain,
}

fn incoming() -> Direction {
    Direction::Incoming
}

#[derive(Deserialize)]
struct ExtrinsicArgs {
    #[serde(rename = "Invoice_Number")]
    invoice_number: String,
    #[serde(rename = "Sample_Number")]
    sample_number: String,
    #[serde(rename = "Moisture_Percent")]
    moisture_percent: Decimal,
    #[serde(rename = "Impurity_Percent")]
    impurity_percent: Decimal,
    #[serde(rename = "Broken_Percent")]
    broken_percent: Decimal,
    #[serde(rename = "Greenish_Percent")]
    greenish_percent: Decimal,
    #[serde(rename = "Damaged_Percent")]
    damaged_percent: Decimal,
    #[serde(default)]
    moisture_device: Option<MoistureReading>,
}

#[derive(Deserialize)]
struct DiscountArgs {
    #[serde(rename = "Invoice_Number", alias = "asset")]
    invoice_number: String,
    #[serde(default)]
    mode: Option<DiscountMode>,
}

#[derive(Deserialize)]
struct IntrinsicArgs {
    #[serde(rename = "Invoice_Number")]
    invoice_number: String,
    #[serde(rename = "Sample_Number")]
    sample_number: String,
    analyte: String,
    concentration: Decimal,
    strip_lot_id: String,
}

#[derive(Deserialize)]
struct SiloArgs {
    silo_id: String,
    #[serde(default)]
    grain: Grain,
}

#[derive(Deserialize)]
struct AssignArgs {
    #[serde(rename = "Invoice_Number")]
    invoice_number: String,
    silo_id: String,
}

#[derive(Deserialize)]
struct LotArgs {
    lot_id: String,
    silo_id: String,
    outgoing_tickets: Vec<String>,
    base_price_per_kg: Decimal,
}

#[derive(Serialize, Deserialize)]
struct ConfigureArgs {
    config: GrainConfig,
}

/// Typed registry access that maps missing/duplicate assets to grain errors.
struct Assets<'c, 'a> {
    ctx: &'c mut TxContext<'a>,
}

impl<'a> Assets<'_, 'a> {
    fn find<T: DeserializeOwned>(&mut self, registry: &str, id: &str) -> Result<Option<T>, ContractAbort> {
        let key = registries::key(registry, id);
        match self.ctx.get_state(&key) {
            None => Ok(None),
            Some(doc) => doc
                .to_typed()
                .map(Some)
                .map_err(|e| ContractAbort(format!("asset {key} is malformed: {e}"))),
        }
    }

    fn get<T: DeserializeOwned>(&mut self, registry: &str, id: &str) -> Result<T, ContractAbort> {
        self.find(registry, id)?
            .ok_or_else(|| GrainError::AssetNotFound(registries::key(registry, id)).into())
    }

    fn add<T: Serialize>(&mut self, registry: &str, id: &str, value: &T) -> Result<(), ContractAbort> {
        let key = registries::key(registry, id);
        if self.ctx.get_state(&key).is_some() {
            return Err(GrainError::DuplicateAsset(key).into());
        }
        self.ctx.put_state(&key, to_doc(value)?);
        Ok(())
    }

    fn put<T: Serialize>(&mut self, registry: &str, id: &str, value: &T) -> Result<(), ContractAbort> {
        self.ctx.put_state(&registries::key(registry, id), to_doc(value)?);
        Ok(())
    }

    fn config(&mut self) -> Result<GrainConfig, ContractAbort> {
        Ok(self.find(CONFIG, GrainConfig::ASSET_ID)?.unwrap_or_default())
    }
}

impl Contract for GrainContract {
    fn contract_id(&self) -> &'static str {
        GRAIN
    }

    fn operations(&self) -> &'static [&'static str] {
        OPERATIONS
    }

    fn invoke(&self, ctx: &mut TxContext<'_>, operation: &str, args: &Doc) -> Result<(), ContractAbort> {
        match operation {
            "record_weigh_in" => record_weigh_in(ctx, parse_args(args)?),
            "record_extrinsic" => record_extrinsic(ctx, parse_args(args)?),
            "DiscountsTransaction" => discounts_transaction(ctx, parse_args(args)?),
            "record_intrinsic" => record_intrinsic(ctx, parse_args(args)?),
            "register_silo" => register_silo(ctx, parse_args(args)?),
            "assign_silo" => assign_silo(ctx, parse_args(args)?),
            "create_outgoing_lot" => create_outgoing_lot(ctx, parse_args(args)?),
            "configure" => configure(ctx, parse_args(args)?),
            other => Err(ContractAbort(format!("unknown operation {other}"))),
        }
    }
}

fn record_weigh_in(ctx: &mut TxContext<'_>, a: WeighInArgs) -> Result<(), ContractAbort> {
    let net_kg = net_weight(a.gross_kg, a.tare_kg)?;
    let timestamp = ctx.timestamp();
    let mut assets = Assets { ctx };
    let id = WeighTicket::asset_id(&a.invoice_number, a.direction);
    if assets.find::<Doc>(WEIGH_TICKET, &id)?.is_some() {
        return Err(GrainError::DuplicateInvoice { invoice: a.invoice_number, direction: a.direction }.into());
    }
    let ticket = WeighTicket {
        invoice_number: a.invoice_number.clone(),
        producer_id: a.producer_id.clone(),
        truck_plate: a.truck_plate,
        gross_kg: a.gross_kg,
        tare_kg: a.tare_kg,
        net_kg,
        direction: a.direction,
        timestamp,
        grain: a.grain,
    };
    assets.put(WEIGH_TICKET, &id, &ticket)?;
    if a.direction == Direction::Incoming {
        let case = IntakeCase {
            invoice_number: a.invoice_number.clone(),
            producer_id: a.producer_id,
            grain: a.grain,
            net_kg,
            opened_at: timestamp,
            silo_id: None,
            lot_window: None,
            contribution_kg: None,
        };
        assets.add(INTAKE, &a.invoice_number, &case)?;
    }
    Ok(())
}

fn require_incoming_ticket(assets: &mut Assets<'_, '_>, invoice: &str) -> Result<WeighTicket, ContractAbort> {
    assets
        .find(WEIGH_TICKET, &WeighTicket::asset_id(invoice, Direction::Incoming))?
        .ok_or_else(|| GrainError::NoWeighTicket(invoice.to_string()).into())
}

fn record_extrinsic(ctx: &mut TxContext<'_>, a: ExtrinsicArgs) -> Result<(), ContractAbort> {
    for (field, v) in [
        ("Moisture_Percent", a.moisture_percent),
        ("Impurity_Percent", a.impurity_percent),
        ("Broken_Percent", a.broken_percent),
        ("Greenish_Percent", a.greenish_percent),
        ("Damaged_Percent", a.damaged_percent),
    ] {
        check_percent(field, v)?;
    }
    let (operator, date) = (ctx.submitter().to_string(), ctx.timestamp());
    let mut assets = Assets { ctx };
    require_incoming_ticket(&mut assets, &a.invoice_number)?;
    let asset = ExtrinsicAnalysis {
        invoice_number: a.invoice_number.clone(),
        operator,
        date,
        sample_number: a.sample_number,
        moisture_percent: a.moisture_percent,
        impurity_percent: a.impurity_percent,
        broken_percent: a.broken_percent,
        greenish_percent: a.greenish_percent,
        damaged_percent: a.damaged_percent,
        total_discounts_kg: None,
        moisture_device: a.moisture_device,
    };
    assets.add(EXTRINSIC, &a.invoice_number, &asset)
}

fn discounts_transaction(ctx: &mut TxContext<'_>, a: DiscountArgs) -> Result<(), ContractAbort> {
    let mut assets = Assets { ctx };
    let mut asset: ExtrinsicAnalysis = assets.get(EXTRINSIC, &a.invoice_number)?;
    if let Some(IntakeCase { silo_id: Some(silo), .. }) = assets.find(INTAKE, &a.invoice_number)? {
        return Err(GrainError::AlreadyAssigned { invoice: a.invoice_number, silo }.into());
    }
    let mode = match a.mode {
        Some(mode) => mode,
        None => assets.config()?.discount_mode,
    };
    let d = discount(&asset.discount_inputs(), mode);
    if d.is_sign_negative() && !d.is_zero() {
        return Err(GrainError::NegativeDiscount { invoice: a.invoice_number, value: d }.into());
    }
    asset.total_discounts_kg = Some(round4(d));
    assets.put(EXTRINSIC, &a.invoice_number, &asset)?;
    let event = Doc::map().with("asset", to_doc(&asset)?);
    ctx.emit("DiscountsEvent", event);
    Ok(())
}

fn record_intrinsic(ctx: &mut TxContext<'_>, a: IntrinsicArgs) -> Result<(), ContractAbort> {
    if a.concentration.is_sign_negative() && !a.concentration.is_zero() {
        return Err(GrainError::OutOfRange {
            field: "concentration",
            value: a.concentration,
            min: Decimal::ZERO,
            max: Decimal::MAX,
        }
        .into());
    }
    let (operator, date) = (ctx.submitter().to_string(), ctx.timestamp());
    let mut assets = Assets { ctx };
    require_incoming_ticket(&mut assets, &a.invoice_number)?;
    let pass = assets.config()?.limit(&a.analyte)?.passes(a.concentration);
    let asset = IntrinsicAnalysis {
        invoice_number: a.invoice_number.clone(),
        sample_number: a.sample_number,
        analyte: a.analyte.clone(),
        concentration: round4(a.concentration),
        strip_lot_id: a.strip_lot_id,
        operator,
        date,
        pass,
    };
    assets.add(INTRINSIC, &IntrinsicAnalysis::asset_id(&a.invoice_number, &a.analyte), &asset)
}

fn register_silo(ctx: &mut TxContext<'_>, a: SiloArgs) -> Result<(), ContractAbort> {
    let silo = Silo { silo_id: a.silo_id.clone(), grain: a.grain, current_lot_window: 0, contributions: vec![] };
    Assets { ctx }.add(SILO, &a.silo_id, &silo)
}

fn assign_silo(ctx: &mut TxContext<'_>, a: AssignArgs) -> Result<(), ContractAbort> {
    let invoice = a.invoice_number;
    let missing = |what: &str| incomplete(&invoice, what);
    let mut assets = Assets { ctx };
    let Some(mut case) = assets.find::<IntakeCase>(INTAKE, &invoice)? else {
        return Err(missing("no incoming weigh ticket"));
    };
    if let Some(silo) = case.silo_id {
        return Err(GrainError::AlreadyAssigned { invoice: invoice.clone(), silo }.into());
    }
    let Some(extrinsic) = assets.find::<ExtrinsicAnalysis>(EXTRINSIC, &invoice)? else {
        return Err(missing("extrinsic analysis missing"));
    };
    let Some(d) = extrinsic.total_discounts_kg else {
        return Err(missing("discounts not computed"));
    };
    let config = assets.config()?;
    let mut any_intrinsic = false;
    for analyte in config.analytes.keys() {
        let id = IntrinsicAnalysis::asset_id(&invoice, analyte);
        any_intrinsic |= assets.find::<Doc>(INTRINSIC, &id)?.is_some();
    }
    if !any_intrinsic {
        return Err(missing("intrinsic analysis missing"));
    }
    let mut silo: Silo = assets.get(SILO, &a.silo_id)?;
    if silo.grain != case.grain {
        return Err(GrainError::GrainMismatch {
            silo: silo.silo_id,
            silo_grain: silo.grain,
            invoice: invoice.clone(),
            cargo_grain: case.grain,
        }
        .into());
    }
    if d > Decimal::ONE_HUNDRED {
        return Err(GrainError::OutOfRange {
            field: "Total_Discounts_KG",
            value: d,
            min: Decimal::ZERO,
            max: Decimal::ONE_HUNDRED,
        }
        .into());
    }
    let kg = contribution_kg(case.net_kg, d);
    silo.contributions.push(Contribution { invoice_number: invoice.clone(), net_kg_after_discounts: kg });
    case.silo_id = Some(silo.silo_id.clone());
    case.lot_window = Some(silo.current_lot_window);
    case.contribution_kg = Some(kg);
    assets.put(SILO, &a.silo_id, &silo)?;
    assets.put(INTAKE, &invoice, &case)
}

fn incomplete(invoice: &str, missing: &str) -> ContractAbort {
    GrainError::IncompleteIntake { invoice: invoice.to_string(), missing: missing.to_string() }.into()
}

fn create_outgoing_lot(ctx: &mut TxContext<'_>, a: LotArgs) -> Result<(), ContractAbort> {
    if a.outgoing_tickets.is_empty() {
        return Err(ContractAbort::bad_args("outgoing_tickets must not be empty"));
    }
    if a.base_price_per_kg.is_sign_negative() && !a.base_price_per_kg.is_zero() {
        return Err(ContractAbort::bad_args("base_price_per_kg must not be negative"));
    }
    let created_at = ctx.timestamp();
    let mut assets = Assets { ctx };
    if assets.find::<Doc>(LOT, &a.lot_id)?.is_some() {
        return Err(GrainError::DuplicateAsset(registries::key(LOT, &a.lot_id)).into());
    }
    let mut silo: Silo = assets.get(SILO, &a.silo_id)?;
    if silo.contributions.is_empty() {
        return Err(GrainError::EmptySilo(a.silo_id).into());
    }
    for t in &a.outgoing_tickets {
        let id = WeighTicket::asset_id(t, Direction::Outgoing);
        if assets.find::<Doc>(WEIGH_TICKET, &id)?.is_none() {
            return Err(GrainError::UncommittedTicket(t.clone()).into());
        }
    }
    let config = assets.config()?;
    let threshold = config.gm_free_threshold();
    let mut certified = true;
    for c in &silo.contributions {
        let id = IntrinsicAnalysis::asset_id(&c.invoice_number, GMO);
        let gmo: Option<IntrinsicAnalysis> = assets.find(INTRINSIC, &id)?;
        certified &= gmo.is_some_and(|g| g.concentration < threshold);
    }
    let lot = Lot {
        lot_id: a.lot_id.clone(),
        silo_id: silo.silo_id.clone(),
        lot_window: silo.current_lot_window,
        outgoing_tickets: a.outgoing_tickets,
        contributions: std::mem::take(&mut silo.contributions),
        gm_free_certified: certified,
        gm_free_threshold: threshold,
        premium: config.gm_free_premium,
        base_price_per_kg: a.base_price_per_kg,
        final_price_per_kg: lot_price(a.base_price_per_kg, certified, config.gm_free_premium),
        created_at,
    };
    silo.current_lot_window += 1;
    assets.put(LOT, &a.lot_id, &lot)?;
    assets.put(SILO, &a.silo_id, &silo)
}

fn configure(ctx: &mut TxContext<'_>, a: ConfigureArgs) -> Result<(), ContractAbort> {
    a.config.check()?;
    let mut assets = Assets { ctx };
    assets.put(CONFIG, GrainConfig::ASSET_ID, &a.config)?;
    ctx.emit("GrainConfigured", to_doc(&a.config)?);
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::contract::{deployment_key, ContractDefinition, Deployment, Engine, InvokeError, Invocation};
    use crate::identity::{AccessControlList, Role};
    use crate::ledger::{Version, WorldState};
    use std::str::FromStr;

    pub(crate) fn dec(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    /// Applies invocations directly to a state, one per pseudo-block.
    pub(crate) struct Harness {
        pub engine: Engine,
        pub state: WorldState,
        pub acl: AccessControlList,
        height: u64,
    }

    impl Harness {
        pub fn new() -> Self {
            let mut state = WorldState::new();
            let manifest = ContractDefinition {
                contract_id: GRAIN.into(),
                version: 1,
                operations: OPERATIONS.iter().map(|s| s.to_string()).collect(),
                endorsement_policy_ref: "MAJORITY_ORGS".into(),
            };
            let dep = Deployment { manifest_hash: manifest.manifest_hash(), manifest };
            state.apply(
                &[crate::ledger::WriteEntry { key: deployment_key(GRAIN), value: to_doc(&dep).unwrap() }],
                Version::new(0, 0),
            );
            Harness {
                engine: Engine::new().with_contract(GrainContract),
                state,
                acl: AccessControlList::consortium_default(),
                height: 1,
            }
        }

        pub fn run(&mut self, role: Role, op: &str, args: Doc) -> Result<crate::ledger::ReadWriteSet, InvokeError> {
            let inv = Invocation {
                channel_id: "gebn-main",
                contract_id: GRAIN,
                operation: op,
                args: &args,
                submitter: "p-test",
                role,
                timestamp: 1_700_000_000_000 + self.height,
            };
            let rw = self.engine.invoke(&self.state, &self.acl, &inv)?;
            self.state.apply(&rw.writes, Version::new(self.height, 0));
            self.height += 1;
            Ok(rw)
        }

        pub fn asset<T: DeserializeOwned>(&self, registry: &str, id: &str) -> T {
            self.state.get(&registries::key(registry, id)).unwrap().value.to_typed().unwrap()
        }

        pub fn intake(&mut self, invoice: &str, m: &str, gmo: &str) {
            self.run(Role::WarehouseOperator, "record_weigh_in", weigh_in(invoice, "42000", "15000")).unwrap();
            self.run(Role::QaOperator, "record_extrinsic", extrinsic(invoice, m, "3", "5", "3")).unwrap();
            self.run(Role::QaOperator, "DiscountsTransaction", Doc::map().with("Invoice_Number", invoice)).unwrap();
            self.run(Role::QaOperator, "record_intrinsic", intrinsic(invoice, "GMO", gmo)).unwrap();
        }
    }

    pub(crate) fn weigh_in(invoice: &str, gross: &str, tare: &str) -> Doc {
        Doc::map()
            .with("Invoice_Number", invoice)
            .with("producer_id", "p-prod-001")
            .with("truck_plate", "ABC-1234")
            .with("gross_kg", dec(gross))
            .with("tare_kg", dec(tare))
    }

    pub(crate) fn extrinsic(invoice: &str, m: &str, i: &str, b: &str, d: &str) -> Doc {
        Doc::map()
            .with("Invoice_Number", invoice)
            .with("Sample_Number", format!("S-{invoice}"))
            .with("Moisture_Percent", dec(m))
            .with("Impurity_Percent", dec(i))
            .with("Broken_Percent", dec(b))
            .with("Greenish_Percent", dec("1"))
            .with("Damaged_Percent", dec(d))
    }

    pub(crate) fn intrinsic(invoice: &str, analyte: &str, c: &str) -> Doc {
        Doc::map()
            .with("Invoice_Number", invoice)
            .with("Sample_Number", format!("S-{invoice}"))
            .with("analyte", analyte)
            .with("concentration", dec(c))
            .with("strip_lot_id", "SL-1")
    }

    fn abort_code(r: Result<crate::ledger::ReadWriteSet, InvokeError>) -> String {
        match r {
            Err(InvokeError::ContractAbort(m)) => m.split(':').next().unwrap().to_string(),
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn weigh_in_vectors() {
        let mut h = Harness::new();
        h.run(Role::WarehouseOperator, "record_weigh_in", weigh_in("NF-1", "42000", "15000")).unwrap();
        let t: WeighTicket = h.asset(registries::WEIGH_TICKET, "NF-1/incoming");
        assert_eq!(t.net_kg, dec("27000"));
        let bad = h.run(Role::WarehouseOperator, "record_weigh_in", weigh_in("NF-2", "15000", "15000"));
        assert_eq!(abort_code(bad), "BadWeights");
        let dup = h.run(Role::QaOperator, "record_weigh_in", weigh_in("NF-1", "42000", "15000"));
        assert_eq!(abort_code(dup), "DuplicateInvoice");
        let out = weigh_in("NF-1", "42000", "15000").with("direction", "outgoing");
        h.run(Role::WarehouseOperator, "record_weigh_in", out).unwrap();
    }

    #[test]
    fn discounts_transaction_updates_and_emits() {
        let mut h = Harness::new();
        h.run(Role::WarehouseOperator, "record_weigh_in", weigh_in("NF-1", "42000", "15000")).unwrap();
        h.run(Role::QaOperator, "record_extrinsic", extrinsic("NF-1", "14", "3", "5", "3")).unwrap();
        let rw = h
            .run(Role::QaOperator, "DiscountsTransaction", Doc::map().with("Invoice_Number", "NF-1"))
            .unwrap();
        assert_eq!(rw.writes.len(), 1);
        assert_eq!(rw.events.len(), 1);
        assert_eq!(rw.events[0].event_name, "DiscountsEvent");
        let a: ExtrinsicAnalysis = h.asset(registries::EXTRINSIC, "NF-1");
        assert_eq!(a.total_discounts_kg, Some(dec("8")));
        let missing = h.run(Role::QaOperator, "DiscountsTransaction", Doc::map().with("Invoice_Number", "NF-9"));
        assert_eq!(abort_code(missing), "AssetNotFound");
    }

    #[test]
    fn verbatim_mode_and_negative_guard() {
        let mut h = Harness::new();
        h.run(Role::WarehouseOperator, "record_weigh_in", weigh_in("NF-1", "42000", "15000")).unwrap();
        h.run(Role::QaOperator, "record_extrinsic", extrinsic("NF-1", "13", "5", "8", "4")).unwrap();
        let args = Doc::map().with("Invoice_Number", "NF-1").with("mode", "verbatim");
        h.run(Role::QaOperator, "DiscountsTransaction", args).unwrap();
        let a: ExtrinsicAnalysis = h.asset(registries::EXTRINSIC, "NF-1");
        assert_eq!(a.total_discounts_kg, Some(dec("24")));

        h.run(Role::WarehouseOperator, "record_weigh_in", weigh_in("NF-2", "42000", "15000")).unwrap();
        h.run(Role::QaOperator, "record_extrinsic", extrinsic("NF-2", "4", "1", "8", "1")).unwrap();
        let args = Doc::map().with("Invoice_Number", "NF-2").with("mode", "verbatim");
        assert_eq!(abort_code(h.run(Role::QaOperator, "DiscountsTransaction", args)), "NegativeDiscount");
    }

    #[test]
    fn intrinsic_rules() {
        let mut h = Harness::new();
        assert_eq!(
            abort_code(h.run(Role::QaOperator, "record_intrinsic", intrinsic("NF-1", "GMO", "0.3"))),
            "NoWeighTicket"
        );
        h.run(Role::WarehouseOperator, "record_weigh_in", weigh_in("NF-1", "42000", "15000")).unwrap();
        h.run(Role::QaOperator, "record_intrinsic", intrinsic("NF-1", "GMO", "0.3")).unwrap();
        h.run(Role::QaOperator, "record_intrinsic", intrinsic("NF-1", "aflatoxin", "25")).unwrap();
        let g: IntrinsicAnalysis = h.asset(registries::INTRINSIC, "NF-1/GMO");
        let a: IntrinsicAnalysis = h.asset(registries::INTRINSIC, "NF-1/aflatoxin");
        assert!(g.pass);
        assert!(!a.pass);
        assert_eq!(
            abort_code(h.run(Role::QaOperator, "record_intrinsic", intrinsic("NF-1", "zearalenone", "1"))),
            "UnknownAnalyte"
        );
        let denied = h.run(Role::WarehouseOperator, "record_intrinsic", intrinsic("NF-1", "DON", "1"));
        assert!(matches!(denied, Err(InvokeError::AclDenied { .. })));
    }

    #[test]
    fn silo_assignment() {
        let mut h = Harness::new();
        h.run(Role::WarehouseOperator, "register_silo", Doc::map().with("silo_id", "A")).unwrap();
        h.run(Role::WarehouseOperator, "register_silo", Doc::map().with("silo_id", "C").with("grain", "corn"))
            .unwrap();
        h.run(Role::WarehouseOperator, "record_weigh_in", weigh_in("NF-1", "42000", "15000")).unwrap();
        h.run(Role::QaOperator, "record_extrinsic", extrinsic("NF-1", "14", "3", "5", "3")).unwrap();
        let assign = |inv: &str, silo: &str| Doc::map().with("Invoice_Number", inv).with("silo_id", silo);
        assert_eq!(
            abort_code(h.run(Role::QaOperator, "assign_silo", assign("NF-1", "A"))),
            "IncompleteIntake"
        );
        h.run(Role::QaOperator, "DiscountsTransaction", Doc::map().with("Invoice_Number", "NF-1")).unwrap();
        assert_eq!(
            abort_code(h.run(Role::QaOperator, "assign_silo", assign("NF-1", "A"))),
            "IncompleteIntake"
        );
        h.run(Role::QaOperator, "record_intrinsic", intrinsic("NF-1", "GMO", "0.3")).unwrap();
        assert_eq!(abort_code(h.run(Role::QaOperator, "assign_silo", assign("NF-1", "C"))), "GrainMismatch");
        h.run(Role::QaOperator, "assign_silo", assign("NF-1", "A")).unwrap();
        let silo: Silo = h.asset(registries::SILO, "A");
        assert_eq!(silo.contributions[0].net_kg_after_discounts, dec("24840"));
        assert_eq!(abort_code(h.run(Role::QaOperator, "assign_silo", assign("NF-1", "A"))), "AlreadyAssigned");
        assert_eq!(
            abort_code(h.run(Role::QaOperator, "DiscountsTransaction", Doc::map().with("Invoice_Number", "NF-1"))),
            "AlreadyAssigned"
        );
    }

    fn lot_args(lot: &str, silo: &str, tickets: &[&str]) -> Doc {
        Doc::map()
            .with("lot_id", lot)
            .with("silo_id", silo)
            .with("outgoing_tickets", Doc::List(tickets.iter().map(|t| Doc::from(*t)).collect()))
            .with("base_price_per_kg", dec("1.00"))
    }

    #[test]
    fn lots_certify_and_price() {
        let mut h = Harness::new();
        for s in ["A", "B"] {
            h.run(Role::WarehouseOperator, "register_silo", Doc::map().with("silo_id", s)).unwrap();
        }
        assert_eq!(abort_code(h.run(Role::WarehouseOperator, "create_outgoing_lot", lot_args("L1", "A", &["O1"]))), "EmptySilo");
        for (inv, gmo, silo) in [("NF-1", "0.3", "A"), ("NF-2", "0.89", "A"), ("NF-3", "0.1", "B"), ("NF-4", "2.0", "B")] {
            h.intake(inv, "14", gmo);
            h.run(Role::QaOperator, "assign_silo", Doc::map().with("Invoice_Number", inv).with("silo_id", silo))
                .unwrap();
        }
        assert_eq!(
            abort_code(h.run(Role::WarehouseOperator, "create_outgoing_lot", lot_args("L1", "A", &["O1"]))),
            "UncommittedTicket"
        );
        for t in ["O1", "O2"] {
            let out = weigh_in(t, "40000", "14000").with("direction", "outgoing");
            h.run(Role::WarehouseOperator, "record_weigh_in", out).unwrap();
        }
        h.run(Role::Trader, "create_outgoing_lot", lot_args("L1", "A", &["O1"])).unwrap();
        h.run(Role::WarehouseOperator, "create_outgoing_lot", lot_args("L2", "B", &["O2"])).unwrap();
        let l1: Lot = h.asset(registries::LOT, "L1");
        let l2: Lot = h.asset(registries::LOT, "L2");
        assert!(l1.gm_free_certified);
        assert_eq!(l1.final_price_per_kg, dec("1.15"));
        assert!(!l2.gm_free_certified);
        assert_eq!(l2.final_price_per_kg, dec("1.00"));
        let a: Silo = h.asset(registries::SILO, "A");
        assert_eq!((a.current_lot_window, a.contributions.len()), (1, 0));
        assert_eq!(
            abort_code(h.run(Role::WarehouseOperator, "create_outgoing_lot", lot_args("L3", "A", &["O1"]))),
            "EmptySilo"
        );
    }

    #[test]
    fn configure_is_admin_only_and_applies() {
        let mut h = Harness::new();
        let cfg = GrainConfig { discount_mode: DiscountMode::Verbatim, ..Default::default() };
        let args = to_doc(&ConfigureArgs { config: cfg }).unwrap();
        assert!(matches!(h.run(Role::QaOperator, "configure", args.clone()), Err(InvokeError::AclDenied { .. })));
        h.run(Role::Admin, "configure", args).unwrap();
        h.run(Role::WarehouseOperator, "record_weigh_in", weigh_in("NF-1", "42000", "15000")).unwrap();
        h.run(Role::QaOperator, "record_extrinsic", extrinsic("NF-1", "13", "5", "8", "4")).unwrap();
        h.run(Role::QaOperator, "DiscountsTransaction", Doc::map().with("Invoice_Number", "NF-1")).unwrap();
        let a: ExtrinsicAnalysis = h.asset(registries::EXTRINSIC, "NF-1");
        assert_eq!(a.total_discounts_kg, Some(dec("24")));
    }

    #[test]
    fn percent_range_enforced() {
        let mut h = Harness::new();
        h.run(Role::WarehouseOperator, "record_weigh_in", weigh_in("NF-1", "42000", "15000")).unwrap();
        let bad = h.run(Role::QaOperator, "record_extrinsic", extrinsic("NF-1", "101", "3", "5", "3"));
        assert_eq!(abort_code(bad), "OutOfRange");
    }
}
