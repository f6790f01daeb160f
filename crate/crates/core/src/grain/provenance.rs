use std::collections::HashMap;

use rust_decimal::Decimal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::registries::{self, EXTRINSIC, INTAKE, INTRINSIC, LOT, WEIGH_TICKET};
use super::{Direction, ExtrinsicAnalysis, GrainError, IntakeCase, IntrinsicAnalysis, Lot, WeighTicket};
use crate::ledger::{LedgerView, TxRef};

/// An asset together with the transaction that created it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linked<T> {
    pub asset: T,
    pub tx: TxRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntakeNode {
    pub invoice: String,
    pub producer_id: String,
    pub net_kg_after_discounts: Decimal,
    pub weigh_ticket: Linked<WeighTicket>,
    pub extrinsic: Linked<ExtrinsicAnalysis>,
    /// Sorted by analyte.
    pub intrinsic: Vec<Linked<IntrinsicAnalysis>>,
    pub discount_txs: Vec<TxRef>,
    pub silo_assignment: Option<TxRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceTree {
    pub lot: Linked<Lot>,
    pub silo_id: String,
    pub lot_window: u64,
    pub outgoing_tickets: Vec<Linked<WeighTicket>>,
    /// In contribution order.
    pub intakes: Vec<IntakeNode>,
}

struct Reader<'v> {
    view: &'v dyn LedgerView,
}

impl Reader<'_> {
    fn typed<T: DeserializeOwned>(&self, registry: &str, id: &str) -> Result<Option<T>, GrainError> {
        let key = registries::key(registry, id);
        match self.view.state().get(&key) {
            None => Ok(None),
            Some(e) => e
                .value
                .to_typed()
                .map(Some)
                .map_err(|err| GrainError::AssetNotFound(format!("{key} is malformed: {err}"))),
        }
    }

    fn linked<T: DeserializeOwned>(&self, registry: &str, id: &str) -> Result<Linked<T>, GrainError> {
        let key = registries::key(registry, id);
        let asset = self.typed(registry, id)?.ok_or_else(|| GrainError::AssetNotFound(key.clone()))?;
        let tx = *self.view.key_history(&key).first().ok_or(GrainError::AssetNotFound(key))?;
        Ok(Linked { asset, tx })
    }

    fn intrinsic(&self, invoice: &str) -> Result<Vec<Linked<IntrinsicAnalysis>>, GrainError> {
        let prefix = registries::key(INTRINSIC, &format!("{invoice}/"));
        let ids: Vec<String> = self
            .view
            .state()
            .scan_prefix(&prefix)
            .map(|(k, _)| k[INTRINSIC.len() + 1..].to_string())
            .collect();
        ids.iter().map(|id| self.linked(INTRINSIC, id)).collect()
    }
}

/// Committed DiscountsEvent transactions, by invoice.
pub(crate) fn discount_events(view: &dyn LedgerView) -> HashMap<String, Vec<TxRef>> {
    let mut out: HashMap<String, Vec<TxRef>> = HashMap::new();
    for e in view.events().iter().filter(|e| e.event_name == "DiscountsEvent") {
        let invoice = e.payload.get("asset").and_then(|a| a.get("Invoice_Number")).and_then(|i| i.as_str());
        if let Some(invoice) = invoice {
            let at = view.tx_record(&e.tx_id).map(|r| r.at).unwrap_or(TxRef {
                tx_id: e.tx_id,
                block_height: e.block_height,
                tx_index: 0,
            });
            out.entry(invoice.to_string()).or_default().push(at);
        }
    }
    out
}

pub(crate) fn intake_node(
    view: &dyn LedgerView,
    invoice: &str,
    discounts: &HashMap<String, Vec<TxRef>>,
) -> Result<IntakeNode, GrainError> {
    let r = Reader { view };
    let weigh_ticket: Linked<WeighTicket> =
        r.linked(WEIGH_TICKET, &WeighTicket::asset_id(invoice, Direction::Incoming))?;
    let extrinsic: Linked<ExtrinsicAnalysis> = r.linked(EXTRINSIC, invoice)?;
    let case: IntakeCase =
        r.typed(INTAKE, invoice)?.ok_or_else(|| GrainError::AssetNotFound(registries::key(INTAKE, invoice)))?;
    let history = view.key_history(&registries::key(INTAKE, invoice));
    let silo_assignment = case.silo_id.as_ref().and_then(|_| history.last().copied());
    Ok(IntakeNode {
        invoice: invoice.to_string(),
        producer_id: weigh_ticket.asset.producer_id.clone(),
        net_kg_after_discounts: case.contribution_kg.unwrap_or_default(),
        weigh_ticket,
        extrinsic,
        intrinsic: r.intrinsic(invoice)?,
        discount_txs: discounts.get(invoice).cloned().unwrap_or_default(),
        silo_assignment,
    })
}

/// Lot → silo window → contributing intakes, read from committed state and
/// the committed event log of one channel.
pub fn trace_lot_provenance(view: &dyn LedgerView, lot_id: &str) -> Result<ProvenanceTree, GrainError> {
    let r = Reader { view };
    let lot: Linked<Lot> = r.linked(LOT, lot_id).map_err(|_| GrainError::LotNotFound(lot_id.to_string()))?;
    let outgoing_tickets = lot
        .asset
        .outgoing_tickets
        .iter()
        .map(|t| r.linked(WEIGH_TICKET, &WeighTicket::asset_id(t, Direction::Outgoing)))
        .collect::<Result<_, _>>()?;
    let discounts = discount_events(view);
    let mut intakes = Vec::with_capacity(lot.asset.contributions.len());
    for c in &lot.asset.contributions {
        let mut node = intake_node(view, &c.invoice_number, &discounts)?;
        node.net_kg_after_discounts = c.net_kg_after_discounts;
        intakes.push(node);
    }
    Ok(ProvenanceTree {
        silo_id: lot.asset.silo_id.clone(),
        lot_window: lot.asset.lot_window,
        lot,
        outgoing_tickets,
        intakes,
    })
}
