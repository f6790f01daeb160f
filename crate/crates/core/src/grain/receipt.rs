use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::provenance::{discount_events, intake_node};
use super::{registries, GrainError, Grain, IntakeCase};
use crate::digest::Digest;
use crate::doc::canonical_bytes;
use crate::identity::{verify_signature, KeyPair};
use crate::ledger::{LedgerView, Signature};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptTxIds {
    pub weigh_ticket: Digest,
    pub extrinsic: Digest,
    pub discounts: Vec<Digest>,
    pub intrinsic: Vec<Digest>,
    pub silo_assignment: Digest,
}

/// Proof of deposit a producer can take to a lender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub invoice: String,
    pub producer: String,
    pub grain: Grain,
    pub net_kg: Decimal,
    /// Discount percent applied at silo assignment.
    pub discounts: Decimal,
    pub greenish_percent: Decimal,
    pub contribution_kg: Decimal,
    pub silo: String,
    pub lot_window: u64,
    pub channel_id: String,
    pub issuer: String,
    pub tx_ids: ReceiptTxIds,
}

/// Receipt plus a detached signature over its canonical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedReceipt {
    pub receipt: IngestReceipt,
    pub signature: Signature,
}

impl IngestReceipt {
    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical_bytes(self).expect("receipt fields are canonicalizable")
    }

    /// Rebuilds the receipt for `invoice` from committed ledger data.
    pub fn from_ledger(view: &dyn LedgerView, invoice: &str, issuer: &str) -> Result<Self, GrainError> {
        let incomplete = |missing: &str| GrainError::IncompleteIntake {
            invoice: invoice.to_string(),
            missing: missing.to_string(),
        };
        let case: IntakeCase = view
            .state()
            .get(&registries::key(registries::INTAKE, invoice))
            .ok_or_else(|| incomplete("no incoming weigh ticket"))?
            .value
            .to_typed()
            .map_err(|e| incomplete(&format!("intake case malformed: {e}")))?;
        let (Some(silo), Some(lot_window), Some(contribution_kg)) =
            (case.silo_id.clone(), case.lot_window, case.contribution_kg)
        else {
            return Err(incomplete("silo assignment missing"));
        };
        let discounts = discount_events(view);
        let node = intake_node(view, invoice, &discounts).map_err(|e| incomplete(&e.to_string()))?;
        if node.intrinsic.is_empty() {
            return Err(incomplete("intrinsic analysis missing"));
        }
        let assignment = node.silo_assignment.ok_or_else(|| incomplete("silo assignment missing"))?;
        Ok(IngestReceipt {
            invoice: invoice.to_string(),
            producer: case.producer_id,
            grain: case.grain,
            net_kg: case.net_kg,
            discounts: node.extrinsic.asset.total_discounts_kg.unwrap_or_default(),
            greenish_percent: node.extrinsic.asset.greenish_percent,
            contribution_kg,
            silo,
            lot_window,
            channel_id: view.channel_id().to_string(),
            issuer: issuer.to_string(),
            tx_ids: ReceiptTxIds {
                weigh_ticket: node.weigh_ticket.tx.tx_id,
                extrinsic: node.extrinsic.tx.tx_id,
                discounts: node.discount_txs.iter().map(|t| t.tx_id).collect(),
                intrinsic: node.intrinsic.iter().map(|i| i.tx.tx_id).collect(),
                silo_assignment: assignment.tx_id,
            },
        })
    }
}

impl SignedReceipt {
    pub fn verify_signature(&self, scheme: &str, public_key: &[u8]) -> bool {
        verify_signature(scheme, public_key, &self.receipt.signing_bytes(), &self.signature)
    }

    /// Signature check plus agreement with what the ledger says today.
    pub fn verify_against_ledger(
        &self,
        scheme: &str,
        public_key: &[u8],
        view: &dyn LedgerView,
    ) -> Result<(), String> {
        if !self.verify_signature(scheme, public_key) {
            return Err("receipt signature invalid".into());
        }
        let all = std::iter::once(&self.receipt.tx_ids.weigh_ticket)
            .chain([&self.receipt.tx_ids.extrinsic, &self.receipt.tx_ids.silo_assignment])
            .chain(&self.receipt.tx_ids.discounts)
            .chain(&self.receipt.tx_ids.intrinsic);
        for tx in all {
            match view.tx_record(tx) {
                Some(r) if r.valid => {}
                Some(_) => return Err(format!("transaction {tx} is INVALID on the ledger")),
                None => return Err(format!("transaction {tx} not found on the ledger")),
            }
        }
        let current = IngestReceipt::from_ledger(view, &self.receipt.invoice, &self.receipt.issuer)
            .map_err(|e| e.to_string())?;
        if current != self.receipt {
            return Err("receipt contents differ from the ledger".into());
        }
        Ok(())
    }
}

pub fn issue_ingest_receipt(
    view: &dyn LedgerView,
    invoice: &str,
    issuer: &str,
    key: &KeyPair,
) -> Result<SignedReceipt, GrainError> {
    let receipt = IngestReceipt::from_ledger(view, invoice, issuer)?;
    let signature = key.sign(&receipt.signing_bytes());
    Ok(SignedReceipt { receipt, signature })
}
