use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::governance::{GovernanceView, SnapshotVerifier};
use super::peer::block_file;
use super::topology::GOVERNANCE_CHANNEL;
use crate::ledger::{verify_chain, Block, BlockHeader, ChainAuditor, ChainReport, TxEntry, TxVerifier, WorldState};

/// Outcome of auditing one channel's block file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChannelAudit {
    pub channel_id: String,
    pub report: ChainReport,
}

/// Re-derives governance snapshots while walking the governance chain and
/// uses them for every other channel.
#[derive(Default)]
struct Auditor {
    snapshots: Vec<Arc<GovernanceView>>,
    governance: bool,
}

impl TxVerifier for Auditor {
    fn verify(&self, header: &BlockHeader, entry: &TxEntry) -> Result<(), String> {
        SnapshotVerifier { snapshots: &self.snapshots }.verify(header, entry)
    }
}

impl ChainAuditor for Auditor {
    fn check_signature(&self, header: &BlockHeader, entry: &TxEntry) -> Result<(), String> {
        if self.governance && header.height == 0 {
            // Founding keys are defined by this very block.
            return Ok(());
        }
        SnapshotVerifier { snapshots: &self.snapshots }.view(header)?.check_signature(&entry.envelope)
    }

    fn verifier(&self) -> &dyn TxVerifier {
        self
    }

    fn block_verified(&mut self, block: &Block, state: &WorldState) {
        if self.governance {
            match GovernanceView::from_state(state, block.height()) {
                Ok(v) => self.snapshots.push(Arc::new(v)),
                Err(e) => tracing::warn!(height = block.height(), error = %e, "undecodable governance state"),
            }
        }
    }
}

/// Audits every `*.blocks` file in a ledger directory, governance first.
pub fn audit_ledger_dir(dir: &Path) -> std::io::Result<Vec<ChannelAudit>> {
    let mut channels = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if let Some(ch) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".blocks")) {
            channels.push(ch.to_string());
        }
    }
    channels.sort_by_key(|c| (c != GOVERNANCE_CHANNEL, c.clone()));
    let mut auditor = Auditor::default();
    let mut out = Vec::new();
    for ch in channels {
        let bytes = std::fs::read(block_file(dir, &ch))?;
        auditor.governance = ch == GOVERNANCE_CHANNEL;
        let report = verify_chain(&bytes, &ch, &mut auditor);
        out.push(ChannelAudit { channel_id: ch, report });
    }
    Ok(out)
}
