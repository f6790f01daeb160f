use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use grainledger::digest::Digest;
use grainledger::ledger::{ChainReport, ChannelLedger};
use grainledger::network::{audit_ledger_dir, block_file, ChannelAudit, Topology, TOPOLOGY_FILE};
use grainledger_api::settings::{NodeSettings, SETTINGS_FILE};
use serde::Serialize;

use crate::{print_json, table, Failure};

#[derive(Debug, Serialize)]
pub struct ReplicaTip {
    pub node_id: String,
    pub blocks: Option<u64>,
    pub tip: Option<Digest>,
    pub intact: bool,
}

#[derive(Debug, Serialize)]
pub struct ChannelComparison {
    pub channel_id: String,
    pub replicas: Vec<ReplicaTip>,
    /// Replicas agree on every height they share.
    pub consistent: bool,
    pub detail: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub node_id: String,
    pub channels: Vec<ChannelAudit>,
    pub comparison: Vec<ChannelComparison>,
    pub ok: bool,
}

fn node_root(node_dir: &Path) -> Result<(String, PathBuf), Failure> {
    let settings_path = node_dir.join(SETTINGS_FILE);
    if settings_path.exists() {
        let s = NodeSettings::load(&settings_path).map_err(|e| Failure::Usage(e.to_string()))?;
        return Ok((s.node_id, s.data_dir.expect("load sets data_dir")));
    }
    let abs = std::path::absolute(node_dir).map_err(|e| Failure::Usage(e.to_string()))?;
    let id = abs.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let root = abs.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((id, root))
}

fn header_digests(ledger_dir: &Path, channel: &str) -> Option<Vec<Digest>> {
    let blocks = ChannelLedger::load_blocks(&block_file(ledger_dir, channel)).ok()?;
    blocks.iter().map(|b| b.header.digest().ok()).collect()
}

/// Audits every chain held by the node at `node_dir` and compares its
/// channels with the other replicas under the same network root.
pub fn verify_node(node_dir: &Path) -> Result<VerifyReport, Failure> {
    let (node_id, root) = node_root(node_dir)?;
    let ledger_dir = node_dir.join("ledger");
    let channels = audit_ledger_dir(&ledger_dir).map_err(|e| Failure::Usage(format!("{}: {e}", ledger_dir.display())))?;
    let topology: Option<Topology> = std::fs::read_to_string(root.join(TOPOLOGY_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let mut comparison = Vec::new();
    for audit in &channels {
        let ch = &audit.channel_id;
        let others: Vec<String> = match &topology {
            Some(t) => t.nodes.iter().map(|n| n.node_id.clone()).filter(|n| *n != node_id).collect(),
            None => Vec::new(),
        };
        let mut replicas = vec![tip(&node_id, &audit.report)];
        let mut chains: BTreeMap<String, Option<Vec<Digest>>> = BTreeMap::new();
        chains.insert(node_id.clone(), audit.report.is_intact().then(|| header_digests(&ledger_dir, ch)).flatten());
        for other in others {
            let dir = root.join(&other).join("ledger");
            if !block_file(&dir, ch).exists() {
                continue;
            }
            let report = audit_ledger_dir(&dir)
                .ok()
                .and_then(|a| a.into_iter().find(|a| &a.channel_id == ch))
                .map(|a| a.report);
            let replica = match &report {
                Some(r) => tip(&other, r),
                None => ReplicaTip { node_id: other.clone(), blocks: None, tip: None, intact: false },
            };
            let intact = replica.intact;
            replicas.push(replica);
            chains.insert(other.clone(), intact.then(|| header_digests(&dir, ch)).flatten());
        }
        let detail = compare(&chains);
        comparison.push(ChannelComparison {
            channel_id: ch.clone(),
            consistent: detail.is_none(),
            detail,
            replicas,
        });
    }
    let ok = channels.iter().all(|c| c.report.is_intact()) && comparison.iter().all(|c| c.consistent);
    Ok(VerifyReport { node_id, channels, comparison, ok })
}

fn tip(node_id: &str, report: &ChainReport) -> ReplicaTip {
    match report {
        ChainReport::Intact { blocks, tip, .. } => {
            ReplicaTip { node_id: node_id.into(), blocks: Some(*blocks), tip: Some(*tip), intact: true }
        }
        ChainReport::Broken { .. } => ReplicaTip { node_id: node_id.into(), blocks: None, tip: None, intact: false },
    }
}

/// First height where two intact replicas disagree, or a broken replica.
fn compare(chains: &BTreeMap<String, Option<Vec<Digest>>>) -> Option<String> {
    if let Some((id, _)) = chains.iter().find(|(_, c)| c.is_none()) {
        return Some(format!("replica {id} is not intact"));
    }
    let (first_id, first) = chains.iter().next()?;
    let first = first.as_ref()?;
    for (id, chain) in chains.iter().skip(1) {
        let chain = chain.as_ref()?;
        if let Some(h) = first.iter().zip(chain).position(|(a, b)| a != b) {
            return Some(format!("{first_id} and {id} diverge at height {h}"));
        }
    }
    None
}

pub fn run(node_dir: &Path, json: bool) -> Result<(), Failure> {
    let report = verify_node(node_dir)?;
    if json {
        print_json(&report);
    } else {
        let rows: Vec<Vec<String>> = report
            .channels
            .iter()
            .map(|c| match &c.report {
                ChainReport::Intact { blocks, tip, .. } => {
                    vec![c.channel_id.clone(), "intact".into(), blocks.to_string(), tip.to_string()]
                }
                ChainReport::Broken { height, reason, .. } => {
                    vec![c.channel_id.clone(), format!("BROKEN at height {height}"), "-".into(), reason.clone()]
                }
            })
            .collect();
        print!("{}", table::render(&["channel", "chain", "blocks", "tip / reason"], &rows));
        for c in &report.comparison {
            let heights: Vec<String> = c
                .replicas
                .iter()
                .map(|r| format!("{}={}", r.node_id, r.blocks.map_or("?".into(), |b| b.to_string())))
                .collect();
            match &c.detail {
                None => println!("{}: replicas consistent ({})", c.channel_id, heights.join(" ")),
                Some(d) => println!("{}: DIVERGED: {d}", c.channel_id),
            }
        }
    }
    if report.ok {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("verification of {} failed", report.node_id)))
    }
}
