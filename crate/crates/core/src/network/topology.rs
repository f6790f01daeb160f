use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::identity::Org;

pub const GOVERNANCE_CHANNEL: &str = "governance";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyRule {
    AnyOne,
    MajorityOrgs,
    AllOrgs,
}

impl PolicyRule {
    /// `endorsing` counts distinct member orgs, never nodes.
    pub fn satisfied(self, endorsing: usize, members: usize) -> bool {
        match self {
            PolicyRule::AnyOne => endorsing >= 1,
            PolicyRule::MajorityOrgs => 2 * endorsing > members,
            PolicyRule::AllOrgs => members > 0 && endorsing >= members,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementPolicy {
    pub policy_id: String,
    pub rule: PolicyRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: String,
    pub org: Org,
    /// Logical address; the API listen address when the node is run.
    pub endpoint: String,
    pub channels: Vec<String>,
    #[serde(default)]
    pub is_orderer: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub channel_id: String,
    pub member_orgs: BTreeSet<Org>,
    pub endorsement_policy: String,
    pub batch_max_tx: usize,
    pub batch_timeout_ms: u64,
}

/// Simulated link behaviour, applied to every message between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub min_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Probability that a block delivery is lost.
    pub drop_probability: f64,
    /// Delay before a lagging peer pulls missing blocks.
    pub catch_up_ms: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig { min_delay_ms: 1, max_delay_ms: 20, drop_probability: 0.0, catch_up_ms: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeConfig>,
    pub channels: Vec<ChannelConfig>,
    pub policies: Vec<EndorsementPolicy>,
    pub seed: u64,
    #[serde(default)]
    pub link: LinkConfig,
    /// Genesis timestamp and simulated clock origin, UTC ms.
    #[serde(default = "default_epoch")]
    pub epoch_ms: u64,
}

fn default_epoch() -> u64 {
    1_700_000_000_000
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("cannot parse topology: {0}")]
    Parse(String),
}

fn invalid(msg: impl Into<String>) -> TopologyError {
    TopologyError::Invalid(msg.into())
}

impl Topology {
    /// Cooperative, warehouse (orderer) and bank nodes; a main channel and a
    /// governance channel shared by all, and a credit channel for warehouse
    /// and bank only.
    pub fn default_three_node(seed: u64) -> Self {
        use Org::*;
        let node = |id: &str, org, port: u16, channels: &[&str], orderer| NodeConfig {
            node_id: id.into(),
            org,
            endpoint: format!("127.0.0.1:{port}"),
            channels: channels.iter().map(|c| c.to_string()).collect(),
            is_orderer: orderer,
        };
        let channel = |id: &str, orgs: &[Org]| ChannelConfig {
            channel_id: id.into(),
            member_orgs: orgs.iter().copied().collect(),
            endorsement_policy: "majority".into(),
            batch_max_tx: 10,
            batch_timeout_ms: 250,
        };
        Topology {
            nodes: vec![
                node("coop-node", Cooperative, 7051, &["gebn-main", GOVERNANCE_CHANNEL], false),
                node("warehouse-node", Warehouse, 7052, &["gebn-main", "credit", GOVERNANCE_CHANNEL], true),
                node("bank-node", Bank, 7053, &["gebn-main", "credit", GOVERNANCE_CHANNEL], false),
            ],
            channels: vec![
                channel("gebn-main", &[Cooperative, Warehouse, Bank]),
                channel("credit", &[Warehouse, Bank]),
                channel(GOVERNANCE_CHANNEL, &[Cooperative, Warehouse, Bank]),
            ],
            policies: vec![
                EndorsementPolicy { policy_id: "majority".into(), rule: PolicyRule::MajorityOrgs },
                EndorsementPolicy { policy_id: "any".into(), rule: PolicyRule::AnyOne },
                EndorsementPolicy { policy_id: "all".into(), rule: PolicyRule::AllOrgs },
            ],
            seed,
            link: LinkConfig::default(),
            epoch_ms: default_epoch(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let t: Topology = serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        crate::doc::canonical_bytes(self).expect("topology is canonicalizable")
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.node_id.as_str()) {
                return Err(invalid(format!("duplicate node {}", n.node_id)));
            }
            if n.channels.is_empty() {
                return Err(invalid(format!("node {} belongs to no channel", n.node_id)));
            }
        }
        match self.nodes.iter().filter(|n| n.is_orderer).count() {
            1 => {}
            k => return Err(invalid(format!("exactly one orderer required, found {k}"))),
        }
        let policies: BTreeSet<&str> = self.policies.iter().map(|p| p.policy_id.as_str()).collect();
        if policies.len() != self.policies.len() {
            return Err(invalid("duplicate policy id"));
        }
        let mut channels = BTreeMap::new();
        for c in &self.channels {
            if channels.insert(c.channel_id.as_str(), c).is_some() {
                return Err(invalid(format!("duplicate channel {}", c.channel_id)));
            }
            if c.member_orgs.is_empty() {
                return Err(invalid(format!("channel {} has no member orgs", c.channel_id)));
            }
            if c.batch_max_tx < 1 {
                return Err(invalid(format!("channel {}: batch_max_tx must be >= 1", c.channel_id)));
            }
            if !policies.contains(c.endorsement_policy.as_str()) {
                return Err(invalid(format!(
                    "channel {} references unknown policy {}",
                    c.channel_id, c.endorsement_policy
                )));
            }
        }
        let gov = channels
            .get(GOVERNANCE_CHANNEL)
            .ok_or_else(|| invalid("a governance channel is required"))?;
        for n in &self.nodes {
            for ch in &n.channels {
                let c = channels
                    .get(ch.as_str())
                    .ok_or_else(|| invalid(format!("node {} joins unknown channel {ch}", n.node_id)))?;
                if !c.member_orgs.contains(&n.org) {
                    return Err(invalid(format!("node {} (org {}) is not a member org of {ch}", n.node_id, n.org)));
                }
            }
            if !gov.member_orgs.contains(&n.org) || !n.channels.iter().any(|c| c == GOVERNANCE_CHANNEL) {
                return Err(invalid(format!("node {} must join the governance channel", n.node_id)));
            }
        }
        for c in &self.channels {
            for org in &c.member_orgs {
                if !self.nodes.iter().any(|n| n.org == *org) {
                    return Err(invalid(format!("channel {}: org {org} has no node", c.channel_id)));
                }
            }
            // Every node of a member org replicates the channel.
            if let Some(n) = self
                .nodes
                .iter()
                .find(|n| c.member_orgs.contains(&n.org) && !n.channels.contains(&c.channel_id))
            {
                return Err(invalid(format!("node {} of member org {} must join {}", n.node_id, n.org, c.channel_id)));
            }
        }
        let l = &self.link;
        if l.min_delay_ms > l.max_delay_ms || !(0.0..1.0).contains(&l.drop_probability) {
            return Err(invalid("link: need min_delay_ms <= max_delay_ms and 0 <= drop_probability < 1"));
        }
        Ok(())
    }

    pub fn node(&self, id: &str) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn channel(&self, id: &str) -> Option<&ChannelConfig> {
        self.channels.iter().find(|c| c.channel_id == id)
    }

    pub fn policy(&self, id: &str) -> Option<&EndorsementPolicy> {
        self.policies.iter().find(|p| p.policy_id == id)
    }

    pub fn orderer(&self) -> &NodeConfig {
        self.nodes.iter().find(|n| n.is_orderer).expect("validated topology has an orderer")
    }

    /// Nodes that replicate `channel`, in topology order.
    pub fn members(&self, channel: &str) -> impl Iterator<Item = &NodeConfig> {
        let channel = channel.to_string();
        self.nodes.iter().filter(move |n| n.channels.contains(&channel))
    }
}
