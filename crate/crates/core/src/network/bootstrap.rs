use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::governance::{channel_key, policy_key, GovernanceContract, GOVERNANCE};
use super::orderer::Orderer;
use super::peer::Peer;
use super::sim::{member_nodes, Client, Network};
use super::topology::{ChannelConfig, Topology, TopologyError, GOVERNANCE_CHANNEL};
use crate::contract::{deployment_key, to_doc, ContractDefinition, Deployment, Engine, LIFECYCLE};
use crate::doc::Doc;
use crate::grain::{GrainContract, GRAIN, OPERATIONS as GRAIN_OPERATIONS};
use crate::identity::{
    membership_keys as keys, AccessControlList, IdentityError, IdentityHistory, KeyFile, KeyPair, NodeRecord, Org,
    Participant, Role, ED25519,
};
use crate::ledger::{Block, EnvelopeBody, LedgerError, ReadWriteSet, TransactionEnvelope, TxEntry, WriteEntry};

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> NetworkError + '_ {
    move |source| NetworkError::Io { path: path.to_path_buf(), source }
}

/// Contracts every node runs.
pub fn standard_engine() -> Arc<Engine> {
    Arc::new(Engine::new().with_contract(GrainContract).with_contract(GovernanceContract))
}

/// Test and demo keys derived from the topology seed. Not for production.
pub fn derive_key(seed: u64, label: &str) -> KeyPair {
    let mut h = Sha256::new();
    h.update(b"grainledger insecure demo key\0");
    h.update(seed.to_be_bytes());
    h.update(label.as_bytes());
    KeyPair::from_seed(h.finalize().into())
}

/// A participant and the node that holds its signing key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoParticipant {
    pub participant: Participant,
    pub home_node: String,
}

/// The founding members of a network: orgs from the topology, one admin per
/// org, and a few operational participants.
#[derive(Debug, Clone)]
pub struct Consortium {
    pub topology: Topology,
    pub participants: Vec<DemoParticipant>,
}

fn person(id: &str, org: Org, role: Role, name: &str) -> Participant {
    Participant { participant_id: id.into(), org, role, display_name: name.into() }
}

fn org_participants(org: Org) -> Vec<Participant> {
    let mut out = vec![person(&format!("admin-{org}"), org, Role::Admin, &format!("{org} administrator"))];
    match org {
        Org::Warehouse => {
            out.push(person("p-qa-01", org, Role::QaOperator, "QA lab operator"));
            out.push(person("p-wh-01", org, Role::WarehouseOperator, "Scale house operator"));
        }
        Org::Cooperative => {
            for i in 1..=7 {
                out.push(person(&format!("p-prod-{i:03}"), org, Role::Producer, &format!("Producer {i}")));
            }
        }
        Org::Bank => out.push(person("p-bank-01", org, Role::BankAgent, "Rural credit agent")),
        Org::Trading => out.push(person("p-trader-01", org, Role::Trader, "Grain trader")),
        Org::FoodProcessor => {}
    }
    out
}

impl Consortium {
    pub fn demo(topology: Topology) -> Result<Self, TopologyError> {
        topology.validate()?;
        let mut participants = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for node in &topology.nodes {
            if seen.insert(node.org) {
                participants.extend(
                    org_participants(node.org)
                        .into_iter()
                        .map(|participant| DemoParticipant { participant, home_node: node.node_id.clone() }),
                );
            }
        }
        Ok(Consortium { topology, participants })
    }

    /// Admin of the org that hosts the orderer.
    pub fn admin_id(&self) -> String {
        format!("admin-{}", self.topology.orderer().org)
    }

    pub fn participant(&self, id: &str) -> Option<&DemoParticipant> {
        self.participants.iter().find(|p| p.participant.participant_id == id)
    }

    pub fn participant_key(&self, id: &str) -> KeyPair {
        derive_key(self.topology.seed, &format!("participant/{id}"))
    }

    pub fn node_key(&self, node_id: &str) -> KeyPair {
        derive_key(self.topology.seed, &format!("node/{node_id}"))
    }

    pub fn client(&self, id: &str) -> Client {
        Client::new(id, self.participant_key(id))
    }

    /// First participant with `role` (in registration order).
    pub fn client_with_role(&self, role: Role) -> Option<Client> {
        self.participants
            .iter()
            .find(|p| p.participant.role == role)
            .map(|p| self.client(&p.participant.participant_id))
    }

    /// One client per role: the first participant registered with it.
    pub fn role_clients(&self) -> BTreeMap<Role, Client> {
        let mut out = BTreeMap::new();
        for p in &self.participants {
            out.entry(p.participant.role).or_insert_with(|| self.client(&p.participant.participant_id));
        }
        out
    }

    fn bootstrap_envelope(&self, channel: &str, contract: &str, operation: &str, args: Doc) -> TransactionEnvelope {
        let admin = self.admin_id();
        self.client(&admin).sign(EnvelopeBody {
            channel_id: channel.into(),
            contract_id: contract.into(),
            operation: operation.into(),
            args,
            submitter: admin,
            nonce: 0,
            timestamp: self.topology.epoch_ms,
        })
    }

    /// Governance genesis: founding participants with their identities,
    /// node keys, the default ACL, policies, and channel configuration.
    pub fn governance_genesis(&self) -> Block {
        let epoch = self.topology.epoch_ms;
        let mut writes: BTreeMap<String, Doc> = BTreeMap::new();
        for p in &self.participants {
            let id = &p.participant.participant_id;
            writes.insert(keys::participant(id), doc(&p.participant));
            let history = IdentityHistory { history: vec![self.participant_key(id).identity(id, epoch)] };
            writes.insert(keys::identity(id), doc(&history));
        }
        for n in &self.topology.nodes {
            let record = NodeRecord {
                node_id: n.node_id.clone(),
                org: n.org,
                scheme: ED25519.into(),
                public_key: self.node_key(&n.node_id).public_key(),
            };
            writes.insert(keys::node(&n.node_id), doc(&record));
        }
        writes.insert(keys::ACL.into(), doc(&AccessControlList::consortium_default()));
        for p in &self.topology.policies {
            writes.insert(policy_key(&p.policy_id), doc(p));
        }
        for c in &self.topology.channels {
            writes.insert(channel_key(&c.channel_id), doc(c));
        }
        let orgs: Vec<Doc> = {
            let mut o: Vec<Org> = self.topology.nodes.iter().map(|n| n.org).collect();
            o.sort();
            o.dedup();
            o.into_iter().map(|o| Doc::from(o.as_str())).collect()
        };
        let env = self.bootstrap_envelope(GOVERNANCE_CHANNEL, GOVERNANCE, "bootstrap", Doc::map().with("founding_orgs", Doc::List(orgs)));
        let rwset = ReadWriteSet {
            writes: writes.into_iter().map(|(key, value)| WriteEntry { key, value }).collect(),
            ..Default::default()
        };
        Block::new(GOVERNANCE_CHANNEL, 0, crate::digest::Digest::ZERO, epoch, 0, vec![TxEntry {
            envelope: env,
            rwset,
            endorsements: vec![],
        }])
        .expect("genesis is canonicalizable")
    }

    fn initial_channel_genesis(&self, config: &ChannelConfig) -> Block {
        let manifest = grain_manifest(config);
        let env = self.bootstrap_envelope(&config.channel_id, LIFECYCLE, "deploy", to_doc(&manifest).expect("manifest"));
        channel_genesis(config, env, 0, self.topology.epoch_ms)
    }

    /// Creates every node with its genesis blocks committed and the orderer
    /// positioned after them. With `root`, ledgers are persisted under
    /// `root/<node>/ledger` and keys under `root/<node>/keys`.
    pub fn build(&self, root: Option<&Path>) -> Result<Network, NetworkError> {
        let engine = standard_engine();
        if let Some(root) = root {
            self.write_files(root)?;
        }
        let gov = self.governance_genesis();
        let mut peers = BTreeMap::new();
        let mut geneses: BTreeMap<String, Block> = BTreeMap::new();
        for n in &self.topology.nodes {
            let dir = root.map(|r| r.join(&n.node_id).join("ledger"));
            if let Some(d) = &dir {
                std::fs::create_dir_all(d).map_err(io(d))?;
            }
            let mut peer = Peer::new(&n.node_id, n.org, self.node_key(&n.node_id), engine.clone(), dir);
            peer.deliver(gov.clone());
            let view = peer.governance();
            if view.height != 0 || view.channels.is_empty() {
                return Err(NetworkError::Invalid("governance genesis did not commit".into()));
            }
            for c in self.topology.channels.iter().filter(|c| c.channel_id != GOVERNANCE_CHANNEL) {
                if c.member_orgs.contains(&n.org) {
                    let g = geneses.entry(c.channel_id.clone()).or_insert_with(|| self.initial_channel_genesis(c));
                    peer.deliver(g.clone());
                }
            }
            peers.insert(n.node_id.clone(), peer);
        }
        let host = &peers[&self.topology.orderer().node_id];
        let view = host.governance();
        let mut orderer = Orderer::new(&self.topology.orderer().node_id);
        geneses.insert(GOVERNANCE_CHANNEL.into(), gov);
        for c in &self.topology.channels {
            let members = member_nodes(&self.topology, &view, &c.channel_id);
            let genesis = &geneses[&c.channel_id];
            orderer
                .open_channel(c.clone(), members, 0, crate::digest::Digest::ZERO)
                .map_err(|e| NetworkError::Invalid(e.to_string()))?;
            orderer.record_genesis(genesis).map_err(|e| NetworkError::Invalid(e.to_string()))?;
        }
        Ok(Network::assemble(self.topology.clone(), peers, orderer))
    }

    /// Topology, node keys, and the keys of participants each node hosts.
    fn write_files(&self, root: &Path) -> Result<(), NetworkError> {
        std::fs::create_dir_all(root).map_err(io(root))?;
        write_json(&root.join(TOPOLOGY_FILE), &self.topology)?;
        for n in &self.topology.nodes {
            let keys_dir = root.join(&n.node_id).join("keys");
            std::fs::create_dir_all(&keys_dir).map_err(io(&keys_dir))?;
            write_json(&keys_dir.join(NODE_KEY_FILE), &KeyFile::new(&n.node_id, &self.node_key(&n.node_id)))?;
            for p in self.participants.iter().filter(|p| p.home_node == n.node_id) {
                let id = &p.participant.participant_id;
                write_json(&keys_dir.join(format!("{id}.key")), &KeyFile::new(id, &self.participant_key(id)))?;
            }
        }
        Ok(())
    }
}

pub const TOPOLOGY_FILE: &str = "topology.json";
pub const NODE_KEY_FILE: &str = "node.key";

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), NetworkError> {
    let bytes = crate::doc::canonical_bytes(value).map_err(|e| NetworkError::Invalid(e.to_string()))?;
    std::fs::write(path, bytes).map_err(io(path))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, NetworkError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| NetworkError::Invalid(format!("{}: {e}", path.display())))
}

/// Keys of the participants a node holds, read from `<node_dir>/keys`.
pub fn load_wallet(node_dir: &Path) -> Result<BTreeMap<String, Client>, NetworkError> {
    let dir = node_dir.join("keys");
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(&dir).map_err(io(&dir))? {
        let path = entry.map_err(io(&dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name == NODE_KEY_FILE || !name.ends_with(".key") {
            continue;
        }
        let kf: KeyFile = read_json(&path)?;
        out.insert(kf.owner.clone(), Client::new(&kf.owner, kf.key_pair()?));
    }
    Ok(out)
}

impl Network {
    /// Reopens a persisted network, replaying every node's ledgers.
    pub fn open(root: &Path) -> Result<Network, NetworkError> {
        let topology: Topology = read_json(&root.join(TOPOLOGY_FILE))?;
        topology.validate()?;
        let engine = standard_engine();
        let mut peers = BTreeMap::new();
        for n in &topology.nodes {
            let node_dir = root.join(&n.node_id);
            let kf: KeyFile = read_json(&node_dir.join("keys").join(NODE_KEY_FILE))?;
            let peer = Peer::open(&n.node_id, n.org, kf.key_pair()?, engine.clone(), &node_dir.join("ledger"))?;
            peers.insert(n.node_id.clone(), peer);
        }
        let host_id = topology.orderer().node_id.clone();
        let view = peers[&host_id].governance();
        let mut orderer = Orderer::new(&host_id);
        for (id, config) in &view.channels {
            let members = member_nodes(&topology, &view, id);
            let best = members
                .iter()
                .filter_map(|m| peers.get(m))
                .filter_map(|p| p.ledger(id))
                .max_by_key(|l| l.height());
            let Some(best) = best else { continue };
            orderer
                .open_channel(config.clone(), members, best.height(), best.store().tip_digest())
                .map_err(|e| NetworkError::Invalid(e.to_string()))?;
        }
        let mut network = Network::assemble(topology, peers, orderer);
        network.resume_clock();
        Ok(network)
    }
}

/// Deployment manifest of the grain contract on a business channel.
pub fn grain_manifest(config: &ChannelConfig) -> ContractDefinition {
    ContractDefinition {
        contract_id: GRAIN.into(),
        version: 1,
        operations: GRAIN_OPERATIONS.iter().map(|s| s.to_string()).collect(),
        endorsement_policy_ref: config.endorsement_policy.clone(),
    }
}

/// Genesis of a business channel: its configuration and the grain
/// contract deployment, carried by the transaction that created it.
pub fn channel_genesis(
    config: &ChannelConfig,
    envelope: TransactionEnvelope,
    governance_height: u64,
    created_at: u64,
) -> Block {
    let manifest = grain_manifest(config);
    let deployment = Deployment { manifest_hash: manifest.manifest_hash(), manifest };
    let rwset = ReadWriteSet {
        writes: vec![
            WriteEntry { key: channel_key(&config.channel_id), value: to_doc(config).expect("config") },
            WriteEntry { key: deployment_key(GRAIN), value: to_doc(&deployment).expect("deployment") },
        ],
        ..Default::default()
    };
    Block::new(&config.channel_id, 0, crate::digest::Digest::ZERO, created_at, governance_height, vec![TxEntry {
        envelope,
        rwset,
        endorsements: vec![],
    }])
    .expect("genesis is canonicalizable")
}

fn doc<T: Serialize>(value: &T) -> Doc {
    Doc::from_serialize(value).expect("genesis records are canonicalizable")
}
