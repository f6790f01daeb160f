//! Execute-order-validate over a simulated multi-node network.
//!
//! Endorsing [`Peer`]s simulate transactions on their committed state and
//! sign the resulting read-write sets; a single FIFO [`Orderer`] batches
//! endorsed transactions into blocks per channel; every member peer
//! validates and commits each block. Messages travel over a seeded bus
//! with per-link delay and loss, and peers that miss blocks pull them from
//! other members.

mod audit;
mod bootstrap;
mod governance;
mod orderer;
mod peer;
mod runner;
mod sim;
mod topology;

pub use audit::{audit_ledger_dir, ChannelAudit};
pub use bootstrap::{
    channel_genesis, derive_key, grain_manifest, load_wallet, standard_engine, Consortium, DemoParticipant,
    NetworkError, NODE_KEY_FILE, TOPOLOGY_FILE,
};
pub use governance::{
    channel_key, endorsement_message, policy_key, GovernanceContract, GovernanceView, SnapshotVerifier, GOVERNANCE,
};
pub use orderer::{Enqueued, Orderer, OrdererError};
pub use peer::{block_file, EndorseError, Peer, ProposalResponse};
pub use runner::{clients_by_role, run_scenario, ScenarioReport, StepOutcome};
pub use sim::{
    ChannelConvergence, Client, CommitNotice, Network, NetworkStats, ReplicaStatus, Submission, SubmitError, TxStatus,
};
pub use topology::{
    ChannelConfig, EndorsementPolicy, LinkConfig, NodeConfig, PolicyRule, Topology, TopologyError, GOVERNANCE_CHANNEL,
};
