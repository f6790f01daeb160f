use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use grainledger::digest::Digest;
use grainledger::doc::Doc;
use grainledger::identity::Role;
use grainledger::network::{load_wallet, Client, CommitNotice, Network, NetworkError};
use parking_lot::Mutex;
use rand::RngCore;
use serde::Serialize;
use tokio::sync::broadcast;

use crate::credentials::{CredentialError, CredentialStore, CREDENTIALS_FILE};
use crate::settings::NodeSettings;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    pub token: String,
    pub participant_id: String,
    pub role: Role,
    pub expires_at: u64,
}

/// One committed event as pushed on the stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamEvent {
    pub event_name: String,
    pub payload: Doc,
    pub tx_id: Digest,
    pub block_height: u64,
    pub tx_index: usize,
    pub channel_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum HostError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Credentials(#[from] CredentialError),
    #[error("{0}")]
    Invalid(String),
}

pub fn wall_clock_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// The network this process runs, seen from one node.
pub struct NodeHost {
    pub settings: NodeSettings,
    network: Mutex<Network>,
    wallet: BTreeMap<String, Client>,
    credentials: CredentialStore,
    sessions: Mutex<HashMap<String, Session>>,
    events: broadcast::Sender<StreamEvent>,
    clock: Box<dyn Fn() -> u64 + Send + Sync>,
}

impl NodeHost {
    /// Opens the persisted network named by `settings.data_dir`.
    pub fn open(settings: NodeSettings) -> Result<Arc<Self>, HostError> {
        let root = settings.data_dir.clone().ok_or_else(|| HostError::Invalid("data_dir is not set".into()))?;
        let network = Network::open(&root)?;
        let node_dir = root.join(&settings.node_id);
        let wallet = load_wallet(&node_dir)?;
        let credentials = CredentialStore::load(&node_dir.join(CREDENTIALS_FILE))?;
        Self::new(settings, network, wallet, credentials, Box::new(wall_clock_ms))
    }

    /// Wraps an already assembled network. `clock` returns UTC ms.
    pub fn new(
        settings: NodeSettings,
        mut network: Network,
        wallet: BTreeMap<String, Client>,
        credentials: CredentialStore,
        clock: Box<dyn Fn() -> u64 + Send + Sync>,
    ) -> Result<Arc<Self>, HostError> {
        if network.peer(&settings.node_id).is_none() {
            return Err(HostError::Invalid(format!("node {} is not in the topology", settings.node_id)));
        }
        let (events, _) = broadcast::channel(4096);
        let tx = events.clone();
        let node_id = settings.node_id.clone();
        network.on_commit(move |notice: &CommitNotice| {
            if notice.node_id != node_id {
                return;
            }
            let b = &notice.block;
            for (i, entry, e) in b.committed_events() {
                let _ = tx.send(StreamEvent {
                    event_name: e.event_name.clone(),
                    payload: e.payload.clone(),
                    tx_id: entry.envelope.tx_id,
                    block_height: b.height(),
                    tx_index: i,
                    channel_id: b.header.channel_id.clone(),
                });
            }
        });
        Ok(Arc::new(NodeHost {
            settings,
            network: Mutex::new(network),
            wallet,
            credentials,
            sessions: Mutex::new(HashMap::new()),
            events,
            clock,
        }))
    }

    pub fn node_id(&self) -> &str {
        &self.settings.node_id
    }

    pub fn now_ms(&self) -> u64 {
        (self.clock)()
    }

    pub fn with_network<R>(&self, f: impl FnOnce(&mut Network) -> R) -> R {
        f(&mut self.network.lock())
    }

    pub fn client(&self, participant_id: &str) -> Option<&Client> {
        self.wallet.get(participant_id)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.events.subscribe()
    }

    /// Moves simulated time up to the host clock.
    pub fn tick(&self) {
        let now = self.now_ms();
        let mut net = self.network.lock();
        let target = now.saturating_sub(net.topology().epoch_ms);
        if target > net.now() {
            net.advance_to(target);
        }
    }

    /// Finishes in-flight work before shutdown.
    pub fn drain(&self) {
        self.network.lock().run_until_idle();
    }

    pub fn credentials(&self) -> &CredentialStore {
        &self.credentials
    }

    pub fn create_session(&self, participant_id: &str, role: Role) -> Session {
        let mut raw = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let session = Session {
            token: hex::encode(raw),
            participant_id: participant_id.to_string(),
            role,
            expires_at: self.now_ms() + self.settings.session_ttl_ms,
        };
        self.sessions.lock().insert(session.token.clone(), session.clone());
        session
    }

    /// The live session for `token`; expired sessions are dropped.
    pub fn session(&self, token: &str) -> Option<Session> {
        let now = self.now_ms();
        let mut sessions = self.sessions.lock();
        match sessions.get(token) {
            Some(s) if s.expires_at > now => Some(s.clone()),
            Some(_) => {
                sessions.remove(token);
                None
            }
            None => None,
        }
    }
}
