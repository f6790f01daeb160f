use std::collections::BTreeMap;

use serde::Serialize;

use super::governance::GovernanceView;
use super::sim::{Client, Network, SubmitError, TxStatus};
use crate::digest::Digest;
use crate::grain::{Phase, Scenario, Step, GRAIN};
use crate::identity::Role;

/// One submitted step and where it ended up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepOutcome {
    pub phase: Phase,
    pub subject: String,
    pub operation: String,
    pub tx_id: Option<Digest>,
    pub status: Option<TxStatus>,
    /// Rejection before ordering (endorsement or policy).
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub channel_id: String,
    pub gateway: String,
    pub steps: Vec<StepOutcome>,
    pub valid: usize,
    pub invalid: usize,
    pub rejected: usize,
    pub simulated_ms: u64,
}

impl ScenarioReport {
    pub fn all_valid(&self) -> bool {
        self.invalid == 0 && self.rejected == 0
    }

    pub fn tx_id(&self, operation: &str, subject: &str) -> Option<Digest> {
        self.steps.iter().find(|s| s.operation == operation && s.subject == subject).and_then(|s| s.tx_id)
    }
}

/// Drives a scenario through `gateway`. Independent phases are submitted as
/// a burst; serial phases wait for each commit before the next submission.
/// Every phase completes (all replicas caught up) before the next starts.
pub fn run_scenario(
    network: &mut Network,
    scenario: &Scenario,
    channel: &str,
    gateway: &str,
    clients: &BTreeMap<Role, Client>,
) -> Result<ScenarioReport, SubmitError> {
    let start = network.now();
    let steps = scenario.expand();
    let mut outcomes = Vec::with_capacity(steps.len());
    let mut phases: BTreeMap<Phase, Vec<&Step>> = BTreeMap::new();
    for s in &steps {
        phases.entry(s.phase).or_default().push(s);
    }
    for (phase, steps) in phases {
        for step in steps {
            let client = clients
                .get(&step.role)
                .ok_or_else(|| SubmitError::PolicyNotMet(format!("no client holds role {}", step.role)))?;
            let result = network.invoke(gateway, client, channel, GRAIN, step.operation, step.args.clone());
            let (tx_id, rejected) = match result {
                Ok(sub) => (Some(sub.tx_id), None),
                Err(e @ (SubmitError::UnknownNode(_) | SubmitError::UnknownChannel(_))) => return Err(e),
                Err(e) => (None, Some(e.to_string())),
            };
            outcomes.push(StepOutcome {
                phase,
                subject: step.subject.clone(),
                operation: step.operation.to_string(),
                tx_id,
                status: None,
                rejected,
            });
            if phase.is_serial() {
                network.run_until_idle();
            }
        }
        network.run_until_idle();
    }
    for o in &mut outcomes {
        o.status = o.tx_id.and_then(|id| network.tx_status(gateway, &id));
    }
    let valid = outcomes.iter().filter(|o| matches!(o.status, Some(TxStatus::Valid { .. }))).count();
    let invalid = outcomes.iter().filter(|o| matches!(o.status, Some(TxStatus::Invalid { .. }))).count();
    let rejected = outcomes.iter().filter(|o| o.rejected.is_some()).count();
    Ok(ScenarioReport {
        channel_id: channel.to_string(),
        gateway: gateway.to_string(),
        steps: outcomes,
        valid,
        invalid,
        rejected,
        simulated_ms: network.now() - start,
    })
}

/// Picks, for every role, the first wallet client registered with it.
pub fn clients_by_role(view: &GovernanceView, wallet: &BTreeMap<String, Client>) -> BTreeMap<Role, Client> {
    let mut out = BTreeMap::new();
    for (id, client) in wallet {
        if let Some(p) = view.membership.participant(id) {
            out.entry(p.role).or_insert_with(|| client.clone());
        }
    }
    out
}
