use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use grainledger::grain::{Phase, Scenario, Step};
use serde::Serialize;

use crate::http::{Api, Submitted};
use crate::{print_json, table, ApiArgs, Failure};

#[derive(Debug, Serialize)]
pub struct RowResult {
    pub phase: Phase,
    pub subject: String,
    pub operation: String,
    /// 1-based CSV data row, for intake steps.
    pub row: Option<usize>,
    pub tx_id: Option<String>,
    pub status: String,
    pub reason: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub steps: Vec<RowResult>,
    pub valid: usize,
    pub failed: usize,
    pub all_valid: bool,
}

const POLL_TIMEOUT: Duration = Duration::from_secs(120);

fn outcome(step: &Step, tx_id: Option<String>, status: &str, reason: Option<String>) -> RowResult {
    RowResult {
        phase: step.phase,
        subject: step.subject.clone(),
        operation: step.operation.to_string(),
        row: step.row.map(|r| r + 1),
        tx_id,
        status: status.to_string(),
        reason,
    }
}

/// Submits the steps of one phase; serial phases wait for each commit.
fn run_phase(api: &Api, steps: &[&Step], channel: Option<&str>, failed_rows: &mut BTreeSet<usize>) -> Result<Vec<RowResult>, Failure> {
    let mut results: Vec<RowResult> = Vec::new();
    let mut pending: Vec<(usize, String)> = Vec::new();
    let serial = steps.first().is_some_and(|s| s.phase.is_serial());
    for step in steps {
        if step.row.is_some_and(|r| failed_rows.contains(&r)) {
            results.push(outcome(step, None, "SKIPPED", Some("an earlier step of this row failed".into())));
            continue;
        }
        let Some(token) = api.token(step.role) else {
            return Err(Failure::Usage(format!("no login with role {} (needed for {})", step.role, step.operation)));
        };
        let args = step.args.to_value().map_err(|e| Failure::Runtime(e.to_string()))?;
        match api.submit(token, "grain", step.operation, args, channel)? {
            Submitted::Accepted(tx_id) => {
                pending.push((results.len(), tx_id.clone()));
                results.push(outcome(step, Some(tx_id), "PENDING", None));
            }
            Submitted::Aborted { tx_id, reason } => {
                results.push(outcome(step, Some(tx_id), "ABORTED", Some(reason)));
            }
            Submitted::Rejected { status, error, message } => {
                results.push(outcome(step, None, "REJECTED", Some(format!("{status} {error}: {message}"))));
            }
        }
        if serial {
            settle(api, &mut results, &mut pending)?;
        }
    }
    settle(api, &mut results, &mut pending)?;
    for (r, step) in results.iter().zip(steps) {
        if r.status != "VALID" {
            if let Some(row) = step.row {
                failed_rows.insert(row);
            }
        }
    }
    Ok(results)
}

fn settle(api: &Api, results: &mut [RowResult], pending: &mut Vec<(usize, String)>) -> Result<(), Failure> {
    if pending.is_empty() {
        return Ok(());
    }
    let ids: Vec<String> = pending.iter().map(|(_, id)| id.clone()).collect();
    let statuses = api.wait_all(&ids, POLL_TIMEOUT)?;
    for (i, id) in pending.drain(..) {
        let s = &statuses[&id];
        results[i].status = s["status"].as_str().unwrap_or("?").to_string();
        results[i].reason = s["reason"].as_str().map(str::to_string);
    }
    Ok(())
}

pub fn run_against(api: &Api, scenario: &Scenario, channel: Option<&str>) -> Result<RunReport, Failure> {
    let steps = scenario.expand();
    let mut failed_rows = BTreeSet::new();
    let mut out = Vec::new();
    let mut start = 0;
    while start < steps.len() {
        let phase = steps[start].phase;
        let end = steps[start..].iter().position(|s| s.phase != phase).map_or(steps.len(), |k| start + k);
        let group: Vec<&Step> = steps[start..end].iter().collect();
        out.extend(run_phase(api, &group, channel, &mut failed_rows)?);
        start = end;
    }
    let valid = out.iter().filter(|r| r.status == "VALID").count();
    let failed = out.len() - valid;
    Ok(RunReport { steps: out, valid, failed, all_valid: failed == 0 })
}

pub fn run(csv: &Path, args: &ApiArgs, seed: u64, channel: Option<&str>, json: bool) -> Result<(), Failure> {
    let file = std::fs::File::open(csv).map_err(|e| Failure::Usage(format!("{}: {e}", csv.display())))?;
    let scenario = Scenario::from_csv(file, seed).map_err(|e| Failure::Usage(format!("{}: {e}", csv.display())))?;
    let api = Api::connect(args)?;
    let report = run_against(&api, &scenario, channel)?;
    if json {
        print_json(&report);
    } else {
        println!("{} transactions: {} VALID, {} failed", report.steps.len(), report.valid, report.failed);
        let failures: Vec<Vec<String>> = report
            .steps
            .iter()
            .filter(|r| r.status != "VALID")
            .map(|r| {
                vec![
                    r.row.map_or_else(|| "-".into(), |n| n.to_string()),
                    r.subject.clone(),
                    r.operation.clone(),
                    r.status.clone(),
                    r.reason.clone().unwrap_or_default(),
                ]
            })
            .collect();
        if !failures.is_empty() {
            print!("{}", table::render(&["row", "subject", "operation", "status", "reason"], &failures));
        }
    }
    if report.all_valid {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{} of {} transactions did not commit VALID", report.failed, report.steps.len())))
    }
}
