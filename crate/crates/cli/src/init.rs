use std::path::Path;

use grainledger::network::{Consortium, Topology, GOVERNANCE_CHANNEL};
use grainledger_api::credentials::{demo_password, CredentialStore, CREDENTIALS_FILE};
use grainledger_api::settings::{NodeSettings, SETTINGS_FILE};
use serde::Serialize;

use crate::{print_json, table, Failure, InitArgs};

#[derive(Debug, Serialize)]
pub struct InitNode {
    pub node_id: String,
    pub org: String,
    pub listen_addr: String,
    pub is_orderer: bool,
    pub channels: Vec<String>,
    pub dir: String,
}

#[derive(Debug, Serialize)]
pub struct InitLogin {
    pub username: String,
    pub role: String,
    pub node_id: String,
    /// Derived from the seed; insecure.
    pub password: String,
}

#[derive(Debug, Serialize)]
pub struct InitReport {
    pub root: String,
    pub seed: u64,
    pub insecure_demo_credentials: bool,
    pub nodes: Vec<InitNode>,
    pub logins: Vec<InitLogin>,
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

/// Writes a fresh network under `out`: topology, keys, genesis blocks, and
/// per-node `node.json` and `credentials.json`.
pub fn init_network(topology: Topology, out: &Path, force: bool) -> Result<InitReport, Failure> {
    topology.validate().map_err(usage)?;
    match std::fs::read_dir(out).map(|mut d| d.next().is_some()) {
        Ok(true) => {
            if !force {
                return Err(usage(format!("{} is not empty; pass --force to replace it", out.display())));
            }
            std::fs::remove_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
        }
        Ok(false) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotADirectory => {
            return Err(usage(format!("{} is not a directory", out.display())));
        }
        Err(e) => return Err(Failure::Runtime(format!("{}: {e}", out.display()))),
    }
    let seed = topology.seed;
    let consortium = Consortium::demo(topology).map_err(usage)?;
    consortium.build(Some(out)).map_err(|e| Failure::Runtime(e.to_string()))?;

    let mut nodes = Vec::new();
    let mut logins = Vec::new();
    for n in &consortium.topology.nodes {
        let dir = out.join(&n.node_id);
        let channel = n
            .channels
            .iter()
            .find(|c| c.as_str() != GOVERNANCE_CHANNEL)
            .unwrap_or(&n.channels[0]);
        let settings = NodeSettings::new(&n.node_id, &n.endpoint, channel);
        settings.save(&dir.join(SETTINGS_FILE)).map_err(|e| Failure::Runtime(e.to_string()))?;
        let mut store = CredentialStore::default();
        for p in consortium.participants.iter().filter(|p| p.home_node == n.node_id) {
            let id = &p.participant.participant_id;
            let password = demo_password(seed, id);
            store.add(id, &password).map_err(|e| Failure::Runtime(e.to_string()))?;
            logins.push(InitLogin {
                username: id.clone(),
                role: p.participant.role.to_string(),
                node_id: n.node_id.clone(),
                password,
            });
        }
        store.save(&dir.join(CREDENTIALS_FILE)).map_err(|e| Failure::Runtime(e.to_string()))?;
        nodes.push(InitNode {
            node_id: n.node_id.clone(),
            org: n.org.to_string(),
            listen_addr: n.endpoint.clone(),
            is_orderer: n.is_orderer,
            channels: n.channels.clone(),
            dir: dir.display().to_string(),
        });
    }
    Ok(InitReport { root: out.display().to_string(), seed, insecure_demo_credentials: true, nodes, logins })
}

pub fn run(args: &InitArgs, json: bool) -> Result<(), Failure> {
    let mut topology = match &args.topology {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            Topology::from_json(&text).map_err(usage)?
        }
        None => Topology::default_three_node(args.seed.unwrap_or(7)),
    };
    if let Some(seed) = args.seed {
        topology.seed = seed;
    }
    let report = init_network(topology, &args.out, args.force)?;
    if json {
        print_json(&report);
        return Ok(());
    }
    println!("initialized {} (seed {})", report.root, report.seed);
    let rows: Vec<Vec<String>> = report
        .nodes
        .iter()
        .map(|n| {
            vec![
                n.node_id.clone(),
                n.org.clone(),
                n.listen_addr.clone(),
                if n.is_orderer { "yes".into() } else { String::new() },
                n.channels.join(","),
            ]
        })
        .collect();
    print!("{}", table::render(&["node", "org", "api", "orderer", "channels"], &rows));
    println!();
    println!("INSECURE demo logins: keys and passwords are derived from the seed. Do not use outside tests.");
    let rows: Vec<Vec<String>> = report
        .logins
        .iter()
        .map(|l| vec![l.username.clone(), l.role.clone(), l.node_id.clone(), l.password.clone()])
        .collect();
    print!("{}", table::render(&["user", "role", "node", "password"], &rows));
    Ok(())
}
