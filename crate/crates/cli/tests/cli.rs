mod common;

use std::fs;

use common::{gl, gl_path, init, stdout, RunningNode, GL};
use serde_json::Value;

#[test]
fn init_writes_nodes_and_refuses_to_clobber() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("net");
    let o = std::process::Command::new(GL).args(["init", "--json", "--seed", "3", "--out"]).arg(&root).output().unwrap();
    assert!(o.status.success());
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["insecure_demo_credentials"], true);
    assert_eq!(report["nodes"].as_array().unwrap().len(), 3);
    for node in ["coop-node", "warehouse-node", "bank-node"] {
        for f in ["node.json", "credentials.json", "keys/node.key", "ledger/governance.blocks", "ledger/gebn-main.blocks"] {
            assert!(root.join(node).join(f).exists(), "{node}/{f}");
        }
    }
    let creds = fs::read_to_string(root.join("warehouse-node/credentials.json")).unwrap();
    assert!(creds.contains("$argon2id$"));

    let again = gl_path(&["init", "--out"], &root);
    assert_eq!(again.status.code(), Some(2));
    let forced = std::process::Command::new(GL).args(["init", "--force", "--seed", "4", "--out"]).arg(&root).output().unwrap();
    assert!(forced.status.success());
}

#[test]
fn init_rejects_invalid_topology() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("topology.json");
    fs::write(&topo, r#"{"nodes": []}"#).unwrap();
    let o = std::process::Command::new(GL)
        .args(["init", "--topology"])
        .arg(&topo)
        .arg("--out")
        .arg(dir.path().join("net"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("topology"));
}

#[test]
fn scenario_run_verify_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("net");
    init(&root, 9);
    let csv = dir.path().join("demo.csv");
    let g = gl(&["scenario", "generate", "--intakes", "10", "--silos", "2", "--seed", "9"]);
    fs::write(&csv, &g.stdout).unwrap();

    let node = RunningNode::start(&root.join("warehouse-node"));
    let second = gl_path(&["node", "run"], &root.join("bank-node"));
    assert_eq!(second.status.code(), Some(1), "a second process on the same root must fail");

    let run = std::process::Command::new(GL)
        .args(["scenario", "run", "--json", "--demo-seed", "9", "--seed", "9", "--against", &node.base])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}{}", stdout(&run), String::from_utf8_lossy(&run.stderr));
    let report: Value = serde_json::from_slice(&run.stdout).unwrap();
    let steps = report["steps"].as_array().unwrap();
    let count = |op: &str| steps.iter().filter(|s| s["operation"] == op).count();
    assert_eq!(count("DiscountsTransaction"), 10);
    assert_eq!(count("create_outgoing_lot"), 2);
    assert_eq!(report["all_valid"], true);

    let lot = gl(&["get", "/provenance/lots/LOT-S1-1", "--demo-seed", "9", "--against", &node.base]);
    assert!(lot.status.success(), "{}", stdout(&lot));

    assert!(node.stop().success());
    for n in ["coop-node", "warehouse-node", "bank-node"] {
        let v = gl_path(&["verify", "--json"], &root.join(n));
        assert!(v.status.success(), "{}", stdout(&v));
        let r: Value = serde_json::from_slice(&v.stdout).unwrap();
        assert!(r["comparison"].as_array().unwrap().iter().all(|c| c["consistent"] == true));
    }

    // Restart on the persisted chains and keep going.
    let node = RunningNode::start(&root.join("coop-node"));
    let health = reqwest::blocking::get(format!("{}/healthz", node.base)).unwrap();
    assert!(health.status().is_success());
    let s = gl(&[
        "get",
        "/assets/Silo/S1",
        "--user",
        &format!("p-prod-001:{}", grainledger_api::credentials::demo_password(9, "p-prod-001")),
        "--against",
        &node.base,
    ]);
    assert!(s.status.success(), "{}", stdout(&s));
    assert!(node.stop().success());
}

#[test]
fn failing_rows_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("net");
    init(&root, 12);
    let csv = dir.path().join("bad.csv");
    fs::write(
        &csv,
        "invoice,producer,gross_kg,tare_kg,M,I,B,G,D,analyte,concentration,silo\n\
         NF-1,p-prod-001,42000,15000,14,3,5,1,3,GMO,0.3,S1\n\
         NF-2,p-prod-002,15000,15000,14,3,5,1,3,GMO,0.3,S1\n",
    )
    .unwrap();
    let node = RunningNode::start(&root.join("warehouse-node"));
    let run = std::process::Command::new(GL)
        .args(["scenario", "run", "--demo-seed", "12", "--against", &node.base])
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(1));
    let out = stdout(&run);
    assert!(out.contains("NF-2") && out.contains("ABORTED"), "{out}");
    assert!(!out.lines().any(|l| l.contains("NF-1 ")), "{out}");
}

#[test]
fn verify_reports_first_bad_height() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("net");
    init(&root, 2);
    let csv = dir.path().join("demo.csv");
    fs::write(&csv, gl(&["scenario", "generate", "--intakes", "4", "--silos", "1"]).stdout).unwrap();
    let node = RunningNode::start(&root.join("coop-node"));
    let run = std::process::Command::new(GL)
        .args(["scenario", "run", "--user"])
        .arg(format!("p-prod-001:{}", grainledger_api::credentials::demo_password(2, "p-prod-001")))
        .args(["--against", &node.base])
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(2), "producer alone lacks the operator roles");
    drop(node);

    let file = root.join("bank-node/ledger/gebn-main.blocks");
    let mut bytes = fs::read(&file).unwrap();
    let last = bytes.len() - 10;
    bytes[last] ^= 0x01;
    fs::write(&file, bytes).unwrap();
    let v = gl_path(&["verify"], &root.join("bank-node"));
    assert_eq!(v.status.code(), Some(1));
    assert!(stdout(&v).contains("BROKEN at height 0"), "{}", stdout(&v));
    let other = gl_path(&["verify"], &root.join("coop-node"));
    assert_eq!(other.status.code(), Some(1), "peer replica is broken");
    assert!(stdout(&other).contains("bank-node is not intact"));
}

#[test]
fn bind_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("net");
    init(&root, 1);
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = std::process::Command::new(GL)
        .args(["node", "run"])
        .arg(root.join("coop-node"))
        .args(["--listen", &addr])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot bind"));
}
