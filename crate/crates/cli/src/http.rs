use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use grainledger::identity::Role;
use grainledger_api::credentials::demo_password;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use crate::{print_json, ApiArgs, Failure, SubmitArgs};

/// Demo operators used by `--demo-seed`.
const DEMO_USERS: [&str; 3] = ["p-wh-01", "p-qa-01", "admin-warehouse"];

pub struct Api {
    base: String,
    http: Client,
    /// Session token per role.
    pub tokens: BTreeMap<Role, String>,
}

pub enum Submitted {
    Accepted(String),
    Aborted { tx_id: String, reason: String },
    Rejected { status: u16, error: String, message: String },
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

impl Api {
    pub fn connect(args: &ApiArgs) -> Result<Self, Failure> {
        let mut users: Vec<(String, String)> = Vec::new();
        for u in &args.users {
            let (name, pw) = u
                .split_once(':')
                .ok_or_else(|| Failure::Usage(format!("--user expects USER:PASSWORD, got {u}")))?;
            users.push((name.into(), pw.into()));
        }
        if let Some(seed) = args.demo_seed {
            users.extend(DEMO_USERS.iter().map(|u| (u.to_string(), demo_password(seed, u))));
        }
        if users.is_empty() {
            return Err(Failure::Usage("pass --user USER:PASSWORD or --demo-seed N".into()));
        }
        let http = Client::builder().timeout(Duration::from_secs(30)).build().map_err(runtime)?;
        let mut api = Api { base: args.against.trim_end_matches('/').to_string(), http, tokens: BTreeMap::new() };
        for (name, pw) in users {
            let resp = api
                .http
                .post(format!("{}/auth/login", api.base))
                .json(&json!({ "username": name, "password": pw }))
                .send()
                .map_err(runtime)?;
            let status = resp.status();
            let body: Value = resp.json().unwrap_or(Value::Null);
            if !status.is_success() {
                // Demo users absent from this node are skipped.
                if args.demo_seed.is_some() && status == StatusCode::UNAUTHORIZED && DEMO_USERS.contains(&name.as_str()) {
                    continue;
                }
                return Err(runtime(format!("login {name}: {status} {}", body["message"].as_str().unwrap_or(""))));
            }
            let role: Role = body["role"]
                .as_str()
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| runtime(format!("login {name}: response lacks a role")))?;
            let token = body["token"].as_str().unwrap_or_default().to_string();
            api.tokens.entry(role).or_insert(token);
        }
        if api.tokens.is_empty() {
            return Err(runtime("no login succeeded"));
        }
        Ok(api)
    }

    /// Token for `role`, falling back to an admin session.
    pub fn token(&self, role: Role) -> Option<&str> {
        self.tokens.get(&role).or_else(|| self.tokens.get(&Role::Admin)).map(String::as_str)
    }

    pub fn any_token(&self) -> &str {
        self.tokens.values().next().expect("connect ensures a session")
    }

    pub fn submit(
        &self,
        token: &str,
        contract: &str,
        operation: &str,
        args: Value,
        channel: Option<&str>,
    ) -> Result<Submitted, Failure> {
        let mut body = json!({ "contract_id": contract, "operation": operation, "args": args });
        if let Some(c) = channel {
            body["channel_id"] = json!(c);
        }
        let resp = self
            .http
            .post(format!("{}/transactions", self.base))
            .bearer_auth(token)
            .json(&body)
            .send()
            .map_err(runtime)?;
        let status = resp.status();
        let body: Value = resp.json().unwrap_or(Value::Null);
        let text = |k: &str| body[k].as_str().unwrap_or_default().to_string();
        Ok(match status {
            StatusCode::ACCEPTED => Submitted::Accepted(text("tx_id")),
            StatusCode::UNPROCESSABLE_ENTITY if body["tx_id"].is_string() => {
                Submitted::Aborted { tx_id: text("tx_id"), reason: text("message") }
            }
            s => Submitted::Rejected { status: s.as_u16(), error: text("error"), message: text("message") },
        })
    }

    pub fn get(&self, token: &str, path: &str) -> Result<(StatusCode, Value), Failure> {
        let sep = if path.starts_with('/') { "" } else { "/" };
        let resp = self.http.get(format!("{}{sep}{path}", self.base)).bearer_auth(token).send().map_err(runtime)?;
        let status = resp.status();
        Ok((status, resp.json().unwrap_or(Value::Null)))
    }

    /// Polls until every transaction leaves PENDING or `timeout` passes.
    pub fn wait_all(&self, tx_ids: &[String], timeout: Duration) -> Result<BTreeMap<String, Value>, Failure> {
        let deadline = Instant::now() + timeout;
        let mut done = BTreeMap::new();
        let mut delay = Duration::from_millis(5);
        loop {
            let open: Vec<&String> = tx_ids.iter().filter(|id| !done.contains_key(*id)).collect();
            for id in open {
                let (status, body) = self.get(self.any_token(), &format!("/transactions/{id}"))?;
                if status.is_success() && body["status"] != "PENDING" {
                    done.insert(id.clone(), body);
                }
            }
            if done.len() == tx_ids.len() {
                return Ok(done);
            }
            if Instant::now() >= deadline {
                return Err(runtime(format!("{} transactions still pending", tx_ids.len() - done.len())));
            }
            std::thread::sleep(delay);
            delay = (delay * 2).min(Duration::from_millis(100));
        }
    }
}

pub fn submit(args: &SubmitArgs, json: bool) -> Result<(), Failure> {
    let api = Api::connect(&args.api)?;
    let payload: Value = serde_json::from_str(&args.args).map_err(|e| Failure::Usage(format!("--args: {e}")))?;
    let token = api.tokens.values().next().expect("connect ensures a session");
    match api.submit(token, &args.contract, &args.operation, payload, args.channel.as_deref())? {
        Submitted::Accepted(tx_id) => {
            let status = if args.wait {
                api.wait_all(std::slice::from_ref(&tx_id), Duration::from_secs(30))?.remove(&tx_id).unwrap()
            } else {
                json!({ "tx_id": tx_id, "status": "PENDING" })
            };
            if json {
                print_json(&status);
            } else {
                println!("{tx_id} {}", status["status"].as_str().unwrap_or("?"));
                if let Some(r) = status["reason"].as_str() {
                    println!("reason: {r}");
                }
            }
            match status["status"].as_str() {
                Some("INVALID") => Err(Failure::Runtime(format!("transaction {tx_id} is INVALID"))),
                _ => Ok(()),
            }
        }
        Submitted::Aborted { tx_id, reason } => Err(Failure::Runtime(format!("{tx_id}: contract abort: {reason}"))),
        Submitted::Rejected { status, error, message } => {
            Err(Failure::Runtime(format!("rejected with {status} {error}: {message}")))
        }
    }
}

pub fn get(path: &str, args: &ApiArgs) -> Result<(), Failure> {
    let api = Api::connect(args)?;
    let (status, body) = api.get(api.any_token(), path)?;
    print_json(&body);
    if status.is_success() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("GET {path}: {status}")))
    }
}
