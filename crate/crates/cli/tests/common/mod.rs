#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

pub const GL: &str = env!("CARGO_BIN_EXE_gl");

pub fn gl(args: &[&str]) -> Output {
    Command::new(GL).args(args).output().expect("gl runs")
}

pub fn gl_path(args: &[&str], path: &Path) -> Output {
    Command::new(GL).args(args).arg(path).output().expect("gl runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn init(root: &Path, seed: u64) {
    let o = Command::new(GL)
        .args(["init", "--seed", &seed.to_string(), "--out"])
        .arg(root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

/// A `gl node run` child on an ephemeral port; killed on drop.
pub struct RunningNode {
    pub child: Child,
    pub base: String,
}

impl RunningNode {
    pub fn start(node_dir: &Path) -> RunningNode {
        let mut child = Command::new(GL)
            .args(["node", "run"])
            .arg(node_dir)
            .args(["--listen", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        let base = line
            .trim()
            .rsplit(' ')
            .next()
            .filter(|u| u.starts_with("http://"))
            .unwrap_or_else(|| panic!("unexpected node output {line:?}"))
            .to_string();
        RunningNode { child, base }
    }

    /// SIGTERM, then wait for a clean exit.
    pub fn stop(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        Command::new("kill").args(["-TERM", &pid]).status().unwrap();
        self.child.wait().unwrap()
    }
}

impl Drop for RunningNode {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
