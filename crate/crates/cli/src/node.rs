use std::fs::{File, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use grainledger_api::settings::{NodeSettings, SETTINGS_FILE};
use grainledger_api::{serve, NodeHost};

use crate::Failure;

pub const LOCK_FILE: &str = ".gl.lock";

/// Every node of a network root shares one simulated network, so one
/// process per root holds this lock.
fn lock_root(root: &Path) -> Result<File, Failure> {
    let path = root.join(LOCK_FILE);
    let file = File::create(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(TryLockError::WouldBlock) => {
            Err(Failure::Runtime(format!("{} is in use by another gl node process", root.display())))
        }
        Err(TryLockError::Error(e)) => Err(Failure::Runtime(format!("{}: {e}", path.display()))),
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    eprintln!("shutting down");
}

pub fn run(node_dir: &Path, listen: Option<String>, ui_dir: Option<PathBuf>) -> Result<(), Failure> {
    let mut settings = NodeSettings::load(&node_dir.join(SETTINGS_FILE)).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Ok(addr) = std::env::var("GL_LISTEN_ADDR") {
        settings.listen_addr = addr;
    }
    if let Some(dir) = std::env::var_os("GL_DATA_DIR") {
        settings.data_dir = Some(PathBuf::from(dir));
    }
    if let Some(addr) = listen {
        settings.listen_addr = addr;
    }
    if ui_dir.is_some() {
        settings.ui_dir = ui_dir;
    }
    let root = settings.data_dir.clone().expect("load sets data_dir");
    let _lock = lock_root(&root)?;

    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&settings.listen_addr)
            .await
            .map_err(|e| Failure::Runtime(format!("cannot bind {}: {e}", settings.listen_addr)))?;
        let addr = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
        let node_id = settings.node_id.clone();
        let host = tokio::task::spawn_blocking(move || NodeHost::open(settings))
            .await
            .map_err(|e| Failure::Runtime(e.to_string()))?
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("{node_id} listening on http://{addr}");
        let _ = std::io::stdout().flush();
        serve(listener, host, shutdown_signal()).await.map_err(|e| Failure::Runtime(e.to_string()))
    })
}
