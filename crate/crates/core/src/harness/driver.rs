//! Spawning a local ChromeDriver and describing the browser it drives.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::HarnessError;

pub const BROWSER_DIR_ENV: &str = "REDEFIX_BROWSER_DIR";
pub const DEFAULT_BROWSER_DIR: &str = "/opt/redefix-browser";

/// A Chromium build plus a matching ChromeDriver laid out in one directory
/// (`chromium`, `chromedriver`, shared libraries in `lib/`), as produced by
/// `scripts/fetch-browser.sh`.
#[derive(Debug, Clone)]
pub struct LocalBrowser {
    pub dir: PathBuf,
}

impl LocalBrowser {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$REDEFIX_BROWSER_DIR`, falling back to `/opt/redefix-browser`.
    pub fn from_env() -> Self {
        Self::new(std::env::var(BROWSER_DIR_ENV).unwrap_or_else(|_| DEFAULT_BROWSER_DIR.into()))
    }

    pub fn chromedriver(&self) -> PathBuf {
        self.dir.join("chromedriver")
    }

    pub fn chromium(&self) -> PathBuf {
        self.dir.join("chromium")
    }

    pub fn is_installed(&self) -> bool {
        self.chromedriver().is_file() && self.chromium().is_file()
    }

    fn library_path(&self) -> String {
        let mut parts = vec![
            self.dir.join("lib").display().to_string(),
            self.dir.display().to_string(),
        ];
        if let Ok(existing) = std::env::var("LD_LIBRARY_PATH") {
            parts.push(existing);
        }
        parts.join(":")
    }

    /// Session capabilities that launch this Chromium headless.
    pub fn capabilities(&self) -> Value {
        headless_chrome_capabilities(Some(&self.chromium()))
    }

    pub fn spawn_driver(&self) -> Result<DriverProcess, HarnessError> {
        if !self.is_installed() {
            return Err(HarnessError::EndpointUnreachable(format!(
                "no browser install at {} (run scripts/fetch-browser.sh or set {BROWSER_DIR_ENV})",
                self.dir.display()
            )));
        }
        DriverProcess::spawn(&self.chromedriver(), &self.library_path())
    }
}

pub fn headless_chrome_capabilities(binary: Option<&Path>) -> Value {
    let mut opts = json!({
        "args": [
            "--headless=new",
            "--no-sandbox",
            "--disable-gpu",
            "--disable-dev-shm-usage",
            "--hide-scrollbars",
            "--force-device-scale-factor=1",
            "--font-render-hinting=none",
        ]
    });
    if let Some(b) = binary {
        opts["binary"] = json!(b.display().to_string());
    }
    json!({ "alwaysMatch": { "goog:chromeOptions": opts } })
}

/// A running ChromeDriver child process, killed on drop.
pub struct DriverProcess {
    child: Child,
    endpoint: String,
}

impl DriverProcess {
    pub fn spawn(binary: &Path, library_path: &str) -> Result<Self, HarnessError> {
        let port = TcpListener::bind("127.0.0.1:0")
            .and_then(|l| l.local_addr())
            .map_err(|e| HarnessError::EndpointUnreachable(e.to_string()))?
            .port();
        let child = Command::new(binary)
            .arg(format!("--port={port}"))
            .env("LD_LIBRARY_PATH", library_path)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| HarnessError::EndpointUnreachable(format!("{}: {e}", binary.display())))?;
        let mut proc = Self {
            child,
            endpoint: format!("http://127.0.0.1:{port}"),
        };
        proc.wait_ready(Duration::from_secs(15))?;
        Ok(proc)
    }

    fn wait_ready(&mut self, limit: Duration) -> Result<(), HarnessError> {
        let start = Instant::now();
        let status_url = format!("{}/status", self.endpoint);
        while start.elapsed() < limit {
            if let Ok(Some(exit)) = self.child.try_wait() {
                return Err(HarnessError::EndpointUnreachable(format!(
                    "chromedriver exited early: {exit}"
                )));
            }
            let ready = reqwest::blocking::get(&status_url)
                .ok()
                .and_then(|r| r.json::<Value>().ok())
                .and_then(|v| v.pointer("/value/ready").and_then(Value::as_bool))
                .unwrap_or(false);
            if ready {
                return Ok(());
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        Err(HarnessError::EndpointUnreachable(format!(
            "chromedriver at {} not ready after {limit:?}",
            self.endpoint
        )))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Drop for DriverProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
