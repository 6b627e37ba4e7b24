use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Response, Server};

/// Serves one directory over HTTP on an ephemeral loopback port, so local
/// files load with a normal origin instead of a `file://` URL.
pub struct StaticServer {
    server: Arc<Server>,
    port: u16,
    worker: Option<JoinHandle<()>>,
}

impl StaticServer {
    pub fn serve_dir(root: &Path) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("server bound to a non-IP address"))?;
        let server = Arc::new(server);
        let root = root.to_path_buf();
        let srv = Arc::clone(&server);
        let worker = std::thread::spawn(move || {
            for req in srv.incoming_requests() {
                let resp = match resolve(&root, req.url()) {
                    Some(path) if path.is_file() => match std::fs::read(&path) {
                        Ok(bytes) => Response::from_data(bytes).with_header(
                            Header::from_bytes("Content-Type", content_type(&path)).unwrap(),
                        ),
                        Err(_) => Response::from_data(b"unreadable".to_vec()).with_status_code(500),
                    },
                    _ => Response::from_data(b"not found".to_vec()).with_status_code(404),
                };
                let _ = req.respond(resp);
            }
        });
        Ok(Self {
            server,
            port,
            worker: Some(worker),
        })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn url_for(&self, file_name: &str) -> String {
        let encoded: String = file_name
            .split('/')
            .map(percent_encode)
            .collect::<Vec<_>>()
            .join("/");
        format!("http://127.0.0.1:{}/{}", self.port, encoded)
    }
}

impl Drop for StaticServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn percent_encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Some(v) = std::str::from_utf8(&bytes[i + 1..i + 3]).ok().and_then(|h| u8::from_str_radix(h, 16).ok()) {
                out.push(v);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn resolve(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("");
    let rel = PathBuf::from(percent_decode(path.trim_start_matches('/')));
    if rel
        .components()
        .any(|c| !matches!(c, Component::Normal(_)))
    {
        return None;
    }
    Some(root.join(rel))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "js" => "application/javascript",
        "json" => "application/json",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "svg" => "image/svg+xml",
        "gif" => "image/gif",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}
