//! Browser harness: viewport control, geometry probing, region screenshots
//! and style injection over the WebDriver wire protocol.

mod driver;
mod serve;
mod webdriver;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::layout::{BoundingBox, LayoutNode, LayoutSnapshot};

pub use driver::{
    headless_chrome_capabilities, DriverProcess, LocalBrowser, BROWSER_DIR_ENV, DEFAULT_BROWSER_DIR,
};
pub use serve::StaticServer;
pub use webdriver::{WebDriverClient, WindowRect};

/// In-page geometry collector, run through execute-script.
pub const PROBE_SCRIPT: &str = include_str!("probe.js");

pub const MIN_WIDTH: u32 = 200;
pub const MAX_WIDTH: u32 = 4000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("webdriver endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("navigation timed out")]
    NavigationTimeout,
    #[error("navigation failed: {0}")]
    Navigation(String),
    #[error("target is not an HTML document (content type {0})")]
    NonHtml(String),
    #[error("script failed: {0}")]
    Script(String),
    #[error("could not resize viewport to {requested}px (got {actual}px)")]
    Resize { requested: u32, actual: u32 },
    #[error("viewport width {0} outside {MIN_WIDTH}..={MAX_WIDTH}")]
    InvalidWidth(u32),
    #[error("element not found: {0}")]
    ElementNotFound(String),
    #[error("screenshot failed: {0}")]
    Screenshot(String),
    #[error("style marker `{0}` already injected")]
    DuplicateMarker(String),
    #[error("unknown style marker `{0}`")]
    UnknownMarker(String),
    #[error("page handle is closed")]
    Closed,
    #[error("webdriver error `{error}`: {message}")]
    Protocol { error: String, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    #[serde(with = "millis")]
    pub navigation_timeout: Duration,
    #[serde(with = "millis")]
    pub settle_delay: Duration,
    pub window_height: u32,
    pub screenshot_padding: f64,
    /// Session capabilities; defaults to headless Chrome.
    pub capabilities: Value,
    /// Alternative probe script; the shipped one is used when unset.
    pub probe_script: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            navigation_timeout: Duration::from_secs(30),
            settle_delay: Duration::from_millis(200),
            window_height: 900,
            screenshot_padding: 40.0,
            capabilities: headless_chrome_capabilities(None),
            probe_script: None,
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// A PNG crop of the page around some elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Screenshot {
    pub png_bytes: Vec<u8>,
    pub viewport_width: u32,
    pub region: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeElement {
    pub xpath: String,
    pub rect: ProbeRect,
    pub parent_index: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeViewport {
    pub width: f64,
    pub height: f64,
}

/// What the geometry probe returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub elements: Vec<ProbeElement>,
    pub viewport: ProbeViewport,
}

impl ProbeResult {
    pub fn into_snapshot(self, viewport_width: u32) -> Result<LayoutSnapshot, HarnessError> {
        let bad = |m: String| HarnessError::Script(format!("malformed probe result: {m}"));
        let mut parent_map = BTreeMap::new();
        let mut nodes = Vec::with_capacity(self.elements.len());
        for (i, el) in self.elements.iter().enumerate() {
            if el.parent_index >= 0 {
                let p = el.parent_index as usize;
                if p >= i {
                    return Err(bad(format!("{} references a later parent", el.xpath)));
                }
                parent_map.insert(el.xpath.clone(), self.elements[p].xpath.clone());
            }
            let bbox = BoundingBox::new(el.rect.x, el.rect.y, el.rect.width, el.rect.height)
                .map_err(|e| bad(e.to_string()))?;
            nodes.push(LayoutNode {
                xpath: el.xpath.clone(),
                bbox,
                visible: true,
            });
        }
        LayoutSnapshot::new(viewport_width, nodes, parent_map).map_err(|e| bad(e.to_string()))
    }
}

/// The browser operations detection and repair need. [`PageHandle`] is the
/// WebDriver-backed implementation.
pub trait Page {
    fn url(&self) -> &str;
    fn snapshot_at(&mut self, width: u32) -> Result<LayoutSnapshot, HarnessError>;
    fn screenshot_region(
        &mut self,
        width: u32,
        participants: &[String],
        padding: f64,
    ) -> Result<Screenshot, HarnessError>;
    fn inject_style(&mut self, css_text: &str, marker_id: &str) -> Result<(), HarnessError>;
    fn remove_style(&mut self, marker_id: &str) -> Result<(), HarnessError>;
    fn injected_style_ids(&self) -> &[String];
    /// Serialized live DOM.
    fn document_html(&mut self) -> Result<String, HarnessError>;
    /// Text of the page's own style sheets (injected patches excluded).
    fn stylesheet_text(&mut self) -> Result<String, HarnessError>;
}

/// An open browser session on one page.
pub struct PageHandle {
    client: WebDriverClient,
    session_id: Option<String>,
    url: String,
    injected_style_ids: Vec<String>,
    config: HarnessConfig,
    probe: String,
    current_width: Option<u32>,
    // Keeps the embedded file server alive as long as the page.
    _server: Option<StaticServer>,
}

impl std::fmt::Debug for PageHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PageHandle")
            .field("session_id", &self.session_id)
            .field("url", &self.url)
            .field("injected_style_ids", &self.injected_style_ids)
            .finish()
    }
}

impl PageHandle {
    /// Opens `target` (an http(s) URL or a local file path) in a new session
    /// and waits for the document to finish loading.
    pub fn open(target: &str, webdriver_endpoint: &str, config: &HarnessConfig) -> Result<Self, HarnessError> {
        let probe = match &config.probe_script {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Script(format!("{}: {e}", p.display())))?,
            None => PROBE_SCRIPT.to_string(),
        };
        let (url, server) = resolve_target(target)?;
        let client = WebDriverClient::new(
            webdriver_endpoint,
            config.navigation_timeout + Duration::from_secs(15),
        )?;
        let session = client.new_session(&config.capabilities)?;
        let page = Self {
            client,
            session_id: Some(session.clone()),
            url: url.clone(),
            injected_style_ids: Vec::new(),
            config: config.clone(),
            probe,
            current_width: None,
            _server: server,
        };
        page.client
            .set_timeouts(&session, config.navigation_timeout, config.navigation_timeout)?;
        page.client.navigate(&session, &url)?;
        page.wait_ready()?;
        let content_type = page
            .exec("return document.contentType;", vec![])?
            .as_str()
            .unwrap_or_default()
            .to_string();
        if content_type != "text/html" && content_type != "application/xhtml+xml" {
            return Err(HarnessError::NonHtml(content_type));
        }
        std::thread::sleep(config.settle_delay);
        Ok(page)
    }

    pub fn session_id(&self) -> Option<&str> {
        self.session_id.as_deref()
    }

    pub fn is_open(&self) -> bool {
        self.session_id.is_some()
    }

    pub fn close(&mut self) -> Result<(), HarnessError> {
        match self.session_id.take() {
            Some(s) => self.client.delete_session(&s),
            None => Ok(()),
        }
    }

    fn session(&self) -> Result<&str, HarnessError> {
        self.session_id.as_deref().ok_or(HarnessError::Closed)
    }

    fn exec(&self, script: &str, args: Vec<Value>) -> Result<Value, HarnessError> {
        let s = self.session()?;
        self.client.execute(s, script, args)
    }

    fn wait_ready(&self) -> Result<(), HarnessError> {
        let start = Instant::now();
        loop {
            let state = self.exec("return document.readyState;", vec![])?;
            if state.as_str() == Some("complete") {
                return Ok(());
            }
            if start.elapsed() > self.config.navigation_timeout {
                return Err(HarnessError::NavigationTimeout);
            }
            std::thread::sleep(Duration::from_millis(25));
        }
    }

    /// Resizes the window until the layout viewport is exactly `width`,
    /// compensating for any window chrome.
    fn set_viewport_width(&mut self, width: u32) -> Result<(), HarnessError> {
        if !(MIN_WIDTH..=MAX_WIDTH).contains(&width) {
            return Err(HarnessError::InvalidWidth(width));
        }
        if self.current_width == Some(width) {
            return Ok(());
        }
        let session = self.session()?.to_string();
        let mut outer = width;
        let mut actual = 0;
        for _ in 0..4 {
            self.client
                .set_window_rect(&session, outer, self.config.window_height)?;
            actual = self
                .exec("return window.innerWidth;", vec![])?
                .as_u64()
                .unwrap_or(0) as u32;
            if actual == width {
                self.current_width = Some(width);
                return Ok(());
            }
            outer = (outer as i64 + width as i64 - actual as i64).max(1) as u32;
        }
        self.current_width = None;
        Err(HarnessError::Resize {
            requested: width,
            actual,
        })
    }

    fn page_bounds(&self) -> Result<BoundingBox, HarnessError> {
        let v = self.exec(
            "var d=document.documentElement,b=document.body||d;\
             return [Math.max(d.scrollWidth,b.scrollWidth), Math.max(d.scrollHeight,b.scrollHeight)];",
            vec![],
        )?;
        let w = v.get(0).and_then(Value::as_f64).unwrap_or(0.0);
        let h = v.get(1).and_then(Value::as_f64).unwrap_or(0.0);
        Ok(BoundingBox {
            x: 0.0,
            y: 0.0,
            width: w,
            height: h,
        })
    }
}

impl Drop for PageHandle {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

impl Page for PageHandle {
    fn url(&self) -> &str {
        &self.url
    }

    fn snapshot_at(&mut self, width: u32) -> Result<LayoutSnapshot, HarnessError> {
        self.session()?;
        self.set_viewport_width(width)?;
        let raw = self.exec(&self.probe, vec![])?;
        let probe: ProbeResult = serde_json::from_value(raw)
            .map_err(|e| HarnessError::Script(format!("malformed probe result: {e}")))?;
        if probe.viewport.width.round() as u32 != width {
            self.current_width = None;
            return Err(HarnessError::Resize {
                requested: width,
                actual: probe.viewport.width.round() as u32,
            });
        }
        probe.into_snapshot(width)
    }

    fn screenshot_region(
        &mut self,
        width: u32,
        participants: &[String],
        padding: f64,
    ) -> Result<Screenshot, HarnessError> {
        if participants.is_empty() {
            return Err(HarnessError::ElementNotFound("no participants given".into()));
        }
        let snap = self.snapshot_at(width)?;
        let boxes = participants
            .iter()
            .map(|x| {
                snap.visible_box(x)
                    .copied()
                    .ok_or_else(|| HarnessError::ElementNotFound(x.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let union = BoundingBox::union(&boxes).expect("non-empty");
        let region = padded_region(&union, padding, &self.page_bounds()?);

        let session = self.session()?.to_string();
        let grow = region.height > self.config.window_height as f64;
        if grow {
            self.client
                .set_window_rect(&session, width, region.height.ceil() as u32 + 1)?;
        }
        let result = (|| {
            let scroll = self.exec(
                "window.scrollTo(arguments[0], arguments[1]);\
                 return [window.scrollX, window.scrollY];",
                vec![json!(region.x), json!(region.y)],
            )?;
            let sx = scroll.get(0).and_then(Value::as_f64).unwrap_or(0.0);
            let sy = scroll.get(1).and_then(Value::as_f64).unwrap_or(0.0);
            let png = self.client.screenshot(&session)?;
            self.exec("window.scrollTo(0, 0);", vec![])?;
            crop_png(&png, width, &region, sx, sy)
        })();
        if grow {
            self.client
                .set_window_rect(&session, width, self.config.window_height)?;
            self.current_width = None;
        }
        let (png_bytes, captured) = result?;
        Ok(Screenshot {
            png_bytes,
            viewport_width: width,
            region: captured,
        })
    }

    fn inject_style(&mut self, css_text: &str, marker_id: &str) -> Result<(), HarnessError> {
        if self.injected_style_ids.iter().any(|m| m == marker_id) {
            return Err(HarnessError::DuplicateMarker(marker_id.to_string()));
        }
        self.exec(
            "var s=document.createElement('style');s.id=arguments[1];s.textContent=arguments[0];\
             (document.head||document.documentElement).appendChild(s);",
            vec![json!(css_text), json!(marker_id)],
        )?;
        self.injected_style_ids.push(marker_id.to_string());
        Ok(())
    }

    fn remove_style(&mut self, marker_id: &str) -> Result<(), HarnessError> {
        let pos = self
            .injected_style_ids
            .iter()
            .position(|m| m == marker_id)
            .ok_or_else(|| HarnessError::UnknownMarker(marker_id.to_string()))?;
        self.exec(
            "var s=document.getElementById(arguments[0]);if(s){s.parentNode.removeChild(s);}",
            vec![json!(marker_id)],
        )?;
        self.injected_style_ids.remove(pos);
        Ok(())
    }

    fn injected_style_ids(&self) -> &[String] {
        &self.injected_style_ids
    }

    fn document_html(&mut self) -> Result<String, HarnessError> {
        let v = self.exec("return document.documentElement.outerHTML;", vec![])?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }

    fn stylesheet_text(&mut self) -> Result<String, HarnessError> {
        let v = self.exec(
            "var skip=arguments[0],out=[];\
             for(var i=0;i<document.styleSheets.length;i++){\
               var sh=document.styleSheets[i];\
               if(sh.ownerNode&&sh.ownerNode.id&&skip.indexOf(sh.ownerNode.id)>=0)continue;\
               try{for(var j=0;j<sh.cssRules.length;j++)out.push(sh.cssRules[j].cssText);}catch(e){}\
             }return out.join('\\n');",
            vec![json!(self.injected_style_ids)],
        )?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }
}

fn resolve_target(target: &str) -> Result<(String, Option<StaticServer>), HarnessError> {
    if target.starts_with("http://") || target.starts_with("https://") {
        let resp = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .and_then(|c| c.get(target).send())
            .map_err(|e| HarnessError::Navigation(format!("{target}: {e}")))?;
        if resp.status().is_client_error() || resp.status().is_server_error() {
            return Err(HarnessError::Navigation(format!("{target}: HTTP {}", resp.status())));
        }
        return Ok((target.to_string(), None));
    }
    if target.starts_with("data:") {
        return Ok((target.to_string(), None));
    }
    let path = Path::new(target.strip_prefix("file://").unwrap_or(target));
    if !path.is_file() {
        return Err(HarnessError::Navigation(format!("no such file: {}", path.display())));
    }
    let path = path
        .canonicalize()
        .map_err(|e| HarnessError::Navigation(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("/"));
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| HarnessError::Navigation(format!("bad file name: {}", path.display())))?;
    let server = StaticServer::serve_dir(dir)
        .map_err(|e| HarnessError::Navigation(format!("file server: {e}")))?;
    Ok((server.url_for(name), Some(server)))
}

/// Union box grown by `padding` on every side and clamped to the page.
pub fn padded_region(union: &BoundingBox, padding: f64, page: &BoundingBox) -> BoundingBox {
    let x0 = (union.x - padding).max(page.x);
    let y0 = (union.y - padding).max(page.y);
    let x1 = (union.right() + padding).min(page.right()).max(x0);
    let y1 = (union.bottom() + padding).min(page.bottom()).max(y0);
    BoundingBox {
        x: x0,
        y: y0,
        width: x1 - x0,
        height: y1 - y0,
    }
}

/// Crops a viewport screenshot, taken while scrolled to `(sx, sy)`, down to
/// `region` (page coordinates). Returns the PNG and the region actually
/// captured.
fn crop_png(
    png: &[u8],
    viewport_width: u32,
    region: &BoundingBox,
    sx: f64,
    sy: f64,
) -> Result<(Vec<u8>, BoundingBox), HarnessError> {
    let img = image::load_from_memory_with_format(png, image::ImageFormat::Png)
        .map_err(|e| HarnessError::Screenshot(e.to_string()))?;
    let scale = img.width() as f64 / viewport_width.max(1) as f64;
    let x0 = ((region.x - sx) * scale).max(0.0).floor() as u32;
    let y0 = ((region.y - sy) * scale).max(0.0).floor() as u32;
    let x1 = (((region.right() - sx) * scale).ceil() as u32).min(img.width());
    let y1 = (((region.bottom() - sy) * scale).ceil() as u32).min(img.height());
    if x1 <= x0 || y1 <= y0 {
        return Err(HarnessError::Screenshot("region lies outside the captured viewport".into()));
    }
    let cropped = img.crop_imm(x0, y0, x1 - x0, y1 - y0);
    let mut out = Vec::new();
    cropped
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| HarnessError::Screenshot(e.to_string()))?;
    let captured = BoundingBox {
        x: sx + x0 as f64 / scale,
        y: sy + y0 as f64 / scale,
        width: (x1 - x0) as f64 / scale,
        height: (y1 - y0) as f64 / scale,
    };
    Ok((out, captured))
}
