mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};

use redefix_core::harness::{
    headless_chrome_capabilities, DriverProcess, HarnessConfig, LocalBrowser, Page, PageHandle,
};
use redefix_core::kb::{build_kb, FixtureApi, HttpApi, KbBuildConfig, KbStore, StackExchangeApi};
use redefix_core::layout::{RlfRecord, RlfType};
use redefix_core::llm::LlmClient;
use redefix_core::repair::{repair, RepairConfig, RepairInputs};
use redefix_core::retriever::HashingEmbedder;
use redefix_core::sweep::detect_page;

use config::RunConfig;
use report::{Artifacts, OutcomeEntry, RepairReport, RunMetadata, INDEX_FILE, REPORT_FILE, SCHEMA_VERSION};

const EXIT_FAILURE: u8 = 1;
const EXIT_KB_PARTIAL: u8 = 2;
const EXIT_RLFS_FOUND: u8 = 3;
const EXIT_NOT_ALL_REPAIRED: u8 = 4;

#[derive(Parser)]
#[command(name = "redefix", version, about = "Detect and repair responsive layout failures")]
struct Cli {
    /// TOML config file (default: ./redefix.toml when present)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// WebDriver endpoint; a local ChromeDriver is started when omitted
    #[arg(long, global = true)]
    webdriver: Option<String>,
    /// Knowledge base directory
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    /// Pages processed in parallel, one browser session each
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build or inspect the Stack Overflow knowledge base
    Kb {
        #[command(subcommand)]
        cmd: KbCmd,
    },
    /// Print the layout failures found on each page as JSON
    Detect {
        #[arg(required = true)]
        urls: Vec<String>,
    },
    /// Repair the failures on a page and write a report
    Repair {
        url: String,
        /// Repair only this entry of the detected list
        #[arg(long)]
        rlf_index: Option<usize>,
        /// JSON array of canned model responses, used instead of the endpoint
        #[arg(long)]
        mock_llm: Option<PathBuf>,
        /// Ranked [{xpath, property, score}] list to use instead of probing
        #[arg(long)]
        localization_file: Option<PathBuf>,
        /// No retrieval; the prompt carries no Stack Overflow posts
        #[arg(long)]
        zero_shot: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render index.html for a repair output directory
    Report { dir: PathBuf },
}

#[derive(Subcommand)]
enum KbCmd {
    Build {
        /// Directory of canned API responses to build from offline
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    Stats,
}

struct Browser {
    _driver: Option<DriverProcess>,
    endpoint: String,
    harness: HarnessConfig,
}

impl Browser {
    fn start(cfg: &RunConfig) -> anyhow::Result<Self> {
        if let Some(ep) = &cfg.webdriver_endpoint {
            return Ok(Self {
                _driver: None,
                endpoint: ep.clone(),
                harness: cfg.harness.clone(),
            });
        }
        let local = LocalBrowser::from_env();
        let driver = local.spawn_driver()?;
        let mut harness = cfg.harness.clone();
        if harness.capabilities == headless_chrome_capabilities(None) {
            harness.capabilities = local.capabilities();
        }
        Ok(Self {
            endpoint: driver.endpoint().to_string(),
            _driver: Some(driver),
            harness,
        })
    }

    fn open(&self, url: &str) -> anyhow::Result<PageHandle> {
        PageHandle::open(url, &self.endpoint, &self.harness).with_context(|| format!("opening {url}"))
    }
}

// println! panics on a closed pipe (`redefix ... | head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(w) = cli.webdriver {
        cfg.webdriver_endpoint = Some(w);
    }
    if let Some(k) = cli.kb {
        cfg.kb_path = k;
    }
    cfg.validate()?;
    match cli.cmd {
        Cmd::Kb { cmd: KbCmd::Build { fixture } } => cmd_kb_build(&cfg, fixture.as_deref()),
        Cmd::Kb { cmd: KbCmd::Stats } => {
            let stats = KbStore::open(&cfg.kb_path)?.stats()?;
            emit(&serde_json::to_string_pretty(&stats)?);
            Ok(0)
        }
        Cmd::Detect { urls } => cmd_detect(&cfg, &urls, cli.jobs.max(1)),
        Cmd::Repair {
            url,
            rlf_index,
            mock_llm,
            localization_file,
            zero_shot,
            out,
        } => {
            if let Some(m) = mock_llm {
                cfg.llm.mock_script = Some(m);
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cmd_repair(&cfg, &url, rlf_index, localization_file, zero_shot)
        }
        Cmd::Report { dir } => cmd_report(&dir),
    }
}

fn cmd_kb_build(cfg: &RunConfig, fixture: Option<&Path>) -> anyhow::Result<u8> {
    let api: Box<dyn StackExchangeApi> = match fixture {
        Some(dir) => Box::new(FixtureApi::load(dir)?),
        None => Box::new(HttpApi::from_env()?),
    };
    let build = KbBuildConfig {
        page_cap: cfg.kb_page_cap,
        ..KbBuildConfig::default()
    };
    let stats = build_kb(&build, api.as_ref(), &cfg.kb_path)?;
    emit(&serde_json::to_string_pretty(&stats)?);
    if stats.complete {
        Ok(0)
    } else {
        eprintln!(
            "knowledge base is partial: {}",
            stats.error.as_deref().unwrap_or("quota exhausted")
        );
        Ok(EXIT_KB_PARTIAL)
    }
}

fn cmd_detect(cfg: &RunConfig, urls: &[String], jobs: usize) -> anyhow::Result<u8> {
    let results: Mutex<Vec<Option<anyhow::Result<Vec<RlfRecord>>>>> = Mutex::new(urls.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(urls.len()) {
            s.spawn(|| {
                let browser = Browser::start(cfg);
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(url) = urls.get(i) else { break };
                    let r = match &browser {
                        Ok(b) => b
                            .open(url)
                            .and_then(|mut page| detect_page(&mut page, &cfg.sweep).map_err(Into::into)),
                        Err(e) => Err(anyhow!("{e:#}")),
                    };
                    results.lock().unwrap()[i] = Some(r);
                }
            });
        }
    });
    let mut found = Vec::new();
    for (url, r) in urls.iter().zip(results.into_inner().unwrap()) {
        let records = r.expect("every url visited").with_context(|| format!("detecting on {url}"))?;
        found.push(records);
    }
    let json = if urls.len() == 1 {
        serde_json::to_string_pretty(&found[0])?
    } else {
        let map: serde_json::Map<String, serde_json::Value> = urls
            .iter()
            .zip(&found)
            .map(|(u, f)| Ok((u.clone(), serde_json::to_value(f)?)))
            .collect::<anyhow::Result<_>>()?;
        serde_json::to_string_pretty(&map)?
    };
    emit(&json);
    Ok(if found.iter().all(Vec::is_empty) { 0 } else { EXIT_RLFS_FOUND })
}

fn write_png(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<String> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(name.to_string())
}

fn cmd_repair(
    cfg: &RunConfig,
    url: &str,
    rlf_index: Option<usize>,
    localization_file: Option<PathBuf>,
    zero_shot: bool,
) -> anyhow::Result<u8> {
    let started_at = chrono::Utc::now().to_rfc3339();
    // Zero-shot never opens the store, so a missing or foreign KB is fine.
    let store = if zero_shot {
        None
    } else {
        Some(KbStore::open(&cfg.kb_path).with_context(|| {
            format!(
                "no knowledge base at {} (run `redefix kb build` or pass --zero-shot)",
                cfg.kb_path.display()
            )
        })?)
    };
    let llm = LlmClient::from_config(cfg.llm.clone())?;
    let embedder = HashingEmbedder::default();
    let inputs = RepairInputs {
        llm: &llm,
        store: store.as_ref(),
        embedder: &embedder,
        localization_file,
    };
    let repair_cfg = RepairConfig {
        max_iterations: cfg.max_iterations,
        n_majority: cfg.n_majority,
        sweep: cfg.sweep.clone(),
        retriever: cfg.retriever(),
        screenshot_padding: cfg.harness.screenshot_padding,
        ..RepairConfig::default()
    };

    let browser = Browser::start(cfg)?;
    let mut page = browser.open(url)?;
    let baseline = detect_page(&mut page, &cfg.sweep)?;
    let targets: Vec<(usize, RlfRecord)> = match rlf_index {
        Some(i) => {
            let rlf = baseline
                .get(i)
                .ok_or_else(|| anyhow!("--rlf-index {i} out of range, {} failures detected", baseline.len()))?;
            if rlf.rlf_type == RlfType::SmallRange {
                bail!("failure {i} is a small-range failure, which is not repaired");
            }
            vec![(i, rlf.clone())]
        }
        None => baseline
            .iter()
            .enumerate()
            .filter(|(_, r)| r.rlf_type != RlfType::SmallRange)
            .map(|(i, r)| (i, r.clone()))
            .collect(),
    };

    let out_dir = &cfg.output_dir;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let padding = cfg.harness.screenshot_padding;
    let mut outcomes = Vec::new();
    for (i, rlf) in targets {
        let width = rlf.failure_range.min;
        let before = page.screenshot_region(width, &rlf.participants, padding)?;
        let before_png = write_png(out_dir, &format!("rlf-{i}-before.png"), &before.png_bytes)?;
        let outcome = repair(&mut page, &rlf, &inputs, &repair_cfg).with_context(|| format!("repairing failure {i}"))?;
        let after = page.screenshot_region(width, &rlf.participants, padding)?;
        let after_png = write_png(out_dir, &format!("rlf-{i}-after.png"), &after.png_bytes)?;
        let patch_css = match &outcome.final_patch {
            Some(p) => {
                let name = format!("rlf-{i}.css");
                std::fs::write(out_dir.join(&name), p.serialize())?;
                Some(name)
            }
            None => None,
        };
        eprintln!("failure {i} ({} {}): {:?}", rlf.rlf_type, rlf.failure_range, outcome.status);
        outcomes.push(OutcomeEntry {
            outcome,
            artifacts: Artifacts {
                before_png: Some(before_png),
                after_png: Some(after_png),
                patch_css,
            },
        });
    }

    let totals = RepairReport::totals_of(&outcomes);
    let report = RepairReport {
        schema_version: SCHEMA_VERSION,
        page_url: url.to_string(),
        zero_shot,
        baseline,
        outcomes,
        totals,
        llm_calls: llm.calls(),
        metadata: RunMetadata {
            started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    let path = out_dir.join(REPORT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    emit(&serde_json::to_string(&totals)?);
    Ok(if totals.repaired == totals.attempted { 0 } else { EXIT_NOT_ALL_REPAIRED })
}

fn cmd_report(dir: &Path) -> anyhow::Result<u8> {
    let report = RepairReport::load(dir)?;
    let path = dir.join(INDEX_FILE);
    std::fs::write(&path, report::render_html(&report)).with_context(|| format!("writing {}", path.display()))?;
    emit(&path.display().to_string());
    Ok(0)
}
