//! Master-worker distribution of leaf refinement tasks.
//!
//! Rank 0 coordinates: it grants dirty leaves whose influence regions are
//! pairwise disjoint and tracks which rank holds each leaf. Workers fetch the
//! region's leaf packs from their holders, refine the granted leaf with the
//! threaded kernel and keep the resulting packs until someone asks for them.

pub mod envelope;
mod master;
pub mod pack;
pub mod transport;
mod worker;

pub use master::{audit_grants, GrantConflict, GrantEvent, GrantKind, MasterOutcome};
pub use worker::{run_worker, WorkerOptions, WorkerSummary};

use crate::decomp::{DecompError, Decomposition};
use crate::delaunay::{RefineError, RefinementRule, TetMesh};
use crate::image::{ImageError, LabeledImage};
use crate::metrics::{Category, Timer};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, SystemTime, UNIX_EPOCH};
use thiserror::Error;
use transport::{Endpoint, SocketListener, TransportError};

#[derive(Debug, Error)]
pub enum MwError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("pack: {0}")]
    Pack(#[from] pack::PackError),
    #[error("protocol violation at rank {rank}: {detail}")]
    Protocol { rank: u32, detail: String },
    #[error("refinement: {0}")]
    Refine(#[from] RefineError),
    #[error("decomposition: {0}")]
    Decomp(#[from] DecompError),
    #[error("image: {0}")]
    Image(#[from] ImageError),
    #[error("worker process: {0}")]
    Spawn(String),
    #[error("run exceeded its {0:?} wall-time cap")]
    WallCap(Duration),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    /// Ranks are threads of this process.
    #[default]
    Inproc,
    /// Ranks are child processes talking over loopback TCP.
    Socket,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MwConfig {
    /// Worker ranks; the master is an additional rank.
    pub workers: u32,
    pub threads_per_rank: usize,
    /// Pack helper threads; 0 means one per available core.
    pub pack_threads: usize,
    pub transport: TransportKind,
    pub serve_while_meshing: bool,
    /// Cap on the whole distributed phase.
    pub max_wall: Duration,
    /// Executable providing the hidden `worker` subcommand (socket transport).
    #[serde(skip)]
    pub worker_exe: Option<PathBuf>,
}

impl Default for MwConfig {
    fn default() -> Self {
        MwConfig {
            workers: 1,
            threads_per_rank: 1,
            pack_threads: 1,
            transport: TransportKind::Inproc,
            serve_while_meshing: false,
            max_wall: Duration::from_secs(600),
            worker_exe: None,
        }
    }
}

/// Everything a socket worker process needs, passed as JSON on its command line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkerSetup {
    pub rank: u32,
    pub size: u32,
    pub addr: String,
    pub image_path: PathBuf,
    pub image_checksum: String,
    pub rule: RefinementRule,
    pub options: WorkerOptions,
}

/// Entry point of a socket worker process.
pub fn worker_process(setup: &WorkerSetup) -> Result<WorkerSummary, MwError> {
    let img = LabeledImage::load(&setup.image_path)?;
    if img.checksum() != setup.image_checksum {
        return Err(MwError::Protocol {
            rank: setup.rank,
            detail: "image checksum differs from the master's".into(),
        });
    }
    let addr = setup
        .addr
        .parse()
        .map_err(|e| MwError::Spawn(format!("bad address {}: {e}", setup.addr)))?;
    let ep = transport::connect_worker(addr, setup.rank, setup.size)?;
    run_worker(ep, &img, &setup.rule, &setup.options)
}

/// Runs the distributed refinement of an already partitioned coarse mesh.
/// `timer` is the master's, with the preprocess scope still open.
pub fn run_mw(
    coarse: TetMesh,
    dec: Decomposition,
    img: &LabeledImage,
    rule: &RefinementRule,
    cfg: &MwConfig,
    mut timer: Timer,
) -> Result<MasterOutcome, MwError> {
    if cfg.workers == 0 {
        return Err(MwError::Spawn("at least one worker rank is required".into()));
    }
    let options = WorkerOptions {
        threads: cfg.threads_per_rank.max(1),
        pack_threads: cfg.pack_threads,
        serve_while_meshing: cfg.serve_while_meshing,
        grid: dec.grid,
        max_wall: cfg.max_wall,
    };
    match cfg.transport {
        TransportKind::Inproc => {
            let mut eps = transport::inproc_network(cfg.workers + 1);
            let workers: Vec<Endpoint> = eps.drain(1..).collect();
            let master_ep = eps.pop().unwrap();
            std::thread::scope(|s| {
                let handles: Vec<_> = workers
                    .into_iter()
                    .map(|ep| {
                        let options = &options;
                        s.spawn(move || run_worker(ep, img, rule, options))
                    })
                    .collect();
                timer.switch(Category::Idle);
                let out = master::run_master(master_ep, coarse, dec, img, rule, cfg, timer);
                let mut errs: Vec<MwError> = Vec::new();
                for h in handles {
                    match h.join() {
                        Ok(Ok(_)) => {}
                        Ok(Err(e)) => errs.push(e),
                        Err(_) => errs.push(MwError::Spawn("worker thread panicked".into())),
                    }
                }
                match out {
                    Ok(o) if errs.is_empty() => Ok(o),
                    Ok(_) => Err(root_cause(errs)),
                    Err(e) => {
                        errs.insert(0, e);
                        Err(root_cause(errs))
                    }
                }
            })
        }
        TransportKind::Socket => run_socket(coarse, dec, img, rule, cfg, timer, options),
    }
}

fn run_socket(
    coarse: TetMesh,
    dec: Decomposition,
    img: &LabeledImage,
    rule: &RefinementRule,
    cfg: &MwConfig,
    mut timer: Timer,
    options: WorkerOptions,
) -> Result<MasterOutcome, MwError> {
    let exe = match &cfg.worker_exe {
        Some(p) => p.clone(),
        None => std::env::current_exe().map_err(|e| MwError::Spawn(e.to_string()))?,
    };
    let image_path = std::env::temp_dir().join(format!(
        "meshpdr-{}-{}.dmi",
        std::process::id(),
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos())
    ));
    img.save(&image_path)?;
    let listener = SocketListener::bind()?;
    let addr = listener.addr()?.to_string();
    let mut children: Vec<Child> = Vec::new();
    let spawned = (1..=cfg.workers).try_for_each(|rank| {
        let setup = WorkerSetup {
            rank,
            size: cfg.workers + 1,
            addr: addr.clone(),
            image_path: image_path.clone(),
            image_checksum: img.checksum(),
            rule: rule.clone(),
            options: options.clone(),
        };
        let json = serde_json::to_string(&setup).expect("setup serializes");
        let child = Command::new(&exe)
            .arg("worker")
            .arg("--setup")
            .arg(json)
            .stdin(Stdio::null())
            .spawn()
            .map_err(|e| MwError::Spawn(format!("{}: {e}", exe.display())))?;
        children.push(child);
        Ok(())
    });
    let result = spawned.and_then(|()| {
        let ep = listener.accept(cfg.workers, Duration::from_secs(60), || {
            for (i, c) in children.iter_mut().enumerate() {
                if let Ok(Some(st)) = c.try_wait() {
                    return Err(TransportError::Timeout(format!(
                        "rank {} exited with {st} before connecting",
                        i + 1
                    )));
                }
            }
            Ok(())
        })?;
        timer.switch(Category::Idle);
        master::run_master(ep, coarse, dec, img, rule, cfg, timer)
    });
    let mut child_err = None;
    for mut c in children {
        if result.is_err() {
            let _ = c.kill();
        }
        match c.wait() {
            Ok(st) if st.success() => {}
            Ok(st) => {
                child_err.get_or_insert(MwError::Spawn(format!("worker exited with {st}")));
            }
            Err(e) => {
                child_err.get_or_insert(MwError::Spawn(e.to_string()));
            }
        }
    }
    let _ = std::fs::remove_file(&image_path);
    match (result, child_err) {
        (Ok(o), None) => Ok(o),
        (Err(e), _) | (Ok(_), Some(e)) => Err(e),
    }
}

/// First error that is not merely a vanished peer, since a failing rank
/// makes every rank talking to it see `PeerGone`.
fn root_cause(mut errs: Vec<MwError>) -> MwError {
    let i = errs
        .iter()
        .position(|e| !matches!(e, MwError::Transport(TransportError::PeerGone(_))))
        .unwrap_or(0);
    errs.swap_remove(i)
}
