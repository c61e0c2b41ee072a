//! End-to-end runs: image in, refined and audited mesh plus report out.

use crate::decomp::{DecompError, Decomposition};
use crate::delaunay::{BadScope, MeshError, RefineError, RefineLimits, RefineStats, RefinementRule, TetMesh};
use crate::image::{make_phantom, ImageError, LabeledImage, PhantomSpec, SizingPolicy};
use crate::metrics::{self, Breakdown, BreakdownSummary, Category, QualityReport, Timer};
use crate::mw::{self, pack, GrantEvent, MwConfig, MwError, TransportKind};
use crate::podm;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Mw(#[from] MwError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single-threaded refinement.
    #[default]
    Seq,
    /// Speculative multi-threaded refinement in one address space.
    Shared,
    /// Master-worker refinement over octree leaves.
    Mw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Input {
    /// A labeled image file.
    Image(PathBuf),
    /// A synthetic phantom, e.g. `sphere:r=16,dims=64`.
    Phantom(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Input,
    /// Target element size.
    pub h: f64,
    /// Radius-edge bound.
    pub rho: f64,
    pub depth: u32,
    /// Worker ranks (mw only).
    pub ranks: u32,
    pub threads_per_rank: usize,
    /// Pack helper threads; 0 means one per core.
    pub pack_threads: usize,
    pub transport: TransportKind,
    pub serve_while_meshing: bool,
    /// Seeds phantom generation only.
    pub seed: u64,
    /// Watchdog cap per refinement loop, and for the distributed phase as a whole.
    pub max_wall_secs: f64,
    /// Also run the all-pairs in-sphere audit.
    pub brute_audit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Seq,
            input: Input::Phantom("sphere:r=16,dims=64".into()),
            h: 4.0,
            rho: 2.0,
            depth: 2,
            ranks: 1,
            threads_per_rank: 1,
            pack_threads: 1,
            transport: TransportKind::Inproc,
            serve_while_meshing: false,
            seed: 0,
            max_wall_secs: 600.0,
            brute_audit: false,
        }
    }
}

impl RunConfig {
    pub fn rule(&self) -> RefinementRule {
        RefinementRule {
            radius_edge_bound: self.rho,
            sizing: SizingPolicy::uniform(self.h),
            scope: BadScope::InsideObject,
            limits: RefineLimits {
                max_wall: Some(self.max_wall()),
                max_insertions: None,
            },
        }
    }

    pub fn max_wall(&self) -> Duration {
        Duration::from_secs_f64(self.max_wall_secs.max(0.001))
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if !(self.h > 0.0) {
            return bad("h must be positive");
        }
        if !(self.rho >= 2.0) {
            return bad("radius-edge bound must be at least 2");
        }
        if self.depth > crate::decomp::MAX_DEPTH {
            return bad("octree depth is at most 6");
        }
        if self.threads_per_rank == 0 {
            return bad("threads per rank must be at least 1");
        }
        if self.mode == Mode::Mw && self.ranks == 0 {
            return bad("mw mode needs at least one worker rank");
        }
        if !(self.max_wall_secs > 0.0) {
            return bad("wall-time cap must be positive");
        }
        Ok(())
    }

    pub fn load_image(&self) -> Result<LabeledImage, RunError> {
        Ok(match &self.input {
            Input::Image(p) => LabeledImage::load(p)?,
            Input::Phantom(s) => {
                let mut spec = PhantomSpec::parse(s)?;
                spec.seed = self.seed;
                make_phantom(&spec)?
            }
        })
    }
}

/// Sizing of the background mesh handed to the leaves: bbox diagonal / 2^(depth+1).
pub fn coarse_h(img: &LabeledImage, depth: u32) -> f64 {
    img.bbox().diagonal() / (1u64 << (depth + 1)) as f64
}

/// Bootstrap box mesh refined everywhere to [`coarse_h`], partitioned among
/// the octree leaves with dirtiness judged against `rule`.
pub fn coarse_mesh(
    img: &LabeledImage,
    rule: &RefinementRule,
    depth: u32,
) -> Result<(TetMesh, Decomposition, RefineStats), RunError> {
    let mut mesh = TetMesh::bootstrap(img)?;
    let coarse = RefinementRule {
        radius_edge_bound: rule.radius_edge_bound,
        sizing: SizingPolicy::uniform(coarse_h(img, depth)),
        scope: BadScope::All,
        limits: rule.limits,
    };
    let stats = mesh.refine(img, &coarse, None)?;
    let mut dec = Decomposition::build(depth, img.bbox())?;
    dec.partition(&mut mesh, img, rule)?;
    Ok((mesh, dec, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub dims: [u32; 3],
    pub spacing: [f64; 3],
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub topology_violations: usize,
    pub delaunay_violations: usize,
    /// All-pairs in-sphere violations, when that audit ran.
    pub brute_delaunay_violations: Option<usize>,
    /// Tets still violating the refinement rule.
    pub bad_elements: usize,
    pub grant_conflicts: Option<usize>,
    pub accounting_within_1pct: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MwSummary {
    pub tasks: u32,
    pub idle_tasks: u32,
    pub grants_issued: usize,
    pub master_bytes_sent: u64,
    pub cleanup: RefineStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: RunConfig,
    pub image: ImageInfo,
    pub vertices: usize,
    pub elements: usize,
    pub kept_elements: usize,
    pub coarse: RefineStats,
    pub refine: RefineStats,
    /// One entry per rank; rank 0 is the master in mw mode.
    pub ranks: Vec<Breakdown>,
    /// Mean, min and max over the ranks doing refinement (the workers in mw mode).
    pub averages: BreakdownSummary,
    pub quality: QualityReport,
    pub audits: AuditSummary,
    pub mw: Option<MwSummary>,
    /// Digest of the canonical mesh dump.
    pub mesh_sha256: String,
    pub wall_secs: f64,
}

pub struct RunOutput {
    pub report: Report,
    pub mesh: TetMesh,
    pub grants: Vec<GrantEvent>,
}

impl RunOutput {
    /// Canonical dump of the final mesh.
    pub fn dump(&self) -> Vec<u8> {
        pack::pack_mesh(&self.mesh, 1)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs one configuration, worker executable given for the socket transport.
pub fn run_with(cfg: &RunConfig, worker_exe: Option<PathBuf>) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let mut timer = Timer::new(0);
    timer.enter(Category::Preprocess);
    let img = cfg.load_image()?;
    let rule = cfg.rule();
    let (mut mesh, dec, coarse) = coarse_mesh(&img, &rule, cfg.depth)?;

    let (refine, ranks, averages, grants, mw_summary) = match cfg.mode {
        Mode::Seq | Mode::Shared => {
            timer.switch(Category::Mesh);
            let stats = if cfg.mode == Mode::Seq {
                mesh.refine(&img, &rule, None)?
            } else {
                podm::refine_parallel(&mut mesh, &img, &rule, None, cfg.threads_per_rank)?
            };
            timer.exit(Category::Mesh).expect("mesh scope");
            let b = timer.finish().expect("scopes closed");
            (stats, vec![b], BreakdownSummary::of(&[b]), Vec::new(), None)
        }
        Mode::Mw => {
            let mcfg = MwConfig {
                workers: cfg.ranks,
                threads_per_rank: cfg.threads_per_rank,
                pack_threads: cfg.pack_threads,
                transport: cfg.transport,
                serve_while_meshing: cfg.serve_while_meshing,
                max_wall: cfg.max_wall(),
                worker_exe,
            };
            let out = mw::run_mw(mesh, dec, &img, &rule, &mcfg, timer)?;
            mesh = out.mesh;
            let workers: Vec<Breakdown> = out.workers.iter().map(|w| w.breakdown).collect();
            let mut ranks = vec![out.master];
            ranks.extend(&workers);
            let mut refine = out.task_stats;
            refine.merge(&out.cleanup);
            let summary = MwSummary {
                tasks: out.tasks,
                idle_tasks: out.idle_tasks,
                grants_issued: out.grants.iter().filter(|g| g.kind == mw::GrantKind::Grant).count(),
                master_bytes_sent: out.bytes_sent,
                cleanup: out.cleanup,
            };
            (refine, ranks, BreakdownSummary::of(&workers), out.grants, Some(summary))
        }
    };
    let wall_secs = ranks[0].wall;

    let mut audits = AuditSummary {
        topology_violations: mesh.audit_topology(false).violations.len(),
        delaunay_violations: mesh.audit_local_delaunay().violations.len(),
        bad_elements: mesh.bad_tets(&img, &rule, None).len(),
        accounting_within_1pct: ranks.iter().all(|b| b.accounting_gap() <= 0.01),
        ..Default::default()
    };
    if cfg.brute_audit {
        audits.brute_delaunay_violations = Some(mesh.audit_delaunay_brute().violations.len());
    }
    if cfg.mode == Mode::Mw {
        let grid = *mesh.grid().expect("mw meshes carry their grid");
        audits.grant_conflicts = Some(mw::audit_grants(&grid, &grants).len());
    }
    audits.passed = audits.topology_violations == 0
        && audits.delaunay_violations == 0
        && audits.brute_delaunay_violations.unwrap_or(0) == 0
        && audits.bad_elements == 0
        && audits.grant_conflicts.unwrap_or(0) == 0;

    let dump = pack::pack_mesh(&mesh, 1);
    let report = Report {
        config: cfg.clone(),
        image: ImageInfo {
            dims: img.dims,
            spacing: img.spacing,
            sha256: img.checksum(),
        },
        vertices: mesh.num_vertices(),
        elements: mesh.num_alive(),
        kept_elements: metrics::kept_elements(&mesh, &img),
        coarse,
        refine,
        ranks,
        averages,
        quality: metrics::histogram(&mesh, &img),
        audits,
        mw: mw_summary,
        mesh_sha256: sha256_hex(&dump),
        wall_secs,
    };
    Ok(RunOutput { report, mesh, grants })
}

/// [`run_with`] using this executable for socket workers.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    run_with(cfg, None)
}

/// Column names of [`Report::csv_row`].
pub fn csv_header() -> String {
    let mut cols: Vec<String> = [
        "mode",
        "ranks",
        "threads",
        "pack_threads",
        "depth",
        "h",
        "elements",
        "kept",
        "insertions",
        "rollbacks",
        "wall",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for c in Category::ALL {
        cols.push(format!("mean_{}", c.name()));
    }
    cols.push("mean_wall".into());
    cols.push("idle_fraction".into());
    cols.push("sliver_fraction".into());
    cols.push("passed".into());
    cols.join(",")
}

impl Report {
    /// Flat row for plotting: configuration, counts and mean breakdown.
    pub fn csv_row(&self) -> String {
        let c = &self.config;
        let mode = match c.mode {
            Mode::Seq => "seq",
            Mode::Shared => "shared",
            Mode::Mw => "mw",
        };
        let mut cols = vec![
            mode.to_string(),
            c.ranks.to_string(),
            c.threads_per_rank.to_string(),
            c.pack_threads.to_string(),
            c.depth.to_string(),
            c.h.to_string(),
            self.elements.to_string(),
            self.kept_elements.to_string(),
            self.refine.insertions.to_string(),
            self.refine.rollbacks.to_string(),
            format!("{:.6}", self.wall_secs),
        ];
        let a = &self.averages;
        for s in [a.preprocess, a.mesh, a.pack, a.unpack, a.poll, a.idle, a.wall] {
            cols.push(format!("{:.6}", s.mean));
        }
        cols.push(format!("{:.6}", a.idle_fraction));
        cols.push(format!("{:.8}", self.quality.sliver_fraction));
        cols.push(self.audits.passed.to_string());
        cols.join(",")
    }

    /// CSV document with one row per rank followed by the summary row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,preprocess,mesh,pack,unpack,poll,idle,wall\n");
        for b in &self.ranks {
            s += &format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                b.rank, b.preprocess, b.mesh, b.pack, b.unpack, b.poll, b.idle, b.wall
            );
        }
        s += "\n";
        s += &csv_header();
        s += "\n";
        s += &self.csv_row();
        s += "\n";
        s
    }
}
