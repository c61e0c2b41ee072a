//! Command-line front end: single runs, parameter sweeps and dump audits.
//!
//! Exit codes: 0 when every enabled audit passed, 1 on an audit failure,
//! 2 on a usage error, 3 on a protocol or transport failure.

use crate::delaunay::{TetMesh, Violation};
use crate::metrics::{Category, QualityReport};
use crate::mw::{self, pack, MwError, TransportKind, WorkerSetup};
use crate::pipeline::{self, Input, Mode, Report, RunConfig, RunError};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_AUDIT: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PROTOCOL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "meshpdr",
    version,
    about = "Parallel Delaunay refinement of labeled 3D images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mesh one input in one mode and audit the result.
    Run(RunArgs),
    /// Run a grid of configurations and tabulate their time breakdowns.
    Sweep(SweepArgs),
    /// Check a mesh dump written by `run --dump-mesh`.
    Audit(AuditArgs),
    /// Worker rank of a socket-transport run.
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        setup: String,
    },
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Labeled image file (DMI1).
    #[arg(long, conflicts_with = "phantom")]
    pub image: Option<PathBuf>,
    /// Synthetic phantom, e.g. `sphere:r=16,dims=64`.
    #[arg(long)]
    pub phantom: Option<String>,
}

impl InputArgs {
    fn input(&self) -> Option<Input> {
        match (&self.image, &self.phantom) {
            (Some(p), _) => Some(Input::Image(p.clone())),
            (None, Some(s)) => Some(Input::Phantom(s.clone())),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MeshArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Target element size (circumradius bound), in image units.
    #[arg(long, default_value_t = 4.0)]
    pub h: f64,
    /// Radius-edge ratio bound.
    #[arg(long, default_value_t = 2.0)]
    pub rho: f64,
    /// Octree depth of the leaf decomposition; 8^depth leaves.
    #[arg(long = "octree-depth", default_value_t = 2)]
    pub depth: u32,
    /// Seeds phantom generation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Wall-time cap in seconds for each refinement loop.
    #[arg(long = "max-wall", default_value_t = 600.0)]
    pub max_wall: f64,
}

/// `1`, `auto` or an explicit helper count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackThreads(pub usize);

impl std::str::FromStr for PackThreads {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "auto" => Ok(PackThreads(0)),
            n => match n.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(PackThreads(k)),
                _ => Err(format!("expected `auto` or a positive count, got `{s}`")),
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value_t = Mode::Seq)]
    pub mode: Mode,
    #[command(flatten)]
    pub mesh: MeshArgs,
    /// Worker ranks (mw only; the master is an extra rank).
    #[arg(long)]
    pub ranks: Option<u32>,
    /// Refinement threads per rank (shared and mw).
    #[arg(long = "threads-per-rank")]
    pub threads_per_rank: Option<usize>,
    /// Pack/unpack helper threads: `1` or `auto` (mw only).
    #[arg(long = "pack-threads")]
    pub pack_threads: Option<PackThreads>,
    #[arg(long, value_enum)]
    pub transport: Option<TransportKind>,
    /// Let workers answer data requests while refining (mw only).
    #[arg(long = "serve-while-meshing")]
    pub serve_while_meshing: bool,
    /// Also run the all-pairs in-sphere audit.
    #[arg(long = "brute-audit")]
    pub brute_audit: bool,
    /// JSON report path; `-` for stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-rank breakdown as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Canonical pack of the final mesh, readable by `audit`.
    #[arg(long = "dump-mesh")]
    pub dump_mesh: Option<PathBuf>,
    /// Grant and completion events as JSON lines (mw only).
    #[arg(long = "grant-log")]
    pub grant_log: Option<PathBuf>,
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

impl RunArgs {
    /// Checks flag combinations and builds the run configuration.
    pub fn config(&self) -> Result<RunConfig, UsageError> {
        let usage = |m: String| Err(UsageError(m));
        let mw_only = [
            ("--ranks", self.ranks.is_some()),
            ("--pack-threads", self.pack_threads.is_some()),
            ("--transport", self.transport.is_some()),
            ("--serve-while-meshing", self.serve_while_meshing),
            ("--grant-log", self.grant_log.is_some()),
        ];
        if self.mode != Mode::Mw {
            if let Some((flag, _)) = mw_only.iter().find(|f| f.1) {
                return usage(format!("{flag} only applies to --mode mw"));
            }
        }
        if self.mode == Mode::Seq && self.threads_per_rank.is_some_and(|t| t != 1) {
            return usage("--mode seq runs one thread; use --mode shared for more".into());
        }
        let m = &self.mesh;
        let cfg = RunConfig {
            mode: self.mode,
            input: m.input.input().unwrap_or(RunConfig::default().input),
            h: m.h,
            rho: m.rho,
            depth: m.depth,
            ranks: self.ranks.unwrap_or(1),
            threads_per_rank: self.threads_per_rank.unwrap_or(1),
            pack_threads: self.pack_threads.map_or(1, |p| p.0),
            transport: self.transport.unwrap_or_default(),
            serve_while_meshing: self.serve_while_meshing,
            seed: m.seed,
            max_wall_secs: m.max_wall,
            brute_audit: self.brute_audit,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Axes as `key=v1,v2;key=...` with keys ranks, depth, threads, pack,
    /// mode and h; every combination is run.
    #[arg(long)]
    pub grid: String,
    /// Mode of cells whose grid does not set one.
    #[arg(long, value_enum, default_value_t = Mode::Mw)]
    pub mode: Mode,
    #[command(flatten)]
    pub mesh: MeshArgs,
    #[arg(long, value_enum, default_value_t = TransportKind::Inproc)]
    pub transport: TransportKind,
    /// Let workers answer data requests while refining.
    #[arg(long = "serve-while-meshing")]
    pub serve_while_meshing: bool,
    /// Table output path (also printed to stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One CSV row per cell.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// All cell reports as a JSON array.
    #[arg(long)]
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    /// Mesh dump to check.
    #[arg(long)]
    pub input: PathBuf,
    /// Skip the all-pairs in-sphere check and test only interior facets.
    #[arg(long = "local-only")]
    pub local_only: bool,
    /// Image the mesh came from; enables the refinement-rule scan.
    #[command(flatten)]
    pub source: InputArgs,
    /// Size bound for the rule scan.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Findings as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Parses `key=v1,v2;key=...` into one configuration per combination, in
/// row-major order of the axes as written.
pub fn expand_grid(grid: &str, base: &RunConfig) -> Result<Vec<RunConfig>, UsageError> {
    let mut cells = vec![base.clone()];
    for axis in grid.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| UsageError(format!("grid axis `{axis}` is not key=values")))?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if values.is_empty() {
            return Err(UsageError(format!("grid axis `{key}` has no values")));
        }
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for c in &cells {
            for v in &values {
                let mut c = c.clone();
                let bad = || UsageError(format!("bad value `{v}` for grid axis `{key}`"));
                match key.trim() {
                    "ranks" => c.ranks = v.parse().map_err(|_| bad())?,
                    "depth" => c.depth = v.parse().map_err(|_| bad())?,
                    "threads" => c.threads_per_rank = v.parse().map_err(|_| bad())?,
                    "pack" => c.pack_threads = v.parse::<PackThreads>().map_err(|_| bad())?.0,
                    "h" => c.h = v.parse().map_err(|_| bad())?,
                    "mode" => {
                        c.mode = <Mode as clap::ValueEnum>::from_str(v, true).map_err(|_| bad())?;
                    }
                    k => return Err(UsageError(format!("unknown grid axis `{k}`"))),
                }
                next.push(c);
            }
        }
        cells = next;
    }
    for c in &cells {
        c.validate().map_err(|e| UsageError(e.to_string()))?;
    }
    Ok(cells)
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Seq => "seq",
        Mode::Shared => "shared",
        Mode::Mw => "mw",
    }
}

/// Markdown table, one row per cell: configuration, wall time and the mean
/// per-rank breakdown over the refining ranks.
pub fn sweep_table(rows: &[Result<Report, (RunConfig, String)>]) -> String {
    let mut s = String::new();
    let cats = [
        Category::Preprocess,
        Category::Mesh,
        Category::Pack,
        Category::Unpack,
        Category::Poll,
        Category::Idle,
    ];
    s += "| mode | ranks | threads | pack | depth | h | elements | wall |";
    for c in cats {
        let _ = write!(s, " {} |", c.name());
    }
    s += " comm | idle frac | audits |\n";
    s += &"|---".repeat(8 + cats.len() + 3);
    s += "|\n";
    for r in rows {
        let c = match r {
            Ok(rep) => &rep.config,
            Err((c, _)) => c,
        };
        let pack = if c.pack_threads == 0 {
            "auto".to_string()
        } else {
            c.pack_threads.to_string()
        };
        let _ = write!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            mode_name(c.mode),
            c.ranks,
            c.threads_per_rank,
            pack,
            c.depth,
            c.h
        );
        match r {
            Ok(rep) => {
                let a = &rep.averages;
                let _ = write!(s, " {} | {:.3} |", rep.elements, rep.wall_secs);
                for m in [a.preprocess, a.mesh, a.pack, a.unpack, a.poll, a.idle] {
                    let _ = write!(s, " {:.3} |", m.mean);
                }
                let comm = a.pack.mean + a.unpack.mean + a.poll.mean;
                let verdict = if rep.audits.passed { "pass" } else { "FAIL" };
                let _ = writeln!(s, " {comm:.3} | {:.3} | {verdict} |", a.idle_fraction);
            }
            Err((_, e)) => {
                s += &" - |".repeat(2 + cats.len() + 2);
                let _ = writeln!(s, " error: {} |", e.replace('|', "/"));
            }
        }
    }
    s
}

fn write_out(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if path == Path::new("-") {
        io::stdout().write_all(bytes)
    } else {
        fs::write(path, bytes)
    }
}

fn exit_code_of(e: &RunError) -> u8 {
    match e {
        RunError::Config(_) | RunError::Image(_) => EXIT_USAGE,
        RunError::Mw(MwError::Refine(_) | MwError::WallCap(_)) => EXIT_AUDIT,
        RunError::Mw(_) => EXIT_PROTOCOL,
        _ => EXIT_AUDIT,
    }
}

fn summary_line(r: &Report) -> String {
    format!(
        "{} elements ({} kept), {} insertions, {:.3} s, idle fraction {:.3}, slivers {:.5}%, audits {}",
        r.elements,
        r.kept_elements,
        r.refine.insertions,
        r.wall_secs,
        r.averages.idle_fraction,
        100.0 * r.quality.sliver_fraction,
        if r.audits.passed { "passed" } else { "FAILED" }
    )
}

fn cmd_run(a: &RunArgs) -> u8 {
    let cfg = match a.config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let out = match pipeline::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_of(&e);
        }
    };
    let r = &out.report;
    let written = (|| -> io::Result<()> {
        let json = serde_json::to_string_pretty(r).expect("report serializes");
        match &a.report {
            Some(p) => write_out(p, json.as_bytes())?,
            None => println!("{json}"),
        }
        if let Some(p) = &a.csv {
            write_out(p, r.to_csv().as_bytes())?;
        }
        if let Some(p) = &a.dump_mesh {
            fs::write(p, out.dump())?;
        }
        if let Some(p) = &a.grant_log {
            let mut s = String::new();
            for g in &out.grants {
                s += &serde_json::to_string(g).expect("grant serializes");
                s.push('\n');
            }
            fs::write(p, s)?;
        }
        Ok(())
    })();
    if let Err(e) = written {
        eprintln!("error: writing output: {e}");
        return EXIT_USAGE;
    }
    eprintln!("{}", summary_line(r));
    let au = &r.audits;
    if !au.passed {
        eprintln!(
            "audit failures: topology {}, delaunay {}, brute {:?}, bad elements {}, grant conflicts {:?}",
            au.topology_violations,
            au.delaunay_violations,
            au.brute_delaunay_violations,
            au.bad_elements,
            au.grant_conflicts
        );
        return EXIT_AUDIT;
    }
    EXIT_OK
}

fn cmd_sweep(a: &SweepArgs) -> u8 {
    let base = RunConfig {
        mode: a.mode,
        input: a.mesh.input.input().unwrap_or(RunConfig::default().input),
        h: a.mesh.h,
        rho: a.mesh.rho,
        depth: a.mesh.depth,
        transport: a.transport,
        serve_while_meshing: a.serve_while_meshing,
        seed: a.mesh.seed,
        max_wall_secs: a.mesh.max_wall,
        ..RunConfig::default()
    };
    let cells = match expand_grid(&a.grid, &base) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut rows: Vec<Result<Report, (RunConfig, String)>> = Vec::new();
    let mut code = EXIT_OK;
    let flush = |rows: &[Result<Report, (RunConfig, String)>]| -> io::Result<()> {
        if let Some(p) = &a.out {
            fs::write(p, sweep_table(rows))?;
        }
        if let Some(p) = &a.csv {
            let mut s = pipeline::csv_header() + "\n";
            for r in rows.iter().flatten() {
                s += &r.csv_row();
                s.push('\n');
            }
            fs::write(p, s)?;
        }
        if let Some(p) = &a.reports {
            let ok: Vec<&Report> = rows.iter().flatten().collect();
            fs::write(p, serde_json::to_string_pretty(&ok).expect("reports serialize"))?;
        }
        Ok(())
    };
    for (i, cell) in cells.iter().enumerate() {
        eprintln!(
            "cell {}/{}: mode {} ranks {} threads {} pack {} depth {}",
            i + 1,
            cells.len(),
            mode_name(cell.mode),
            cell.ranks,
            cell.threads_per_rank,
            cell.pack_threads,
            cell.depth
        );
        match pipeline::run(cell) {
            Ok(o) => {
                let passed = o.report.audits.passed;
                eprintln!("  {}", summary_line(&o.report));
                rows.push(Ok(o.report));
                if !passed {
                    code = EXIT_AUDIT;
                }
            }
            Err(e) => {
                eprintln!("  error: {e}");
                code = exit_code_of(&e).max(EXIT_AUDIT);
                rows.push(Err((cell.clone(), e.to_string())));
            }
        }
        if let Err(e) = flush(&rows) {
            eprintln!("error: writing sweep output: {e}");
            return EXIT_USAGE;
        }
        if code != EXIT_OK {
            eprintln!("sweep stopped at a failing cell; table holds the cells run so far");
            break;
        }
    }
    print!("{}", sweep_table(&rows));
    code
}

/// Everything `audit` checks on a dump.
#[derive(Debug, Default, serde::Serialize)]
pub struct DumpAudit {
    pub tets: usize,
    pub vertices: usize,
    pub topology: Vec<Violation>,
    pub delaunay: Vec<Violation>,
    /// Whether `delaunay` came from the all-pairs check.
    pub brute: bool,
    pub quality: Option<QualityReport>,
    /// Tets violating the refinement rule, when an image was given.
    pub bad_elements: Option<Vec<u32>>,
}

impl DumpAudit {
    pub fn passed(&self) -> bool {
        self.topology.is_empty() && self.delaunay.is_empty() && self.bad_elements.as_ref().is_none_or(|b| b.is_empty())
    }
}

/// Audits a decoded dump. Tet ids are positions in the dump.
pub fn audit_mesh(mesh: &TetMesh, brute: bool) -> DumpAudit {
    let mut q = QualityReport::default();
    for t in mesh.alive_tets() {
        q.add(&mesh.tet_points(t));
    }
    DumpAudit {
        tets: mesh.num_alive(),
        vertices: mesh.num_vertices(),
        topology: mesh.audit_topology(false).violations,
        delaunay: if brute {
            mesh.audit_delaunay_brute().violations
        } else {
            mesh.audit_local_delaunay().violations
        },
        brute,
        quality: Some(q),
        bad_elements: None,
    }
}

fn cmd_audit(a: &AuditArgs) -> u8 {
    let bytes = match fs::read(&a.input) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: reading {}: {e}", a.input.display());
            return EXIT_USAGE;
        }
    };
    let sub = match pack::unpack(&bytes) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", a.input.display());
            return EXIT_USAGE;
        }
    };
    let mesh = sub.mesh;
    let mut report = audit_mesh(&mesh, !a.local_only);
    if let Some(input) = a.source.input() {
        let Some(h) = a.h else {
            eprintln!("error: the rule scan needs --h");
            return EXIT_USAGE;
        };
        let cfg = RunConfig {
            input,
            h,
            rho: a.rho,
            seed: a.seed,
            ..RunConfig::default()
        };
        let img = match cfg.load_image() {
            Ok(i) => i,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        };
        report.quality = Some(crate::metrics::histogram(&mesh, &img));
        report.bad_elements = Some(mesh.bad_tets(&img, &cfg.rule(), None));
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}: {} vertices, {} tets",
        a.input.display(),
        report.vertices,
        report.tets
    );
    let _ = writeln!(out, "adjacency: {} violations", report.topology.len());
    for v in &report.topology {
        let _ = writeln!(out, "  {v}");
    }
    let kind = if report.brute { "all pairs" } else { "interior facets" };
    let _ = writeln!(out, "delaunay ({kind}): {} violations", report.delaunay.len());
    for v in &report.delaunay {
        let _ = writeln!(out, "  {v}");
    }
    if let Some(q) = &report.quality {
        let _ = writeln!(
            out,
            "quality: {} tets, dihedral range [{:.2}, {:.2}] deg, {} sliver angles ({:.5}%)",
            q.elements,
            q.min_dihedral,
            q.max_dihedral,
            q.sliver_angles,
            100.0 * q.sliver_fraction
        );
    }
    if let Some(bad) = &report.bad_elements {
        let _ = writeln!(out, "refinement rule: {} violations", bad.len());
        for t in bad {
            let _ = writeln!(out, "  tet {t}: violates the refinement rule");
        }
    }
    let passed = report.passed();
    let _ = writeln!(out, "{}", if passed { "PASS" } else { "FAIL" });
    print!("{out}");
    if let Some(p) = &a.json {
        if let Err(e) = fs::write(p, serde_json::to_string_pretty(&report).expect("audit serializes")) {
            eprintln!("error: writing {}: {e}", p.display());
            return EXIT_USAGE;
        }
    }
    if passed {
        EXIT_OK
    } else {
        EXIT_AUDIT
    }
}

fn cmd_worker(setup: &str) -> u8 {
    let setup: WorkerSetup = match serde_json::from_str(setup) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: worker setup: {e}");
            return EXIT_USAGE;
        }
    };
    match mw::worker_process(&setup) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("rank {}: {e}", setup.rank);
            EXIT_PROTOCOL
        }
    }
}

pub fn execute(cli: &Cli) -> u8 {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Worker { setup } => cmd_worker(setup),
    }
}

/// Parses the process arguments and runs; clap's own usage errors exit 2.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(execute(&cli))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("meshpdr").chain(args.iter().copied())).unwrap()
    }

    fn run_args(args: &[&str]) -> RunArgs {
        match parse(args).command {
            Command::Run(a) => a,
            c => panic!("parsed {c:?}"),
        }
    }

    #[test]
    fn mw_flags_rejected_outside_mw() {
        let a = run_args(&["run", "--mode", "seq", "--ranks", "4"]);
        assert!(a.config().unwrap_err().0.contains("--ranks"));
        let a = run_args(&["run", "--mode", "shared", "--transport", "socket"]);
        assert!(a.config().is_err());
        let a = run_args(&["run", "--mode", "seq", "--threads-per-rank", "4"]);
        assert!(a.config().is_err());
        let a = run_args(&["run", "--mode", "mw", "--ranks", "4", "--pack-threads", "auto"]);
        let c = a.config().unwrap();
        assert_eq!((c.ranks, c.pack_threads), (4, 0));
    }

    #[test]
    fn conflicting_inputs_are_a_parse_error() {
        let e =
            Cli::try_parse_from(["meshpdr", "run", "--image", "a.dmi", "--phantom", "sphere:r=4,dims=16"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!("0".parse::<PackThreads>().is_err());
    }

    #[test]
    fn grid_is_a_cartesian_product() {
        let base = RunConfig {
            mode: Mode::Mw,
            ..RunConfig::default()
        };
        let cells = expand_grid("ranks=1,2; depth=2,3 ;pack=1,auto", &base).unwrap();
        assert_eq!(cells.len(), 8);
        assert_eq!((cells[0].ranks, cells[0].depth, cells[0].pack_threads), (1, 2, 1));
        assert_eq!((cells[7].ranks, cells[7].depth, cells[7].pack_threads), (2, 3, 0));
        assert_eq!(cells[1].pack_threads, 0);
        assert_eq!(expand_grid("", &base).unwrap().len(), 1);
        assert!(expand_grid("cores=4", &base).is_err());
        assert!(expand_grid("ranks=x", &base).is_err());
        assert!(expand_grid("ranks=0", &base).is_err());
    }
}
