use super::envelope::{Envelope, Message, TaskResult};
use super::pack::{self, pack_each_leaf, stitch, unpack_threaded};
use super::transport::{Endpoint, TransportError};
use super::worker::WorkerSummary;
use super::{MwConfig, MwError};
use crate::decomp::{Decomposition, LeafGrid, LeafIdx};
use crate::delaunay::{RefineStats, RefinementRule, TetMesh, EXTERNAL};
use crate::image::LabeledImage;
use crate::metrics::{Breakdown, Category, Timer};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

const POLL_SLICE: Duration = Duration::from_millis(50);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrantKind {
    Grant,
    Complete,
}

/// One line of the grant log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrantEvent {
    pub seq: u64,
    pub kind: GrantKind,
    pub leaf: u32,
    pub rank: u32,
    /// Seconds since the master started scheduling.
    pub at_secs: f64,
    /// Insertions reported with a completion.
    #[serde(default)]
    pub insertions: u64,
}

/// A grant issued while a dependent grant was still active.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantConflict {
    pub seq: u64,
    pub leaf: u32,
    pub active: u32,
}

/// Replays a grant log and lists every grant that overlapped in time with a
/// grant of a leaf closer than the independence distance, plus completions
/// that match no active grant.
pub fn audit_grants(grid: &LeafGrid, events: &[GrantEvent]) -> Vec<GrantConflict> {
    let mut active: Vec<(u32, u32)> = Vec::new();
    let mut out = Vec::new();
    for e in events {
        match e.kind {
            GrantKind::Grant => {
                let l = grid.idx(e.leaf);
                for &(a, _) in &active {
                    if !grid.independent(grid.idx(a), l) {
                        out.push(GrantConflict {
                            seq: e.seq,
                            leaf: e.leaf,
                            active: a,
                        });
                    }
                }
                active.push((e.leaf, e.rank));
            }
            GrantKind::Complete => match active.iter().position(|&(l, r)| l == e.leaf && r == e.rank) {
                Some(i) => {
                    active.swap_remove(i);
                }
                None => out.push(GrantConflict {
                    seq: e.seq,
                    leaf: e.leaf,
                    active: u32::MAX,
                }),
            },
        }
    }
    out
}

#[derive(Debug)]
pub struct MasterOutcome {
    pub mesh: TetMesh,
    pub master: Breakdown,
    /// One entry per worker, by rank.
    pub workers: Vec<WorkerSummary>,
    pub grants: Vec<GrantEvent>,
    /// Sum over all task results.
    pub task_stats: RefineStats,
    /// Final sequential pass over the gathered mesh.
    pub cleanup: RefineStats,
    pub tasks: u32,
    /// Tasks that inserted nothing.
    pub idle_tasks: u32,
    pub bytes_sent: u64,
}

struct Active {
    leaf: u32,
    rank: u32,
    region: Vec<u32>,
}

struct Master<'a> {
    ep: Endpoint,
    dec: Decomposition,
    cfg: &'a MwConfig,
    store: HashMap<u32, Vec<u8>>,
    timer: Timer,
    active: Vec<Active>,
    grants: Vec<GrantEvent>,
    start: Instant,
    deadline: Instant,
    task_stats: RefineStats,
    tasks: u32,
    idle_tasks: u32,
}

/// `timer` arrives with the idle base scope already open.
pub(super) fn run_master(
    ep: Endpoint,
    coarse: TetMesh,
    dec: Decomposition,
    img: &LabeledImage,
    rule: &RefinementRule,
    cfg: &MwConfig,
    mut timer: Timer,
) -> Result<super::MasterOutcome, MwError> {
    let nthreads = pack::resolve_threads(cfg.pack_threads);
    timer.enter(Category::Pack);
    let all: Vec<u32> = (0..dec.num_leaves() as u32).collect();
    let store: HashMap<u32, Vec<u8>> = pack_each_leaf(&coarse, &all, nthreads).into_iter().collect();
    drop(coarse);
    timer.exit(Category::Pack).expect("pack scope");
    let start = Instant::now();
    let mut m = Master {
        ep,
        dec,
        cfg,
        store,
        timer,
        active: Vec::new(),
        grants: Vec::new(),
        start,
        deadline: start + cfg.max_wall,
        task_stats: RefineStats::default(),
        tasks: 0,
        idle_tasks: 0,
    };
    m.schedule()?;
    let mut mesh = m.gather()?;
    let workers = m.terminate()?;
    m.timer.enter(Category::Mesh);
    let cleanup = mesh.refine(img, rule, None)?;
    m.timer.exit(Category::Mesh).expect("mesh scope");
    m.timer.exit(Category::Idle).expect("idle is the base scope");
    Ok(super::MasterOutcome {
        mesh,
        master: m.timer.finish().expect("all scopes closed"),
        workers,
        grants: m.grants,
        task_stats: m.task_stats,
        cleanup,
        tasks: m.tasks,
        idle_tasks: m.idle_tasks,
        bytes_sent: m.ep.bytes_sent(),
    })
}

impl Master<'_> {
    fn violation(&self, detail: impl Into<String>) -> MwError {
        MwError::Protocol {
            rank: 0,
            detail: detail.into(),
        }
    }

    fn recv(&mut self) -> Result<Option<Envelope>, MwError> {
        if Instant::now() >= self.deadline {
            return Err(MwError::WallCap(self.cfg.max_wall));
        }
        Ok(self.ep.recv(POLL_SLICE)?)
    }

    fn log(&mut self, kind: GrantKind, leaf: u32, rank: u32, insertions: u64) {
        self.grants.push(GrantEvent {
            seq: self.grants.len() as u64,
            kind,
            leaf,
            rank,
            at_secs: self.start.elapsed().as_secs_f64(),
            insertions,
        });
    }

    fn schedule(&mut self) -> Result<(), MwError> {
        while self.dec.dirty_count() > 0 || !self.active.is_empty() {
            let Some(env) = self.recv()? else { continue };
            self.timer.enter(Category::Poll);
            match env.msg {
                Message::TaskRequest => self.grant(env.sender)?,
                Message::ResultSubmit(r) => self.complete(env.sender, r)?,
                Message::SubmeshRequest { leaves } => self.serve(env.sender, leaves)?,
                m => return Err(self.violation(format!("unexpected {} from rank {}", m.name(), env.sender))),
            }
            self.timer.exit(Category::Poll).expect("poll scope");
        }
        Ok(())
    }

    fn grant(&mut self, rank: u32) -> Result<(), MwError> {
        if self.active.iter().any(|a| a.rank == rank) {
            return Err(self.violation(format!("rank {rank} asked for work while holding a task")));
        }
        let grid = self.dec.grid;
        let busy: Vec<LeafIdx> = self.active.iter().map(|a| grid.idx(a.leaf)).collect();
        let Some(l) = self.dec.next_dirty(&busy) else {
            self.ep.send(rank, Message::NoWorkYet)?;
            return Ok(());
        };
        let region: Vec<u32> = self.dec.influence(l)?.leaves.iter().map(|&x| grid.id(x)).collect();
        let locations = region
            .iter()
            .map(|&x| (x, self.dec.leaves[x as usize].owner_rank))
            .collect();
        let leaf = grid.id(l);
        self.ep.send(rank, Message::TaskGrant { leaf, locations })?;
        self.log(GrantKind::Grant, leaf, rank, 0);
        self.active.push(Active { leaf, rank, region });
        Ok(())
    }

    fn complete(&mut self, rank: u32, r: TaskResult) -> Result<(), MwError> {
        let Some(i) = self.active.iter().position(|a| a.rank == rank && a.leaf == r.leaf) else {
            return Err(self.violation(format!("rank {rank} submitted leaf {} it was not granted", r.leaf)));
        };
        let task = self.active.swap_remove(i);
        if r.region != task.region || r.counts.len() != r.region.len() {
            return Err(self.violation(format!("rank {rank} returned a different region for leaf {}", r.leaf)));
        }
        let region: BTreeSet<u32> = task.region.iter().copied().collect();
        if let Some(&d) = r.dirty.iter().find(|d| !region.contains(d)) {
            return Err(self.violation(format!("rank {rank} reported leaf {d} outside its region")));
        }
        let dirty: BTreeSet<u32> = r.dirty.iter().copied().collect();
        let progress = r.stats.insertions > 0;
        for (&l, &c) in task.region.iter().zip(&r.counts) {
            let st = &mut self.dec.leaves[l as usize];
            st.owner_rank = rank;
            st.elements = c;
            // Without progress a leaf may only turn clean, which bounds the
            // number of fruitless tasks by the number of leaves.
            if progress || !dirty.contains(&l) {
                st.dirty = dirty.contains(&l);
            }
        }
        if !progress {
            self.dec.leaves[task.leaf as usize].dirty = false;
            self.idle_tasks += 1;
        }
        self.log(GrantKind::Complete, task.leaf, rank, r.stats.insertions);
        self.task_stats.merge(&r.stats);
        self.task_stats.wall_secs += r.stats.wall_secs;
        self.tasks += 1;
        Ok(())
    }

    fn serve(&mut self, to: u32, leaves: Vec<u32>) -> Result<(), MwError> {
        let mut packs = Vec::with_capacity(leaves.len());
        for l in leaves {
            match self.store.remove(&l) {
                Some(p) => packs.push((l, p)),
                None => return Err(self.violation(format!("rank {to} asked for leaf {l}, which is not held here"))),
            }
        }
        self.ep.send(to, Message::SubmeshReply { packs })?;
        Ok(())
    }

    /// Collects every leaf pack and stitches the final mesh.
    fn gather(&mut self) -> Result<TetMesh, MwError> {
        self.timer.enter(Category::Poll);
        let mut parts: Vec<(u32, Vec<u8>)> = Vec::with_capacity(self.dec.num_leaves());
        let mut want: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (l, st) in self.dec.leaves.iter().enumerate() {
            let l = l as u32;
            if st.owner_rank == 0 {
                let p = self
                    .store
                    .remove(&l)
                    .ok_or_else(|| self.violation(format!("leaf {l} lost")))?;
                parts.push((l, p));
            } else {
                want.entry(st.owner_rank).or_default().push(l);
            }
        }
        for (&r, ls) in &want {
            self.ep.send(r, Message::SubmeshRequest { leaves: ls.clone() })?;
        }
        while !want.is_empty() {
            let Some(env) = self.recv()? else { continue };
            match env.msg {
                Message::SubmeshReply { packs } => {
                    let asked = want
                        .remove(&env.sender)
                        .ok_or_else(|| self.violation(format!("unrequested reply from rank {}", env.sender)))?;
                    let got: BTreeSet<u32> = packs.iter().map(|p| p.0).collect();
                    if got != asked.iter().copied().collect() || got.len() != packs.len() {
                        return Err(self.violation(format!("rank {} replied with the wrong leaves", env.sender)));
                    }
                    parts.extend(packs);
                }
                Message::TaskRequest => self.ep.send(env.sender, Message::NoWorkYet)?,
                m => return Err(self.violation(format!("unexpected {} while gathering", m.name()))),
            }
        }
        self.timer.switch(Category::Unpack);
        parts.sort_unstable_by_key(|p| p.0);
        let nthreads = pack::resolve_threads(self.cfg.pack_threads);
        let mut meshes = Vec::with_capacity(parts.len());
        for (l, bytes) in &parts {
            let sub = unpack_threaded(bytes, nthreads)?;
            if sub.leaves != [*l] {
                return Err(self.violation(format!("pack for leaf {l} covers {:?}", sub.leaves)));
            }
            meshes.push(sub.mesh);
        }
        let grid = self.dec.grid;
        let mesh = stitch(meshes, grid.bbox, Some(grid));
        self.timer.exit(Category::Unpack).expect("unpack scope");
        let open = mesh.alive_tets().filter(|&t| mesh.tet(t).n.contains(&EXTERNAL)).count();
        if open > 0 {
            return Err(self.violation(format!("{open} tets have unmatched facets after stitching")));
        }
        Ok(mesh)
    }

    fn terminate(&mut self) -> Result<Vec<WorkerSummary>, MwError> {
        let workers = self.ep.size() - 1;
        for r in 1..=workers {
            self.ep.send(r, Message::Terminate)?;
        }
        let mut reports: BTreeMap<u32, WorkerSummary> = BTreeMap::new();
        while reports.len() < workers as usize {
            let env = match self.recv() {
                Ok(Some(e)) => e,
                Ok(None) => continue,
                Err(MwError::Transport(TransportError::PeerGone(r))) if reports.contains_key(&r) => continue,
                Err(e) => return Err(e),
            };
            match env.msg {
                Message::FinalReport {
                    breakdown,
                    stats,
                    tasks,
                } => {
                    reports.insert(
                        env.sender,
                        WorkerSummary {
                            breakdown,
                            stats,
                            tasks,
                        },
                    );
                }
                // a request that crossed the Terminate in flight
                Message::TaskRequest => {}
                m => return Err(self.violation(format!("unexpected {} after Terminate", m.name()))),
            }
        }
        Ok(reports.into_values().collect())
    }
}
