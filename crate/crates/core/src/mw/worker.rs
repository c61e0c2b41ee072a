use super::envelope::{Envelope, Message, TaskResult};
use super::pack::{self, pack_each_leaf, stitch, unpack_threaded};
use super::transport::{Endpoint, TransportError};
use super::MwError;
use crate::decomp::LeafGrid;
use crate::delaunay::{RefineStats, RefinementRule, Region, TetMesh};
use crate::image::LabeledImage;
use crate::metrics::{Breakdown, Category, Timer};
use crate::podm::refine_parallel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

/// Inbox wait while a reply is outstanding.
const POLL_SLICE: Duration = Duration::from_millis(50);
/// Minimum pause before asking again after `NoWorkYet`.
const RETRY_FLOOR: Duration = Duration::from_millis(1);
/// Bits below a worker's rank in the gids of the vertices it creates.
pub(crate) const GID_RANK_SHIFT: u32 = 40;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkerOptions {
    pub threads: usize,
    pub pack_threads: usize,
    pub serve_while_meshing: bool,
    pub grid: LeafGrid,
    pub max_wall: Duration,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WorkerSummary {
    pub breakdown: Breakdown,
    pub stats: RefineStats,
    pub tasks: u32,
}

struct Worker<'a> {
    ep: Endpoint,
    img: &'a LabeledImage,
    rule: &'a RefinementRule,
    opts: &'a WorkerOptions,
    store: HashMap<u32, Vec<u8>>,
    timer: Timer,
    stats: RefineStats,
    tasks: u32,
    next_gid: u64,
    deadline: Instant,
}

/// Runs one worker rank until the master sends `Terminate`.
pub fn run_worker(
    ep: Endpoint,
    img: &LabeledImage,
    rule: &RefinementRule,
    opts: &WorkerOptions,
) -> Result<WorkerSummary, MwError> {
    let rank = ep.rank();
    let mut timer = Timer::new(rank);
    timer.enter(Category::Idle);
    let mut w = Worker {
        ep,
        img,
        rule,
        opts,
        store: HashMap::new(),
        timer,
        stats: RefineStats::default(),
        tasks: 0,
        next_gid: (rank as u64) << GID_RANK_SHIFT,
        deadline: Instant::now() + opts.max_wall,
    };
    w.event_loop()?;
    w.timer.exit(Category::Idle).expect("idle is the base scope");
    let Worker {
        mut ep,
        timer,
        stats,
        tasks,
        ..
    } = w;
    let breakdown = timer.finish().expect("all scopes closed");
    ep.send(
        0,
        Message::FinalReport {
            breakdown,
            stats,
            tasks,
        },
    )?;
    Ok(WorkerSummary {
        breakdown,
        stats,
        tasks,
    })
}

impl Worker<'_> {
    fn violation(&self, detail: impl Into<String>) -> MwError {
        MwError::Protocol {
            rank: self.ep.rank(),
            detail: detail.into(),
        }
    }

    /// Next envelope. Another worker leaving is only an error while a reply
    /// from it is awaited (`awaiting`); workers exit as soon as they see
    /// `Terminate`, possibly before this rank's own `Terminate` arrives.
    fn recv(&mut self, wait: Duration, awaiting: &[u32]) -> Result<Option<Envelope>, MwError> {
        if Instant::now() >= self.deadline {
            return Err(MwError::WallCap(self.opts.max_wall));
        }
        match self.ep.recv(wait) {
            Err(TransportError::PeerGone(r)) if r != 0 && !awaiting.contains(&r) => Ok(None),
            r => Ok(r?),
        }
    }

    fn event_loop(&mut self) -> Result<(), MwError> {
        let mut pending = false;
        let mut retry_at = Instant::now();
        loop {
            let now = Instant::now();
            if !pending && now >= retry_at {
                self.ep.send(0, Message::TaskRequest)?;
                pending = true;
            }
            let wait = if pending { POLL_SLICE } else { retry_at - now };
            let Some(env) = self.recv(wait, &[])? else { continue };
            match env.msg {
                Message::SubmeshRequest { leaves } => self.serve(env.sender, leaves)?,
                Message::TaskGrant { leaf, locations } if env.sender == 0 && pending => {
                    pending = false;
                    self.task(leaf, locations)?;
                    retry_at = Instant::now();
                }
                Message::NoWorkYet if env.sender == 0 && pending => {
                    pending = false;
                    retry_at = Instant::now() + RETRY_FLOOR;
                }
                Message::Terminate if env.sender == 0 => return Ok(()),
                m => return Err(self.violation(format!("unexpected {} from rank {}", m.name(), env.sender))),
            }
        }
    }

    /// Hands the requested leaves over to `to`; this rank no longer holds them.
    fn serve(&mut self, to: u32, leaves: Vec<u32>) -> Result<(), MwError> {
        self.timer.enter(Category::Poll);
        let mut packs = Vec::with_capacity(leaves.len());
        for l in leaves {
            match self.store.remove(&l) {
                Some(p) => packs.push((l, p)),
                None => return Err(self.violation(format!("rank {to} asked for leaf {l}, which is not held here"))),
            }
        }
        self.ep.send(to, Message::SubmeshReply { packs })?;
        self.timer.exit(Category::Poll).expect("poll scope");
        Ok(())
    }

    fn task(&mut self, leaf: u32, locations: Vec<(u32, u32)>) -> Result<(), MwError> {
        let grid = self.opts.grid;
        let me = self.ep.rank();
        if !locations.iter().any(|&(l, _)| l == leaf) {
            return Err(self.violation(format!("grant for leaf {leaf} omits the leaf itself")));
        }

        self.timer.enter(Category::Poll);
        let mut parts: Vec<(u32, Vec<u8>)> = Vec::with_capacity(locations.len());
        let mut want: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &(l, r) in &locations {
            if r == me {
                match self.store.remove(&l) {
                    Some(p) => parts.push((l, p)),
                    None => return Err(self.violation(format!("leaf {l} is listed here but not held"))),
                }
            } else {
                want.entry(r).or_default().push(l);
            }
        }
        for (&r, ls) in &want {
            self.ep.send(r, Message::SubmeshRequest { leaves: ls.clone() })?;
        }
        while !want.is_empty() {
            let awaiting: Vec<u32> = want.keys().copied().collect();
            let Some(env) = self.recv(POLL_SLICE, &awaiting)? else {
                continue;
            };
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
                Message::SubmeshRequest { leaves } => self.serve(env.sender, leaves)?,
                m => return Err(self.violation(format!("unexpected {} while fetching", m.name()))),
            }
        }

        self.timer.switch(Category::Unpack);
        parts.sort_unstable_by_key(|p| p.0);
        let mut meshes = Vec::with_capacity(parts.len());
        for (l, bytes) in &parts {
            let sub = unpack_threaded(bytes, pack::resolve_threads(self.opts.pack_threads))?;
            if sub.whole || sub.leaves != [*l] {
                return Err(self.violation(format!("pack for leaf {l} covers {:?}", sub.leaves)));
            }
            meshes.push(sub.mesh);
        }
        drop(parts);
        let mut mesh = stitch(meshes, grid.bbox, Some(grid));
        mesh.set_next_gid(self.next_gid);

        self.timer.switch(Category::Mesh);
        let mut in_region = vec![false; grid.num_leaves()];
        for &(l, _) in &locations {
            in_region[l as usize] = true;
        }
        let mut targets = vec![false; grid.num_leaves()];
        targets[leaf as usize] = true;
        let region = Region {
            targets,
            writable: Some(in_region.clone()),
        };
        let stats = if self.opts.serve_while_meshing {
            self.refine_serving(&mut mesh, &region)?
        } else {
            refine_parallel(&mut mesh, self.img, self.rule, Some(&region), self.opts.threads)?
        };
        self.next_gid = mesh.next_gid();
        let check = Region {
            targets: in_region,
            writable: None,
        };
        let dirty: BTreeSet<u32> = mesh
            .bad_tets(self.img, self.rule, Some(&check))
            .into_iter()
            .map(|t| mesh.tet(t).owner)
            .collect();
        let mut per_leaf: HashMap<u32, u64> = HashMap::new();
        for t in mesh.alive_tets() {
            *per_leaf.entry(mesh.tet(t).owner).or_default() += 1;
        }
        let region_leaves: Vec<u32> = locations.iter().map(|p| p.0).collect();

        self.timer.switch(Category::Pack);
        let nthreads = pack::resolve_threads(self.opts.pack_threads);
        self.store.extend(pack_each_leaf(&mesh, &region_leaves, nthreads));
        self.timer.exit(Category::Pack).expect("pack scope");

        let counts = region_leaves
            .iter()
            .map(|l| per_leaf.get(l).copied().unwrap_or(0))
            .collect();
        self.ep.send(
            0,
            Message::ResultSubmit(TaskResult {
                leaf,
                region: region_leaves,
                dirty: dirty.into_iter().collect(),
                counts,
                stats,
            }),
        )?;
        self.stats.merge(&stats);
        self.stats.wall_secs += stats.wall_secs;
        self.tasks += 1;
        Ok(())
    }

    /// Refines on a helper thread while this thread keeps answering data requests.
    fn refine_serving(&mut self, mesh: &mut TetMesh, region: &Region) -> Result<RefineStats, MwError> {
        let (img, rule, threads) = (self.img, self.rule, self.opts.threads);
        std::thread::scope(|s| {
            let h = s.spawn(move || refine_parallel(mesh, img, rule, Some(region), threads));
            while !h.is_finished() {
                match self.recv(Duration::from_millis(2), &[])? {
                    None => {}
                    Some(env) => match env.msg {
                        Message::SubmeshRequest { leaves } => self.serve(env.sender, leaves)?,
                        m => return Err(self.violation(format!("unexpected {} while meshing", m.name()))),
                    },
                }
            }
            Ok(h.join().expect("refinement thread panicked")?)
        })
    }
}
