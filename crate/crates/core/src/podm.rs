//! Speculative shared-memory refinement. Threads pull bad tets from one FIFO
//! pool, claim every tet their cavity touches with a per-tet compare-and-swap,
//! and roll back (re-queueing the item at the tail) when a claim is taken.

use crate::decomp::LeafGrid;
use crate::delaunay::kernel::{self, Cavity, CavityFail, InsertFail, MeshAccess, Ownership};
use crate::delaunay::{
    is_bad, process_item, RefineCtx, RefineError, RefineStats, RefinementRule, Region, Step, Tet, TetId, TetMesh,
    VertId, Watchdog,
};
use crate::geom::{BBox, Point3};
use crate::image::LabeledImage;
use crossbeam_queue::SegQueue;
use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

const SEG_BITS: usize = 14;
const SEG_LEN: usize = 1 << SEG_BITS;
const MAX_SEGS: usize = 1 << 16;
/// Slots leased from the shared counters at a time.
const LEASE: u32 = 256;
const UNUSED_GID: u64 = u64::MAX;
const FREE: u32 = 0;

/// Append-only array of fixed-size segments; elements never move once allocated.
struct Segments<E> {
    dir: Box<[AtomicPtr<E>]>,
}

impl<E: Default> Segments<E> {
    fn new() -> Self {
        Segments {
            dir: (0..MAX_SEGS).map(|_| AtomicPtr::new(std::ptr::null_mut())).collect(),
        }
    }

    /// Makes sure every index below `end` is backed by memory.
    fn ensure(&self, end: usize) {
        let last = end.saturating_sub(1) >> SEG_BITS;
        assert!(last < MAX_SEGS, "mesh storage exhausted");
        for s in 0..=last {
            if self.dir[s].load(Ordering::Acquire).is_null() {
                let seg: Box<[E]> = (0..SEG_LEN).map(|_| E::default()).collect();
                let raw = Box::into_raw(seg) as *mut E;
                if self.dir[s]
                    .compare_exchange(std::ptr::null_mut(), raw, Ordering::AcqRel, Ordering::Acquire)
                    .is_err()
                {
                    // SAFETY: `raw` came from Box::into_raw of a SEG_LEN slice and was never shared.
                    unsafe { drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(raw, SEG_LEN))) };
                }
            }
        }
    }

    #[inline]
    fn get(&self, i: usize) -> &E {
        let seg = self.dir[i >> SEG_BITS].load(Ordering::Acquire);
        debug_assert!(!seg.is_null(), "slot {i} not allocated");
        // SAFETY: `ensure` allocated the segment before any index in it was handed out,
        // and segments live until `self` is dropped.
        unsafe { &*seg.add(i & (SEG_LEN - 1)) }
    }
}

impl<E> Drop for Segments<E> {
    fn drop(&mut self) {
        for p in self.dir.iter() {
            let raw = p.load(Ordering::Acquire);
            if !raw.is_null() {
                // SAFETY: allocated in `ensure` as a boxed SEG_LEN slice.
                unsafe { drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(raw, SEG_LEN))) };
            }
        }
    }
}

struct TetSlot {
    /// 0 when free, otherwise the claiming thread id + 1.
    claim: AtomicU32,
    tet: UnsafeCell<Tet>,
}

impl Default for TetSlot {
    fn default() -> Self {
        TetSlot {
            claim: AtomicU32::new(FREE),
            tet: UnsafeCell::new(Tet::DEAD),
        }
    }
}

struct VertSlot {
    p: UnsafeCell<Point3>,
    gid: UnsafeCell<u64>,
}

impl Default for VertSlot {
    fn default() -> Self {
        VertSlot {
            p: UnsafeCell::new(Point3::default()),
            gid: UnsafeCell::new(UNUSED_GID),
        }
    }
}

/// One committed insertion, in commit order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommitRecord {
    pub ticket: u64,
    pub point: Point3,
    pub gid: u64,
}

/// Tet mesh shared between refinement threads under the claim protocol.
pub struct SharedMesh {
    tets: Segments<TetSlot>,
    verts: Segments<VertSlot>,
    next_tet: AtomicU32,
    next_vert: AtomicU32,
    next_gid: AtomicU64,
    /// One past the largest gid handed to a new vertex (0 if none).
    max_new_gid: AtomicU64,
    bbox: BBox,
    grid: Option<LeafGrid>,
    dup_tol2: f64,
    initial_free: Mutex<Vec<TetId>>,
    tickets: AtomicU64,
    log: Option<Mutex<Vec<CommitRecord>>>,
}

// SAFETY: tet slots are only read or written by the thread holding their claim
// (acquire/release on the claim word orders the accesses); vertex slots are
// written once by the thread that leased them, before any tet referencing them
// is released.
unsafe impl Sync for SharedMesh {}
unsafe impl Send for SharedMesh {}

impl SharedMesh {
    pub fn from_mesh(m: TetMesh) -> Self {
        Self::build(m, false)
    }

    /// Like [`from_mesh`](Self::from_mesh), recording every commit.
    pub fn with_commit_log(m: TetMesh) -> Self {
        Self::build(m, true)
    }

    fn build(m: TetMesh, log: bool) -> Self {
        let s = SharedMesh {
            tets: Segments::new(),
            verts: Segments::new(),
            next_tet: AtomicU32::new(m.tets.len() as u32),
            next_vert: AtomicU32::new(m.points.len() as u32),
            next_gid: AtomicU64::new(m.next_gid),
            max_new_gid: AtomicU64::new(m.next_gid),
            bbox: m.bbox,
            grid: m.grid,
            dup_tol2: m.dup_tol2(),
            initial_free: Mutex::new(m.free.clone()),
            tickets: AtomicU64::new(0),
            log: log.then(|| Mutex::new(Vec::new())),
        };
        s.tets.ensure(m.tets.len());
        s.verts.ensure(m.points.len());
        for (i, t) in m.tets.iter().enumerate() {
            // SAFETY: not yet shared.
            unsafe { *s.tets.get(i).tet.get() = *t };
        }
        for (i, (&p, &g)) in m.points.iter().zip(&m.gids).enumerate() {
            let v = s.verts.get(i);
            // SAFETY: not yet shared.
            unsafe {
                *v.p.get() = p;
                *v.gid.get() = g;
            }
        }
        s
    }

    /// Back to a sequential mesh. Unused vertex slots left by id leases are
    /// squeezed out; tet slot ids are kept.
    pub fn into_mesh(self) -> TetMesh {
        let nv = self.next_vert.load(Ordering::Acquire) as usize;
        let nt = self.next_tet.load(Ordering::Acquire) as usize;
        let mut remap = vec![VertId::MAX; nv];
        let mut m = TetMesh::empty(self.bbox, 0);
        for (i, r) in remap.iter_mut().enumerate() {
            let v = self.verts.get(i);
            // SAFETY: quiescent; `self` is owned.
            let (p, g) = unsafe { (*v.p.get(), *v.gid.get()) };
            if g != UNUSED_GID {
                *r = m.add_vertex_with_gid(p, g);
            }
        }
        m.tets.reserve(nt);
        for i in 0..nt {
            // SAFETY: quiescent.
            let mut t = unsafe { *self.tets.get(i).tet.get() };
            if t.alive {
                t.v = t.v.map(|v| remap[v as usize]);
            } else {
                m.free.push(i as TetId);
            }
            m.tets.push(t);
        }
        // Free slots are reused last-in first-out; keep low ids on top.
        m.free.reverse();
        // Unused leased gids are simply skipped.
        m.next_gid = self.max_new_gid.load(Ordering::Acquire);
        m.grid = self.grid;
        m
    }

    pub fn view(&self, tid: u32) -> ThreadView<'_> {
        let free = if tid == 0 {
            std::mem::take(&mut *self.initial_free.lock().unwrap())
        } else {
            Vec::new()
        };
        ThreadView {
            mesh: self,
            me: tid + 1,
            claimed: Vec::new(),
            free,
            skipped: Vec::new(),
            tet_block: 0..0,
            vert_block: 0..0,
            gid_block: 0..0,
            cav: Cavity::default(),
            new: Vec::new(),
            pending: None,
            last_vertex: 0,
        }
    }

    pub fn commit_log(&self) -> Vec<CommitRecord> {
        self.log.as_ref().map(|l| l.lock().unwrap().clone()).unwrap_or_default()
    }

    /// Hash of every slot's content. Only meaningful when no thread holds claims.
    pub fn state_hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for i in 0..self.next_tet.load(Ordering::Acquire) as usize {
            // SAFETY: caller guarantees quiescence.
            unsafe { *self.tets.get(i).tet.get() }.hash(&mut h);
        }
        for i in 0..self.next_vert.load(Ordering::Acquire) as usize {
            let v = self.verts.get(i);
            // SAFETY: as above.
            let (p, g) = unsafe { (*v.p.get(), *v.gid.get()) };
            (p.x.to_bits(), p.y.to_bits(), p.z.to_bits(), g).hash(&mut h);
        }
        h.finish()
    }

    pub fn num_alive(&self) -> usize {
        (0..self.next_tet.load(Ordering::Acquire) as usize)
            // SAFETY: quiescent use only.
            .filter(|&i| unsafe { (*self.tets.get(i).tet.get()).alive })
            .count()
    }
}

/// Outcome of one speculative insertion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Speculation {
    Committed {
        gid: u64,
        new_tets: usize,
    },
    /// A claim was held by another thread; nothing was modified.
    RolledBack,
    /// The insertion cannot happen here (duplicate point, cavity leaves the submesh, ...).
    Rejected,
}

/// One thread's handle on a [`SharedMesh`].
pub struct ThreadView<'a> {
    mesh: &'a SharedMesh,
    me: u32,
    claimed: Vec<TetId>,
    free: Vec<TetId>,
    skipped: Vec<TetId>,
    tet_block: std::ops::Range<u32>,
    vert_block: std::ops::Range<u32>,
    gid_block: std::ops::Range<u64>,
    cav: Cavity,
    new: Vec<TetId>,
    pending: Option<Point3>,
    last_vertex: VertId,
}

impl ThreadView<'_> {
    #[inline]
    fn slot(&self, t: TetId) -> &TetSlot {
        self.mesh.tets.get(t as usize)
    }

    fn try_claim(&mut self, t: TetId) -> bool {
        let s = self.slot(t);
        match s
            .claim
            .compare_exchange(FREE, self.me, Ordering::Acquire, Ordering::Relaxed)
        {
            Ok(_) => {
                self.claimed.push(t);
                true
            }
            Err(owner) => owner == self.me,
        }
    }

    /// Drops every claim this thread holds.
    pub fn release(&mut self) {
        for &t in &self.claimed {
            self.mesh.tets.get(t as usize).claim.store(FREE, Ordering::Release);
        }
        self.claimed.clear();
        self.free.append(&mut self.skipped);
        self.pending = None;
    }

    pub fn holds(&self, t: TetId) -> bool {
        self.slot(t).claim.load(Ordering::Relaxed) == self.me
    }

    /// Grows and claims the cavity of `p` from `start`. On a claim conflict all
    /// claims are dropped and `RolledBack` is returned.
    pub fn claim_cavity(&mut self, p: Point3, start: TetId) -> Result<usize, Speculation> {
        let mut cav = std::mem::take(&mut self.cav);
        let r = kernel::grow_cavity(self, p, start, &mut cav);
        let n = cav.tets.len();
        self.cav = cav;
        match r {
            Ok(()) => {
                self.pending = Some(p);
                Ok(n)
            }
            Err(CavityFail::Conflict) => {
                self.release();
                Err(Speculation::RolledBack)
            }
            Err(_) => {
                self.release();
                Err(Speculation::Rejected)
            }
        }
    }

    /// Commits the cavity claimed by [`claim_cavity`](Self::claim_cavity) and releases all claims.
    pub fn commit(&mut self) -> Speculation {
        if self.pending.is_none() {
            return Speculation::Rejected;
        }
        let cav = std::mem::take(&mut self.cav);
        let mut new = std::mem::take(&mut self.new);
        let grid = self.mesh.grid;
        let own = Ownership {
            grid: grid.as_ref(),
            writable: None,
        };
        let r = kernel::commit_insert(self, &cav, own, self.mesh.dup_tol2, &mut new);
        let out = match r {
            Ok(v) => {
                self.log_commit(cav.point, v);
                Speculation::Committed {
                    gid: MeshAccess::gid(self, v),
                    new_tets: new.len(),
                }
            }
            Err(InsertFail::Duplicate | InsertFail::OutOfScope | InsertFail::Invisible) => Speculation::Rejected,
        };
        self.cav = cav;
        self.new = new;
        self.release();
        out
    }

    /// Claim, then commit: the whole speculative step for one point.
    pub fn speculative_insert(&mut self, p: Point3, start: TetId) -> Speculation {
        match self.claim_cavity(p, start) {
            Ok(_) => self.commit(),
            Err(s) => s,
        }
    }

    fn log_commit(&self, p: Point3, v: VertId) {
        let ticket = self.mesh.tickets.fetch_add(1, Ordering::AcqRel);
        if let Some(log) = &self.mesh.log {
            log.lock().unwrap().push(CommitRecord {
                ticket,
                point: p,
                gid: MeshAccess::gid(self, v),
            });
        }
    }

    fn lease_tet(&mut self) -> TetId {
        if self.tet_block.is_empty() {
            let s = self.mesh.next_tet.fetch_add(LEASE, Ordering::AcqRel);
            self.mesh.tets.ensure((s + LEASE) as usize);
            self.tet_block = s..s + LEASE;
        }
        self.tet_block.next().unwrap()
    }
}

impl MeshAccess for ThreadView<'_> {
    #[inline]
    fn point(&self, v: VertId) -> Point3 {
        // SAFETY: the vertex is referenced by a claimed tet, so its write happened-before.
        unsafe { *self.mesh.verts.get(v as usize).p.get() }
    }

    #[inline]
    fn gid(&self, v: VertId) -> u64 {
        // SAFETY: as for `point`.
        unsafe { *self.mesh.verts.get(v as usize).gid.get() }
    }

    #[inline]
    fn tet(&self, t: TetId) -> Tet {
        debug_assert!(self.holds(t), "reading unclaimed tet {t}");
        // SAFETY: the caller holds the claim on `t`.
        unsafe { *self.slot(t).tet.get() }
    }

    fn acquire(&mut self, t: TetId) -> bool {
        self.try_claim(t)
    }

    fn set_neighbor(&mut self, t: TetId, face: usize, n: TetId) {
        debug_assert!(self.holds(t));
        // SAFETY: claimed by this thread.
        unsafe { (*self.slot(t).tet.get()).n[face] = n };
    }

    fn new_vertex(&mut self, p: Point3) -> VertId {
        if self.vert_block.is_empty() {
            let s = self.mesh.next_vert.fetch_add(LEASE, Ordering::AcqRel);
            self.mesh.verts.ensure((s + LEASE) as usize);
            self.vert_block = s..s + LEASE;
        }
        if self.gid_block.is_empty() {
            let s = self.mesh.next_gid.fetch_add(LEASE as u64, Ordering::AcqRel);
            self.gid_block = s..s + LEASE as u64;
        }
        let v = self.vert_block.next().unwrap();
        let g = self.gid_block.next().unwrap();
        self.last_vertex = v;
        self.mesh.max_new_gid.fetch_max(g + 1, Ordering::AcqRel);
        let slot = self.mesh.verts.get(v as usize);
        // SAFETY: the slot was leased to this thread alone and is published
        // through the claims released after the commit.
        unsafe {
            *slot.p.get() = p;
            *slot.gid.get() = g;
        }
        v
    }

    fn new_tet(&mut self, mut tet: Tet) -> TetId {
        let id = loop {
            match self.free.pop() {
                Some(t) => {
                    if self.try_claim(t) {
                        break t;
                    }
                    // Another thread is checking a stale item on this slot.
                    self.skipped.push(t);
                }
                None => {
                    let t = self.lease_tet();
                    let ok = self.try_claim(t);
                    debug_assert!(ok);
                    break t;
                }
            }
        };
        let slot = self.slot(id);
        // SAFETY: claimed above.
        unsafe {
            tet.stamp = (*slot.tet.get()).stamp.wrapping_add(1);
            *slot.tet.get() = tet;
        }
        id
    }

    fn kill(&mut self, t: TetId) {
        debug_assert!(self.holds(t));
        // SAFETY: claimed by this thread.
        unsafe { (*self.slot(t).tet.get()).alive = false };
        self.free.push(t);
    }
}

/// FIFO pool of `(tet, stamp)` work items with an in-flight counter.
struct WorkPool {
    queue: SegQueue<(TetId, u32)>,
    /// Items queued or being processed.
    pending: AtomicUsize,
}

impl WorkPool {
    fn push(&self, item: (TetId, u32)) {
        self.pending.fetch_add(1, Ordering::AcqRel);
        self.queue.push(item);
    }

    fn done(&self) {
        self.pending.fetch_sub(1, Ordering::AcqRel);
    }
}

struct Shared<'a> {
    pool: WorkPool,
    insertions: AtomicU64,
    abort: AtomicBool,
    dog: Watchdog,
    ctx: RefineCtx<'a>,
}

fn worker(mesh: &SharedMesh, tid: u32, sh: &Shared<'_>) -> RefineStats {
    let mut view = mesh.view(tid);
    let mut stats = RefineStats::default();
    let mut cav = Cavity::default();
    let mut new = Vec::new();
    let mut idle_spins = 0u32;
    let mut iter = 0u64;
    loop {
        if sh.abort.load(Ordering::Relaxed) {
            break;
        }
        let Some((t, stamp)) = sh.pool.queue.pop() else {
            if sh.pool.pending.load(Ordering::Acquire) == 0 {
                break;
            }
            idle_spins += 1;
            if idle_spins > 64 {
                std::thread::sleep(std::time::Duration::from_micros(50));
            } else {
                std::thread::yield_now();
            }
            continue;
        };
        idle_spins = 0;
        iter += 1;
        if sh.dog.expired(sh.insertions.load(Ordering::Relaxed), iter.is_multiple_of(256)) {
            sh.abort.store(true, Ordering::Relaxed);
            sh.pool.done();
            break;
        }
        let step = process_item(&mut view, t, stamp, &sh.ctx, &mut cav, &mut new);
        match step {
            Step::Inserted { kind } => {
                view.log_commit(cav.point, view.last_vertex);
                stats.record(kind);
                sh.insertions.fetch_add(1, Ordering::Relaxed);
                for &n in &new {
                    let tet = view.tet(n);
                    if is_bad(&kernel::tet_points(&view, &tet), tet.owner, &sh.ctx) {
                        sh.pool.push((n, tet.stamp));
                    }
                }
                // A hull split may leave the bad tet in place.
                let tet = view.tet(t);
                if tet.alive && tet.stamp == stamp {
                    sh.pool.push((t, stamp));
                }
            }
            Step::Conflict => {
                stats.rollbacks += 1;
                sh.pool.push((t, stamp));
            }
            Step::Deferred => stats.deferred += 1,
            Step::Duplicate => stats.duplicates += 1,
            Step::Stale | Step::NotBad => {}
        }
        view.release();
        sh.pool.done();
    }
    view.release();
    stats
}

/// Refines `mesh` with `nthreads` speculative threads; same contract as
/// [`TetMesh::refine`]. With one thread the insertion sequence equals the
/// sequential one.
pub fn refine_parallel(
    mesh: &mut TetMesh,
    img: &LabeledImage,
    rule: &RefinementRule,
    region: Option<&Region>,
    nthreads: usize,
) -> Result<RefineStats, RefineError> {
    refine_parallel_logged(mesh, img, rule, region, nthreads, false).map(|(s, _)| s)
}

/// [`refine_parallel`] that also returns the commit log when `log` is set.
pub fn refine_parallel_logged(
    mesh: &mut TetMesh,
    img: &LabeledImage,
    rule: &RefinementRule,
    region: Option<&Region>,
    nthreads: usize,
    log: bool,
) -> Result<(RefineStats, Vec<CommitRecord>), RefineError> {
    rule.validate()?;
    let nthreads = nthreads.max(1);
    let placeholder = TetMesh::empty(mesh.bbox(), 0);
    let taken = std::mem::replace(mesh, placeholder);
    let bbox = taken.bbox();
    let dup = taken.dup_tol2();
    let grid = taken.grid;
    let seeds: Vec<(TetId, u32)> = {
        let ctx = RefineCtx::new(grid.as_ref(), bbox, dup, img, rule, region);
        taken
            .alive_tets()
            .filter(|&t| is_bad(&taken.tet_points(t), taken.tets[t as usize].owner, &ctx))
            .map(|t| (t, taken.tets[t as usize].stamp))
            .collect()
    };
    let shared_mesh = SharedMesh::build(taken, log);
    let sh = Shared {
        pool: WorkPool {
            queue: SegQueue::new(),
            pending: AtomicUsize::new(0),
        },
        insertions: AtomicU64::new(0),
        abort: AtomicBool::new(false),
        dog: Watchdog::new(rule.limits),
        ctx: RefineCtx::new(grid.as_ref(), bbox, dup, img, rule, region),
    };
    for s in seeds {
        sh.pool.push(s);
    }
    let mut stats = RefineStats::default();
    if nthreads == 1 {
        stats = worker(&shared_mesh, 0, &sh);
    } else {
        std::thread::scope(|scope| {
            let hs: Vec<_> = (0..nthreads as u32)
                .map(|tid| {
                    let (m, s) = (&shared_mesh, &sh);
                    scope.spawn(move || worker(m, tid, s))
                })
                .collect();
            for h in hs {
                stats.merge(&h.join().expect("refinement thread panicked"));
            }
        });
    }
    stats.wall_secs = sh.dog.elapsed();
    let mut records = shared_mesh.commit_log();
    records.sort_by_key(|r| r.ticket);
    *mesh = shared_mesh.into_mesh();
    if sh.abort.load(Ordering::Relaxed) {
        return Err(RefineError::Watchdog { stats });
    }
    Ok((stats, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BBox;

    fn cube() -> TetMesh {
        let mut m = TetMesh::from_box(BBox::new(Point3::default(), Point3::new(1.0, 1.0, 1.0))).unwrap();
        for p in [(0.5, 0.5, 0.5), (0.25, 0.3, 0.7), (0.8, 0.2, 0.3)] {
            m.insert_point(Point3::new(p.0, p.1, p.2)).unwrap();
        }
        m
    }

    #[test]
    fn roundtrip_through_shared() {
        let m = cube();
        let back = SharedMesh::from_mesh(m.clone()).into_mesh();
        assert_eq!(back.num_alive(), m.num_alive());
        assert_eq!(back.points, m.points);
        assert_eq!(back.gids, m.gids);
        assert!(back.audit_all().is_clean());
    }

    #[test]
    fn single_view_commits() {
        let m = cube();
        let sm = SharedMesh::from_mesh(m.clone());
        let start = m.locate(Point3::new(0.6, 0.6, 0.6), 0).unwrap();
        let mut v = sm.view(0);
        assert!(matches!(
            v.speculative_insert(Point3::new(0.6, 0.6, 0.6), start),
            Speculation::Committed { .. }
        ));
        drop(v);
        let out = sm.into_mesh();
        assert_eq!(out.num_vertices(), m.num_vertices() + 1);
        assert!(out.audit_all().is_clean());
    }

    #[test]
    fn overlapping_cavities_one_commits() {
        let m = cube();
        let p = Point3::new(0.6, 0.55, 0.5);
        let q = Point3::new(0.62, 0.56, 0.52);
        let (sp, sq) = (m.locate(p, 0).unwrap(), m.locate(q, 0).unwrap());
        let sm = SharedMesh::from_mesh(m);
        let before = sm.state_hash();
        let mut a = sm.view(0);
        let mut b = sm.view(1);
        a.claim_cavity(p, sp).unwrap();
        assert_eq!(b.speculative_insert(q, sq), Speculation::RolledBack);
        assert_eq!(b.claimed.len(), 0);
        a.release();
        // the rolled-back attempt and the released claims changed nothing
        assert_eq!(sm.state_hash(), before);
        a.claim_cavity(p, sp).unwrap();
        assert!(matches!(a.commit(), Speculation::Committed { .. }));
    }

    fn canon(m: &TetMesh) -> Vec<[u64; 4]> {
        let mut v: Vec<[u64; 4]> = m
            .alive_tets()
            .map(|t| {
                let mut k = m.tet(t).v.map(|v| m.vertex_gid(v));
                k.sort_unstable();
                k
            })
            .collect();
        v.sort_unstable();
        v
    }

    fn sphere_setup() -> (LabeledImage, TetMesh) {
        use crate::delaunay::BadScope;
        use crate::image::{make_phantom, PhantomKind, PhantomSpec};
        let img = make_phantom(&PhantomSpec {
            kind: PhantomKind::Sphere { r: 8.0 },
            dims: [32; 3],
            spacing: [1.0; 3],
            seed: 3,
        })
        .unwrap();
        let mut m = TetMesh::bootstrap(&img).unwrap();
        let mut coarse = RefinementRule::new(2.0, 8.0);
        coarse.scope = BadScope::All;
        m.refine(&img, &coarse, None).unwrap();
        (img, m)
    }

    #[test]
    fn one_thread_matches_sequential() {
        let (img, m) = sphere_setup();
        let rule = RefinementRule::new(2.0, 2.0);
        let mut seq = m.clone();
        let s1 = seq.refine(&img, &rule, None).unwrap();
        let mut par = m;
        let s2 = refine_parallel(&mut par, &img, &rule, None, 1).unwrap();
        assert_eq!(s1.insertions, s2.insertions);
        assert_eq!(seq.points, par.points);
        assert_eq!(seq.gids, par.gids);
        assert_eq!(seq.next_gid(), par.next_gid());
        assert_eq!(canon(&seq), canon(&par));
    }

    #[test]
    fn four_threads_refine_cleanly() {
        let (img, m) = sphere_setup();
        let rule = RefinementRule::new(2.0, 2.0);
        let mut par = m.clone();
        let (_, log) = refine_parallel_logged(&mut par, &img, &rule, None, 4, true).unwrap();
        assert!(par.audit_all().is_clean());
        assert!(par.bad_tets(&img, &rule, None).is_empty());
        // replaying the commits in ticket order reproduces the mesh
        let mut replay = m;
        for r in &log {
            replay.insert_point_with_gid(r.point, r.gid).unwrap();
        }
        assert_eq!(canon(&replay), canon(&par));
    }
}
