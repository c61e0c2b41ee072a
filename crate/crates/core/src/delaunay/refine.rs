use super::kernel::{self, Cavity, CavityFail, InsertFail, MeshAccess, Ownership};
use super::{TetId, TetMesh, VertId, BOUNDARY, EXTERNAL};
use crate::decomp::LeafGrid;
use crate::geom::{self, BBox, Point3};
use crate::image::{LabeledImage, SizingPolicy, BACKGROUND};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Which tets are candidates for refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BadScope {
    /// Only tets whose barycenter lies in a non-background voxel.
    #[default]
    InsideObject,
    /// Every tet; used for the coarse background mesh.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RefineLimits {
    pub max_wall: Option<Duration>,
    pub max_insertions: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRule {
    /// Upper bound on circumradius / shortest edge.
    pub radius_edge_bound: f64,
    pub sizing: SizingPolicy,
    #[serde(default)]
    pub scope: BadScope,
    #[serde(default)]
    pub limits: RefineLimits,
}

impl RefinementRule {
    pub fn new(radius_edge_bound: f64, h: f64) -> Self {
        RefinementRule {
            radius_edge_bound,
            sizing: SizingPolicy::uniform(h),
            scope: BadScope::InsideObject,
            limits: RefineLimits::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.radius_edge_bound >= 2.0) {
            return Err(RefineError::InvalidRule(format!(
                "radius-edge bound {} is below 2",
                self.radius_edge_bound
            )));
        }
        if !(self.sizing.h > 0.0) || self.sizing.overrides.iter().any(|(_, h)| !(*h > 0.0)) {
            return Err(RefineError::InvalidRule("sizing must be positive".into()));
        }
        Ok(())
    }
}

/// Leaf-restricted refinement: only tets owned by `targets` are tested, and new
/// tets must land in `writable` leaves (when given).
#[derive(Clone, Debug, Default)]
pub struct Region {
    pub targets: Vec<bool>,
    pub writable: Option<Vec<bool>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineStats {
    pub insertions: u64,
    /// Insertions that used the barycenter because no other candidate worked.
    pub barycenter_fallbacks: u64,
    /// Insertions on the box boundary made in place of an outside or encroaching circumcenter.
    pub boundary_splits: u64,
    /// Work items dropped because their cavity left the submesh or writable region.
    pub deferred: u64,
    /// Work items dropped because both candidate points were duplicates.
    pub duplicates: u64,
    pub rollbacks: u64,
    pub wall_secs: f64,
}

impl RefineStats {
    pub(crate) fn record(&mut self, kind: PointKind) {
        self.insertions += 1;
        match kind {
            PointKind::Barycenter => self.barycenter_fallbacks += 1,
            PointKind::Subfacet | PointKind::Subsegment => self.boundary_splits += 1,
            PointKind::Circumcenter => {}
        }
    }

    pub fn merge(&mut self, o: &RefineStats) {
        self.insertions += o.insertions;
        self.barycenter_fallbacks += o.barycenter_fallbacks;
        self.boundary_splits += o.boundary_splits;
        self.deferred += o.deferred;
        self.duplicates += o.duplicates;
        self.rollbacks += o.rollbacks;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("invalid refinement rule: {0}")]
    InvalidRule(String),
    #[error("watchdog fired after {} insertions in {:.1}s", .stats.insertions, .stats.wall_secs)]
    Watchdog { stats: RefineStats },
}

pub(crate) struct RefineCtx<'a> {
    pub img: &'a LabeledImage,
    pub rule: &'a RefinementRule,
    pub targets: Option<&'a [bool]>,
    pub own: Ownership<'a>,
    pub bbox: BBox,
    pub dup_tol2: f64,
}

impl<'a> RefineCtx<'a> {
    pub fn new(
        grid: Option<&'a LeafGrid>,
        bbox: BBox,
        dup_tol2: f64,
        img: &'a LabeledImage,
        rule: &'a RefinementRule,
        region: Option<&'a Region>,
    ) -> Self {
        RefineCtx {
            img,
            rule,
            targets: region.map(|r| r.targets.as_slice()),
            own: Ownership {
                grid,
                writable: region.and_then(|r| r.writable.as_deref()),
            },
            bbox,
            dup_tol2,
        }
    }
}

/// True when the tet must be refined under `ctx`.
pub(crate) fn is_bad(pts: &[Point3; 4], owner: u32, ctx: &RefineCtx<'_>) -> bool {
    if let Some(t) = ctx.targets {
        if !t.get(owner as usize).copied().unwrap_or(false) {
            return false;
        }
    }
    let label = ctx.img.classify(geom::barycenter(pts));
    if ctx.rule.scope == BadScope::InsideObject && label == BACKGROUND {
        return false;
    }
    let sm = geom::size_measure(pts);
    sm.radius_edge() > ctx.rule.radius_edge_bound || sm.circumradius > ctx.rule.sizing.h_for(label)
}

/// Origin of an inserted point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PointKind {
    Circumcenter,
    /// Circumcenter of a hull triangle, on a box face.
    Subfacet,
    /// Midpoint of a hull edge on a box edge.
    Subsegment,
    Barycenter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Step {
    Inserted { kind: PointKind },
    Stale,
    NotBad,
    Conflict,
    Deferred,
    Duplicate,
}

enum Walk<T> {
    Found(T),
    Fail(Step),
    Lost,
}

impl<T> Walk<T> {
    fn map_lost<U>(self) -> Walk<U> {
        match self {
            Walk::Fail(s) => Walk::Fail(s),
            _ => Walk::Lost,
        }
    }
}

const WALK_CAP: usize = 1 << 16;

/// Box face plane holding all of `f`, as (axis, coordinate).
fn hull_plane(b: &BBox, f: &[Point3; 3]) -> Option<(usize, f64)> {
    (0..3).find_map(|a| {
        let x = f[0].axis(a);
        let on = x == b.min.axis(a) || x == b.max.axis(a);
        (on && f[1].axis(a) == x && f[2].axis(a) == x).then_some((a, x))
    })
}

/// True when the segment lies on one of the twelve box edges.
fn on_box_edge(b: &BBox, u: Point3, v: Point3) -> bool {
    (0..3)
        .filter(|&a| {
            let x = u.axis(a);
            v.axis(a) == x && (x == b.min.axis(a) || x == b.max.axis(a))
        })
        .count()
        >= 2
}

fn face_of(f: usize) -> [usize; 3] {
    let mut k = [0; 3];
    let mut j = 0;
    for i in (0..4).filter(|&i| i != f) {
        k[j] = i;
        j += 1;
    }
    k
}

fn acquire_next<M: MeshAccess + ?Sized>(m: &mut M, n: TetId) -> Result<(), Step> {
    if n == EXTERNAL {
        return Err(Step::Deferred);
    }
    if !m.acquire(n) {
        return Err(Step::Conflict);
    }
    Ok(())
}

/// Visibility walk from `start` towards `target` (outside the hull) until a hull facet is crossed.
fn walk_to_hull<M: MeshAccess + ?Sized>(m: &mut M, start: TetId, target: Point3) -> Walk<(TetId, usize)> {
    let mut cur = start;
    'walk: for _ in 0..WALK_CAP {
        let tet = m.tet(cur);
        let pts = kernel::tet_points(m, &tet);
        for f in 0..4 {
            let mut q = pts;
            q[f] = target;
            if geom::orient3d_raw(q[0], q[1], q[2], q[3]) < 0.0 {
                let n = tet.n[f];
                if n == BOUNDARY {
                    return Walk::Found((cur, f));
                }
                if let Err(s) = acquire_next(m, n) {
                    return Walk::Fail(s);
                }
                cur = n;
                continue 'walk;
            }
        }
        return Walk::Lost;
    }
    Walk::Lost
}

/// Hull facet on the other side of edge `(u, v)` of hull facet `(t, f)`, found by
/// rotating through the tets around the edge.
fn pivot<M: MeshAccess + ?Sized>(m: &mut M, t: TetId, f: usize, u: VertId, v: VertId) -> Walk<(TetId, usize)> {
    let tet = m.tet(t);
    let mut g = (0..4).find(|&i| i != f && tet.v[i] != u && tet.v[i] != v).unwrap();
    let mut cur = t;
    for _ in 0..WALK_CAP {
        let tet = m.tet(cur);
        let x = (0..4).find(|&i| i != g && tet.v[i] != u && tet.v[i] != v).unwrap();
        let n = tet.n[g];
        if n == BOUNDARY {
            return Walk::Found((cur, g));
        }
        if let Err(s) = acquire_next(m, n) {
            return Walk::Fail(s);
        }
        let nt = m.tet(n);
        match nt.v.iter().position(|&w| w == tet.v[x]) {
            Some(i) => g = i,
            None => return Walk::Lost,
        }
        cur = n;
    }
    Walk::Lost
}

/// Split point for hull facet `(t, f)`: its circumcenter when that lies on the
/// box face, otherwise the midpoint of the box-edge segment it falls beyond.
fn split_subfacet<M: MeshAccess + ?Sized>(
    m: &mut M,
    bbox: &BBox,
    t: TetId,
    f: usize,
) -> Walk<(Point3, TetId, PointKind)> {
    let tet = m.tet(t);
    let fp = face_of(f).map(|i| m.point(tet.v[i]));
    let Some((axis, x)) = hull_plane(bbox, &fp) else {
        return Walk::Lost;
    };
    let Some(cf) = geom::triangle_circumcenter(fp[0], fp[1], fp[2]) else {
        return Walk::Lost;
    };
    let cf = cf.with_axis(axis, x);
    if bbox.contains(cf) {
        return Walk::Found((cf, t, PointKind::Subfacet));
    }
    // Walk across the face plane towards cf until a box edge is crossed.
    let mut cur = (t, f);
    for _ in 0..WALK_CAP {
        let tet = m.tet(cur.0);
        let idx = face_of(cur.1);
        let mut crossed = None;
        for e in 0..3 {
            let (a, b, w) = (idx[e], idx[(e + 1) % 3], idx[(e + 2) % 3]);
            let (pa, pb) = (m.point(tet.v[a]), m.point(tet.v[b]));
            let side_w = geom::orient2d_raw(axis, pa, pb, m.point(tet.v[w]));
            let side_c = geom::orient2d_raw(axis, pa, pb, cf);
            if side_w * side_c < 0.0 {
                crossed = Some((a, b));
                break;
            }
        }
        let Some((a, b)) = crossed else {
            return Walk::Lost;
        };
        let (pa, pb) = (m.point(tet.v[a]), m.point(tet.v[b]));
        if on_box_edge(bbox, pa, pb) {
            return Walk::Found((subsegment_midpoint(bbox, pa, pb), cur.0, PointKind::Subsegment));
        }
        match pivot(m, cur.0, cur.1, tet.v[a], tet.v[b]) {
            Walk::Found(next) => cur = next,
            other => return other.map_lost(),
        }
    }
    Walk::Lost
}

/// Midpoint with the coordinates that pin it to the box edge copied exactly.
fn subsegment_midpoint(bbox: &BBox, a: Point3, b: Point3) -> Point3 {
    let mut mid = (a + b) * 0.5;
    for ax in 0..3 {
        let x = a.axis(ax);
        if b.axis(ax) == x && (x == bbox.min.axis(ax) || x == bbox.max.axis(ax)) {
            mid = mid.with_axis(ax, x);
        }
    }
    mid
}

/// First hull facet of the cavity whose equatorial sphere strictly contains `p`.
fn encroached_subfacet<M: MeshAccess + ?Sized>(m: &M, cav: &Cavity) -> Option<(TetId, usize)> {
    cav.facets.iter().filter(|fc| fc.outer == BOUNDARY).find_map(|fc| {
        let tet = m.tet(fc.tet);
        let fp = face_of(fc.face as usize).map(|i| m.point(tet.v[i]));
        let cf = geom::triangle_circumcenter(fp[0], fp[1], fp[2])?;
        (cav.point.dist2(cf) < fp[0].dist2(cf)).then_some((fc.tet, fc.face as usize))
    })
}

/// First box-edge segment on the cavity hull whose diametral sphere strictly contains `p`.
fn encroached_subsegment<M: MeshAccess + ?Sized>(m: &M, bbox: &BBox, cav: &Cavity) -> Option<(Point3, TetId)> {
    for fc in cav.facets.iter().filter(|fc| fc.outer == BOUNDARY) {
        let tet = m.tet(fc.tet);
        let idx = face_of(fc.face as usize);
        for e in 0..3 {
            let (pa, pb) = (m.point(tet.v[idx[e]]), m.point(tet.v[idx[(e + 1) % 3]]));
            if on_box_edge(bbox, pa, pb) {
                let mid = (pa + pb) * 0.5;
                if cav.point.dist2(mid) < 0.25 * pa.dist2(pb) {
                    return Some((subsegment_midpoint(bbox, pa, pb), fc.tet));
                }
            }
        }
    }
    None
}

/// Refines one queued tet. New tets are left in `new`.
///
/// The circumcenter is inserted when it lies in the box and encroaches no hull
/// facet of its cavity. Otherwise the hull is split instead: a hull triangle at
/// its circumcenter, or a box-edge segment at its midpoint when the triangle's
/// circumcenter leaves the box face or encroaches that segment. The bad tet
/// may survive a hull split; the caller re-queues it.
pub(crate) fn process_item<M: MeshAccess + ?Sized>(
    m: &mut M,
    t: TetId,
    stamp: u32,
    ctx: &RefineCtx<'_>,
    cav: &mut Cavity,
    new: &mut Vec<TetId>,
) -> Step {
    new.clear();
    if !m.acquire(t) {
        return Step::Conflict;
    }
    let tet = m.tet(t);
    if !tet.alive || tet.stamp != stamp {
        return Step::Stale;
    }
    let pts = kernel::tet_points(m, &tet);
    if !is_bad(&pts, tet.owner, ctx) {
        return Step::NotBad;
    }
    let bbox = ctx.bbox;
    let mut target = match geom::circumcenter(&pts) {
        Some(c) if bbox.contains(c) => Some((c, t, PointKind::Circumcenter)),
        Some(c) => match walk_to_hull(m, t, c) {
            Walk::Found((ft, f)) => match split_subfacet(m, &bbox, ft, f) {
                Walk::Found(x) => Some(x),
                Walk::Fail(s) => return s,
                Walk::Lost => None,
            },
            Walk::Fail(s) => return s,
            Walk::Lost => None,
        },
        None => None,
    };
    while let Some((p, start, kind)) = target.take() {
        match kernel::grow_cavity(m, p, start, cav) {
            Ok(()) => {}
            Err(CavityFail::Conflict) => return Step::Conflict,
            Err(CavityFail::External) => return Step::Deferred,
            Err(CavityFail::BadStart) => break,
        }
        match kind {
            PointKind::Circumcenter => {
                if let Some((ft, f)) = encroached_subfacet(m, cav) {
                    match split_subfacet(m, &bbox, ft, f) {
                        Walk::Found(x) => target = Some(x),
                        Walk::Fail(s) => return s,
                        Walk::Lost => break,
                    }
                    continue;
                }
            }
            PointKind::Subfacet => {
                if let Some((mid, st)) = encroached_subsegment(m, &bbox, cav) {
                    target = Some((mid, st, PointKind::Subsegment));
                    continue;
                }
            }
            _ => {}
        }
        match kernel::commit_insert(m, cav, ctx.own, ctx.dup_tol2, new) {
            Ok(_) => return Step::Inserted { kind },
            Err(InsertFail::Duplicate) | Err(InsertFail::Invisible) => break,
            Err(InsertFail::OutOfScope) => return Step::Deferred,
        }
    }
    // Fallback: the barycenter lies strictly inside the tet and so inside its circumsphere.
    let bary = geom::barycenter(&pts);
    match kernel::grow_cavity(m, bary, t, cav) {
        Ok(()) => {}
        Err(CavityFail::Conflict) => return Step::Conflict,
        Err(CavityFail::External) => return Step::Deferred,
        Err(CavityFail::BadStart) => return Step::Duplicate,
    }
    match kernel::commit_insert(m, cav, ctx.own, ctx.dup_tol2, new) {
        Ok(_) => Step::Inserted {
            kind: PointKind::Barycenter,
        },
        Err(InsertFail::OutOfScope) => Step::Deferred,
        Err(_) => Step::Duplicate,
    }
}

pub(crate) struct Watchdog {
    start: Instant,
    limits: RefineLimits,
}

impl Watchdog {
    pub fn new(limits: RefineLimits) -> Self {
        Watchdog {
            start: Instant::now(),
            limits,
        }
    }

    /// Insertion cap is exact; the clock is read only when `check_clock` is set.
    pub fn expired(&self, insertions: u64, check_clock: bool) -> bool {
        self.limits.max_insertions.is_some_and(|m| insertions >= m)
            || (check_clock && self.limits.max_wall.is_some_and(|w| self.start.elapsed() >= w))
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

impl TetMesh {
    /// Quality-driven refinement with a FIFO queue of bad tets.
    pub fn refine(
        &mut self,
        img: &LabeledImage,
        rule: &RefinementRule,
        region: Option<&Region>,
    ) -> Result<RefineStats, RefineError> {
        rule.validate()?;
        let dog = Watchdog::new(rule.limits);
        let grid = self.grid;
        let ctx = RefineCtx::new(grid.as_ref(), self.bbox, self.dup_tol2(), img, rule, region);
        let mut queue: VecDeque<(TetId, u32)> = self
            .alive_tets()
            .filter(|&t| is_bad(&self.tet_points(t), self.tets[t as usize].owner, &ctx))
            .map(|t| (t, self.tets[t as usize].stamp))
            .collect();
        let mut stats = RefineStats::default();
        let mut cav = Cavity::default();
        let mut new = Vec::new();
        let mut iter = 0u64;
        while let Some((t, stamp)) = queue.pop_front() {
            iter += 1;
            if dog.expired(stats.insertions, iter.is_multiple_of(256)) {
                stats.wall_secs = dog.elapsed();
                return Err(RefineError::Watchdog { stats });
            }
            match process_item(self, t, stamp, &ctx, &mut cav, &mut new) {
                Step::Inserted { kind } => {
                    stats.record(kind);
                    for &n in &new {
                        let tet = self.tets[n as usize];
                        if is_bad(&self.tet_points(n), tet.owner, &ctx) {
                            queue.push_back((n, tet.stamp));
                        }
                    }
                    let tet = self.tets[t as usize];
                    if tet.alive && tet.stamp == stamp {
                        queue.push_back((t, stamp));
                    }
                }
                Step::Deferred => stats.deferred += 1,
                Step::Duplicate => stats.duplicates += 1,
                Step::Stale | Step::NotBad => {}
                Step::Conflict => unreachable!("sequential access never conflicts"),
            }
        }
        stats.wall_secs = dog.elapsed();
        Ok(stats)
    }

    /// Tets that violate `rule` (restricted to `region` targets when given).
    pub fn bad_tets(&self, img: &LabeledImage, rule: &RefinementRule, region: Option<&Region>) -> Vec<TetId> {
        let ctx = RefineCtx::new(self.grid.as_ref(), self.bbox, self.dup_tol2(), img, rule, region);
        self.alive_tets()
            .filter(|&t| is_bad(&self.tet_points(t), self.tets[t as usize].owner, &ctx))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{make_phantom, PhantomKind, PhantomSpec};

    fn phantom(r: f64, n: u32) -> LabeledImage {
        make_phantom(&PhantomSpec {
            kind: PhantomKind::Sphere { r },
            dims: [n; 3],
            spacing: [1.0; 3],
            seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn rule_validation() {
        assert!(RefinementRule::new(1.5, 1.0).validate().is_err());
        assert!(RefinementRule::new(2.0, 0.0).validate().is_err());
        assert!(RefinementRule::new(2.0, 1.0).validate().is_ok());
    }

    #[test]
    fn good_mesh_is_fixpoint() {
        let img = phantom(0.0, 8);
        let mut m = TetMesh::bootstrap(&img).unwrap();
        let s = m.refine(&img, &RefinementRule::new(2.0, 100.0), None).unwrap();
        assert_eq!(s.insertions, 0);
    }

    fn coarse(img: &LabeledImage, h: f64) -> TetMesh {
        let mut m = TetMesh::bootstrap(img).unwrap();
        let mut rule = RefinementRule::new(2.0, h);
        rule.scope = BadScope::All;
        m.refine(img, &rule, None).unwrap();
        m
    }

    #[test]
    fn bootstrap_misses_small_object() {
        // no bootstrap barycenter falls in a small centred sphere, so only a
        // coarse pass over all tets exposes it
        let img = phantom(6.0, 24);
        let mut m = TetMesh::bootstrap(&img).unwrap();
        assert_eq!(
            m.refine(&img, &RefinementRule::new(2.0, 3.0), None).unwrap().insertions,
            0
        );
    }

    #[test]
    fn sphere_refinement_meets_rule() {
        let img = phantom(6.0, 24);
        let mut m = coarse(&img, 6.0);
        let rule = RefinementRule::new(2.0, 24.0 / 8.0);
        let s = m.refine(&img, &rule, None).unwrap();
        assert!(s.insertions > 0);
        assert!(m.bad_tets(&img, &rule, None).is_empty());
        let a = m.audit_all();
        assert!(a.is_clean(), "{:?}", &a.violations[..a.violations.len().min(5)]);
    }

    #[test]
    fn watchdog_fires() {
        let img = phantom(6.0, 24);
        let mut m = coarse(&img, 6.0);
        let mut rule = RefinementRule::new(2.0, 1.0);
        rule.limits.max_insertions = Some(10);
        assert!(matches!(m.refine(&img, &rule, None), Err(RefineError::Watchdog { .. })));
    }
}
