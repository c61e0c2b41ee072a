//! Storage-agnostic Bowyer-Watson steps. The sequential mesh and the
//! speculative shared mesh both implement [`MeshAccess`]; running the same
//! code over both keeps single-threaded speculative refinement identical to
//! the sequential kernel.

use super::{Tet, TetId, VertId, BOUNDARY, EXTERNAL};
use crate::decomp::LeafGrid;
use crate::geom::{self, Point3};

pub(crate) trait MeshAccess {
    fn point(&self, v: VertId) -> Point3;
    fn gid(&self, v: VertId) -> u64;
    /// Reads a tet. On shared storage the caller must hold its claim.
    fn tet(&self, t: TetId) -> Tet;
    /// Claims `t` for the current writer; `false` means another writer has it.
    fn acquire(&mut self, t: TetId) -> bool;
    fn set_neighbor(&mut self, t: TetId, face: usize, n: TetId);
    fn new_vertex(&mut self, p: Point3) -> VertId;
    /// Stores `tet` in a fresh or recycled slot, bumping the slot stamp.
    fn new_tet(&mut self, tet: Tet) -> TetId;
    fn kill(&mut self, t: TetId);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Facet {
    /// Cavity tet owning the facet.
    pub tet: TetId,
    /// Face index inside `tet` (the facet is opposite vertex `face`).
    pub face: u8,
    /// Tet across the facet, or `BOUNDARY` on the domain hull.
    pub outer: TetId,
}

#[derive(Clone, Debug, Default)]
pub struct Cavity {
    pub point: Point3,
    pub tets: Vec<TetId>,
    pub facets: Vec<Facet>,
    rejected: Vec<TetId>,
}

impl Cavity {
    pub fn new(point: Point3) -> Self {
        Cavity {
            point,
            ..Default::default()
        }
    }

    pub(crate) fn reset(&mut self, point: Point3) {
        self.point = point;
        self.tets.clear();
        self.facets.clear();
        self.rejected.clear();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum CavityFail {
    /// Another writer holds a tet the cavity needs.
    Conflict,
    /// The cavity reaches a facet whose outer tet is not present in this submesh.
    External,
    /// Starting tet is dead or does not conflict with the point.
    BadStart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum InsertFail {
    Duplicate,
    /// A new tet would be owned by a leaf outside the writable set.
    OutOfScope,
    /// A non-hull facet is not visible from the point. Indicates an invalid cavity.
    Invisible,
}

/// Where new tets go and which leaves a task may write.
#[derive(Clone, Copy, Default)]
pub(crate) struct Ownership<'a> {
    pub grid: Option<&'a LeafGrid>,
    pub writable: Option<&'a [bool]>,
}

impl Ownership<'_> {
    #[inline]
    pub fn owner_of(&self, bary: Point3) -> u32 {
        self.grid.map_or(0, |g| g.leaf_of(bary))
    }

    #[inline]
    pub fn allowed(&self, owner: u32) -> bool {
        self.writable
            .is_none_or(|w| w.get(owner as usize).copied().unwrap_or(false))
    }
}

#[inline]
pub(crate) fn tet_points<M: MeshAccess + ?Sized>(m: &M, t: &Tet) -> [Point3; 4] {
    [m.point(t.v[0]), m.point(t.v[1]), m.point(t.v[2]), m.point(t.v[3])]
}

#[inline]
fn conflicts<M: MeshAccess + ?Sized>(m: &M, t: &Tet, p: Point3) -> bool {
    let [a, b, c, d] = tet_points(m, t);
    // Cospherical counts as no conflict: the cavity stays strictly star-shaped
    // and the choice does not depend on slot numbering.
    geom::insphere_raw(a, b, c, d, p) > 0.0
}

/// Breadth-first cavity growth from `start`, claiming every tet it reads.
pub(crate) fn grow_cavity<M: MeshAccess + ?Sized>(
    m: &mut M,
    p: Point3,
    start: TetId,
    cav: &mut Cavity,
) -> Result<(), CavityFail> {
    cav.reset(p);
    if !m.acquire(start) {
        return Err(CavityFail::Conflict);
    }
    let st = m.tet(start);
    if !st.alive || !conflicts(m, &st, p) {
        return Err(CavityFail::BadStart);
    }
    cav.tets.push(start);
    let mut i = 0;
    while i < cav.tets.len() {
        let t = cav.tets[i];
        let tet = m.tet(t);
        for f in 0..4 {
            let n = tet.n[f];
            if n == BOUNDARY {
                cav.facets.push(Facet {
                    tet: t,
                    face: f as u8,
                    outer: BOUNDARY,
                });
                continue;
            }
            if n == EXTERNAL {
                return Err(CavityFail::External);
            }
            if cav.tets.contains(&n) {
                continue;
            }
            if cav.rejected.contains(&n) {
                cav.facets.push(Facet {
                    tet: t,
                    face: f as u8,
                    outer: n,
                });
                continue;
            }
            if !m.acquire(n) {
                return Err(CavityFail::Conflict);
            }
            let nt = m.tet(n);
            debug_assert!(nt.alive, "neighbor {n} of live tet {t} is dead");
            if conflicts(m, &nt, p) {
                cav.tets.push(n);
            } else {
                cav.rejected.push(n);
                cav.facets.push(Facet {
                    tet: t,
                    face: f as u8,
                    outer: n,
                });
            }
        }
        i += 1;
    }
    Ok(())
}

struct Planned {
    key: [u64; 3],
    verts: [VertId; 4],
    face: usize,
    outer: TetId,
    owner: u32,
}

const NEW_VERTEX: VertId = VertId::MAX;

/// Retriangulates `cav` by fanning its boundary facets to the cavity point.
/// Nothing is mutated unless every check passes. New tets are created in a
/// canonical order (sorted by facet vertex gids) and returned in that order.
pub(crate) fn commit_insert<M: MeshAccess + ?Sized>(
    m: &mut M,
    cav: &Cavity,
    own: Ownership<'_>,
    dup_tol2: f64,
    out: &mut Vec<TetId>,
) -> Result<VertId, InsertFail> {
    out.clear();
    let p = cav.point;
    for &t in &cav.tets {
        let tet = m.tet(t);
        if tet.v.iter().any(|&v| m.point(v).dist2(p) <= dup_tol2) {
            return Err(InsertFail::Duplicate);
        }
    }

    let mut plan: Vec<Planned> = Vec::with_capacity(cav.facets.len());
    for fc in &cav.facets {
        let tet = m.tet(fc.tet);
        let f = fc.face as usize;
        let mut pts = tet_points(m, &tet);
        pts[f] = p;
        let o = geom::orient3d_raw(pts[0], pts[1], pts[2], pts[3]);
        if o <= 0.0 {
            if fc.outer == BOUNDARY && o == 0.0 {
                // p lies on this hull facet: the facet is split, not coned.
                continue;
            }
            return Err(InsertFail::Invisible);
        }
        let mut verts = tet.v;
        verts[f] = NEW_VERTEX;
        let mut key = [0u64; 3];
        let mut k = 0;
        for (i, &v) in tet.v.iter().enumerate() {
            if i != f {
                key[k] = m.gid(v);
                k += 1;
            }
        }
        key.sort_unstable();
        let owner = own.owner_of(geom::barycenter(&pts));
        if !own.allowed(owner) {
            return Err(InsertFail::OutOfScope);
        }
        plan.push(Planned {
            key,
            verts,
            face: f,
            outer: fc.outer,
            owner,
        });
    }
    plan.sort_unstable_by_key(|pl| pl.key);

    let nv = m.new_vertex(p);
    for &t in &cav.tets {
        m.kill(t);
    }
    for pl in &plan {
        let mut v = pl.verts;
        v[pl.face] = nv;
        let mut n = [BOUNDARY; 4];
        n[pl.face] = pl.outer;
        let id = m.new_tet(Tet {
            v,
            n,
            owner: pl.owner,
            stamp: 0,
            alive: true,
        });
        if pl.outer != BOUNDARY {
            let ot = m.tet(pl.outer);
            // Match by vertices: killed cavity slots may already be recycled.
            let face = (0..4)
                .find(|&j| !v.contains(&ot.v[j]))
                .expect("outer tet shares the facet");
            m.set_neighbor(pl.outer, face, id);
        }
        out.push(id);
    }

    // Link new tets to each other through faces that contain the new vertex.
    // Such a face is identified by its two old vertices.
    let mut open: Vec<((u64, u64), TetId, usize)> = Vec::with_capacity(out.len() * 3);
    for (idx, pl) in plan.iter().enumerate() {
        let id = out[idx];
        for j in 0..4 {
            if j == pl.face {
                continue;
            }
            let mut e = [0u64; 2];
            let mut k = 0;
            for i in 0..4 {
                if i != j && i != pl.face {
                    e[k] = m.gid(pl.verts[i]);
                    k += 1;
                }
            }
            let key = (e[0].min(e[1]), e[0].max(e[1]));
            if let Some(pos) = open.iter().position(|(k2, _, _)| *k2 == key) {
                let (_, other, oj) = open.swap_remove(pos);
                m.set_neighbor(id, j, other);
                m.set_neighbor(other, oj, id);
            } else {
                open.push((key, id, j));
            }
        }
    }
    // Anything left over lies in a hull plane through the new vertex and stays BOUNDARY.
    Ok(nv)
}
