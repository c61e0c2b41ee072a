//! Sequential Bowyer-Watson kernel: tetrahedral mesh storage, point location,
//! cavity computation, insertion and quality-driven refinement.

mod audit;
pub(crate) mod kernel;
mod refine;

pub use audit::{AuditReport, Violation};
pub use kernel::{Cavity, Facet};
pub(crate) use refine::{is_bad, process_item, RefineCtx, Step, Watchdog};
pub use refine::{BadScope, RefineError, RefineLimits, RefineStats, RefinementRule, Region};

use crate::decomp::LeafGrid;
use crate::geom::{self, BBox, Orientation, Point3};
use crate::image::LabeledImage;
use kernel::{CavityFail, InsertFail, MeshAccess, Ownership};
use thiserror::Error;

pub type TetId = u32;
pub type VertId = u32;

/// Neighbor marker for a facet on the domain hull.
pub const BOUNDARY: TetId = u32::MAX;
/// Neighbor marker for a facet whose outer tet lives in another submesh.
pub const EXTERNAL: TetId = u32::MAX - 1;

/// Duplicate-point tolerance, relative to the bounding-box diagonal.
pub const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tet {
    pub v: [VertId; 4],
    /// `n[i]` is the tet across the face opposite `v[i]`.
    pub n: [TetId; 4],
    pub owner: u32,
    /// Bumped each time the slot is (re)used; lets queued work detect stale ids.
    pub stamp: u32,
    pub alive: bool,
}

impl Tet {
    pub const DEAD: Tet = Tet {
        v: [0; 4],
        n: [BOUNDARY; 4],
        owner: 0,
        stamp: 0,
        alive: false,
    };
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("degenerate bounding box")]
    DegenerateBox,
    #[error("point ({}, {}, {}) lies outside the mesh hull", .0.x, .0.y, .0.z)]
    OutsideHull(Point3),
    #[error("point coincides with an existing vertex")]
    Duplicate,
    #[error("tet {0} is not alive")]
    DeadTet(TetId),
    #[error("start tet does not conflict with the point")]
    BadStart,
    #[error("cavity reaches a facet outside this submesh")]
    External,
    #[error("insertion would create elements outside the writable region")]
    OutOfScope,
    #[error("invalid cavity: a boundary facet is not visible from the point")]
    InvalidCavity,
    #[error(transparent)]
    Geom(#[from] geom::GeomError),
}

impl From<CavityFail> for MeshError {
    fn from(f: CavityFail) -> Self {
        match f {
            CavityFail::Conflict => unreachable!("sequential access never conflicts"),
            CavityFail::External => MeshError::External,
            CavityFail::BadStart => MeshError::BadStart,
        }
    }
}

impl From<InsertFail> for MeshError {
    fn from(f: InsertFail) -> Self {
        match f {
            InsertFail::Duplicate => MeshError::Duplicate,
            InsertFail::OutOfScope => MeshError::OutOfScope,
            InsertFail::Invisible => MeshError::InvalidCavity,
        }
    }
}

/// Tetrahedral mesh with stable slot ids and global vertex ids.
#[derive(Clone, Debug)]
pub struct TetMesh {
    pub(crate) points: Vec<Point3>,
    pub(crate) gids: Vec<u64>,
    pub(crate) tets: Vec<Tet>,
    pub(crate) free: Vec<TetId>,
    pub(crate) next_gid: u64,
    pub(crate) bbox: BBox,
    pub(crate) grid: Option<LeafGrid>,
}

impl TetMesh {
    /// Empty mesh over `bbox`; vertices created here get gids from `first_gid` on.
    pub fn empty(bbox: BBox, first_gid: u64) -> Self {
        TetMesh {
            points: Vec::new(),
            gids: Vec::new(),
            tets: Vec::new(),
            free: Vec::new(),
            next_gid: first_gid,
            bbox,
            grid: None,
        }
    }

    /// Delaunay mesh of the image bounding box: 8 corners, 6 tets around the
    /// main diagonal.
    pub fn bootstrap(img: &LabeledImage) -> Result<Self, MeshError> {
        Self::from_box(img.bbox())
    }

    pub fn from_box(bbox: BBox) -> Result<Self, MeshError> {
        let e = bbox.extent();
        if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) || !e.is_finite() {
            return Err(MeshError::DegenerateBox);
        }
        let mut m = TetMesh::empty(bbox, 0);
        // corner c has bit 0 = x max, bit 1 = y max, bit 2 = z max
        for c in 0..8u32 {
            let p = Point3::new(
                if c & 1 != 0 { bbox.max.x } else { bbox.min.x },
                if c & 2 != 0 { bbox.max.y } else { bbox.min.y },
                if c & 4 != 0 { bbox.max.z } else { bbox.min.z },
            );
            m.add_vertex(p);
        }
        const AXIS_ORDERS: [[u32; 3]; 6] = [[1, 2, 4], [1, 4, 2], [2, 1, 4], [2, 4, 1], [4, 1, 2], [4, 2, 1]];
        let mut tets = Vec::with_capacity(6);
        for ord in AXIS_ORDERS {
            let mut v = [0, ord[0], ord[0] | ord[1], 7];
            let pts = v.map(|i| m.points[i as usize]);
            if geom::orient3d_raw(pts[0], pts[1], pts[2], pts[3]) < 0.0 {
                v.swap(2, 3);
            }
            tets.push(v);
        }
        for v in tets {
            m.tets.push(Tet {
                v,
                n: [BOUNDARY; 4],
                owner: 0,
                stamp: 1,
                alive: true,
            });
        }
        m.relink_all();
        Ok(m)
    }

    pub(crate) fn add_vertex(&mut self, p: Point3) -> VertId {
        let gid = self.next_gid;
        self.next_gid += 1;
        self.add_vertex_with_gid(p, gid)
    }

    pub(crate) fn add_vertex_with_gid(&mut self, p: Point3, gid: u64) -> VertId {
        self.points.push(p);
        self.gids.push(gid);
        (self.points.len() - 1) as VertId
    }

    /// Rebuilds all neighbor links from shared facets. Unmatched facets become BOUNDARY.
    pub(crate) fn relink_all(&mut self) {
        let mut map: std::collections::HashMap<[VertId; 3], (TetId, usize)> =
            std::collections::HashMap::with_capacity(self.tets.len() * 2);
        for t in 0..self.tets.len() {
            if !self.tets[t].alive {
                continue;
            }
            for f in 0..4 {
                let key = sorted_face(&self.tets[t].v, f);
                if let Some((o, of)) = map.remove(&key) {
                    self.tets[t].n[f] = o;
                    self.tets[o as usize].n[of] = t as TetId;
                } else {
                    map.insert(key, (t as TetId, f));
                    self.tets[t].n[f] = BOUNDARY;
                }
            }
        }
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn grid(&self) -> Option<&LeafGrid> {
        self.grid.as_ref()
    }

    pub(crate) fn set_grid(&mut self, grid: Option<LeafGrid>) {
        self.grid = grid;
    }

    pub fn num_vertices(&self) -> usize {
        self.points.len()
    }

    pub fn num_slots(&self) -> usize {
        self.tets.len()
    }

    pub fn num_alive(&self) -> usize {
        self.tets.len() - self.free.len()
    }

    pub fn point(&self, v: VertId) -> Point3 {
        self.points[v as usize]
    }

    pub fn vertex_gid(&self, v: VertId) -> u64 {
        self.gids[v as usize]
    }

    pub fn next_gid(&self) -> u64 {
        self.next_gid
    }

    pub fn set_next_gid(&mut self, g: u64) {
        self.next_gid = g;
    }

    pub fn tet(&self, t: TetId) -> &Tet {
        &self.tets[t as usize]
    }

    pub fn tet_points(&self, t: TetId) -> [Point3; 4] {
        self.tets[t as usize].v.map(|v| self.points[v as usize])
    }

    pub fn alive_tets(&self) -> impl Iterator<Item = TetId> + '_ {
        self.tets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.alive)
            .map(|(i, _)| i as TetId)
    }

    pub(crate) fn dup_tol2(&self) -> f64 {
        let d = DUPLICATE_TOL * self.bbox.diagonal();
        d * d
    }

    fn contains(&self, t: TetId, p: Point3) -> bool {
        let pts = self.tet_points(t);
        (0..4).all(|f| {
            let mut q = pts;
            q[f] = p;
            geom::orient3d_raw(q[0], q[1], q[2], q[3]) >= 0.0
        })
    }

    /// Alive tet containing `p`, found by a visibility walk from `hint`.
    /// When `p` lies on a shared face, edge or vertex the lowest containing id wins.
    pub fn locate(&self, p: Point3, hint: TetId) -> Result<TetId, MeshError> {
        if !p.is_finite() {
            return Err(geom::GeomError::NonFinite.into());
        }
        if !self.bbox.contains(p) {
            return Err(MeshError::OutsideHull(p));
        }
        let mut t = if (hint as usize) < self.tets.len() && self.tets[hint as usize].alive {
            hint
        } else {
            self.alive_tets().next().ok_or(MeshError::OutsideHull(p))?
        };
        let max_steps = 4 * self.tets.len() + 16;
        let mut found = None;
        'walk: for _ in 0..max_steps {
            let pts = self.tet_points(t);
            let tet = &self.tets[t as usize];
            for f in 0..4 {
                let mut q = pts;
                q[f] = p;
                if geom::orient3d_raw(q[0], q[1], q[2], q[3]) < 0.0 {
                    let n = tet.n[f];
                    if n == BOUNDARY || n == EXTERNAL {
                        return Err(MeshError::OutsideHull(p));
                    }
                    t = n;
                    continue 'walk;
                }
            }
            found = Some(t);
            break;
        }
        let start = match found {
            Some(t) => t,
            None => self
                .alive_tets()
                .find(|&t| self.contains(t, p))
                .ok_or(MeshError::OutsideHull(p))?,
        };
        // Containers of a point on a shared sub-simplex are face-connected.
        let mut seen = vec![start];
        let mut i = 0;
        while i < seen.len() {
            let tet = self.tets[seen[i] as usize];
            for &n in &tet.n {
                if n != BOUNDARY && n != EXTERNAL && !seen.contains(&n) && self.contains(n, p) {
                    seen.push(n);
                }
            }
            i += 1;
        }
        Ok(*seen.iter().min().unwrap())
    }

    /// Conflict cavity of `p`, grown breadth-first from `start`.
    pub fn compute_cavity(&mut self, p: Point3, start: TetId) -> Result<Cavity, MeshError> {
        if !p.is_finite() {
            return Err(geom::GeomError::NonFinite.into());
        }
        if !self.tets.get(start as usize).is_some_and(|t| t.alive) {
            return Err(MeshError::DeadTet(start));
        }
        let mut cav = Cavity::new(p);
        kernel::grow_cavity(self, p, start, &mut cav)?;
        Ok(cav)
    }

    /// Inserts `cavity.point`, returning the new tet ids. The mesh is unchanged on error.
    pub fn insert(&mut self, cavity: &Cavity) -> Result<Vec<TetId>, MeshError> {
        let mut out = Vec::new();
        let tol = self.dup_tol2();
        let grid = self.grid;
        kernel::commit_insert(
            self,
            cavity,
            Ownership {
                grid: grid.as_ref(),
                writable: None,
            },
            tol,
            &mut out,
        )?;
        Ok(out)
    }

    /// Locate, grow the cavity, insert.
    pub fn insert_point(&mut self, p: Point3) -> Result<Vec<TetId>, MeshError> {
        let hint = self.alive_tets().next().unwrap_or(0);
        let t = self.locate(p, hint)?;
        let tol = self.dup_tol2();
        if self.tets[t as usize]
            .v
            .iter()
            .any(|&v| self.points[v as usize].dist2(p) <= tol)
        {
            return Err(MeshError::Duplicate);
        }
        let cav = self.compute_cavity(p, t)?;
        self.insert(&cav)
    }

    /// Like [`insert_point`](Self::insert_point) but with an explicit vertex gid.
    pub fn insert_point_with_gid(&mut self, p: Point3, gid: u64) -> Result<Vec<TetId>, MeshError> {
        let saved = self.next_gid;
        self.next_gid = gid;
        let r = self.insert_point(p);
        self.next_gid = if r.is_ok() { saved.max(gid + 1) } else { saved };
        r
    }

    pub fn orientation(&self, t: TetId) -> Orientation {
        let p = self.tet_points(t);
        geom::sign_to_orientation(geom::orient3d_raw(p[0], p[1], p[2], p[3]))
    }

    /// Drops dead slots, renumbering tets densely. Vertex ids are unchanged.
    pub fn compact(&mut self) {
        let mut remap = vec![BOUNDARY; self.tets.len()];
        let mut next = 0u32;
        for (i, t) in self.tets.iter().enumerate() {
            if t.alive {
                remap[i] = next;
                next += 1;
            }
        }
        let mut tets = Vec::with_capacity(next as usize);
        for t in self.tets.iter().filter(|t| t.alive) {
            let mut t = *t;
            for n in &mut t.n {
                if *n != BOUNDARY && *n != EXTERNAL {
                    *n = remap[*n as usize];
                }
            }
            tets.push(t);
        }
        self.tets = tets;
        self.free.clear();
    }
}

/// Sorted vertex ids of the face opposite local vertex `f`.
#[inline]
pub(crate) fn sorted_face(v: &[VertId; 4], f: usize) -> [VertId; 3] {
    let mut k = [0; 3];
    let mut j = 0;
    for (i, &x) in v.iter().enumerate() {
        if i != f {
            k[j] = x;
            j += 1;
        }
    }
    k.sort_unstable();
    k
}

impl MeshAccess for TetMesh {
    #[inline]
    fn point(&self, v: VertId) -> Point3 {
        self.points[v as usize]
    }
    #[inline]
    fn gid(&self, v: VertId) -> u64 {
        self.gids[v as usize]
    }
    #[inline]
    fn tet(&self, t: TetId) -> Tet {
        self.tets[t as usize]
    }
    #[inline]
    fn acquire(&mut self, _t: TetId) -> bool {
        true
    }
    #[inline]
    fn set_neighbor(&mut self, t: TetId, face: usize, n: TetId) {
        self.tets[t as usize].n[face] = n;
    }
    fn new_vertex(&mut self, p: Point3) -> VertId {
        self.add_vertex(p)
    }
    fn new_tet(&mut self, mut tet: Tet) -> TetId {
        match self.free.pop() {
            Some(id) => {
                tet.stamp = self.tets[id as usize].stamp.wrapping_add(1);
                self.tets[id as usize] = tet;
                id
            }
            None => {
                tet.stamp = 1;
                self.tets.push(tet);
                (self.tets.len() - 1) as TetId
            }
        }
    }
    fn kill(&mut self, t: TetId) {
        self.tets[t as usize].alive = false;
        self.free.push(t);
    }
}
