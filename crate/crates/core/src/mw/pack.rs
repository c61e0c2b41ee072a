//! Canonical byte form of a submesh.
//!
//! Layout (little-endian): 72-byte header, leaf ids (`u32` each), vertex
//! records (`gid: u64`, `x, y, z: f64`) in ascending gid order, then tet
//! records (4 vertex indices, 4 neighbor indices, owner leaf; all `u32`).
//! Each tet's vertices are rotated by an even permutation so the smallest
//! index comes first, and tets are sorted by that tuple; a tet's id is its
//! position. Neighbors outside the pack are written as `EXTERNAL`, hull
//! facets as `BOUNDARY`. The bytes depend only on the mesh, never on slot
//! numbering or on the number of threads used to produce them.

use crate::decomp::LeafGrid;
use crate::delaunay::{Tet, TetId, TetMesh, VertId, BOUNDARY, EXTERNAL};
use crate::geom::{BBox, Point3};
use rustc_hash::FxHashMap;
use std::collections::HashMap;
use thiserror::Error;

pub const PACK_MAGIC: [u8; 4] = *b"SMP1";
pub const PACK_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 72;
const VERTEX_LEN: usize = 32;
const TET_LEN: usize = 36;
/// Flag bit: the pack holds a whole mesh rather than a set of leaves.
pub const FLAG_WHOLE: u8 = 1;
const NO_GRID: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PackError {
    #[error("not a submesh pack (bad magic)")]
    BadMagic,
    #[error("unsupported pack version {0}")]
    Version(u8),
    #[error("truncated pack: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{0} trailing bytes after pack payload")]
    Trailing(usize),
    #[error("invalid pack: {0}")]
    Invalid(String),
}

/// A decoded pack: the covered leaves and the tets they own.
#[derive(Clone, Debug)]
pub struct Submesh {
    pub leaves: Vec<u32>,
    pub whole: bool,
    pub mesh: TetMesh,
}

const EVEN_PERMS: [[usize; 4]; 12] = [
    [0, 1, 2, 3],
    [0, 2, 3, 1],
    [0, 3, 1, 2],
    [1, 0, 3, 2],
    [1, 2, 0, 3],
    [1, 3, 2, 0],
    [2, 0, 1, 3],
    [2, 1, 3, 0],
    [2, 3, 0, 1],
    [3, 0, 2, 1],
    [3, 1, 0, 2],
    [3, 2, 1, 0],
];

/// Index into [`EVEN_PERMS`] of the rotation giving the lexicographically
/// smallest vertex tuple: the smallest vertex first, then the smallest of the
/// other three; parity fixes the rest.
fn canonical_perm(v: [u32; 4]) -> u8 {
    let first = (0..4).min_by_key(|&i| v[i]).unwrap();
    let second = (0..4).filter(|&i| i != first).min_by_key(|&i| v[i]).unwrap();
    EVEN_PERMS.iter().position(|p| p[0] == first && p[1] == second).unwrap() as u8
}

/// Resolves a pack-thread request: 0 means one thread per available core.
pub fn resolve_threads(n: usize) -> usize {
    if n == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        n
    }
}

/// Runs `f` over `len` items split into `nthreads` contiguous ranges, returning
/// the per-range results in order.
fn chunked<T: Send>(len: usize, nthreads: usize, f: impl Fn(std::ops::Range<usize>) -> T + Sync) -> Vec<T> {
    let k = nthreads.clamp(1, len.max(1));
    let step = len.div_ceil(k).max(1);
    let ranges: Vec<_> = (0..k).map(|i| (i * step).min(len)..((i + 1) * step).min(len)).collect();
    if k == 1 {
        return ranges.into_iter().map(&f).collect();
    }
    std::thread::scope(|s| {
        let hs: Vec<_> = ranges.into_iter().map(|r| s.spawn(|| f(r))).collect();
        hs.into_iter()
            .map(|h| h.join().expect("pack helper panicked"))
            .collect()
    })
}

/// Packs the alive tets owned by any of `leaves` (sorted ascending).
pub fn pack_leaves(mesh: &TetMesh, leaves: &[u32], nthreads: usize) -> Vec<u8> {
    let max = leaves.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut sel = vec![false; max];
    for &l in leaves {
        sel[l as usize] = true;
    }
    pack_selected(mesh, leaves, 0, nthreads, |t| {
        sel.get(t.owner as usize).copied().unwrap_or(false)
    })
}

/// One single-leaf pack per entry of `leaves`, equal to calling
/// [`pack_leaves`] with each leaf alone but scanning the mesh once.
pub fn pack_each_leaf(mesh: &TetMesh, leaves: &[u32], nthreads: usize) -> Vec<(u32, Vec<u8>)> {
    let mut bucket: HashMap<u32, Vec<TetId>> = leaves.iter().map(|&l| (l, Vec::new())).collect();
    for (t, tet) in mesh.tets.iter().enumerate() {
        if tet.alive {
            if let Some(b) = bucket.get_mut(&tet.owner) {
                b.push(t as TetId);
            }
        }
    }
    let mut scratch = Scratch::new(mesh);
    leaves
        .iter()
        .map(|&l| (l, pack_picked(mesh, &[l], 0, nthreads, &bucket[&l], &mut scratch)))
        .collect()
}

/// Packs every alive tet.
pub fn pack_mesh(mesh: &TetMesh, nthreads: usize) -> Vec<u8> {
    pack_selected(mesh, &[], FLAG_WHOLE, nthreads, |_| true)
}

fn pack_selected(
    mesh: &TetMesh,
    leaves: &[u32],
    flags: u8,
    nthreads: usize,
    keep: impl Fn(&Tet) -> bool + Sync,
) -> Vec<u8> {
    let picked: Vec<TetId> = chunked(mesh.tets.len(), nthreads.max(1), |r| {
        r.filter(|&t| mesh.tets[t].alive && keep(&mesh.tets[t]))
            .map(|t| t as TetId)
            .collect::<Vec<_>>()
    })
    .concat();
    pack_picked(mesh, leaves, flags, nthreads, &picked, &mut Scratch::new(mesh))
}

/// Slot-to-record maps sized to the mesh, left all `u32::MAX` between packs.
struct Scratch {
    vmap: Vec<u32>,
    tmap: Vec<u32>,
}

impl Scratch {
    fn new(mesh: &TetMesh) -> Self {
        Scratch {
            vmap: vec![u32::MAX; mesh.points.len()],
            tmap: vec![u32::MAX; mesh.tets.len()],
        }
    }
}

fn pack_picked(
    mesh: &TetMesh,
    leaves: &[u32],
    flags: u8,
    nthreads: usize,
    picked: &[TetId],
    scratch: &mut Scratch,
) -> Vec<u8> {
    let nthreads = nthreads.max(1);

    // Vertices in gid order.
    let mut verts: Vec<VertId> = Vec::new();
    for &t in picked {
        for v in mesh.tets[t as usize].v {
            if scratch.vmap[v as usize] == u32::MAX {
                scratch.vmap[v as usize] = 0;
                verts.push(v);
            }
        }
    }
    verts.sort_unstable_by_key(|&v| mesh.gids[v as usize]);
    for (i, &v) in verts.iter().enumerate() {
        scratch.vmap[v as usize] = i as u32;
    }
    let vmap = &scratch.vmap;

    // Canonical vertex tuple (packed into one sort key) and rotation per tet.
    let mut order: Vec<(u128, TetId, u8)> = chunked(picked.len(), nthreads, |r| {
        picked[r]
            .iter()
            .map(|&t| {
                let v = mesh.tets[t as usize].v.map(|x| vmap[x as usize]);
                let p = canonical_perm(v);
                let key = EVEN_PERMS[p as usize]
                    .iter()
                    .fold(0u128, |k, &i| (k << 32) | v[i] as u128);
                (key, t, p)
            })
            .collect::<Vec<_>>()
    })
    .concat();
    order.sort_unstable_by_key(|c| c.0);
    for (i, c) in order.iter().enumerate() {
        scratch.tmap[c.1 as usize] = i as u32;
    }
    let tmap = &scratch.tmap;

    let mut out = Vec::with_capacity(HEADER_LEN + 4 * leaves.len() + VERTEX_LEN * verts.len() + TET_LEN * order.len());
    write_header(&mut out, mesh, leaves.len(), verts.len(), order.len(), flags);
    for &l in leaves {
        out.extend_from_slice(&l.to_le_bytes());
    }
    let vbytes = chunked(verts.len(), nthreads, |r| {
        let mut b = Vec::with_capacity(r.len() * VERTEX_LEN);
        for &v in &verts[r] {
            let p = mesh.points[v as usize];
            b.extend_from_slice(&mesh.gids[v as usize].to_le_bytes());
            for x in [p.x, p.y, p.z] {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b
    });
    for b in vbytes {
        out.extend_from_slice(&b);
    }
    let tbytes = chunked(order.len(), nthreads, |r| {
        let mut b = Vec::with_capacity(r.len() * TET_LEN);
        for &(key, t, p) in &order[r] {
            let tet = &mesh.tets[t as usize];
            for k in (0..4).rev() {
                b.extend_from_slice(&((key >> (32 * k)) as u32).to_le_bytes());
            }
            for i in EVEN_PERMS[p as usize] {
                let n = tet.n[i];
                let m = if n == BOUNDARY {
                    BOUNDARY
                } else if n == EXTERNAL {
                    EXTERNAL
                } else {
                    match tmap[n as usize] {
                        u32::MAX => EXTERNAL,
                        k => k,
                    }
                };
                b.extend_from_slice(&m.to_le_bytes());
            }
            b.extend_from_slice(&tet.owner.to_le_bytes());
        }
        b
    });
    for b in tbytes {
        out.extend_from_slice(&b);
    }
    for &v in &verts {
        scratch.vmap[v as usize] = u32::MAX;
    }
    for c in &order {
        scratch.tmap[c.1 as usize] = u32::MAX;
    }
    out
}

fn write_header(out: &mut Vec<u8>, mesh: &TetMesh, nleaves: usize, nverts: usize, ntets: usize, flags: u8) {
    out.extend_from_slice(&PACK_MAGIC);
    out.push(PACK_VERSION);
    out.push(flags);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(nleaves as u32).to_le_bytes());
    out.extend_from_slice(&(nverts as u32).to_le_bytes());
    out.extend_from_slice(&(ntets as u32).to_le_bytes());
    let depth = mesh.grid().map_or(NO_GRID, |g| g.depth);
    out.extend_from_slice(&depth.to_le_bytes());
    let b = mesh.bbox();
    for x in [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    debug_assert_eq!(out.len(), HEADER_LEN);
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.b[self.at..self.at + 4].try_into().unwrap());
        self.at += 4;
        v
    }
    fn u64(&mut self) -> u64 {
        let v = u64::from_le_bytes(self.b[self.at..self.at + 8].try_into().unwrap());
        self.at += 8;
        v
    }
    fn f64(&mut self) -> f64 {
        f64::from_bits(self.u64())
    }
}

/// Header fields without decoding the body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PackHeader {
    pub version: u8,
    pub flags: u8,
    pub leaves: u32,
    pub vertices: u32,
    pub tets: u32,
    pub depth: Option<u32>,
    pub bbox: BBox,
}

impl PackHeader {
    pub fn payload_len(&self) -> usize {
        HEADER_LEN + 4 * self.leaves as usize + VERTEX_LEN * self.vertices as usize + TET_LEN * self.tets as usize
    }
}

pub fn read_header(bytes: &[u8]) -> Result<PackHeader, PackError> {
    if bytes.len() < 5 {
        return Err(PackError::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[..4] != PACK_MAGIC {
        return Err(PackError::BadMagic);
    }
    if bytes[4] != PACK_VERSION {
        return Err(PackError::Version(bytes[4]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(PackError::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let mut r = Reader { b: bytes, at: 8 };
    let leaves = r.u32();
    let vertices = r.u32();
    let tets = r.u32();
    let depth = r.u32();
    let min = Point3::new(r.f64(), r.f64(), r.f64());
    let max = Point3::new(r.f64(), r.f64(), r.f64());
    Ok(PackHeader {
        version: bytes[4],
        flags: bytes[5],
        leaves,
        vertices,
        tets,
        depth: (depth != NO_GRID).then_some(depth),
        bbox: BBox::new(min, max),
    })
}

pub fn unpack(bytes: &[u8]) -> Result<Submesh, PackError> {
    unpack_threaded(bytes, 1)
}

/// Decodes a pack, splitting the tet records over `nthreads` helpers.
pub fn unpack_threaded(bytes: &[u8], nthreads: usize) -> Result<Submesh, PackError> {
    let h = read_header(bytes)?;
    let need = h.payload_len();
    if bytes.len() < need {
        return Err(PackError::Truncated {
            needed: need,
            got: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(PackError::Trailing(bytes.len() - need));
    }
    let mut r = Reader {
        b: bytes,
        at: HEADER_LEN,
    };
    let leaves: Vec<u32> = (0..h.leaves).map(|_| r.u32()).collect();
    let mut mesh = TetMesh::empty(h.bbox, 0);
    let mut prev = None;
    for _ in 0..h.vertices {
        let g = r.u64();
        let p = Point3::new(r.f64(), r.f64(), r.f64());
        if prev.is_some_and(|q| q >= g) {
            return Err(PackError::Invalid("vertex gids not strictly ascending".into()));
        }
        prev = Some(g);
        mesh.add_vertex_with_gid(p, g);
    }
    mesh.set_next_gid(prev.map_or(0, |g| g + 1));
    if let Some(d) = h.depth {
        let grid = LeafGrid::new(h.bbox, d).map_err(|e| PackError::Invalid(e.to_string()))?;
        mesh.set_grid(Some(grid));
    }
    let base = r.at;
    let (nv, nt) = (h.vertices, h.tets);
    let parts = chunked(nt as usize, nthreads.max(1), |range| {
        let mut out = Vec::with_capacity(range.len());
        let mut rd = Reader {
            b: bytes,
            at: base + range.start * TET_LEN,
        };
        for i in range {
            let v = [rd.u32(), rd.u32(), rd.u32(), rd.u32()];
            let n = [rd.u32(), rd.u32(), rd.u32(), rd.u32()];
            let owner = rd.u32();
            if v.iter().any(|&x| x >= nv) {
                return Err(PackError::Invalid(format!("tet {i} references a missing vertex")));
            }
            if n.iter().any(|&x| x >= nt && x != BOUNDARY && x != EXTERNAL) {
                return Err(PackError::Invalid(format!("tet {i} references a missing neighbor")));
            }
            out.push(Tet {
                v,
                n,
                owner,
                stamp: 1,
                alive: true,
            });
        }
        Ok(out)
    });
    for p in parts {
        mesh.tets.extend(p?);
    }
    Ok(Submesh {
        leaves,
        whole: h.flags & FLAG_WHOLE != 0,
        mesh,
    })
}

/// Merges submeshes, identifying vertices by gid and reconnecting `EXTERNAL`
/// facets that meet across parts. Facets left unmatched stay `EXTERNAL`.
pub fn stitch(parts: Vec<TetMesh>, bbox: BBox, grid: Option<LeafGrid>) -> TetMesh {
    let mut all: Vec<(u64, Point3)> = parts
        .iter()
        .flat_map(|m| m.gids.iter().copied().zip(m.points.iter().copied()))
        .collect();
    all.sort_unstable_by_key(|x| x.0);
    all.dedup_by_key(|x| x.0);
    let mut out = TetMesh::empty(bbox, 0);
    let mut gmap: FxHashMap<u64, VertId> = FxHashMap::with_capacity_and_hasher(all.len(), Default::default());
    for &(g, p) in &all {
        gmap.insert(g, out.add_vertex_with_gid(p, g));
    }
    out.set_next_gid(all.last().map_or(0, |x| x.0 + 1));
    out.set_grid(grid);
    for m in &parts {
        let base = out.tets.len() as TetId;
        let local: Vec<VertId> = m.gids.iter().map(|g| gmap[g]).collect();
        for t in &m.tets {
            if !t.alive {
                continue;
            }
            let mut t = *t;
            t.v = t.v.map(|v| local[v as usize]);
            for n in &mut t.n {
                if *n != BOUNDARY && *n != EXTERNAL {
                    *n += base;
                }
            }
            out.tets.push(t);
        }
        debug_assert!(m.free.is_empty(), "stitch expects compact parts");
    }
    resolve_external(&mut out);
    out
}

/// Links `EXTERNAL` facets that appear in two tets of the same mesh.
pub fn resolve_external(m: &mut TetMesh) {
    let mut open: FxHashMap<[VertId; 3], (TetId, usize)> = FxHashMap::default();
    for t in 0..m.tets.len() {
        if !m.tets[t].alive {
            continue;
        }
        for f in 0..4 {
            if m.tets[t].n[f] != EXTERNAL {
                continue;
            }
            let key = crate::delaunay::sorted_face(&m.tets[t].v, f);
            if let Some((o, of)) = open.remove(&key) {
                m.tets[t].n[f] = o;
                m.tets[o as usize].n[of] = t as TetId;
            } else {
                open.insert(key, (t as TetId, f));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TetMesh {
        let mut m = TetMesh::from_box(BBox::new(Point3::default(), Point3::new(4.0, 4.0, 4.0))).unwrap();
        for i in 0..40 {
            let f = i as f64;
            let p = Point3::new(
                (f * 0.731).fract() * 4.0,
                (f * 0.377 + 0.1).fract() * 4.0,
                (f * 0.519 + 0.3).fract() * 4.0,
            );
            let _ = m.insert_point(p);
        }
        m.set_grid(Some(LeafGrid::new(m.bbox(), 1).unwrap()));
        let grid = *m.grid().unwrap();
        for t in 0..m.tets.len() {
            if m.tets[t].alive {
                let b = crate::geom::barycenter(&m.tet_points(t as TetId));
                m.tets[t].owner = grid.leaf_of(b);
            }
        }
        m
    }

    #[test]
    fn canonical_perm_is_smallest_rotation() {
        let mut x = 12345u64;
        for _ in 0..2000 {
            let mut v = [0u32; 4];
            for s in &mut v {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *s = (x >> 40) as u32;
            }
            if v.iter().collect::<std::collections::HashSet<_>>().len() < 4 {
                continue;
            }
            let best = EVEN_PERMS.iter().min_by_key(|p| p.map(|i| v[i])).unwrap();
            assert_eq!(&EVEN_PERMS[canonical_perm(v) as usize], best);
        }
    }

    #[test]
    fn pack_is_thread_independent_and_roundtrips() {
        let m = sample();
        let a = pack_mesh(&m, 1);
        assert_eq!(a, pack_mesh(&m, 3));
        let u = unpack(&a).unwrap();
        assert!(u.whole);
        assert_eq!(u.mesh.num_alive(), m.num_alive());
        assert!(u.mesh.audit_all().is_clean());
        assert_eq!(pack_mesh(&u.mesh, 2), a);
        assert_eq!(unpack_threaded(&a, 4).unwrap().mesh.tets, u.mesh.tets);
    }

    #[test]
    fn leaf_packs_stitch_back() {
        let m = sample();
        let each = pack_each_leaf(&m, &(0..8).collect::<Vec<_>>(), 2);
        for (l, bytes) in &each {
            assert_eq!(bytes, &pack_leaves(&m, &[*l], 1));
        }
        let parts: Vec<TetMesh> = each.iter().map(|(_, b)| unpack(b).unwrap().mesh).collect();
        let total: usize = parts.iter().map(|p| p.num_alive()).sum();
        assert_eq!(total, m.num_alive());
        let s = stitch(parts, m.bbox(), m.grid().copied());
        assert!(s.audit_all().is_clean());
        assert_eq!(pack_mesh(&s, 1), pack_mesh(&m, 1));
    }

    #[test]
    fn empty_pack_roundtrips() {
        let m = TetMesh::empty(BBox::new(Point3::default(), Point3::new(1.0, 1.0, 1.0)), 0);
        let b = pack_mesh(&m, 1);
        assert_eq!(b.len(), HEADER_LEN);
        let u = unpack(&b).unwrap();
        assert_eq!(u.mesh.num_alive(), 0);
        assert_eq!(pack_mesh(&u.mesh, 1), b);
    }

    #[test]
    fn corrupt_packs_rejected() {
        let b = pack_mesh(&sample(), 1);
        assert_eq!(
            unpack(&b[..b.len() - 3]).unwrap_err(),
            PackError::Truncated {
                needed: b.len(),
                got: b.len() - 3
            }
        );
        let mut v = b.clone();
        v[4] = 9;
        assert_eq!(unpack(&v).unwrap_err(), PackError::Version(9));
        let mut v = b.clone();
        v[0] = b'X';
        assert_eq!(unpack(&v).unwrap_err(), PackError::BadMagic);
    }
}
