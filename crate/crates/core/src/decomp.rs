//! Uniform octree decomposition of the image box into `8^d` leaves.
//!
//! A refinement task on a leaf ships and may modify every leaf within
//! Chebyshev index distance 2 (its influence region), so two leaves can be
//! refined concurrently only when their indices are at least 5 apart.

use crate::delaunay::{RefinementRule, TetMesh};
use crate::geom::{self, BBox, Point3};
use crate::image::{lower_cell, LabeledImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DEPTH: u32 = 6;
/// Buffer layers shipped around a refined leaf.
pub const BUFFER_LAYERS: u32 = 2;
/// Smallest Chebyshev distance at which two influence regions are disjoint.
pub const INDEPENDENCE_DISTANCE: u32 = 2 * BUFFER_LAYERS + 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompError {
    #[error("octree depth {0} outside 0..={MAX_DEPTH}")]
    DepthOutOfRange(u32),
    #[error("leaf ({}, {}, {}) outside a {n}^3 grid", .leaf.i, .leaf.j, .leaf.k)]
    LeafOutOfRange { leaf: LeafIdx, n: u32 },
    #[error("tet {0} has its barycenter outside the bounding box")]
    OutsideBox(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeafIdx {
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl LeafIdx {
    pub const fn new(i: u32, j: u32, k: u32) -> Self {
        LeafIdx { i, j, k }
    }

    pub fn chebyshev(self, o: LeafIdx) -> u32 {
        self.i.abs_diff(o.i).max(self.j.abs_diff(o.j)).max(self.k.abs_diff(o.k))
    }
}

/// Leaf geometry only: which leaf a point falls in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafGrid {
    pub bbox: BBox,
    pub depth: u32,
    /// Leaves per axis, `2^depth`.
    pub n: u32,
}

impl LeafGrid {
    pub fn new(bbox: BBox, depth: u32) -> Result<Self, DecompError> {
        if depth > MAX_DEPTH {
            return Err(DecompError::DepthOutOfRange(depth));
        }
        Ok(LeafGrid {
            bbox,
            depth,
            n: 1 << depth,
        })
    }

    pub fn num_leaves(&self) -> usize {
        (self.n as usize).pow(3)
    }

    /// Linear id; ordering of ids equals lexicographic `(i, j, k)` ordering.
    #[inline]
    pub fn id(&self, l: LeafIdx) -> u32 {
        (l.i * self.n + l.j) * self.n + l.k
    }

    #[inline]
    pub fn idx(&self, id: u32) -> LeafIdx {
        LeafIdx::new(id / (self.n * self.n), (id / self.n) % self.n, id % self.n)
    }

    pub fn check(&self, l: LeafIdx) -> Result<(), DecompError> {
        if l.i < self.n && l.j < self.n && l.k < self.n {
            Ok(())
        } else {
            Err(DecompError::LeafOutOfRange { leaf: l, n: self.n })
        }
    }

    fn coord(&self, a: usize, c: u32) -> f64 {
        if c == self.n {
            self.bbox.max.axis(a)
        } else {
            let lo = self.bbox.min.axis(a);
            lo + (self.bbox.max.axis(a) - lo) * (c as f64 / self.n as f64)
        }
    }

    pub fn leaf_box(&self, l: LeafIdx) -> BBox {
        let c = [l.i, l.j, l.k];
        let min = Point3::new(self.coord(0, c[0]), self.coord(1, c[1]), self.coord(2, c[2]));
        let max = Point3::new(
            self.coord(0, c[0] + 1),
            self.coord(1, c[1] + 1),
            self.coord(2, c[2] + 1),
        );
        BBox::new(min, max)
    }

    /// Leaf containing `p`; on a shared face the lower index wins. Points
    /// outside the box are clamped to the nearest leaf.
    #[inline]
    pub fn leaf_of(&self, p: Point3) -> u32 {
        let mut c = [0u32; 3];
        for (a, ca) in c.iter_mut().enumerate() {
            let lo = self.bbox.min.axis(a);
            let w = self.bbox.max.axis(a) - lo;
            let t = ((p.axis(a) - lo) / w * self.n as f64).clamp(0.0, self.n as f64);
            *ca = lower_cell(t, self.n);
        }
        self.id(LeafIdx::new(c[0], c[1], c[2]))
    }

    /// Leaves within Chebyshev distance 2 of `center`, in ascending id order.
    pub fn influence(&self, center: LeafIdx) -> Result<InfluenceRegion, DecompError> {
        self.check(center)?;
        let r = BUFFER_LAYERS;
        let span = |c: u32| c.saturating_sub(r)..=(c + r).min(self.n - 1);
        let mut leaves = Vec::with_capacity(125);
        for i in span(center.i) {
            for j in span(center.j) {
                for k in span(center.k) {
                    leaves.push(LeafIdx::new(i, j, k));
                }
            }
        }
        Ok(InfluenceRegion { center, leaves })
    }

    pub fn independent(&self, a: LeafIdx, b: LeafIdx) -> bool {
        a.chebyshev(b) >= INDEPENDENCE_DISTANCE
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InfluenceRegion {
    pub center: LeafIdx,
    pub leaves: Vec<LeafIdx>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafState {
    pub owner_rank: u32,
    pub dirty: bool,
    pub elements: u64,
}

/// Octree leaves plus the master's per-leaf bookkeeping.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub grid: LeafGrid,
    pub leaves: Vec<LeafState>,
}

impl Decomposition {
    pub fn build(depth: u32, bbox: BBox) -> Result<Self, DecompError> {
        let grid = LeafGrid::new(bbox, depth)?;
        Ok(Decomposition {
            leaves: vec![LeafState::default(); grid.num_leaves()],
            grid,
        })
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn influence(&self, leaf: LeafIdx) -> Result<InfluenceRegion, DecompError> {
        self.grid.influence(leaf)
    }

    pub fn independent(&self, a: LeafIdx, b: LeafIdx) -> bool {
        self.grid.independent(a, b)
    }

    /// Assigns each alive tet to the leaf holding its barycenter, refreshes
    /// per-leaf counts and marks leaves holding rule-violating tets dirty.
    pub fn partition(
        &mut self,
        mesh: &mut TetMesh,
        img: &LabeledImage,
        rule: &RefinementRule,
    ) -> Result<(), DecompError> {
        for l in &mut self.leaves {
            l.elements = 0;
            l.dirty = false;
        }
        let bbox = self.grid.bbox;
        for t in 0..mesh.tets.len() {
            if !mesh.tets[t].alive {
                continue;
            }
            let b = geom::barycenter(&mesh.tet_points(t as u32));
            if !bbox.contains(b) {
                return Err(DecompError::OutsideBox(t as u32));
            }
            let leaf = self.grid.leaf_of(b);
            mesh.tets[t].owner = leaf;
            self.leaves[leaf as usize].elements += 1;
        }
        mesh.set_grid(Some(self.grid));
        for t in mesh.bad_tets(img, rule, None) {
            let owner = mesh.tets[t as usize].owner;
            self.leaves[owner as usize].dirty = true;
        }
        Ok(())
    }

    pub fn mark_dirty(&mut self, leaves: &[LeafIdx]) {
        for &l in leaves {
            let id = self.grid.id(l) as usize;
            self.leaves[id].dirty = true;
        }
    }

    pub fn mark_clean(&mut self, leaf: LeafIdx) {
        let id = self.grid.id(leaf) as usize;
        self.leaves[id].dirty = false;
    }

    pub fn is_dirty(&self, leaf: LeafIdx) -> bool {
        self.leaves[self.grid.id(leaf) as usize].dirty
    }

    pub fn dirty_count(&self) -> usize {
        self.leaves.iter().filter(|l| l.dirty).count()
    }

    /// Dirty leaf independent of every active leaf: largest element estimate
    /// first, ties to the lexicographically smallest index.
    pub fn next_dirty(&self, active: &[LeafIdx]) -> Option<LeafIdx> {
        let mut best: Option<(u64, u32)> = None;
        for (id, st) in self.leaves.iter().enumerate() {
            if !st.dirty {
                continue;
            }
            let l = self.grid.idx(id as u32);
            if active.iter().any(|&a| !self.grid.independent(a, l)) {
                continue;
            }
            // ids ascend lexicographically, so strict > keeps the smallest on ties
            if best.is_none_or(|(e, _)| st.elements > e) {
                best = Some((st.elements, id as u32));
            }
        }
        best.map(|(_, id)| self.grid.idx(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(s: f64) -> BBox {
        BBox::new(Point3::default(), Point3::new(s, s, s))
    }

    #[test]
    fn leaf_counts() {
        assert_eq!(Decomposition::build(3, unit_box(1.0)).unwrap().num_leaves(), 512);
        assert_eq!(Decomposition::build(4, unit_box(1.0)).unwrap().num_leaves(), 4096);
        let d0 = Decomposition::build(0, unit_box(1.0)).unwrap();
        assert_eq!(d0.num_leaves(), 1);
        assert_eq!(d0.grid.leaf_box(LeafIdx::new(0, 0, 0)), unit_box(1.0));
        assert!(Decomposition::build(7, unit_box(1.0)).is_err());
    }

    #[test]
    fn leaf_boxes_tile_exactly() {
        let g = LeafGrid::new(BBox::new(Point3::new(-1.0, 0.5, 2.0), Point3::new(2.0, 1.7, 3.3)), 2).unwrap();
        let mut vol = 0.0;
        for id in 0..g.num_leaves() as u32 {
            let l = g.idx(id);
            assert_eq!(g.id(l), id);
            let b = g.leaf_box(l);
            let e = b.extent();
            vol += e.x * e.y * e.z;
            if l.i + 1 < g.n {
                assert_eq!(b.max.x, g.leaf_box(LeafIdx::new(l.i + 1, l.j, l.k)).min.x);
            } else {
                assert_eq!(b.max.x, g.bbox.max.x);
            }
        }
        let e = g.bbox.extent();
        assert!((vol - e.x * e.y * e.z).abs() < 1e-12);
    }

    #[test]
    fn face_tie_goes_low() {
        let g = LeafGrid::new(unit_box(8.0), 3).unwrap();
        assert_eq!(g.idx(g.leaf_of(Point3::new(1.0, 0.5, 0.5))), LeafIdx::new(0, 0, 0));
        assert_eq!(g.idx(g.leaf_of(Point3::new(1.0001, 0.5, 0.5))), LeafIdx::new(1, 0, 0));
        assert_eq!(g.idx(g.leaf_of(Point3::new(8.0, 8.0, 8.0))), LeafIdx::new(7, 7, 7));
    }

    #[test]
    fn influence_sizes() {
        let g = LeafGrid::new(unit_box(1.0), 4).unwrap();
        assert_eq!(g.influence(LeafIdx::new(8, 8, 8)).unwrap().leaves.len(), 125);
        assert_eq!(g.influence(LeafIdx::new(0, 0, 0)).unwrap().leaves.len(), 27);
        assert!(g.influence(LeafIdx::new(16, 0, 0)).is_err());
        let g0 = LeafGrid::new(unit_box(1.0), 0).unwrap();
        assert_eq!(
            g0.influence(LeafIdx::new(0, 0, 0)).unwrap().leaves,
            vec![LeafIdx::new(0, 0, 0)]
        );
    }

    #[test]
    fn independence_rule() {
        let g = LeafGrid::new(unit_box(1.0), 4).unwrap();
        let o = LeafIdx::new(0, 0, 0);
        assert!(!g.independent(o, LeafIdx::new(4, 4, 4)));
        assert!(g.independent(o, LeafIdx::new(5, 0, 0)));
        assert!(!g.independent(o, o));
    }

    #[test]
    fn next_dirty_rules() {
        let mut d = Decomposition::build(3, unit_box(1.0)).unwrap();
        assert_eq!(d.next_dirty(&[]), None);
        d.mark_dirty(&[LeafIdx::new(2, 2, 2)]);
        assert_eq!(d.next_dirty(&[]), Some(LeafIdx::new(2, 2, 2)));
        d.mark_clean(LeafIdx::new(2, 2, 2));
        d.mark_dirty(&[LeafIdx::new(0, 0, 0), LeafIdx::new(1, 0, 0)]);
        assert_eq!(d.next_dirty(&[LeafIdx::new(3, 0, 0)]), None);
        // equal estimates: lexicographic tie-break
        assert_eq!(d.next_dirty(&[]), Some(LeafIdx::new(0, 0, 0)));
        let id = d.grid.id(LeafIdx::new(1, 0, 0)) as usize;
        d.leaves[id].elements = 10;
        assert_eq!(d.next_dirty(&[]), Some(LeafIdx::new(1, 0, 0)));
    }
}
