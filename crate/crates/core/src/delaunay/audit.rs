use super::{sorted_face, TetId, TetMesh, VertId, BOUNDARY, EXTERNAL};
use crate::geom;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    /// Tet is flat or negatively oriented.
    Orientation { tet: TetId },
    /// Neighbor slot points at a dead or out-of-range tet.
    DanglingNeighbor { tet: TetId, face: u8, neighbor: TetId },
    /// `tet` lists `neighbor` across `face` but not the other way round.
    Asymmetric { tet: TetId, face: u8, neighbor: TetId },
    /// Neighbors that do not share the facet they are linked through.
    FacetMismatch { tet: TetId, face: u8, neighbor: TetId },
    /// A facet used by more than two tets, or twice without a link.
    FacetSharing { tet: TetId, face: u8 },
    /// A neighbor marked as living in another submesh, in a mesh that must be whole.
    UnresolvedExternal { tet: TetId, face: u8 },
    /// Vertex strictly inside the circumsphere of a tet.
    Delaunay {
        tet: TetId,
        vertex: VertId,
        vertex_gid: u64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Orientation { tet } => write!(f, "tet {tet}: not positively oriented"),
            Violation::DanglingNeighbor { tet, face, neighbor } => {
                write!(f, "tet {tet} face {face}: neighbor {neighbor} is not a live tet")
            }
            Violation::Asymmetric { tet, face, neighbor } => {
                write!(f, "tet {tet} face {face}: neighbor {neighbor} does not link back")
            }
            Violation::FacetMismatch { tet, face, neighbor } => {
                write!(f, "tet {tet} face {face}: neighbor {neighbor} does not share the facet")
            }
            Violation::FacetSharing { tet, face } => {
                write!(f, "tet {tet} face {face}: facet sharing is inconsistent")
            }
            Violation::UnresolvedExternal { tet, face } => {
                write!(f, "tet {tet} face {face}: unresolved external neighbor")
            }
            Violation::Delaunay {
                tet,
                vertex,
                vertex_gid,
            } => write!(
                f,
                "tet {tet}: vertex {vertex} (gid {vertex_gid}) lies inside its circumsphere"
            ),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditReport {
    pub tets_checked: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: AuditReport) {
        self.tets_checked = self.tets_checked.max(other.tets_checked);
        self.violations.extend(other.violations);
    }
}

impl TetMesh {
    /// Orientation and adjacency checks. `allow_external` accepts cross-submesh markers.
    pub fn audit_topology(&self, allow_external: bool) -> AuditReport {
        let mut v = Vec::new();
        let mut facets: HashMap<[VertId; 3], Vec<(TetId, u8)>> = HashMap::new();
        for t in self.alive_tets() {
            if self.orientation(t) != geom::Orientation::Positive {
                v.push(Violation::Orientation { tet: t });
            }
            let tet = &self.tets[t as usize];
            for f in 0..4 {
                let key = sorted_face(&tet.v, f);
                facets.entry(key).or_default().push((t, f as u8));
                let n = tet.n[f];
                let face = f as u8;
                if n == BOUNDARY {
                    continue;
                }
                if n == EXTERNAL {
                    if !allow_external {
                        v.push(Violation::UnresolvedExternal { tet: t, face });
                    }
                    continue;
                }
                let Some(nt) = self.tets.get(n as usize).filter(|nt| nt.alive) else {
                    v.push(Violation::DanglingNeighbor {
                        tet: t,
                        face,
                        neighbor: n,
                    });
                    continue;
                };
                let back = (0..4).find(|&j| nt.n[j] == t);
                match back {
                    None => v.push(Violation::Asymmetric {
                        tet: t,
                        face,
                        neighbor: n,
                    }),
                    Some(j) => {
                        if sorted_face(&nt.v, j) != key {
                            v.push(Violation::FacetMismatch {
                                tet: t,
                                face,
                                neighbor: n,
                            });
                        }
                    }
                }
            }
        }
        for users in facets.values() {
            let bad = match users.as_slice() {
                [_] => false,
                [(a, fa), (b, fb)] => {
                    self.tets[*a as usize].n[*fa as usize] != *b || self.tets[*b as usize].n[*fb as usize] != *a
                }
                _ => true,
            };
            if bad {
                for &(t, f) in users {
                    let already = v.iter().any(|x| {
                        matches!(x, Violation::Asymmetric { tet, face, .. } | Violation::FacetMismatch { tet, face, .. }
                            if *tet == t && *face == f)
                    });
                    if !already {
                        v.push(Violation::FacetSharing { tet: t, face: f });
                    }
                }
            }
        }
        // A facet seen once must be on the hull or external.
        for users in facets.values() {
            if let [(t, f)] = users.as_slice() {
                let n = self.tets[*t as usize].n[*f as usize];
                if n != BOUNDARY && n != EXTERNAL {
                    let listed = v.iter().any(|x| match x {
                        Violation::DanglingNeighbor { tet, face, .. }
                        | Violation::Asymmetric { tet, face, .. }
                        | Violation::FacetMismatch { tet, face, .. } => tet == t && face == f,
                        _ => false,
                    });
                    if !listed {
                        v.push(Violation::FacetSharing { tet: *t, face: *f });
                    }
                }
            }
        }
        v.sort_by_key(violation_order);
        AuditReport {
            tets_checked: self.num_alive(),
            violations: v,
        }
    }

    /// Exact check of every interior facet: the apex across it must not lie
    /// strictly inside the circumsphere. For a valid triangulation of a convex
    /// domain this is equivalent to the global empty-sphere property.
    pub fn audit_local_delaunay(&self) -> AuditReport {
        let mut v: Vec<Violation> = self
            .alive_tets()
            .collect::<Vec<_>>()
            .par_iter()
            .flat_map_iter(|&t| {
                let tet = self.tets[t as usize];
                let [a, b, c, d] = self.tet_points(t);
                let mut out = Vec::new();
                for &n in &tet.n {
                    if n == BOUNDARY || n == EXTERNAL || !self.tets.get(n as usize).is_some_and(|x| x.alive) {
                        continue;
                    }
                    for &w in &self.tets[n as usize].v {
                        if !tet.v.contains(&w) && geom::insphere_raw(a, b, c, d, self.points[w as usize]) > 0.0 {
                            out.push(Violation::Delaunay {
                                tet: t,
                                vertex: w,
                                vertex_gid: self.gids[w as usize],
                            });
                        }
                    }
                }
                out
            })
            .collect();
        v.sort_by_key(violation_order);
        v.dedup();
        AuditReport {
            tets_checked: self.num_alive(),
            violations: v,
        }
    }

    /// Every (alive tet, vertex) pair with the exact in-sphere predicate.
    pub fn audit_delaunay_brute(&self) -> AuditReport {
        let tets: Vec<TetId> = self.alive_tets().collect();
        let mut v: Vec<Violation> = tets
            .par_iter()
            .flat_map_iter(|&t| {
                let tet = self.tets[t as usize];
                let [a, b, c, d] = self.tet_points(t);
                let mut out = Vec::new();
                if geom::orient3d_raw(a, b, c, d) <= 0.0 {
                    return out;
                }
                for (w, &p) in self.points.iter().enumerate() {
                    let w = w as VertId;
                    if !tet.v.contains(&w) && geom::insphere_raw(a, b, c, d, p) > 0.0 {
                        out.push(Violation::Delaunay {
                            tet: t,
                            vertex: w,
                            vertex_gid: self.gids[w as usize],
                        });
                    }
                }
                out
            })
            .collect();
        v.sort_by_key(violation_order);
        AuditReport {
            tets_checked: tets.len(),
            violations: v,
        }
    }

    /// Topology plus local Delaunay checks on a whole mesh.
    pub fn audit_all(&self) -> AuditReport {
        let mut r = self.audit_topology(false);
        r.merge(self.audit_local_delaunay());
        r
    }
}

fn violation_order(v: &Violation) -> (TetId, u8, u32) {
    match *v {
        Violation::Orientation { tet } => (tet, 0, 0),
        Violation::DanglingNeighbor { tet, face, .. } => (tet, 1, face as u32),
        Violation::Asymmetric { tet, face, .. } => (tet, 2, face as u32),
        Violation::FacetMismatch { tet, face, .. } => (tet, 3, face as u32),
        Violation::FacetSharing { tet, face } => (tet, 4, face as u32),
        Violation::UnresolvedExternal { tet, face } => (tet, 5, face as u32),
        Violation::Delaunay { tet, vertex, .. } => (tet, 6, vertex),
    }
}
