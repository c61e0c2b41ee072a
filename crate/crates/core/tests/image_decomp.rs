use meshpdr::decomp::{Decomposition, LeafGrid, LeafIdx, INDEPENDENCE_DISTANCE};
use meshpdr::delaunay::RefinementRule;
use meshpdr::geom::{BBox, Point3};
use meshpdr::image::{make_phantom, LabeledImage, PhantomSpec, BACKGROUND};
use meshpdr::pipeline::coarse_mesh;
use proptest::prelude::*;
use std::collections::HashSet;

/// Voxels whose centre lies strictly inside a sphere at the grid centre.
fn sphere_voxels(r: f64, n: u32) -> usize {
    let c = n as f64 / 2.0;
    let mut count = 0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let d = [i, j, k].map(|x| x as f64 + 0.5 - c);
                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < r * r {
                    count += 1;
                }
            }
        }
    }
    count
}

#[test]
fn phantom_voxel_counts_match_enumeration() {
    for (r, n) in [(16.0, 64), (10.0, 32), (5.5, 16), (3.0, 7)] {
        let img = make_phantom(&PhantomSpec::parse(&format!("sphere:r={r},dims={n}")).unwrap()).unwrap();
        assert_eq!(img.count_label(1), sphere_voxels(r, n), "r={r} n={n}");
        assert_eq!(img.labels.len(), (n * n * n) as usize);
    }
}

#[test]
fn ellipsoid_and_two_sphere_labels() {
    let img = make_phantom(&PhantomSpec::parse("ellipsoid:rx=12,ry=6,rz=3,dims=32").unwrap()).unwrap();
    let mut expect = 0;
    for i in 0..32 {
        for j in 0..32 {
            for k in 0..32 {
                let d = [i, j, k].map(|x| x as f64 + 0.5 - 16.0);
                if (d[0] / 12.0).powi(2) + (d[1] / 6.0).powi(2) + (d[2] / 3.0).powi(2) < 1.0 {
                    expect += 1;
                }
            }
        }
    }
    assert_eq!(img.count_label(1), expect);
    let two = make_phantom(&PhantomSpec::parse("two-spheres:r=6,dims=64x32x32").unwrap()).unwrap();
    assert_eq!(two.distinct_labels(), vec![0, 1, 2]);
    assert_eq!(two.count_label(1), two.count_label(2));
    assert!(make_phantom(&PhantomSpec::parse("sphere:r=40,dims=64").unwrap()).is_err());
    assert!(PhantomSpec::parse("cube:r=4").is_err());
}

#[test]
fn image_file_roundtrip_and_classification() {
    let img = make_phantom(&PhantomSpec::parse("sphere:r=3,dims=16x20x24,spacing=0.5x1x2").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.dmi");
    img.save(&p).unwrap();
    let back = LabeledImage::load(&p).unwrap();
    assert_eq!(back, img);
    assert_eq!(back.checksum(), img.checksum());
    let bb = img.bbox();
    assert_eq!(bb.max, Point3::new(8.0, 20.0, 48.0));
    assert_eq!(img.classify(Point3::new(4.0, 10.0, 24.0)), 1);
    assert_eq!(img.classify(Point3::new(-0.1, 10.0, 24.0)), BACKGROUND);
    assert_eq!(img.classify(Point3::new(0.1, 0.1, 0.1)), BACKGROUND);

    let mut bytes = img.to_bytes();
    bytes.truncate(bytes.len() - 1);
    assert!(LabeledImage::from_bytes(&bytes).is_err());
    let mut bad = img.to_bytes();
    bad[0] = b'X';
    assert!(LabeledImage::from_bytes(&bad).is_err());
}

fn grid(depth: u32) -> LeafGrid {
    LeafGrid::new(BBox::new(Point3::default(), Point3::new(64.0, 64.0, 64.0)), depth).unwrap()
}

fn window(c: LeafIdx, n: u32) -> HashSet<LeafIdx> {
    let mut s = HashSet::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let l = LeafIdx::new(i, j, k);
                if l.chebyshev(c) <= 2 {
                    s.insert(l);
                }
            }
        }
    }
    s
}

#[test]
fn leaf_ids_are_row_major() {
    let g = grid(2);
    assert_eq!(g.num_leaves(), 64);
    assert_eq!(g.id(LeafIdx::new(1, 2, 3)), (1 * 4 + 2) * 4 + 3);
    for id in 0..64 {
        assert_eq!(g.id(g.idx(id)), id);
    }
    assert_eq!(g.influence(LeafIdx::new(0, 0, 0)).unwrap().leaves.len(), 27);
    assert_eq!(grid(3).influence(LeafIdx::new(4, 4, 4)).unwrap().leaves.len(), 125);
    assert!(g.influence(LeafIdx::new(4, 0, 0)).is_err());
    assert!(LeafGrid::new(BBox::new(Point3::default(), Point3::new(1.0, 1.0, 1.0)), 7).is_err());
}

#[test]
fn coarse_partition_covers_every_tet() {
    let img = make_phantom(&PhantomSpec::parse("sphere:r=10,dims=32").unwrap()).unwrap();
    let rule = RefinementRule::new(2.0, 2.0);
    let (mesh, dec, _) = coarse_mesh(&img, &rule, 2).unwrap();
    let total: u64 = dec.leaves.iter().map(|l| l.elements).sum();
    assert_eq!(total as usize, mesh.num_alive());
    for t in mesh.alive_tets() {
        let b = meshpdr::geom::barycenter(&mesh.tet_points(t));
        assert_eq!(mesh.tet(t).owner, dec.grid.leaf_of(b));
    }
    // Some leaf holds a tet that still violates the fine rule.
    assert!(dec.dirty_count() > 0);
    let mut d = Decomposition::build(2, img.bbox()).unwrap();
    d.mark_dirty(&[LeafIdx::new(0, 0, 0), LeafIdx::new(3, 3, 3)]);
    assert_eq!(d.next_dirty(&[LeafIdx::new(0, 0, 0)]), None);
    assert_eq!(d.next_dirty(&[]), Some(LeafIdx::new(0, 0, 0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn influence_is_the_clipped_chebyshev_window(depth in 0u32..=4, i in 0u32..16, j in 0u32..16, k in 0u32..16) {
        let g = grid(depth);
        let c = LeafIdx::new(i % g.n, j % g.n, k % g.n);
        let got: HashSet<LeafIdx> = g.influence(c).unwrap().leaves.into_iter().collect();
        prop_assert_eq!(got, window(c, g.n));
    }

    #[test]
    fn independence_means_disjoint_influence_regions(
        depth in 2u32..=4, a in (0u32..16, 0u32..16, 0u32..16), b in (0u32..16, 0u32..16, 0u32..16),
    ) {
        let g = grid(depth);
        let a = LeafIdx::new(a.0 % g.n, a.1 % g.n, a.2 % g.n);
        let b = LeafIdx::new(b.0 % g.n, b.1 % g.n, b.2 % g.n);
        // On an unbounded grid the windows are disjoint iff the distance is at least 5.
        let disjoint = window(a, 64).is_disjoint(&window(b, 64));
        prop_assert_eq!(g.independent(a, b), disjoint);
        prop_assert_eq!(INDEPENDENCE_DISTANCE, 5);
    }

    #[test]
    fn every_point_lands_in_the_leaf_box_that_holds_it(
        depth in 0u32..=4, x in 0.0f64..=64.0, y in 0.0f64..=64.0, z in 0.0f64..=64.0,
    ) {
        let g = grid(depth);
        let p = Point3::new(x, y, z);
        let l = g.leaf_of(p);
        prop_assert!((l as usize) < g.num_leaves());
        prop_assert!(g.leaf_box(g.idx(l)).contains(p));
    }
}
