use meshpdr::delaunay::{RefinementRule, TetMesh};
use meshpdr::image::{make_phantom, LabeledImage, PhantomSpec};
use meshpdr::mw::pack::{self, pack_each_leaf, pack_leaves, pack_mesh, stitch, unpack};
use meshpdr::pipeline::coarse_mesh;
use meshpdr::podm::refine_parallel;
use proptest::prelude::*;
use std::sync::OnceLock;

fn phantom(s: &str) -> LabeledImage {
    make_phantom(&PhantomSpec::parse(s).unwrap()).unwrap()
}

/// A refined, partitioned depth-2 mesh of a sphere, built once.
fn refined() -> &'static TetMesh {
    static M: OnceLock<TetMesh> = OnceLock::new();
    M.get_or_init(|| {
        let img = phantom("sphere:r=12,dims=32");
        let rule = RefinementRule::new(2.0, 2.0);
        let (mut m, _, _) = coarse_mesh(&img, &rule, 2).unwrap();
        m.refine(&img, &rule, None).unwrap();
        m
    })
}

#[test]
fn leaf_packs_stitch_back_to_the_whole_mesh() {
    let m = refined();
    let grid = *m.grid().unwrap();
    let leaves: Vec<u32> = (0..grid.num_leaves() as u32).collect();
    let packs = pack_each_leaf(m, &leaves, 1);
    for (l, bytes) in &packs {
        assert_eq!(bytes, &pack_leaves(m, &[*l], 1));
        let sub = unpack(bytes).unwrap();
        assert_eq!(sub.leaves, vec![*l]);
        assert!(!sub.whole);
        assert!(sub.mesh.audit_topology(true).is_clean());
        assert!(sub.mesh.audit_local_delaunay().is_clean());
    }
    let parts: Vec<TetMesh> = packs.iter().map(|(_, b)| unpack(b).unwrap().mesh).collect();
    let whole = stitch(parts, grid.bbox, Some(grid));
    assert!(whole.audit_all().is_clean());
    assert_eq!(pack_mesh(&whole, 1), pack_mesh(m, 1));
}

#[test]
fn whole_pack_roundtrip_is_a_fixpoint() {
    let m = refined();
    let bytes = pack_mesh(m, 1);
    let sub = unpack(&bytes).unwrap();
    assert!(sub.whole);
    assert_eq!(sub.mesh.num_alive(), m.num_alive());
    assert_eq!(sub.mesh.num_vertices(), m.num_vertices());
    assert!(sub.mesh.audit_all().is_clean());
    assert_eq!(pack_mesh(&sub.mesh, 1), bytes);
    assert_eq!(
        pack::unpack_threaded(&bytes, 3).unwrap().mesh.num_alive(),
        m.num_alive()
    );
}

#[test]
fn damaged_packs_are_rejected() {
    let bytes = pack_mesh(refined(), 1);
    assert!(unpack(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(unpack(&extra).is_err());
    let mut magic = bytes.clone();
    magic[1] ^= 0xff;
    assert!(unpack(&magic).is_err());
    // Point the last tet's first vertex past the vertex table.
    let mut v = bytes.clone();
    let at = v.len() - 36;
    v[at..at + 4].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(unpack(&v).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pack_bytes_do_not_depend_on_thread_count(leaves in proptest::collection::btree_set(0u32..64, 1..12)) {
        let m = refined();
        let leaves: Vec<u32> = leaves.into_iter().collect();
        let one = pack_leaves(m, &leaves, 1);
        prop_assert_eq!(&one, &pack_leaves(m, &leaves, 4));
        prop_assert_eq!(&one, &pack_leaves(m, &leaves, 0));
        let sub = unpack(&one).unwrap();
        prop_assert_eq!(&sub.leaves, &leaves);
        prop_assert!(sub.mesh.audit_topology(true).is_clean());
        let owned = m.alive_tets().filter(|&t| leaves.contains(&m.tet(t).owner)).count();
        prop_assert_eq!(sub.mesh.num_alive(), owned);
    }
}

#[test]
fn one_thread_reproduces_the_sequential_mesh() {
    for spec in [
        "sphere:r=10,dims=32",
        "two-spheres:r=6,dims=40x24x24",
        "ellipsoid:rx=12,ry=8,rz=5,dims=32",
    ] {
        let img = phantom(spec);
        let rule = RefinementRule::new(2.0, 2.5);
        let (base, _, _) = coarse_mesh(&img, &rule, 1).unwrap();
        let mut a = base.clone();
        let mut b = base;
        let sa = a.refine(&img, &rule, None).unwrap();
        let sb = refine_parallel(&mut b, &img, &rule, None, 1).unwrap();
        assert_eq!(sa.insertions, sb.insertions, "{spec}");
        assert_eq!(pack_mesh(&a, 1), pack_mesh(&b, 1), "{spec}");
    }
}

#[test]
fn four_threads_meet_the_same_postconditions() {
    let img = phantom("sphere:r=12,dims=32");
    let rule = RefinementRule::new(2.0, 1.5);
    let (mut m, _, _) = coarse_mesh(&img, &rule, 1).unwrap();
    let stats = refine_parallel(&mut m, &img, &rule, None, 4).unwrap();
    assert!(stats.insertions > 1000);
    assert!(m.audit_all().is_clean());
    assert!(m.audit_delaunay_brute().is_clean());
    assert!(m.bad_tets(&img, &rule, None).is_empty());
}
